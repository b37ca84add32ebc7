//! Nonparametric test conditioning on one game-level covariate.
//!
//! The covariate is mapped to `[0, 1]` and crossed with the action cells, so
//! each instrument is a box `[b, b + a/q] x [x, x + 1/q]`.

use crate::error::{Error, Result};
use crate::games::MomentKernel;
use crate::inference::{run_plans, GroupPlan, TestConfig, TestResult};
use crate::sample::{infer_support, ActionSample, GameRecord};

/// Min-max rescales the first covariate of every game to `[0, 1]`.
pub fn rescale_covariate(sample: &ActionSample) -> Result<ActionSample> {
    let xs = sample
        .games()
        .iter()
        .map(|g| {
            g.covariate()
                .ok_or_else(|| Error::Covariate(format!("game {:?} has no covariate", g.id)))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if lo == hi {
        return Err(Error::Covariate(format!(
            "covariate is constant ({lo}); use the test without covariates"
        )));
    }
    let games = sample
        .games()
        .iter()
        .zip(xs)
        .map(|(g, x)| {
            let mut covariates = g.covariates.clone();
            covariates[0] = if x == hi { 1.0 } else { (x - lo) / (hi - lo) };
            GameRecord {
                covariates,
                ..g.clone()
            }
        })
        .collect();
    ActionSample::new(games)
}

fn check_unit_covariate(sample: &ActionSample) -> Result<()> {
    for g in sample.games() {
        match g.covariate() {
            None => {
                return Err(Error::Covariate(format!("game {:?} has no covariate", g.id)));
            }
            Some(x) if !(0.0..=1.0).contains(&x) => {
                return Err(Error::Covariate(format!(
                    "game {:?} has covariate {x} outside [0, 1]; rescale it first",
                    g.id
                )));
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Test of monotonicity conditional on the covariate, which must already lie
/// in `[0, 1]` (see [`rescale_covariate`]).
pub fn run_test_x(sample: &ActionSample, kernel: &MomentKernel, config: &TestConfig) -> Result<TestResult> {
    config.validate()?;
    check_unit_covariate(sample)?;
    let mut groups = sample.split_groups();
    if groups.len() != 1 {
        return Err(Error::Config(format!(
            "sample has {} groups with different numbers of agents; split it first",
            groups.len()
        )));
    }
    let (key, games) = groups.remove(0);
    let support = infer_support(sample, config.support)?;
    let plan = GroupPlan::new(key, &games, kernel, support, 1, config)?;
    run_plans(vec![plan], config)
}
