//! Semiparametric test by homogenizing actions: `log B = X theta + log B^u`
//! is fitted by OLS, actions are rescaled by `exp(-X theta)`, and standard
//! errors come from a bootstrap that refits `theta` on every resample.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{cell_windows, nu_of, observations, VarianceFloor, WindowEngine, WindowLayout};
use crate::games::{GameClass, MomentKernel};
use crate::grid::{build_grid, choose_q1, Grid};
use crate::inference::{
    beta, critical_value, gms_value, kappa, require_min_obs, standardized, BootstrapSummary,
    CellReport, GroupReport, TestConfig, TestResult,
};
use crate::rng::{self, StreamRng};
use crate::sample::{infer_support, ActionSample, GameRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct HomogenizationFit {
    /// OLS coefficients, intercept first.
    pub theta_hat: Vec<f64>,
    /// The sample with every action replaced by `exp(-X theta_hat) B`.
    pub rescaled: ActionSample,
}

/// How bootstrap replications treat `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaMode {
    /// Refit `theta` on every bootstrap sample.
    #[default]
    Refit,
    /// Keep the full-sample `theta_hat`; ignores estimation error in `theta`.
    Fixed,
}

/// Per-game pieces of the normal equations.
struct Design {
    /// Design row of each game, intercept first.
    rows: Vec<DVector<f64>>,
    n_agents: Vec<f64>,
    sum_log: Vec<f64>,
}

impl Design {
    fn new(games: &[GameRecord]) -> Result<Self> {
        let p = games[0].covariates.len();
        let mut rows = Vec::with_capacity(games.len());
        let mut sum_log = Vec::with_capacity(games.len());
        for g in games {
            if g.covariates.len() != p {
                return Err(Error::Covariate(format!(
                    "game {:?} has {} covariates, expected {p}",
                    g.id,
                    g.covariates.len()
                )));
            }
            if let Some(bad) = g.actions.iter().find(|&&a| !(a > 0.0)) {
                return Err(Error::InvalidGame(format!(
                    "game {:?} has nonpositive action {bad}; log actions are undefined",
                    g.id
                )));
            }
            rows.push(DVector::from_iterator(
                p + 1,
                std::iter::once(1.0).chain(g.covariates.iter().copied()),
            ));
            sum_log.push(g.actions.iter().map(|a| a.ln()).sum());
        }
        Ok(Self {
            rows,
            n_agents: games.iter().map(|g| g.n_agents() as f64).collect(),
            sum_log,
        })
    }

    /// OLS over observations, each game counted `weights[g]` times.
    fn solve(&self, weights: &[f64]) -> Result<DVector<f64>> {
        let p = self.rows[0].len();
        let mut xtx = DMatrix::<f64>::zeros(p, p);
        let mut xty = DVector::<f64>::zeros(p);
        for (g, row) in self.rows.iter().enumerate() {
            let w = weights[g];
            if w == 0.0 {
                continue;
            }
            xtx.ger(w * self.n_agents[g], row, row, 1.0);
            xty.axpy(w * self.sum_log[g], row, 1.0);
        }
        let svd = xtx.svd(true, true);
        let smax = svd.singular_values.max();
        let tol = smax * p as f64 * 1e-12;
        if svd.rank(tol) < p {
            return Err(Error::RankDeficient(format!(
                "design matrix with {p} column(s) including the intercept is rank deficient"
            )));
        }
        svd.solve(&xty, tol).map_err(|e| Error::Numeric(e.to_string()))
    }

    fn scale(&self, g: usize, theta: &DVector<f64>) -> f64 {
        (-self.rows[g].dot(theta)).exp()
    }
}

fn rescale_games(games: &[GameRecord], design: &Design, theta: &DVector<f64>) -> Vec<GameRecord> {
    games
        .iter()
        .enumerate()
        .map(|(g, game)| {
            let c = design.scale(g, theta);
            GameRecord {
                actions: game.actions.iter().map(|a| a * c).collect(),
                ..game.clone()
            }
        })
        .collect()
}

/// OLS of log actions on an intercept and every game covariate.
pub fn ols_fit(sample: &ActionSample) -> Result<HomogenizationFit> {
    let design = Design::new(sample.games())?;
    let theta = design.solve(&vec![1.0; sample.num_games()])?;
    let rescaled = ActionSample::new(rescale_games(sample.games(), &design, &theta))?;
    Ok(HomogenizationFit {
        theta_hat: theta.iter().copied().collect(),
        rescaled,
    })
}

/// Root-`S` bootstrap standard errors `sqrt(K^-1 sum S (nu_k - mean)^2)`
/// for each column of the stored replications.
pub fn bootstrap_sigma(replications: &[Vec<f64>], s: usize) -> Vec<f64> {
    bootstrap_sigma2(replications, s).into_iter().map(f64::sqrt).collect()
}

fn bootstrap_sigma2(replications: &[Vec<f64>], s: usize) -> Vec<f64> {
    let k = replications.len() as f64;
    let n = replications.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; n];
    for rep in replications {
        for (m, v) in mean.iter_mut().zip(rep) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let mut ss = vec![0.0; n];
    for rep in replications {
        for ((acc, v), m) in ss.iter_mut().zip(rep).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    ss.into_iter().map(|v| s as f64 * v / k).collect()
}

/// The cells of `grid` plus the anchor cell, evaluated on weighted games.
struct NuEvaluator<'a> {
    kernel: &'a MomentKernel,
    grid: &'a Grid,
    layout: WindowLayout,
    cell_windows: Vec<(usize, usize)>,
    s: usize,
}

impl NuEvaluator<'_> {
    /// `(nu per cell, nu at the anchor)`.
    fn eval(&self, games: &[GameRecord], weights: &[f64]) -> Result<(Vec<f64>, f64)> {
        let obs = observations(games, self.kernel, false)?;
        let wm = WindowEngine::new(&obs, self.grid, self.s).moments(weights);
        let nu = self
            .cell_windows
            .iter()
            .map(|&(i1, i2)| {
                let ((m1, w1), (m2, w2)) = (wm[i1], wm[i2]);
                nu_of(m1, w1, m2, w2)
            })
            .collect();
        // anchor: b1 = lo, b2 = midpoint, q = 2
        let (lo, mid) = (self.layout.index(2, 0, None), self.layout.index(2, 1, None));
        let ((m1, w1), (m2, w2)) = (wm[lo], wm[mid]);
        Ok((nu, nu_of(m1, w1, m2, w2)))
    }
}

/// Semiparametric test for auction and contest games with observed
/// heterogeneity; `k_boot` bootstrap replications give both the standard
/// errors and the critical value.
pub fn run_test_semi(
    sample: &ActionSample,
    kernel: &MomentKernel,
    config: &TestConfig,
    k_boot: usize,
    mode: ThetaMode,
) -> Result<TestResult> {
    match kernel.class() {
        GameClass::AuctionHigh | GameClass::AuctionLow | GameClass::Contest => {}
        other => {
            return Err(Error::Unsupported(format!(
                "the homogenized test needs payoffs homogeneous in actions; {other} games are not"
            )));
        }
    }
    config.validate_tuning()?;
    if k_boot < 2 {
        return Err(Error::Config(format!(
            "at least 2 bootstrap replications are required, got {k_boot}"
        )));
    }
    let mut warnings = Vec::new();
    if k_boot < 100 {
        warnings.push(format!(
            "{k_boot} bootstrap replications; standard errors and critical value will be noisy"
        ));
    }
    if mode == ThetaMode::Fixed {
        warnings.push("theta held fixed across bootstrap replications".into());
    }
    if sample.split_groups().len() != 1 {
        return Err(Error::Config(
            "the homogenized test needs one number of agents per game".into(),
        ));
    }

    let games = sample.games();
    let design = Design::new(games)?;
    let theta = design.solve(&vec![1.0; games.len()])?;
    let rescaled = rescale_games(games, &design, &theta);
    let rescaled_sample = ActionSample::new(rescaled.clone())?;
    let s = sample.num_obs();
    require_min_obs(s)?;
    let support = infer_support(&rescaled_sample, config.support)?;
    let grid = build_grid(support, choose_q1(s, config.n_c, 0), 0)?;
    let layout = WindowLayout::new(grid.q1, false);
    let eval = NuEvaluator {
        kernel,
        grid: &grid,
        cell_windows: cell_windows(&grid, &layout),
        layout,
        s,
    };
    let (nu_hat, _) = eval.eval(&rescaled, &vec![1.0; games.len()])?;

    let replications: Vec<(Vec<f64>, f64)> = (0..k_boot)
        .into_par_iter()
        .map_init(Vec::new, |weights, r| {
            let mut rng: StreamRng = rng::stream(config.seed, &[rng::BOOTSTRAP, r as u64]);
            crate::inference::draw_multiplicities(games.len(), &mut rng, weights);
            let theta_star = match mode {
                ThetaMode::Refit => design.solve(weights)?,
                ThetaMode::Fixed => theta.clone(),
            };
            let (drawn, w): (Vec<usize>, Vec<f64>) = weights
                .iter()
                .enumerate()
                .filter(|(_, &w)| w > 0.0)
                .map(|(g, &w)| (g, w))
                .unzip();
            let subset: Vec<GameRecord> = drawn
                .iter()
                .map(|&g| {
                    let c = design.scale(g, &theta_star);
                    GameRecord {
                        actions: games[g].actions.iter().map(|a| a * c).collect(),
                        ..games[g].clone()
                    }
                })
                .collect();
            eval.eval(&subset, &w)
        })
        .collect::<Result<_>>()?;

    let (reps, anchors): (Vec<Vec<f64>>, Vec<f64>) = replications.into_iter().unzip();
    let sigma2 = bootstrap_sigma2(&reps, s);
    let anchor_mean = anchors.iter().sum::<f64>() / k_boot as f64;
    let anchor_sigma2 =
        s as f64 * anchors.iter().map(|a| (a - anchor_mean).powi(2)).sum::<f64>() / k_boot as f64;
    let floor = VarianceFloor::new(anchor_sigma2, &sigma2, config.epsilon);
    let sigma_eps: Vec<f64> = sigma2.iter().map(|&v| floor.apply(v)).collect();

    let (kap, bet) = (kappa(s), beta(s));
    let z: Vec<f64> = nu_hat
        .iter()
        .zip(&sigma_eps)
        .map(|(&nu, &se)| standardized(nu, se, s))
        .collect();
    let statistic: f64 = z
        .iter()
        .zip(&grid.weights)
        .map(|(&t, &q)| t.max(0.0).powi(2) * q)
        .sum();
    let psi: Vec<f64> = z.iter().map(|&t| gms_value(t, kap, bet)).collect();
    let sqrt_s = (s as f64).sqrt();
    let boot: Vec<f64> = reps
        .iter()
        .map(|rep| {
            rep.iter()
                .zip(&nu_hat)
                .zip(sigma_eps.iter().zip(&psi))
                .zip(&grid.weights)
                .map(|(((&nu_k, &nu), (&se, &ps)), &q)| {
                    let v = sqrt_s * (nu_k - nu) / se + ps;
                    if v > 0.0 {
                        v * v * q
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect();

    let cells = grid
        .points
        .iter()
        .zip(&grid.weights)
        .enumerate()
        .map(|(i, (p, &weight))| CellReport {
            b1: p.b1,
            b2: p.b2,
            x: None,
            q: p.q,
            nu_hat: nu_hat[i],
            sigma_hat: sigma_eps[i],
            psi: psi[i],
            weight,
        })
        .collect();
    let report = GroupReport {
        group: games[0].group_key(),
        n_agents: games[0].n_agents(),
        games: games.len(),
        s,
        q1: grid.q1,
        kappa: kap,
        beta: bet,
        support,
        floor,
        statistic,
        cells,
    };
    if !statistic.is_finite() || boot.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numeric("non-finite test statistic".into()));
    }
    let critical_value = critical_value(&boot, config.alpha, config.eta)?;
    Ok(TestResult {
        statistic,
        critical_value,
        p_value: crate::inference::p_value(statistic, &boot),
        reject: statistic > critical_value,
        alpha: config.alpha,
        n_boot: k_boot,
        seed: config.seed,
        eta: config.eta,
        epsilon: config.epsilon,
        n_c: config.n_c,
        groups: vec![report],
        bootstrap: BootstrapSummary::new(&boot),
        theta_hat: Some(theta.iter().copied().collect()),
        warnings,
        boot_stats: boot,
    })
}
