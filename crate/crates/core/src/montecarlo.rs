//! Simulation designs with a known bid distribution, the analytic
//! quasi-inverse bid function, and a rejection-frequency harness.
//!
//! Bids follow `G(b) = (b / (k - (k - 1) b))^(1/5)` on `[0, 1]`, whose
//! quasi-inverse is increasing for small `k` and fails monotonicity for
//! `k >= 5` when `N = 2`.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariate::run_test_x;
use crate::error::{Error, Result};
use crate::games::MomentKernel;
use crate::homogenize::{run_test_semi, ThetaMode};
use crate::inference::{run_test, run_test_joint, TestConfig, TestResult};
use crate::rng::{self, StreamRng};
use crate::sample::{ActionSample, GameRecord};

/// Agent counts of the heterogeneous design.
pub const HETERO_N: [usize; 3] = [2, 3, 4];
/// Games per agent count of the heterogeneous design, before scaling by `a`.
pub const HETERO_L: [usize; 3] = [60, 40, 20];
/// Log-scale coefficients `(intercept, slope)` of the homogenization design.
pub const SEMI_THETA: [f64; 2] = [0.5, 0.8];

fn check_k(k: f64) -> Result<()> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::ModelParameter(format!("k must be positive, got {k}")));
    }
    Ok(())
}

/// `Q(u) = k u^5 / (1 + (k - 1) u^5)`.
pub fn quantile(k: f64, u: f64) -> f64 {
    let u5 = u.powi(5);
    k * u5 / (1.0 + (k - 1.0) * u5)
}

/// `G(b) = (b / (k - (k - 1) b))^(1/5)`.
pub fn cdf(k: f64, b: f64) -> f64 {
    if b <= 0.0 {
        return 0.0;
    }
    if b >= 1.0 {
        return 1.0;
    }
    (b / (k - (k - 1.0) * b)).powf(0.2)
}

/// `g(b) = G'(b) = (1/5) (b / (k - (k-1) b))^(-4/5) k / (k - (k-1) b)^2`.
pub fn pdf(k: f64, b: f64) -> f64 {
    let d = k - (k - 1.0) * b;
    0.2 * (b / d).powf(-0.8) * k / (d * d)
}

/// `n` i.i.d. bids by inverse transform.
pub fn draw_bids_quantile(k: f64, n: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    check_k(k)?;
    Ok((0..n).map(|_| quantile(k, rng.random::<f64>())).collect())
}

/// `k(x)` for covariate cases 1 to 5.
pub fn k_of_case(case: u8, x: f64) -> Result<f64> {
    let (base, slope) = match case {
        1 => (0.5, 2.0),
        2 => (5.0, 5.0),
        3 => (10.0, 5.0),
        4 => (15.0, 5.0),
        5 => (20.0, 5.0),
        _ => {
            return Err(Error::ModelParameter(format!(
                "covariate case must be 1 to 5, got {case}"
            )));
        }
    };
    Ok(base + slope * x)
}

/// One game: `x ~ U(0, 1)`, then `n` bids from the quantile with `k(x)`.
pub fn draw_bids_covariate(case: u8, n: usize, rng: &mut impl Rng) -> Result<(Vec<f64>, f64)> {
    let x = rng.random::<f64>();
    let k = k_of_case(case, x)?;
    Ok(((0..n).map(|_| quantile(k, rng.random::<f64>())).collect(), x))
}

fn check_xi_args(k: f64, n_agents: usize, b: f64) -> Result<()> {
    check_k(k)?;
    if n_agents < 2 {
        return Err(Error::ModelParameter(format!(
            "at least 2 agents are required, got {n_agents}"
        )));
    }
    if !(b > 0.0 && b < 1.0) {
        return Err(Error::ModelParameter(format!(
            "b must lie strictly inside (0, 1), got {b}"
        )));
    }
    Ok(())
}

/// `xi(b) = b + G(b) / ((N - 1) g(b))`.
pub fn xi_analytic(k: f64, n_agents: usize, b: f64) -> Result<f64> {
    check_xi_args(k, n_agents, b)?;
    Ok(b + cdf(k, b) / ((n_agents as f64 - 1.0) * pdf(k, b)))
}

/// Central difference of `xi` with step `h`.
pub fn xi_slope(k: f64, n_agents: usize, b: f64, h: f64) -> Result<f64> {
    check_xi_args(k, n_agents, b)?;
    let up = xi_analytic(k, n_agents, (b + h).min(1.0 - f64::EPSILON))?;
    let down = xi_analytic(k, n_agents, (b - h).max(f64::MIN_POSITIVE))?;
    Ok((up - down) / (2.0 * h))
}

/// `(b, xi(b))` on `points` equally spaced values of `[0.01, 0.99]`.
pub fn xi_curve(k: f64, n_agents: usize, points: usize) -> Result<Vec<(f64, f64)>> {
    if points < 2 {
        return Err(Error::Config("a curve needs at least 2 points".into()));
    }
    (0..points)
        .map(|i| {
            let b = 0.01 + 0.98 * i as f64 / (points - 1) as f64;
            xi_analytic(k, n_agents, b).map(|xi| (b, xi))
        })
        .collect()
}

/// `E[log Q(U)] = ln k - 5 - int_0^1 ln(1 + (k - 1) u^5) du`, by Simpson's rule.
pub fn mean_log_bid(k: f64) -> f64 {
    const N: usize = 4096;
    let f = |u: f64| (1.0 + (k - 1.0) * u.powi(5)).ln();
    let h = 1.0 / N as f64;
    let mut acc = f(0.0) + f(1.0);
    for i in 1..N {
        acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    k.ln() - 5.0 - acc * h / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Dgp {
    /// Homogeneous games, `N` bids each.
    NoCovariate { k: f64 },
    /// `X ~ U(0, 1)` per game with `k(X)` from the case list.
    Covariate { case: u8 },
    /// `L_t = a * [60, 40, 20]` games with `N_t = [2, 3, 4]` agents.
    HeteroN { k: f64, a: usize },
    /// `B = exp(0.5 + 0.8 X) B^u` with `X ~ U(0, 1)` and `E[log B^u] = 0`.
    Scaled { k: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub dgp: Dgp,
    /// Agents per game (ignored by the heterogeneous design).
    pub n_agents: usize,
    /// Games per repetition (ignored by the heterogeneous design).
    pub n_games: usize,
    pub n_mc: usize,
    pub n_boot: usize,
    pub n_c: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl SimDesign {
    pub fn new(dgp: Dgp, n_games: usize) -> Self {
        Self {
            dgp,
            n_agents: 2,
            n_games,
            n_mc: 1000,
            n_boot: 1000,
            n_c: 20,
            alpha: 0.10,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.dgp {
            Dgp::NoCovariate { k } | Dgp::Scaled { k } => check_k(k)?,
            Dgp::Covariate { case } => {
                k_of_case(case, 0.0)?;
            }
            Dgp::HeteroN { k, a } => {
                check_k(k)?;
                if !(1..=3).contains(&a) {
                    return Err(Error::ModelParameter(format!("a must be 1, 2 or 3, got {a}")));
                }
            }
        }
        if self.n_agents < 2 || self.n_games < 2 {
            return Err(Error::Config("designs need at least 2 agents and 2 games".into()));
        }
        if self.n_mc == 0 {
            return Err(Error::Config("n_mc must be positive".into()));
        }
        Ok(())
    }

    fn config(&self, rep: usize) -> TestConfig {
        TestConfig {
            alpha: self.alpha,
            n_boot: self.n_boot,
            n_c: self.n_c,
            seed: rng::derive_seed(self.seed, &[rng::MC_TEST, rep as u64]),
            ..TestConfig::default()
        }
    }

    /// The simulated panel of repetition `rep`.
    pub fn sample(&self, rep: usize) -> Result<ActionSample> {
        let mut rng: StreamRng = rng::stream(self.seed, &[rng::MC_DATA, rep as u64]);
        let mut games = Vec::new();
        match self.dgp {
            Dgp::NoCovariate { k } => {
                for g in 0..self.n_games {
                    games.push(GameRecord::new(g.to_string(), draw_bids_quantile(k, self.n_agents, &mut rng)?));
                }
            }
            Dgp::Covariate { case } => {
                for g in 0..self.n_games {
                    let (bids, x) = draw_bids_covariate(case, self.n_agents, &mut rng)?;
                    games.push(GameRecord::new(g.to_string(), bids).with_covariates(vec![x]));
                }
            }
            Dgp::HeteroN { k, a } => {
                for (&n, &l) in HETERO_N.iter().zip(&HETERO_L) {
                    for g in 0..a * l {
                        let bids = draw_bids_quantile(k, n, &mut rng)?;
                        games.push(GameRecord::new(format!("{n}-{g}"), bids));
                    }
                }
            }
            Dgp::Scaled { k } => {
                let center = (-mean_log_bid(k)).exp();
                for g in 0..self.n_games {
                    let x = rng.random::<f64>();
                    let scale = (SEMI_THETA[0] + SEMI_THETA[1] * x).exp() * center;
                    let bids = draw_bids_quantile(k, self.n_agents, &mut rng)?
                        .into_iter()
                        .map(|b| b * scale)
                        .collect();
                    games.push(GameRecord::new(g.to_string(), bids).with_covariates(vec![x]));
                }
            }
        }
        ActionSample::new(games)
    }

    /// Runs the test matching the design on repetition `rep`.
    pub fn run(&self, rep: usize) -> Result<TestResult> {
        let sample = self.sample(rep)?;
        let config = self.config(rep);
        let kernel = MomentKernel::AuctionHigh;
        match self.dgp {
            Dgp::NoCovariate { .. } => run_test(&sample, &kernel, &config),
            Dgp::Covariate { .. } => run_test_x(&sample, &kernel, &config),
            Dgp::HeteroN { .. } => run_test_joint(&sample, &kernel, &config),
            Dgp::Scaled { .. } => run_test_semi(&sample, &kernel, &config, self.n_boot, ThetaMode::Refit),
        }
    }
}

/// Audit record of one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepLog {
    pub rep: usize,
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_hat: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub design: SimDesign,
    pub rate: f64,
    pub reps: Vec<RepLog>,
}

/// Fraction of `n_mc` simulated panels on which the test rejects.
pub fn rejection_rate(design: &SimDesign) -> Result<SimReport> {
    design.validate()?;
    let reps = (0..design.n_mc)
        .into_par_iter()
        .map(|rep| {
            let r = design.run(rep)?;
            Ok(RepLog {
                rep,
                statistic: r.statistic,
                critical_value: r.critical_value,
                p_value: r.p_value,
                reject: r.reject,
                theta_hat: r.theta_hat,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rate = reps.iter().filter(|r| r.reject).count() as f64 / reps.len() as f64;
    Ok(SimReport {
        design: design.clone(),
        rate,
        reps,
    })
}

/// Rejection frequencies laid out with one row per design and one column
/// per `n_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub n_cs: Vec<usize>,
    pub rows: Vec<RateRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub dgp: Dgp,
    /// `L`, or `a` for the heterogeneous design.
    pub size: usize,
    pub rates: Vec<f64>,
}

impl RateTable {
    /// Runs `base` for every design in `rows` and every `n_c`.
    pub fn run(base: &SimDesign, rows: &[(Dgp, usize)], n_cs: &[usize]) -> Result<Self> {
        let rows = rows
            .iter()
            .map(|&(dgp, size)| {
                let rates = n_cs
                    .iter()
                    .map(|&n_c| {
                        let mut d = base.clone();
                        d.n_c = n_c;
                        d.dgp = match dgp {
                            Dgp::HeteroN { k, .. } => Dgp::HeteroN { k, a: size },
                            other => {
                                d.n_games = size;
                                other
                            }
                        };
                        rejection_rate(&d).map(|r| r.rate)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(RateRow { dgp, size, rates })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n_cs: n_cs.to_vec(),
            rows,
        })
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let (label, size) = match self.rows.first().map(|r| r.dgp) {
            Some(Dgp::Covariate { .. }) => ("case", "L"),
            Some(Dgp::HeteroN { .. }) => ("k", "a"),
            _ => ("k", "L"),
        };
        let mut header = vec![label.to_string(), size.to_string()];
        header.extend(self.n_cs.iter().map(|n| format!("nc={n}")));
        w.write_record(&header)?;
        for row in &self.rows {
            let first = match row.dgp {
                Dgp::NoCovariate { k } | Dgp::HeteroN { k, .. } | Dgp::Scaled { k } => k.to_string(),
                Dgp::Covariate { case } => case.to_string(),
            };
            let mut rec = vec![first, row.size.to_string()];
            rec.extend(row.rates.iter().map(|r| format!("{r:.3}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn quantile_endpoints() {
        for k in [0.5, 1.0, 5.0, 20.0] {
            assert_eq!(quantile(k, 1.0), 1.0);
            assert_eq!(quantile(k, 0.0), 0.0);
        }
        assert_eq!(quantile(1.0, 0.5), 0.03125);
    }

    #[test]
    fn case_list() {
        assert_eq!(k_of_case(1, 0.0).unwrap(), 0.5);
        assert_eq!(k_of_case(5, 1.0).unwrap(), 25.0);
        assert_eq!(quantile(k_of_case(3, 0.5).unwrap(), 1.0), 1.0);
        assert!(k_of_case(6, 0.0).is_err());
    }

    #[test]
    fn xi_closed_form() {
        assert!((xi_analytic(1.0, 2, 0.5).unwrap() - 3.0).abs() < 1e-12);
        assert!(xi_analytic(1.0, 2, 0.0).is_err());
        assert!(xi_analytic(1.0, 2, 1.0).is_err());
        // xi = b + 5 b (k - (k - 1) b) / (k (N - 1))
        for (k, n, b) in [(0.5, 2, 0.3), (5.0, 3, 0.8), (20.0, 4, 0.1)] {
            let direct = b + 5.0 * b * (k - (k - 1.0) * b) / (k * (n as f64 - 1.0));
            assert!((xi_analytic(k, n, b).unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn pdf_matches_finite_difference() {
        let h = 1e-6;
        for k in [0.5, 1.0, 5.0, 20.0] {
            for i in 0..=90 {
                let b = 0.05 + 0.01 * i as f64;
                let fd = (cdf(k, b + h) - cdf(k, b - h)) / (2.0 * h);
                let g = pdf(k, b);
                assert!(((fd - g) / g).abs() < 1e-6, "k={k} b={b}");
            }
        }
    }

    #[test]
    fn empirical_cdf_matches() {
        let mut rng: StreamRng = rng::stream(7, &[99]);
        for k in [0.5, 5.0, 20.0] {
            let mut draws = draw_bids_quantile(k, 1_000_000, &mut rng).unwrap();
            draws.sort_by(f64::total_cmp);
            let n = draws.len() as f64;
            let ks = draws
                .iter()
                .enumerate()
                .map(|(i, &b)| {
                    let g = cdf(k, b);
                    (g - i as f64 / n).abs().max((g - (i + 1) as f64 / n).abs())
                })
                .fold(0.0, f64::max);
            assert!(ks < 0.005, "k={k}: {ks}");
        }
    }

    #[test]
    fn centered_log_bids() {
        // Monte Carlo check of E[log Q(U)]
        let mut rng: StreamRng = rng::stream(3, &[1]);
        for k in [0.5, 20.0] {
            let n = 400_000;
            let m: f64 = (0..n).map(|_| quantile(k, rng.random::<f64>()).ln()).sum::<f64>() / n as f64;
            assert!((m - mean_log_bid(k)).abs() < 0.02, "k={k}: {m} vs {}", mean_log_bid(k));
        }
        // k = 1: E[5 ln U] = -5
        assert!((mean_log_bid(1.0) + 5.0).abs() < 1e-12);
    }

    #[test]
    fn designs_are_reproducible() {
        for dgp in [
            Dgp::NoCovariate { k: 0.5 },
            Dgp::Covariate { case: 2 },
            Dgp::HeteroN { k: 10.0, a: 1 },
            Dgp::Scaled { k: 5.0 },
        ] {
            let d = SimDesign::new(dgp, 30);
            assert_eq!(d.sample(4).unwrap(), d.sample(4).unwrap());
            assert_ne!(d.sample(4).unwrap(), d.sample(5).unwrap());
        }
        let d = SimDesign::new(Dgp::HeteroN { k: 10.0, a: 2 }, 30);
        let s = d.sample(0).unwrap();
        let sizes: Vec<usize> = s.split_groups().iter().map(|(_, g)| g.len()).collect();
        assert_eq!(sizes, vec![120, 80, 40]);
    }

    #[test]
    fn small_rejection_rate_is_reproducible() {
        let mut d = SimDesign::new(Dgp::NoCovariate { k: 20.0 }, 60);
        d.n_mc = 4;
        d.n_boot = 100;
        let a = rejection_rate(&d).unwrap();
        let b = rejection_rate(&d).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.reps.len(), 4);
    }

    #[test]
    fn table_layout() {
        let t = RateTable {
            n_cs: vec![15, 20],
            rows: vec![RateRow {
                dgp: Dgp::Covariate { case: 1 },
                size: 500,
                rates: vec![0.0, 0.0125],
            }],
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "case,L,nc=15,nc=20\n1,500,0.000,0.013\n");
    }

    proptest! {
        #[test]
        fn quantile_is_increasing(k in 0.05f64..50.0, u in 0.001f64..0.999, du in 1e-6f64..1e-3) {
            prop_assert!(quantile(k, u + du) > quantile(k, u));
        }

        #[test]
        fn quantile_inverts_cdf(k in 0.05f64..50.0, u in 0.01f64..0.99) {
            prop_assert!((cdf(k, quantile(k, u)) - u).abs() < 1e-10);
        }
    }
}
