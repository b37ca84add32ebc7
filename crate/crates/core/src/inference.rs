//! Cramér–von Mises statistic, generalized moment selection, and the
//! game-level bootstrap critical value.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{nu_of, GroupEstimate, MomentTable, VarianceFloor};
use crate::games::MomentKernel;
use crate::grid::{build_grid, choose_q1, Grid};
use crate::rng::{self, StreamRng};
use crate::sample::{infer_support, support_of, ActionSample, GameRecord, Support};

/// Smallest group size for which `ln ln S > 0`.
pub const MIN_OBS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestConfig {
    pub alpha: f64,
    pub n_boot: usize,
    pub eta: f64,
    pub epsilon: f64,
    pub n_c: usize,
    pub seed: u64,
    /// Known action support; the empirical range is used when absent.
    pub support: Option<(f64, f64)>,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            alpha: 0.10,
            n_boot: 1000,
            eta: 1e-6,
            epsilon: 1e-6,
            n_c: 20,
            seed: 0,
            support: None,
        }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        self.validate_tuning()?;
        if self.n_boot < 100 {
            return Err(Error::Config(format!(
                "n_boot must be at least 100, got {}",
                self.n_boot
            )));
        }
        Ok(())
    }

    /// Everything but the bootstrap count.
    pub(crate) fn validate_tuning(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 0.5), got {}",
                self.alpha
            )));
        }
        if !(self.eta > 0.0 && self.epsilon > 0.0) {
            return Err(Error::Config("eta and epsilon must be positive".into()));
        }
        if self.n_c == 0 {
            return Err(Error::Config("n_c must be positive".into()));
        }
        Ok(())
    }
}

/// `kappa_S = 0.15 ln S`.
pub fn kappa(s: usize) -> f64 {
    0.15 * (s as f64).ln()
}

/// `beta_S = 0.85 ln S / ln ln S`.
pub fn beta(s: usize) -> f64 {
    let ln = (s as f64).ln();
    0.85 * ln / ln.ln()
}

pub(crate) fn require_min_obs(s: usize) -> Result<()> {
    if s < MIN_OBS {
        return Err(Error::InsufficientData(format!(
            "{s} observations; at least {MIN_OBS} are required"
        )));
    }
    Ok(())
}

/// `sqrt(S) * nu / sigma_eps`.
#[inline]
pub fn standardized(nu: f64, sigma_eps: f64, s: usize) -> f64 {
    (s as f64).sqrt() * nu / sigma_eps
}

/// `T = sum Q * max(sqrt(S) nu / sigma_eps, 0)^2`.
pub fn test_statistic(table: &MomentTable, grid: &Grid) -> f64 {
    table
        .cells
        .iter()
        .zip(&grid.weights)
        .map(|(c, &q)| {
            let t = standardized(c.nu, c.sigma_eps, table.s).max(0.0);
            t * t * q
        })
        .sum()
}

#[inline]
pub fn gms_value(standardized: f64, kappa: f64, beta: f64) -> f64 {
    if standardized < -kappa {
        -beta
    } else {
        0.0
    }
}

/// Moment-selection slackness `psi` for every cell.
pub fn gms(table: &MomentTable) -> Result<Vec<f64>> {
    require_min_obs(table.s)?;
    let (k, b) = (kappa(table.s), beta(table.s));
    Ok(table
        .cells
        .iter()
        .map(|c| gms_value(standardized(c.nu, c.sigma_eps, table.s), k, b))
        .collect())
}

/// Draws `L_t` games with replacement within each group; actions and
/// covariates travel with their game.
pub fn bootstrap_resample(sample: &ActionSample, rng: &mut impl Rng) -> Result<ActionSample> {
    let mut games = Vec::with_capacity(sample.num_games());
    for (_, group) in sample.split_groups() {
        for _ in 0..group.len() {
            games.push(group[rng.random_range(0..group.len())].clone());
        }
    }
    ActionSample::new(games)
}

/// Game multiplicities of one bootstrap draw, in the same draw order as
/// [`bootstrap_resample`].
pub(crate) fn draw_multiplicities(n_games: usize, rng: &mut impl Rng, out: &mut Vec<f64>) {
    out.clear();
    out.resize(n_games, 0.0);
    for _ in 0..n_games {
        out[rng.random_range(0..n_games)] += 1.0;
    }
}

/// Empirical `(1 - alpha + eta)` quantile of the bootstrap statistics plus `eta`.
///
/// The quantile is the order statistic of rank `ceil(n (1 - alpha + eta))`,
/// clamped to `[1, n]`.
pub fn critical_value(boot_stats: &[f64], alpha: f64, eta: f64) -> Result<f64> {
    if boot_stats.is_empty() {
        return Err(Error::Config("no bootstrap statistics".into()));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::Config(format!(
            "alpha must lie in (0, 0.5), got {alpha}"
        )));
    }
    let mut sorted = boot_stats.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((n as f64) * (1.0 - alpha + eta)).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1] + eta)
}

/// `(1 + #{boot >= statistic}) / (1 + n)`.
pub fn p_value(statistic: f64, boot_stats: &[f64]) -> f64 {
    let exceed = boot_stats.iter().filter(|&&b| b >= statistic).count();
    (1 + exceed) as f64 / (1 + boot_stats.len()) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub b1: f64,
    pub b2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    pub q: u32,
    pub nu_hat: f64,
    /// Floored standard error `sigma_eps`.
    pub sigma_hat: f64,
    pub psi: f64,
    pub weight: f64,
}

impl CellReport {
    /// Whether moment selection kept this cell.
    pub fn active(&self) -> bool {
        self.psi == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    /// Group key: the explicit tag, or the number of agents.
    pub group: u32,
    pub n_agents: usize,
    pub games: usize,
    pub s: usize,
    pub q1: u32,
    pub kappa: f64,
    pub beta: f64,
    pub support: Support,
    pub floor: VarianceFloor,
    /// This group's contribution to the statistic.
    pub statistic: f64,
    pub cells: Vec<CellReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub median: f64,
    pub q90: f64,
    pub q95: f64,
    pub max: f64,
}

impl BootstrapSummary {
    pub fn new(stats: &[f64]) -> Self {
        let n = stats.len();
        let mut sorted = stats.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let var = sorted.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
        let at = |p: f64| sorted[((n as f64 * p).ceil() as usize).clamp(1, n) - 1];
        Self {
            n,
            mean,
            sd: var.sqrt(),
            min: sorted[0],
            median: at(0.5),
            q90: at(0.9),
            q95: at(0.95),
            max: sorted[n - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub n_boot: usize,
    pub seed: u64,
    pub eta: f64,
    pub epsilon: f64,
    pub n_c: usize,
    pub groups: Vec<GroupReport>,
    pub bootstrap: BootstrapSummary,
    /// Fitted homogenization coefficients, intercept first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_hat: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Bootstrap statistics in replication order.
    #[serde(skip)]
    pub boot_stats: Vec<f64>,
}

impl TestResult {
    pub(crate) fn assemble(
        statistic: f64,
        boot_stats: Vec<f64>,
        groups: Vec<GroupReport>,
        config: &TestConfig,
        n_boot: usize,
    ) -> Result<Self> {
        let critical_value = critical_value(&boot_stats, config.alpha, config.eta)?;
        if !statistic.is_finite() || boot_stats.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numeric("non-finite test statistic".into()));
        }
        Ok(Self {
            statistic,
            critical_value,
            p_value: p_value(statistic, &boot_stats),
            reject: statistic > critical_value,
            alpha: config.alpha,
            n_boot,
            seed: config.seed,
            eta: config.eta,
            epsilon: config.epsilon,
            n_c: config.n_c,
            groups,
            bootstrap: BootstrapSummary::new(&boot_stats),
            theta_hat: None,
            warnings: Vec::new(),
            boot_stats,
        })
    }
}

/// Everything one group contributes to the statistic and its bootstrap.
pub(crate) struct GroupPlan {
    key: u32,
    n_agents: usize,
    n_games: usize,
    grid: Grid,
    est: GroupEstimate,
    sqrt_s: f64,
    inv_sigma: Vec<f64>,
    psi: Vec<f64>,
    kappa: f64,
    beta: f64,
    statistic: f64,
}

impl GroupPlan {
    pub fn new(
        key: u32,
        games: &[GameRecord],
        kernel: &MomentKernel,
        support: Support,
        d_x: u32,
        config: &TestConfig,
    ) -> Result<Self> {
        if games.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "group {key} has {} game(s); at least 2 are required",
                games.len()
            )));
        }
        let s: usize = games.iter().map(GameRecord::n_agents).sum();
        require_min_obs(s)?;
        let grid = build_grid(support, choose_q1(s, config.n_c, d_x), d_x)?;
        let est = GroupEstimate::new(games, kernel, &grid, config.epsilon)?;
        let table = &est.table;
        let statistic = test_statistic(table, &grid);
        let psi = gms(table)?;
        Ok(Self {
            key,
            n_agents: games[0].n_agents(),
            n_games: games.len(),
            sqrt_s: (s as f64).sqrt(),
            inv_sigma: table.cells.iter().map(|c| 1.0 / c.sigma_eps).collect(),
            psi,
            kappa: kappa(s),
            beta: beta(s),
            statistic,
            grid,
            est,
        })
    }

    /// GMS-adjusted bootstrap statistic for one set of game multiplicities.
    pub fn boot_stat(&self, game_weights: &[f64]) -> f64 {
        let wm = self.est.engine.moments(game_weights);
        let cells = &self.est.table.cells;
        let mut total = 0.0;
        for (k, &(i1, i2)) in self.est.cell_windows.iter().enumerate() {
            let ((m1, w1), (m2, w2)) = (wm[i1], wm[i2]);
            let phi = self.sqrt_s * (nu_of(m1, w1, m2, w2) - cells[k].nu);
            let z = phi * self.inv_sigma[k] + self.psi[k];
            if z > 0.0 {
                total += z * z * self.grid.weights[k];
            }
        }
        total
    }

    pub fn report(&self) -> GroupReport {
        let cells = self
            .grid
            .points
            .iter()
            .zip(&self.est.table.cells)
            .zip(self.psi.iter().zip(&self.grid.weights))
            .map(|((p, c), (&psi, &weight))| CellReport {
                b1: p.b1,
                b2: p.b2,
                x: p.x,
                q: p.q,
                nu_hat: c.nu,
                sigma_hat: c.sigma_eps,
                psi,
                weight,
            })
            .collect();
        GroupReport {
            group: self.key,
            n_agents: self.n_agents,
            games: self.n_games,
            s: self.est.table.s,
            q1: self.grid.q1,
            kappa: self.kappa,
            beta: self.beta,
            support: self.grid.support,
            floor: self.est.table.floor.expect("group estimates carry a floor"),
            statistic: self.statistic,
            cells,
        }
    }
}

/// Bootstrap statistics summed over groups, one per replication, in
/// replication order. Groups draw from one stream per replication in
/// ascending group order.
pub(crate) fn bootstrap_plans(plans: &[GroupPlan], n_boot: usize, seed: u64) -> Vec<f64> {
    (0..n_boot)
        .into_par_iter()
        .map_init(Vec::new, |weights, r| {
            let mut rng: StreamRng = rng::stream(seed, &[rng::BOOTSTRAP, r as u64]);
            plans
                .iter()
                .map(|plan| {
                    draw_multiplicities(plan.n_games, &mut rng, weights);
                    plan.boot_stat(weights)
                })
                .sum()
        })
        .collect()
}

pub(crate) fn run_plans(plans: Vec<GroupPlan>, config: &TestConfig) -> Result<TestResult> {
    let statistic = plans.iter().map(|p| p.statistic).sum();
    let boot = bootstrap_plans(&plans, config.n_boot, config.seed);
    let groups = plans.iter().map(GroupPlan::report).collect();
    TestResult::assemble(statistic, boot, groups, config, config.n_boot)
}

fn single_group(sample: &ActionSample) -> Result<(u32, Vec<GameRecord>)> {
    let mut groups = sample.split_groups();
    if groups.len() != 1 {
        return Err(Error::Config(format!(
            "sample has {} groups with different numbers of agents; use the joint test",
            groups.len()
        )));
    }
    Ok(groups.remove(0))
}

/// Test of a weakly increasing quasi-inverse strategy on a homogeneous sample.
pub fn run_test(sample: &ActionSample, kernel: &MomentKernel, config: &TestConfig) -> Result<TestResult> {
    config.validate()?;
    let (key, games) = single_group(sample)?;
    let support = infer_support(sample, config.support)?;
    let plan = GroupPlan::new(key, &games, kernel, support, 0, config)?;
    run_plans(vec![plan], config)
}

/// Joint test across groups with different numbers of agents.
///
/// Each group gets its own `q1`, tuning, and standard errors; all groups share
/// the pooled action support and one critical value.
pub fn run_test_joint(
    sample: &ActionSample,
    kernel: &MomentKernel,
    config: &TestConfig,
) -> Result<TestResult> {
    config.validate()?;
    let support = match config.support {
        Some((lo, hi)) => Support::new(lo, hi)?,
        None => support_of(sample.actions())?,
    };
    let plans = sample
        .split_groups()
        .into_iter()
        .map(|(key, games)| GroupPlan::new(key, &games, kernel, support, 0, config))
        .collect::<Result<Vec<_>>>()?;
    run_plans(plans, config)
}
