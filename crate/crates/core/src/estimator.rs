//! Sample analogues of `M(b, q)`, `W(b, q)` and `nu(b1, b2, q)`, their
//! influence functions, and the epsilon-floored standard errors.
//!
//! Summation runs in a fixed order (by game, then agent, or by sorted action
//! within a covariate slice) so results do not depend on thread count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::{KernelTerms, MomentKernel, ObservationContext};
use crate::grid::{Grid, Window};
use crate::sample::{ActionSample, GameRecord, Support};

/// One observed action with its kernel coefficients.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Observation {
    /// Index of the game within its group.
    pub game: usize,
    pub action: f64,
    pub terms: KernelTerms,
    pub x: Option<f64>,
}

impl Observation {
    /// `(m, w)` for a window, zero outside the covariate window.
    #[inline]
    pub fn eval(&self, window: Window, x_window: Option<Window>) -> (f64, f64) {
        if let (Some(xw), Some(x)) = (x_window, self.x) {
            if !xw.contains(x) {
                return (0.0, 0.0);
            }
        }
        self.terms.eval(self.action, window)
    }
}

/// Flattens games into observations, game by game.
pub(crate) fn observations(
    games: &[GameRecord],
    kernel: &MomentKernel,
    with_covariate: bool,
) -> Result<Vec<Observation>> {
    let mut out = Vec::with_capacity(games.iter().map(GameRecord::n_agents).sum());
    for (g, game) in games.iter().enumerate() {
        let x = if with_covariate {
            Some(game.covariate().ok_or_else(|| {
                Error::Covariate(format!("game {:?} has no covariate", game.id))
            })?)
        } else {
            None
        };
        for &action in &game.actions {
            let ctx = ObservationContext {
                action,
                co_actions: &game.actions,
                covariate: x,
            };
            out.push(Observation {
                game: g,
                action,
                terms: kernel.terms(&ctx)?,
                x,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct SliceWindow {
    window: Window,
    /// Global window index.
    id: usize,
    /// Members with action `< lo`, `<= lo`, `<= hi`.
    lt_lo: usize,
    le_lo: usize,
    le_hi: usize,
}

/// Observations sharing one covariate window, sorted by action.
#[derive(Debug, Clone)]
struct Slice {
    games: Vec<u32>,
    alpha: Vec<f64>,
    gamma: Vec<f64>,
    gamma_b: Vec<f64>,
    delta: Vec<f64>,
    omega: Vec<f64>,
    windows: Vec<SliceWindow>,
}

/// Window sums `M` and `W` for every window of a grid, evaluated under
/// arbitrary per-game weights in O(observations + windows).
#[derive(Debug, Clone)]
pub(crate) struct WindowEngine {
    slices: Vec<Slice>,
    n_windows: usize,
    /// Normalizing count `S`.
    s: usize,
}

/// Window layout of a grid: the b-cells at each `q` (per covariate cell).
#[derive(Debug, Clone)]
pub(crate) struct WindowLayout {
    offsets: Vec<usize>,
    covariate: bool,
    pub n_windows: usize,
}

impl WindowLayout {
    pub fn new(q1: u32, covariate: bool) -> Self {
        let mut offsets = vec![0; q1 as usize + 2];
        let mut next = 0;
        for q in 2..=q1 {
            offsets[q as usize] = next;
            next += if covariate { (q * q) as usize } else { q as usize };
        }
        Self {
            offsets,
            covariate,
            n_windows: next,
        }
    }

    #[inline]
    pub fn index(&self, q: u32, j: u32, jx: Option<u32>) -> usize {
        let base = self.offsets[q as usize];
        match jx {
            Some(jx) if self.covariate => base + (jx * q + j) as usize,
            _ => base + j as usize,
        }
    }

    /// `(b-window, x-window)` groups, one per `(q, jx)`, each with its `q` windows.
    pub fn blocks(&self, grid: &Grid) -> Vec<(u32, Option<u32>)> {
        let mut out = Vec::new();
        for q in 2..=grid.q1 {
            if self.covariate {
                out.extend((0..q).map(|jx| (q, Some(jx))));
            } else {
                out.push((q, None));
            }
        }
        out
    }
}

impl WindowEngine {
    pub fn new(obs: &[Observation], grid: &Grid, s: usize) -> Self {
        let layout = WindowLayout::new(grid.q1, grid.d_x == 1);
        let mut slices = Vec::new();
        if layout.covariate {
            for (q, jx) in layout.blocks(grid) {
                let xw = Window::unit_cell(q, jx.unwrap_or(0));
                let members: Vec<usize> = (0..obs.len())
                    .filter(|&i| obs[i].x.is_some_and(|x| xw.contains(x)))
                    .collect();
                let windows: Vec<(usize, Window)> = (0..q)
                    .map(|j| (layout.index(q, j, jx), Window::cell(&grid.support, q, j)))
                    .collect();
                slices.push(Slice::new(obs, members, &windows));
            }
        } else {
            let windows: Vec<(usize, Window)> = (2..=grid.q1)
                .flat_map(|q| {
                    let layout = &layout;
                    (0..q).map(move |j| (layout.index(q, j, None), Window::cell(&grid.support, q, j)))
                })
                .collect();
            slices.push(Slice::new(obs, (0..obs.len()).collect(), &windows));
        }
        Self {
            slices,
            n_windows: layout.n_windows,
            s,
        }
    }

    /// `(M, W)` per window, with observation weights taken from their game.
    pub fn moments(&self, game_weights: &[f64]) -> Vec<(f64, f64)> {
        let mut out = vec![(0.0, 0.0); self.n_windows];
        let inv_s = 1.0 / self.s as f64;
        let mut scratch = Prefix::default();
        for slice in &self.slices {
            scratch.fill(slice, game_weights);
            for sw in &slice.windows {
                out[sw.id] = scratch.window(sw, inv_s);
            }
        }
        out
    }

    /// `(M, W)` per window on the unweighted sample.
    pub fn moments_unweighted(&self, n_games: usize) -> Vec<(f64, f64)> {
        self.moments(&vec![1.0; n_games])
    }
}

impl Slice {
    fn new(obs: &[Observation], mut members: Vec<usize>, windows: &[(usize, Window)]) -> Self {
        members.sort_by(|&a, &b| obs[a].action.total_cmp(&obs[b].action).then(a.cmp(&b)));
        let actions: Vec<f64> = members.iter().map(|&i| obs[i].action).collect();
        let pick = |f: &dyn Fn(&Observation) -> f64| -> Vec<f64> {
            members.iter().map(|&i| f(&obs[i])).collect()
        };
        let windows = windows
            .iter()
            .map(|&(id, window)| SliceWindow {
                window,
                id,
                lt_lo: actions.partition_point(|&a| a < window.lo),
                le_lo: actions.partition_point(|&a| a <= window.lo),
                le_hi: actions.partition_point(|&a| a <= window.hi),
            })
            .collect();
        Self {
            games: members.iter().map(|&i| obs[i].game as u32).collect(),
            alpha: pick(&|o| o.terms.alpha),
            gamma: pick(&|o| o.terms.gamma),
            gamma_b: pick(&|o| o.terms.gamma * o.action),
            delta: pick(&|o| o.terms.delta),
            omega: pick(&|o| o.terms.omega),
            windows,
        }
    }
}

/// Prefix sums of weighted coefficients over one slice.
#[derive(Default)]
struct Prefix {
    alpha: Vec<f64>,
    gamma: Vec<f64>,
    gamma_b: Vec<f64>,
    delta_total: f64,
    omega: Vec<f64>,
    has_gamma: bool,
}

impl Prefix {
    fn fill(&mut self, slice: &Slice, game_weights: &[f64]) {
        let n = slice.games.len();
        for v in [&mut self.alpha, &mut self.gamma, &mut self.gamma_b, &mut self.omega] {
            v.clear();
            v.reserve(n + 1);
            v.push(0.0);
        }
        self.has_gamma = slice.gamma.iter().any(|&g| g != 0.0);
        let (mut pa, mut pg, mut pgb, mut po, mut dt) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in 0..n {
            let wt = game_weights[slice.games[k] as usize];
            pa += wt * slice.alpha[k];
            po += wt * slice.omega[k];
            dt += wt * slice.delta[k];
            self.alpha.push(pa);
            self.omega.push(po);
            if self.has_gamma {
                pg += wt * slice.gamma[k];
                pgb += wt * slice.gamma_b[k];
                self.gamma.push(pg);
                self.gamma_b.push(pgb);
            }
        }
        self.delta_total = dt;
    }

    #[inline]
    fn window(&self, sw: &SliceWindow, inv_s: f64) -> (f64, f64) {
        let Window { lo, hi } = sw.window;
        let mut m = self.alpha[sw.le_hi] - self.alpha[sw.lt_lo];
        if self.has_gamma {
            let upper = hi * self.gamma[sw.le_hi] - self.gamma_b[sw.le_hi];
            let lower = lo * self.gamma[sw.le_lo] - self.gamma_b[sw.le_lo];
            m += upper - lower;
        }
        if self.delta_total != 0.0 {
            m += (hi - lo) * self.delta_total;
        }
        let w = self.omega[sw.le_hi] - self.omega[sw.lt_lo];
        (m * inv_s, w * inv_s)
    }
}

/// Where the variance floor came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FloorSource {
    /// `epsilon` times the variance at the anchor cell `(lo, mid, 2)`.
    Anchor,
    /// The anchor variance was zero; `epsilon` times the largest cell variance.
    MaxCell,
    /// Every variance was zero; the floor is `epsilon`.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceFloor {
    pub anchor_sigma2: f64,
    /// Floor applied to every cell's variance.
    pub floor_sigma2: f64,
    pub source: FloorSource,
}

impl VarianceFloor {
    pub fn new(anchor_sigma2: f64, cell_sigma2: &[f64], epsilon: f64) -> Self {
        if anchor_sigma2 > 0.0 {
            return Self {
                anchor_sigma2,
                floor_sigma2: epsilon * anchor_sigma2,
                source: FloorSource::Anchor,
            };
        }
        let max = cell_sigma2.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            Self {
                anchor_sigma2,
                floor_sigma2: epsilon * max,
                source: FloorSource::MaxCell,
            }
        } else {
            Self {
                anchor_sigma2,
                floor_sigma2: epsilon,
                source: FloorSource::Unit,
            }
        }
    }

    /// `sqrt(max(sigma2, floor))`.
    pub fn apply(&self, sigma2: f64) -> f64 {
        sigma2.max(self.floor_sigma2).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellEstimate {
    /// `M(b1, q)`, `M(b2, q)`, `W(b1, q)`, `W(b2, q)`.
    pub m1: f64,
    pub m2: f64,
    pub w1: f64,
    pub w2: f64,
    pub nu: f64,
    /// Influence-function variance of `sqrt(S) * nu`.
    pub sigma2: f64,
    /// Floored standard error.
    pub sigma_eps: f64,
}

/// Estimates for every grid cell, aligned with `Grid::points`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub s: usize,
    pub cells: Vec<CellEstimate>,
    pub floor: Option<VarianceFloor>,
}

#[inline]
pub(crate) fn nu_of(m1: f64, w1: f64, m2: f64, w2: f64) -> f64 {
    m2 * w1 - m1 * w2
}

pub(crate) fn cell_windows(grid: &Grid, layout: &WindowLayout) -> Vec<(usize, usize)> {
    grid.points
        .iter()
        .map(|p| (layout.index(p.q, p.j1, p.jx), layout.index(p.q, p.j2, p.jx)))
        .collect()
}

fn check_grid_sample(sample_obs: usize, grid: &Grid) -> Result<()> {
    if sample_obs == 0 {
        return Err(Error::InvalidSample("empty sample".into()));
    }
    if grid.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    Ok(())
}

/// Sample moments on every grid cell; variances are left at zero.
pub fn estimate_moments(
    sample: &ActionSample,
    kernel: &MomentKernel,
    grid: &Grid,
) -> Result<MomentTable> {
    check_grid_sample(sample.num_obs(), grid)?;
    let obs = observations(sample.games(), kernel, grid.d_x == 1)?;
    let engine = WindowEngine::new(&obs, grid, obs.len());
    let wm = engine.moments_unweighted(sample.num_games());
    let layout = WindowLayout::new(grid.q1, grid.d_x == 1);
    let cells = cell_windows(grid, &layout)
        .into_iter()
        .map(|(i1, i2)| {
            let ((m1, w1), (m2, w2)) = (wm[i1], wm[i2]);
            CellEstimate {
                m1,
                m2,
                w1,
                w2,
                nu: nu_of(m1, w1, m2, w2),
                sigma2: 0.0,
                sigma_eps: 0.0,
            }
        })
        .collect();
    Ok(MomentTable {
        s: obs.len(),
        cells,
        floor: None,
    })
}

/// Dense estimated influence values; rows are observations in game order.
#[derive(Debug, Clone)]
pub struct InfluenceRows {
    /// Per cell: `phi_M(b1)`, `phi_M(b2)`, `phi_W(b1)`, `phi_W(b2)`, `phi_nu`,
    /// each with one entry per observation.
    pub cells: Vec<CellInfluence>,
    /// `phi_nu` at the anchor cell `(lo, (lo + hi) / 2, 2)`.
    pub anchor: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CellInfluence {
    pub phi_m1: Vec<f64>,
    pub phi_m2: Vec<f64>,
    pub phi_w1: Vec<f64>,
    pub phi_w2: Vec<f64>,
    pub phi_nu: Vec<f64>,
}

/// Influence values with estimated centers, for every cell and observation.
pub fn influence_rows(
    sample: &ActionSample,
    kernel: &MomentKernel,
    grid: &Grid,
    table: &MomentTable,
) -> Result<InfluenceRows> {
    let obs = observations(sample.games(), kernel, grid.d_x == 1)?;
    let cells = grid
        .points
        .iter()
        .zip(&table.cells)
        .map(|(p, c)| {
            let (win1, win2, xw) = (p.window1(&grid.support), p.window2(&grid.support), p.x_window());
            let mut ci = CellInfluence {
                phi_m1: Vec::with_capacity(obs.len()),
                phi_m2: Vec::with_capacity(obs.len()),
                phi_w1: Vec::with_capacity(obs.len()),
                phi_w2: Vec::with_capacity(obs.len()),
                phi_nu: Vec::with_capacity(obs.len()),
            };
            for o in &obs {
                let (m1, w1) = o.eval(win1, xw);
                let (m2, w2) = o.eval(win2, xw);
                let (pm1, pm2, pw1, pw2) = (m1 - c.m1, m2 - c.m2, w1 - c.w1, w2 - c.w2);
                ci.phi_nu.push(c.w1 * pm2 + c.m2 * pw1 - c.w2 * pm1 - c.m1 * pw2);
                ci.phi_m1.push(pm1);
                ci.phi_m2.push(pm2);
                ci.phi_w1.push(pw1);
                ci.phi_w2.push(pw2);
            }
            ci
        })
        .collect();
    Ok(InfluenceRows {
        cells,
        anchor: anchor_influence(&obs, &grid.support),
    })
}

/// Fills `sigma2`, `sigma_eps` and the floor from influence rows.
pub fn apply_variance(table: &mut MomentTable, influence: &InfluenceRows, epsilon: f64) {
    for (cell, ci) in table.cells.iter_mut().zip(&influence.cells) {
        cell.sigma2 = mean_square(&ci.phi_nu);
    }
    let anchor = mean_square(&influence.anchor);
    let sigma2: Vec<f64> = table.cells.iter().map(|c| c.sigma2).collect();
    let floor = VarianceFloor::new(anchor, &sigma2, epsilon);
    for cell in &mut table.cells {
        cell.sigma_eps = floor.apply(cell.sigma2);
    }
    table.floor = Some(floor);
}

pub(crate) fn mean_square(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
}

/// Windows `[lo, mid]` and `[mid, hi]` of the anchor cell (`b1 = lo`, `b2 = mid`).
pub(crate) fn anchor_windows(support: &Support) -> (Window, Window) {
    (Window::cell(support, 2, 0), Window::cell(support, 2, 1))
}

/// `phi_nu` at the anchor cell, ignoring any covariate.
pub(crate) fn anchor_influence(obs: &[Observation], support: &Support) -> Vec<f64> {
    let (win1, win2) = anchor_windows(support);
    let n = obs.len() as f64;
    let vals: Vec<((f64, f64), (f64, f64))> = obs
        .iter()
        .map(|o| (o.eval(win1, None), o.eval(win2, None)))
        .collect();
    let (mut m1, mut w1, mut m2, mut w2) = (0.0, 0.0, 0.0, 0.0);
    for &((a, b), (c, d)) in &vals {
        m1 += a;
        w1 += b;
        m2 += c;
        w2 += d;
    }
    let (m1, w1, m2, w2) = (m1 / n, w1 / n, m2 / n, w2 / n);
    vals.iter()
        .map(|&((a, b), (c, d))| w1 * (c - m2) + m2 * (b - w1) - w2 * (a - m1) - m1 * (d - w2))
        .collect()
}

/// Estimates for one homogeneous group: moments, influence variances, floor.
///
/// Variances are computed block by block (all windows at one `q` and
/// covariate cell), so memory stays at `q * S` instead of `cells * S`.
#[derive(Debug, Clone)]
pub(crate) struct GroupEstimate {
    pub engine: WindowEngine,
    pub cell_windows: Vec<(usize, usize)>,
    pub table: MomentTable,
}

impl GroupEstimate {
    pub fn new(games: &[GameRecord], kernel: &MomentKernel, grid: &Grid, epsilon: f64) -> Result<Self> {
        let obs = observations(games, kernel, grid.d_x == 1)?;
        check_grid_sample(obs.len(), grid)?;
        let s = obs.len();
        let engine = WindowEngine::new(&obs, grid, s);
        let layout = WindowLayout::new(grid.q1, grid.d_x == 1);
        let wm = engine.moments_unweighted(games.len());
        let cell_windows = cell_windows(grid, &layout);
        let mut cells: Vec<CellEstimate> = cell_windows
            .iter()
            .map(|&(i1, i2)| {
                let ((m1, w1), (m2, w2)) = (wm[i1], wm[i2]);
                CellEstimate {
                    m1,
                    m2,
                    w1,
                    w2,
                    nu: nu_of(m1, w1, m2, w2),
                    sigma2: 0.0,
                    sigma_eps: 0.0,
                }
            })
            .collect();
        block_variances(&obs, grid, &layout, &mut cells);
        let anchor = mean_square(&anchor_influence(&obs, &grid.support));
        let sigma2: Vec<f64> = cells.iter().map(|c| c.sigma2).collect();
        let floor = VarianceFloor::new(anchor, &sigma2, epsilon);
        for c in &mut cells {
            c.sigma_eps = floor.apply(c.sigma2);
        }
        Ok(Self {
            engine,
            cell_windows,
            table: MomentTable {
                s,
                cells,
                floor: Some(floor),
            },
        })
    }
}

fn block_variances(obs: &[Observation], grid: &Grid, layout: &WindowLayout, cells: &mut [CellEstimate]) {
    let n = obs.len();
    let mut cursor = 0;
    for (q, jx) in layout.blocks(grid) {
        let xw = jx.map(|jx| Window::unit_cell(q, jx));
        let qn = q as usize;
        let mut m = vec![0.0; qn * n];
        let mut w = vec![0.0; qn * n];
        for j in 0..qn {
            let win = Window::cell(&grid.support, q, j as u32);
            for (i, o) in obs.iter().enumerate() {
                let (mv, wv) = o.eval(win, xw);
                m[j * n + i] = mv;
                w[j * n + i] = wv;
            }
        }
        // points are enumerated q-major, then jx, then (j1, j2)
        let count = qn * (qn - 1) / 2;
        for (p, cell) in grid.points[cursor..cursor + count]
            .iter()
            .zip(&mut cells[cursor..cursor + count])
        {
            debug_assert!(p.q == q && p.jx == jx);
            let (j1, j2) = (p.j1 as usize, p.j2 as usize);
            let (m1, w1) = (&m[j1 * n..(j1 + 1) * n], &w[j1 * n..(j1 + 1) * n]);
            let (m2, w2) = (&m[j2 * n..(j2 + 1) * n], &w[j2 * n..(j2 + 1) * n]);
            let c = *cell;
            let mut acc = 0.0;
            for i in 0..n {
                let phi = c.w1 * (m2[i] - c.m2) + c.m2 * (w1[i] - c.w1)
                    - c.w2 * (m1[i] - c.m1)
                    - c.m1 * (w2[i] - c.w2);
                acc += phi * phi;
            }
            cell.sigma2 = acc / n as f64;
        }
        cursor += count;
    }
    debug_assert_eq!(cursor, cells.len());
}
