//! The instrument grid: hypercube windows over the action support (and
//! optionally the covariate), with weights decaying like `q^-2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::Support;

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    /// The `j`-th of `q` equal cells of the support.
    pub fn cell(support: &Support, q: u32, j: u32) -> Self {
        Self::new(support.edge(q, j), support.edge(q, j + 1))
    }

    /// The `j`-th of `q` equal cells of `[0, 1]`, closed at 1 on top.
    pub fn unit_cell(q: u32, j: u32) -> Self {
        let hi = if j + 1 >= q {
            1.0
        } else {
            f64::from(j + 1) / f64::from(q)
        };
        Self::new(f64::from(j) / f64::from(q), hi)
    }

    #[inline]
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// One instrument `(b1, b2, q)` or `(b1, b2, x, q)` with `b1 > b2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub b1: f64,
    pub b2: f64,
    pub q: u32,
    pub x: Option<f64>,
    /// Cell indices: `b1 = lo + a * j1 / q`, `b2 = lo + a * j2 / q`, `x = jx / q`.
    pub j1: u32,
    pub j2: u32,
    pub jx: Option<u32>,
}

impl GridPoint {
    pub fn window1(&self, support: &Support) -> Window {
        Window::cell(support, self.q, self.j1)
    }

    pub fn window2(&self, support: &Support) -> Window {
        Window::cell(support, self.q, self.j2)
    }

    pub fn x_window(&self) -> Option<Window> {
        self.jx.map(|jx| Window::unit_cell(self.q, jx))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub support: Support,
    pub q1: u32,
    pub d_x: u32,
    pub points: Vec<GridPoint>,
    /// Weight of each point, aligned with `points`; sums to one.
    pub weights: Vec<f64>,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Largest `q` such that the smallest hypercube holds about `n_c` observations.
pub fn choose_q1(s: usize, n_c: usize, d_x: u32) -> u32 {
    let ratio = s as f64 / n_c.max(1) as f64;
    let q1 = ratio.powf(1.0 / f64::from(1 + d_x)).round();
    (q1 as u32).max(2)
}

/// Enumerates every cell pair `b1 > b2` for `q = 2..=q1`, crossed with the
/// `q` covariate cells when `d_x == 1`.
pub fn build_grid(support: Support, q1: u32, d_x: u32) -> Result<Grid> {
    if q1 < 2 {
        return Err(Error::Config(format!("q1 must be at least 2, got {q1}")));
    }
    if d_x > 1 {
        return Err(Error::Config(format!(
            "at most one continuous covariate is supported, got d_x = {d_x}"
        )));
    }
    let norm: f64 = (2..=q1).map(|q| 1.0 / f64::from(q * q)).sum();
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for q in 2..=q1 {
        let x_cells: Vec<Option<u32>> = if d_x == 1 {
            (0..q).map(Some).collect()
        } else {
            vec![None]
        };
        let count = (q * (q - 1) / 2) as usize * x_cells.len();
        let w = 1.0 / f64::from(q * q) / norm / count as f64;
        for &jx in &x_cells {
            for j1 in 1..q {
                for j2 in 0..j1 {
                    points.push(GridPoint {
                        b1: support.edge(q, j1),
                        b2: support.edge(q, j2),
                        q,
                        x: jx.map(|j| f64::from(j) / f64::from(q)),
                        j1,
                        j2,
                        jx,
                    });
                    weights.push(w);
                }
            }
        }
    }
    Ok(Grid {
        support,
        q1,
        d_x,
        points,
        weights,
    })
}
