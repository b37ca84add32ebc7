//! Per-observation moment kernels for each game class.
//!
//! A kernel maps one observed action (together with the other actions in its
//! game) and a window `[b, b + a/q]` to a pair `(m, w)`. Sample means of `m`
//! and `w` estimate `M(b, q)` and `W(b, q)`, whose cross products give the
//! moment inequalities `nu(b1, b2, q) <= 0`.
//!
//! Every kernel has the affine form
//!
//! ```text
//! m = alpha * 1(B in window)
//!   + gamma * [1(B <= hi)(hi - B) - 1(B <= lo)(lo - B)]
//!   + delta * (hi - lo)
//! w = omega * 1(B in window)
//! ```
//!
//! with observation-level coefficients that do not depend on the window.
//! [`KernelTerms`] carries those coefficients; the estimator builds prefix sums
//! over them so that every window costs O(1) per bootstrap draw.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Window;

/// An observed action in the context of its game.
#[derive(Debug, Clone, Copy)]
pub struct ObservationContext<'a> {
    pub action: f64,
    /// All actions of the game, own action included.
    pub co_actions: &'a [f64],
    /// Covariate rescaled to `[0, 1]`.
    pub covariate: Option<f64>,
}

impl<'a> ObservationContext<'a> {
    pub fn new(action: f64, co_actions: &'a [f64]) -> Self {
        Self {
            action,
            co_actions,
            covariate: None,
        }
    }

    pub fn with_covariate(mut self, x: f64) -> Self {
        self.covariate = Some(x);
        self
    }

    pub fn n(&self) -> usize {
        self.co_actions.len()
    }

    fn total(&self) -> f64 {
        self.co_actions.iter().sum()
    }

    fn rivals_factor(&self) -> Result<f64> {
        match self.n() {
            n if n >= 2 => Ok(1.0 / (n - 1) as f64),
            n => Err(Error::InvalidGame(format!(
                "game has {n} agent(s); at least 2 are required"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GameClass {
    AuctionHigh,
    AuctionLow,
    Contest,
    PublicGood,
    Cournot,
}

impl GameClass {
    pub fn name(self) -> &'static str {
        match self {
            GameClass::AuctionHigh => "auction-high",
            GameClass::AuctionLow => "auction-low",
            GameClass::Contest => "contest",
            GameClass::PublicGood => "public-good",
            GameClass::Cournot => "cournot",
        }
    }

    /// Whether allocation is homogeneous of degree zero and payment of degree
    /// one, which is what action homogenization needs.
    pub fn is_scale_homogeneous(self) -> bool {
        matches!(
            self,
            GameClass::AuctionHigh | GameClass::AuctionLow | GameClass::Contest
        )
    }
}

impl fmt::Display for GameClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GameClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "auction-high" | "auction" => GameClass::AuctionHigh,
            "auction-low" | "procurement" => GameClass::AuctionLow,
            "contest" => GameClass::Contest,
            "public-good" => GameClass::PublicGood,
            "cournot" => GameClass::Cournot,
            other => return Err(Error::Config(format!("unknown game class {other:?}"))),
        })
    }
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Derivative of the common benefit function of total contributions.
#[derive(Clone)]
pub enum BenefitDerivative {
    /// `Omega(s) = gamma * s^rho`, so `Omega'(s) = gamma * rho * s^(rho - 1)`.
    Power { gamma: f64, rho: f64 },
    Custom(ScalarFn),
}

impl BenefitDerivative {
    pub fn power(gamma: f64, rho: f64) -> Result<Self> {
        if !(gamma > 0.0 && rho > 0.0 && rho < 1.0) {
            return Err(Error::ModelParameter(format!(
                "benefit family needs gamma > 0 and 0 < rho < 1, got gamma = {gamma}, rho = {rho}"
            )));
        }
        Ok(BenefitDerivative::Power { gamma, rho })
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            BenefitDerivative::Power { gamma, rho } => gamma * rho * s.powf(rho - 1.0),
            BenefitDerivative::Custom(f) => f(s),
        }
    }
}

impl fmt::Debug for BenefitDerivative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenefitDerivative::Power { gamma, rho } => f
                .debug_struct("Power")
                .field("gamma", gamma)
                .field("rho", rho)
                .finish(),
            BenefitDerivative::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Known inverse demand and its derivative.
#[derive(Clone)]
pub enum InverseDemand {
    /// `I(s) = alpha - beta * s`.
    Linear { alpha: f64, beta: f64 },
    Custom { value: ScalarFn, slope: ScalarFn },
}

impl InverseDemand {
    pub fn linear(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0) {
            return Err(Error::ModelParameter(format!(
                "linear inverse demand needs alpha > 0 and beta > 0, got alpha = {alpha}, beta = {beta}"
            )));
        }
        Ok(InverseDemand::Linear { alpha, beta })
    }

    pub fn value(&self, s: f64) -> f64 {
        match self {
            InverseDemand::Linear { alpha, beta } => alpha - beta * s,
            InverseDemand::Custom { value, .. } => value(s),
        }
    }

    pub fn slope(&self, s: f64) -> f64 {
        match self {
            InverseDemand::Linear { beta, .. } => -beta,
            InverseDemand::Custom { slope, .. } => slope(s),
        }
    }
}

impl fmt::Debug for InverseDemand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InverseDemand::Linear { alpha, beta } => f
                .debug_struct("Linear")
                .field("alpha", alpha)
                .field("beta", beta)
                .finish(),
            InverseDemand::Custom { .. } => f.write_str("Custom(..)"),
        }
    }
}

/// A game class together with its structural inputs.
#[derive(Debug, Clone)]
pub enum MomentKernel {
    AuctionHigh,
    AuctionLow,
    Contest,
    PublicGood(BenefitDerivative),
    /// The population curvature condition `-2 E[I'] > E[I''] b` is assumed,
    /// not checked.
    Cournot(InverseDemand),
}

impl MomentKernel {
    pub fn class(&self) -> GameClass {
        match self {
            MomentKernel::AuctionHigh => GameClass::AuctionHigh,
            MomentKernel::AuctionLow => GameClass::AuctionLow,
            MomentKernel::Contest => GameClass::Contest,
            MomentKernel::PublicGood(_) => GameClass::PublicGood,
            MomentKernel::Cournot(_) => GameClass::Cournot,
        }
    }

    /// `(m, w)` for one observation and window.
    pub fn evaluate(&self, ctx: &ObservationContext<'_>, window: Window) -> Result<(f64, f64)> {
        match self {
            MomentKernel::AuctionHigh => kernel_auction_high(ctx, window),
            MomentKernel::AuctionLow => kernel_auction_low(ctx, window),
            MomentKernel::Contest => kernel_contest(ctx, window),
            MomentKernel::PublicGood(omega) => kernel_public_good(ctx, window, omega),
            MomentKernel::Cournot(demand) => kernel_cournot(ctx, window, demand),
        }
    }

    /// Window-free coefficients of this observation's kernel.
    pub fn terms(&self, ctx: &ObservationContext<'_>) -> Result<KernelTerms> {
        let b = ctx.action;
        let terms = match self {
            MomentKernel::AuctionHigh => KernelTerms {
                alpha: b,
                gamma: ctx.rivals_factor()?,
                delta: 0.0,
                omega: 1.0,
            },
            MomentKernel::AuctionLow => {
                let r = ctx.rivals_factor()?;
                KernelTerms {
                    alpha: b,
                    gamma: r,
                    delta: -r,
                    omega: 1.0,
                }
            }
            MomentKernel::Contest => {
                let d = win_share(ctx)?;
                KernelTerms {
                    alpha: b,
                    gamma: 0.0,
                    delta: 0.0,
                    omega: d * (1.0 - d),
                }
            }
            MomentKernel::PublicGood(omega) => KernelTerms {
                alpha: 1.0,
                gamma: 0.0,
                delta: 0.0,
                omega: marginal_benefit(ctx, omega)?,
            },
            MomentKernel::Cournot(demand) => KernelTerms {
                alpha: 1.0,
                gamma: 0.0,
                delta: 0.0,
                omega: marginal_revenue(ctx, demand)?,
            },
        };
        Ok(terms)
    }
}

/// Window-free kernel coefficients of one observation; see the module docs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelTerms {
    pub alpha: f64,
    pub gamma: f64,
    pub delta: f64,
    pub omega: f64,
}

impl KernelTerms {
    pub fn eval(&self, action: f64, window: Window) -> (f64, f64) {
        let inside = window.contains(action);
        let mut m = self.delta * window.width();
        if inside {
            m += self.alpha;
        }
        if self.gamma != 0.0 {
            m += self.gamma * (below(action, window.hi) - below(action, window.lo));
        }
        let w = if inside { self.omega } else { 0.0 };
        (m, w)
    }
}

/// `1(B <= c)(c - B)`.
#[inline]
fn below(action: f64, c: f64) -> f64 {
    if action <= c {
        c - action
    } else {
        0.0
    }
}

#[inline]
fn indicator(window: Window, action: f64) -> f64 {
    if window.contains(action) {
        1.0
    } else {
        0.0
    }
}

fn win_share(ctx: &ObservationContext<'_>) -> Result<f64> {
    let total = ctx.total();
    if !(total > 0.0) {
        return Err(Error::InvalidGame(format!(
            "contest game has nonpositive total effort {total}"
        )));
    }
    Ok(ctx.action / total)
}

fn marginal_benefit(ctx: &ObservationContext<'_>, omega: &BenefitDerivative) -> Result<f64> {
    let total = ctx.total();
    let v = omega.eval(total);
    if !v.is_finite() {
        return Err(Error::ModelParameter(format!(
            "benefit derivative is {v} at total contribution {total}"
        )));
    }
    Ok(v)
}

fn marginal_revenue(ctx: &ObservationContext<'_>, demand: &InverseDemand) -> Result<f64> {
    let total = ctx.total();
    let v = demand.value(total) + demand.slope(total) * ctx.action;
    if !v.is_finite() {
        return Err(Error::ModelParameter(format!(
            "inverse demand term is {v} at total output {total}"
        )));
    }
    Ok(v)
}

/// High-bid first-price auction.
pub fn kernel_auction_high(ctx: &ObservationContext<'_>, window: Window) -> Result<(f64, f64)> {
    let r = ctx.rivals_factor()?;
    let b = ctx.action;
    let w = indicator(window, b);
    let m = b * w + r * (below(b, window.hi) - below(b, window.lo));
    Ok((m, w))
}

/// Low-bid (procurement) first-price auction.
pub fn kernel_auction_low(ctx: &ObservationContext<'_>, window: Window) -> Result<(f64, f64)> {
    let (m, w) = kernel_auction_high(ctx, window)?;
    Ok((m - ctx.rivals_factor()? * window.width(), w))
}

/// Tullock contest with the symmetric ratio success function.
pub fn kernel_contest(ctx: &ObservationContext<'_>, window: Window) -> Result<(f64, f64)> {
    let d = win_share(ctx)?;
    let ind = indicator(window, ctx.action);
    Ok((ctx.action * ind, ind * d * (1.0 - d)))
}

/// Voluntary public-good provision with known benefit derivative.
pub fn kernel_public_good(
    ctx: &ObservationContext<'_>,
    window: Window,
    omega: &BenefitDerivative,
) -> Result<(f64, f64)> {
    let ind = indicator(window, ctx.action);
    Ok((ind, ind * marginal_benefit(ctx, omega)?))
}

/// Cournot competition with known inverse demand.
pub fn kernel_cournot(
    ctx: &ObservationContext<'_>,
    window: Window,
    demand: &InverseDemand,
) -> Result<(f64, f64)> {
    let ind = indicator(window, ctx.action);
    Ok((ind, ind * marginal_revenue(ctx, demand)?))
}

/// Restricts a kernel to games whose covariate lies in `x_window`.
pub fn kernel_with_covariate(
    kernel: &MomentKernel,
    ctx: &ObservationContext<'_>,
    window: Window,
    x_window: Window,
) -> Result<(f64, f64)> {
    let x = ctx
        .covariate
        .ok_or_else(|| Error::Covariate("observation has no covariate".into()))?;
    let (m, w) = kernel.evaluate(ctx, window)?;
    let ind = indicator(x_window, x);
    Ok((m * ind, w * ind))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn win(b: f64, q: u32, a: f64) -> Window {
        Window::new(b, b + a / f64::from(q))
    }

    const EPS: f64 = 1e-15;

    #[test]
    fn auction_high_hand_values() {
        let game = [0.5, 0.9];
        let ctx = ObservationContext::new(0.5, &game);
        let (m, w) = kernel_auction_high(&ctx, win(0.25, 2, 1.0)).unwrap();
        assert!((m - 0.75).abs() < EPS && w == 1.0);

        let game = [0.1, 0.9];
        let ctx = ObservationContext::new(0.1, &game);
        let (m, w) = kernel_auction_high(&ctx, win(0.5, 2, 1.0)).unwrap();
        assert!((m - 0.5).abs() < EPS && w == 0.0);

        // closed window on both ends
        let game = [0.25, 0.9];
        let ctx = ObservationContext::new(0.25, &game);
        assert_eq!(kernel_auction_high(&ctx, win(0.25, 2, 1.0)).unwrap().1, 1.0);
        assert_eq!(kernel_auction_high(&ctx, win(0.0, 4, 1.0)).unwrap().1, 1.0);
    }

    #[test]
    fn auction_low_hand_values() {
        let game = [0.5, 0.9];
        let ctx = ObservationContext::new(0.5, &game);
        let (m, w) = kernel_auction_low(&ctx, win(0.25, 2, 1.0)).unwrap();
        assert!((m - 0.25).abs() < EPS && w == 1.0);

        let game = [0.1, 0.9, 0.3];
        let ctx = ObservationContext::new(0.1, &game);
        let (m, w) = kernel_auction_low(&ctx, win(0.5, 2, 1.0)).unwrap();
        assert!(m.abs() < EPS && w == 0.0);

        // vanishing window leaves only the boundary terms
        let game = [0.3, 0.9];
        let ctx = ObservationContext::new(0.3, &game);
        let (m, _) = kernel_auction_low(&ctx, Window::new(0.6, 0.6)).unwrap();
        assert!(m.abs() < EPS);
    }

    #[test]
    fn auction_needs_two_agents() {
        let game = [0.5];
        let ctx = ObservationContext::new(0.5, &game);
        assert!(matches!(
            kernel_auction_high(&ctx, win(0.0, 2, 1.0)),
            Err(Error::InvalidGame(_))
        ));
    }

    #[test]
    fn contest_hand_values() {
        let game = [0.2, 0.3];
        let ctx = ObservationContext::new(0.2, &game);
        let (m, w) = kernel_contest(&ctx, Window::new(0.1, 0.3)).unwrap();
        assert!((m - 0.2).abs() < EPS);
        assert!((w - 0.24).abs() < EPS);

        let (m, w) = kernel_contest(&ctx, Window::new(0.3, 0.5)).unwrap();
        assert_eq!((m, w), (0.0, 0.0));

        let game = [0.4, 0.4];
        let ctx = ObservationContext::new(0.4, &game);
        let (_, w) = kernel_contest(&ctx, Window::new(0.3, 0.5)).unwrap();
        assert_eq!(w, 0.25);

        let game = [0.0, 0.0];
        let ctx = ObservationContext::new(0.0, &game);
        assert!(kernel_contest(&ctx, Window::new(0.0, 1.0)).is_err());
    }

    #[test]
    fn public_good_hand_values() {
        let omega = BenefitDerivative::power(2.0, 0.5).unwrap();
        let game = [1.0, 3.0];
        let ctx = ObservationContext::new(1.0, &game);
        let (m, w) = kernel_public_good(&ctx, Window::new(0.5, 1.5), &omega).unwrap();
        assert_eq!(m, 1.0);
        assert!((w - 0.5).abs() < EPS);
        let (m, w) = kernel_public_good(&ctx, Window::new(2.0, 3.0), &omega).unwrap();
        assert_eq!((m, w), (0.0, 0.0));

        let bad = BenefitDerivative::Custom(Arc::new(|_| f64::NAN));
        assert!(matches!(
            kernel_public_good(&ctx, Window::new(0.5, 1.5), &bad),
            Err(Error::ModelParameter(_))
        ));
        assert!(BenefitDerivative::power(1.0, 1.0).is_err());
    }

    #[test]
    fn cournot_hand_values() {
        let demand = InverseDemand::linear(10.0, 1.0).unwrap();
        let game = [2.0, 3.0];
        let ctx = ObservationContext::new(2.0, &game);
        let (m, w) = kernel_cournot(&ctx, Window::new(1.5, 2.5), &demand).unwrap();
        assert_eq!((m, w), (1.0, 3.0));
        let (m, w) = kernel_cournot(&ctx, Window::new(2.5, 3.5), &demand).unwrap();
        assert_eq!((m, w), (0.0, 0.0));
    }

    #[test]
    fn covariate_restriction() {
        let game = [0.5, 0.9];
        let k = MomentKernel::AuctionHigh;
        let inside = ObservationContext::new(0.5, &game).with_covariate(0.3);
        let base = k.evaluate(&inside, win(0.25, 2, 1.0)).unwrap();
        let got = kernel_with_covariate(&k, &inside, win(0.25, 2, 1.0), Window::unit_cell(2, 0));
        assert_eq!(got.unwrap(), base);

        let outside = ObservationContext::new(0.5, &game).with_covariate(0.7);
        let got = kernel_with_covariate(&k, &outside, win(0.25, 2, 1.0), Window::unit_cell(2, 0));
        assert_eq!(got.unwrap(), (0.0, 0.0));

        let (m, w) = kernel_with_covariate(
            &MomentKernel::AuctionLow,
            &inside,
            win(0.25, 2, 1.0),
            Window::unit_cell(2, 0),
        )
        .unwrap();
        assert!((m - 0.25).abs() < EPS && w == 1.0);

        let bare = ObservationContext::new(0.5, &game);
        assert!(matches!(
            kernel_with_covariate(&k, &bare, win(0.25, 2, 1.0), Window::unit_cell(2, 0)),
            Err(Error::Covariate(_))
        ));
    }

    fn kernels() -> Vec<MomentKernel> {
        vec![
            MomentKernel::AuctionHigh,
            MomentKernel::AuctionLow,
            MomentKernel::Contest,
            MomentKernel::PublicGood(BenefitDerivative::power(1.5, 0.4).unwrap()),
            MomentKernel::Cournot(InverseDemand::linear(20.0, 0.7).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn terms_agree_with_kernels(
            game in prop::collection::vec(0.01f64..3.0, 2..6),
            idx in 0usize..6,
            lo in 0.0f64..3.0,
            width in 0.0f64..1.5,
        ) {
            let idx = idx % game.len();
            let ctx = ObservationContext::new(game[idx], &game);
            let window = Window::new(lo, lo + width);
            for k in kernels() {
                let direct = k.evaluate(&ctx, window).unwrap();
                let via_terms = k.terms(&ctx).unwrap().eval(ctx.action, window);
                prop_assert!((direct.0 - via_terms.0).abs() <= 1e-12 * (1.0 + direct.0.abs()));
                prop_assert_eq!(direct.1, via_terms.1);
            }
        }

        #[test]
        fn kernel_bounds(
            game in prop::collection::vec(0.01f64..3.0, 2..6),
            idx in 0usize..6,
            lo in 0.0f64..3.0,
            q in 2u32..20,
        ) {
            let idx = idx % game.len();
            let ctx = ObservationContext::new(game[idx], &game);
            let (b_lo, b_hi) = (0.0, 3.0);
            let window = Window::new(lo, lo + (b_hi - b_lo) / f64::from(q));
            for k in [MomentKernel::AuctionHigh, MomentKernel::AuctionLow] {
                let (m, w) = k.evaluate(&ctx, window).unwrap();
                prop_assert!(m.abs() <= f64::max(b_lo, b_hi) + (b_hi - b_lo) + 1e-12);
                prop_assert!((0.0..=1.0).contains(&w));
            }
            let (_, w) = kernel_contest(&ctx, window).unwrap();
            prop_assert!((0.0..=0.25).contains(&w));
        }

        #[test]
        fn contest_share_is_scale_free(
            game in prop::collection::vec(0.01f64..3.0, 2..6),
            r in 0.1f64..10.0,
        ) {
            let scaled: Vec<f64> = game.iter().map(|b| b * r).collect();
            let t = MomentKernel::Contest.terms(&ObservationContext::new(game[0], &game)).unwrap();
            let ts = MomentKernel::Contest.terms(&ObservationContext::new(scaled[0], &scaled)).unwrap();
            prop_assert!((t.omega - ts.omega).abs() < 1e-12);
        }
    }
}
