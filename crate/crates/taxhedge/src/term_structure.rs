//! Vasicek term structure: closed-form zero-coupon bond prices, their rate
//! sensitivities, the tax-scaled bond price, and exact short-rate path
//! simulation.
//!
//! The short rate follows `dr = kappa (theta - r) dt + sigma dW` under the
//! pricing measure. Scaling the rate by `1 - gamma` (a flat tax on returns)
//! yields another Ornstein-Uhlenbeck process with parameters
//! `(kappa, (1-gamma) theta, (1-gamma) sigma)`, which is how the tax-scaled
//! bond price is computed here.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure, Result};
use crate::time::TimeGrid;

/// Short-rate model parameters and initial rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VasicekParams {
    /// Mean-reversion speed (1/time), > 0.
    pub kappa: f64,
    /// Long-run mean rate (1/time).
    pub theta: f64,
    /// Rate volatility (1/time^{3/2}), >= 0. Zero is admitted for
    /// deterministic-rate test scenarios only.
    pub sigma: f64,
    /// Initial short rate (1/time).
    pub r0: f64,
}

impl VasicekParams {
    pub fn new(kappa: f64, theta: f64, sigma: f64, r0: f64) -> Result<Self> {
        ensure(kappa.is_finite() && kappa > 0.0, || {
            format!("kappa must be positive and finite, got {kappa}")
        })?;
        ensure(theta.is_finite(), || format!("theta must be finite, got {theta}"))?;
        ensure(sigma.is_finite() && sigma >= 0.0, || {
            format!("sigma must be nonnegative and finite, got {sigma}")
        })?;
        ensure(r0.is_finite(), || format!("r0 must be finite, got {r0}"))?;
        Ok(Self { kappa, theta, sigma, r0 })
    }

    /// `E[r(t)]` under the model, `theta + (r0 - theta) e^{-kappa t}`.
    pub fn mean_rate(&self, t: f64) -> f64 {
        self.theta + (self.r0 - self.theta) * (-self.kappa * t).exp()
    }

    /// `Var[r(t)]`, `sigma^2 (1 - e^{-2 kappa t}) / (2 kappa)`.
    pub fn rate_variance(&self, t: f64) -> f64 {
        self.sigma * self.sigma * (-(-2.0 * self.kappa * t).exp_m1()) / (2.0 * self.kappa)
    }
}

/// A zero-coupon bond price together with its sensitivity to the short rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BondQuote {
    /// Price (discount-factor scale), > 0.
    pub value: f64,
    /// d(value)/d(rate); <= 0 for maturities at or after the quote time.
    pub rate_sensitivity: f64,
}

/// `B(t,s) = (1 - e^{-kappa (s-t)}) / kappa`, computed via `expm1` so short
/// horizons do not cancel.
fn b_factor(kappa: f64, tau: f64) -> f64 {
    -(-kappa * tau).exp_m1() / kappa
}

/// `(A, B)` of the affine log-price `log F = A(t,s) - B(t,s) r` over a
/// horizon `tau = s - t`.
pub(crate) fn log_bond_ab(kappa: f64, theta: f64, sigma: f64, tau: f64) -> (f64, f64) {
    let b = b_factor(kappa, tau);
    let a = (theta - sigma * sigma / (2.0 * kappa * kappa)) * (b - tau)
        - sigma * sigma * b * b / (4.0 * kappa);
    (a, b)
}

/// `log F(t, r, s)` for the Vasicek bond, as `A(t,s) - B(t,s) r`.
fn log_bond(kappa: f64, theta: f64, sigma: f64, r: f64, tau: f64) -> f64 {
    let (a, b) = log_bond_ab(kappa, theta, sigma, tau);
    a - b * r
}

/// Closed-form Vasicek bond price `F(t, r, s)` and `F_r = -B F`.
pub fn bond_price(params: &VasicekParams, t: f64, r: f64, s: f64) -> Result<BondQuote> {
    ensure(t.is_finite() && s.is_finite() && r.is_finite(), || {
        format!("bond price inputs must be finite (t={t}, r={r}, s={s})")
    })?;
    ensure(0.0 <= t && t <= s, || {
        format!("need 0 <= t <= s, got t={t}, s={s}")
    })?;
    let tau = s - t;
    let value = log_bond(params.kappa, params.theta, params.sigma, r, tau).exp();
    let b = b_factor(params.kappa, tau);
    Ok(BondQuote { value, rate_sensitivity: -b * value })
}

/// Tax-scaled bond price `F^{1-gamma}(t, r, s)`: the Vasicek price under
/// parameters `(kappa, (1-gamma) theta, (1-gamma) sigma)` at state
/// `(1-gamma) r`. Its rate sensitivity (w.r.t. the *unscaled* rate) satisfies
/// `F_r^{1-gamma} = (1-gamma) F_r F^{1-gamma} / F`.
pub fn bond_price_tax_scaled(
    params: &VasicekParams,
    gamma: f64,
    t: f64,
    r: f64,
    s: f64,
) -> Result<BondQuote> {
    ensure(gamma.is_finite() && (0.0..1.0).contains(&gamma), || {
        format!("gamma must lie in [0,1), got {gamma}")
    })?;
    ensure(t.is_finite() && s.is_finite() && r.is_finite(), || {
        format!("bond price inputs must be finite (t={t}, r={r}, s={s})")
    })?;
    ensure(0.0 <= t && t <= s, || {
        format!("need 0 <= t <= s, got t={t}, s={s}")
    })?;
    let g = 1.0 - gamma;
    let tau = s - t;
    let value = log_bond(params.kappa, g * params.theta, g * params.sigma, g * r, tau).exp();
    let b = b_factor(params.kappa, tau);
    Ok(BondQuote { value, rate_sensitivity: -g * b * value })
}

/// One simulated short-rate trajectory on a grid.
///
/// `integrated_rates[k]` is the exact (in distribution) `int_0^{t_k} r(u) du`,
/// simulated jointly with the rate so that discount factors carry no
/// quadrature bias. `brownian_increments[k]` is `W(t_{k+1}) - W(t_k)`
/// conditionally consistent with the rate path.
#[derive(Debug, Clone)]
pub struct ShortRatePath {
    pub times: Vec<f64>,
    pub rates: Vec<f64>,
    pub integrated_rates: Vec<f64>,
    pub brownian_increments: Vec<f64>,
}

/// Per-step lower-triangular factor of the covariance of
/// `(rate innovation, integrated-rate innovation, Brownian increment)`.
struct StepDraw {
    decay: f64,
    b: f64,
    l11: f64,
    l21: f64,
    l22: f64,
    l31: f64,
    l32: f64,
    l33: f64,
}

impl StepDraw {
    fn for_step(params: &VasicekParams, h: f64) -> Self {
        let kappa = params.kappa;
        let sigma = params.sigma;
        let decay = (-kappa * h).exp();
        let b = b_factor(kappa, h);
        if sigma == 0.0 {
            return Self { decay, b, l11: 0.0, l21: 0.0, l22: 0.0, l31: 0.0, l32: 0.0, l33: h.sqrt() };
        }
        let one_m_e2 = -(-2.0 * kappa * h).exp_m1();
        let s2 = sigma * sigma;
        let v11 = s2 * one_m_e2 / (2.0 * kappa);
        let v22 = s2 / (kappa * kappa) * (h - 2.0 * b + one_m_e2 / (2.0 * kappa));
        let v12 = s2 * (kappa * b) * (kappa * b) / (2.0 * kappa * kappa);
        let v13 = sigma * b;
        let v23 = sigma / kappa * (h - b);
        let l11 = v11.sqrt();
        let l21 = v12 / l11;
        let l22 = (v22 - l21 * l21).max(0.0).sqrt();
        let l31 = v13 / l11;
        let l32 = if l22 > 0.0 { (v23 - l31 * l21) / l22 } else { 0.0 };
        // The Brownian increment is almost a linear function of the first two
        // components for small steps; the residual variance cancels to
        // roundoff and is clamped.
        let l33 = (h - l31 * l31 - l32 * l32).max(0.0).sqrt();
        Self { decay, b, l11, l21, l22, l31, l32, l33 }
    }
}

pub(crate) const STREAM_RATES: u64 = 0;
pub(crate) const STREAM_JUMPS: u64 = 1;

/// ChaCha stream carved out of a master seed: stream ids keep every path's
/// draws independent of batching and worker count.
pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Exact Ornstein-Uhlenbeck path simulation on `grid`. Deterministic in
/// `seed`; three standard normals are consumed per step.
pub fn simulate_short_rate(params: &VasicekParams, grid: &TimeGrid, seed: u64) -> Result<ShortRatePath> {
    let mut rng = rng_for(seed, STREAM_RATES);
    simulate_short_rate_with(params, grid, &mut rng)
}

pub(crate) fn simulate_short_rate_with(
    params: &VasicekParams,
    grid: &TimeGrid,
    rng: &mut ChaCha8Rng,
) -> Result<ShortRatePath> {
    let times = grid.times().to_vec();
    let n = times.len();
    let mut rates = Vec::with_capacity(n);
    let mut integrated = Vec::with_capacity(n);
    let mut dw = Vec::with_capacity(n - 1);
    rates.push(params.r0);
    integrated.push(0.0);
    for k in 0..n - 1 {
        let h = times[k + 1] - times[k];
        let c = StepDraw::for_step(params, h);
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let z3: f64 = rng.sample(StandardNormal);
        let x1 = c.l11 * z1;
        let x2 = c.l21 * z1 + c.l22 * z2;
        let x3 = c.l31 * z1 + c.l32 * z2 + c.l33 * z3;
        let r_prev = rates[k];
        let centered = r_prev - params.theta;
        rates.push(params.theta + centered * c.decay + x1);
        integrated.push(integrated[k] + params.theta * h + centered * c.b + x2);
        dw.push(x3);
    }
    Ok(ShortRatePath { times, rates, integrated_rates: integrated, brownian_increments: dw })
}
