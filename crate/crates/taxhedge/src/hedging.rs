//! State-wise prospective reserves, the risk-minimizing investment strategy,
//! and the integrands of the martingale decomposition that the strategy
//! hedges.
//!
//! The reserve of state `i` at time `t` is
//!
//! ```text
//! V_i(t) = int_t^T F^{1-gamma}(t, r(t), s) Y_i(t, s) ds,
//! ```
//!
//! integrated by composite Simpson quadrature; the cash flows `Y_i(t, s_m)`
//! at all quadrature nodes come from a single forward ODE sweep. The bond
//! holding of the optimal strategy is
//!
//! ```text
//! h1(t) = int_t^T [B(t,s)/B(t,T)] F^{1-gamma}(t, r, s) Y_{Z(t-)}(t, s) ds / F(t, r, T),
//! ```
//!
//! using `F_r = -B F`, and the savings holding rebalances the portfolio to
//! the reserve of the current state. Everything a path simulation needs per
//! time node is precomputed into [`HedgeTables`]; evaluation at a node then
//! costs one exponential per quadrature point.

use crate::cashflow::{expense_deflation, PaymentSpec, TaxExpenseSpec};
use crate::error::{ensure, Result};
use crate::markov::{deflated_transition_curve, MarkovModel};
use crate::term_structure::{log_bond_ab, VasicekParams};

/// Portfolio snapshot: units of savings account and bond, and the value they
/// fund. `value = h0 S0 + h1 S1` by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyPoint {
    pub h0: f64,
    pub h1: f64,
    pub value: f64,
}

impl StrategyPoint {
    pub const ZERO: StrategyPoint = StrategyPoint { h0: 0.0, h1: 0.0, value: 0.0 };
}

/// Integrands of the martingale decomposition: `xi_i` multiplies the traded
/// discounted-bond increments, `v_{jk}` the compensated jump measure.
#[derive(Debug, Clone)]
pub struct GkwIntegrands {
    n_states: usize,
    /// Per pre-jump state.
    pub xi: Vec<f64>,
    /// Row-major `n x n`, zero on the diagonal.
    v: Vec<f64>,
}

impl GkwIntegrands {
    pub fn v_at(&self, from: usize, to: usize) -> f64 {
        self.v[from * self.n_states + to]
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
}

/// Composite Simpson nodes and weights on `[a, b]` with `m` sub-intervals
/// (`m` is rounded up to an even count).
fn simpson_rule(a: f64, b: f64, m: usize) -> (Vec<f64>, Vec<f64>) {
    let m = if m % 2 == 0 { m.max(2) } else { m + 1 };
    let h = (b - a) / m as f64;
    let mut nodes: Vec<f64> = (0..=m).map(|k| a + h * k as f64).collect();
    nodes[0] = a;
    nodes[m] = b;
    let mut weights = vec![0.0; m + 1];
    weights[0] = h / 3.0;
    weights[m] = h / 3.0;
    for (k, w) in weights.iter_mut().enumerate().skip(1).take(m - 1) {
        *w = if k % 2 == 1 { 4.0 * h / 3.0 } else { 2.0 * h / 3.0 };
    }
    (nodes, weights)
}

/// Everything needed to evaluate reserves and the optimal bond holding at
/// one time `t` as a function of the short rate alone.
#[derive(Debug, Clone)]
struct NodeTable {
    /// `F(t, r, T) = exp(a_t - b_t r)`.
    a_t: f64,
    b_t: f64,
    /// Per quadrature node: `[a_g, c_g, alpha_0.., beta_0..]` with
    /// `F^{1-gamma}(t,r,s_m) = exp(a_g - c_g r)`,
    /// `alpha_{m,i} = w_m Y_i(t,s_m)` and
    /// `beta_{m,i} = w_m (B(t,s_m)/B(t,T)) Y_i(t,s_m)`.
    data: Vec<f64>,
    n_states: usize,
}

impl NodeTable {
    fn stride(n_states: usize) -> usize {
        2 + 2 * n_states
    }

    /// Reserves per state and bond holdings per pre-jump state, at rate `r`.
    fn eval_into(&self, r: f64, reserves: &mut [f64], h1: &mut [f64]) {
        let n = self.n_states;
        reserves.fill(0.0);
        h1.fill(0.0);
        if self.data.is_empty() {
            return;
        }
        let stride = Self::stride(n);
        for chunk in self.data.chunks_exact(stride) {
            let e = (chunk[0] - chunk[1] * r).exp();
            let alphas = &chunk[2..2 + n];
            let betas = &chunk[2 + n..];
            for i in 0..n {
                reserves[i] += alphas[i] * e;
                h1[i] += betas[i] * e;
            }
        }
        let f_t = (self.a_t - self.b_t * r).exp();
        for v in h1.iter_mut() {
            *v /= f_t;
        }
    }
}

fn build_node(
    model: &MarkovModel,
    payments: &PaymentSpec,
    taxexp: &TaxExpenseSpec,
    vasicek: &VasicekParams,
    t: f64,
    quad_points: usize,
) -> Result<NodeTable> {
    let horizon = model.horizon();
    ensure(t.is_finite() && (0.0..=horizon).contains(&t), || {
        format!("evaluation time {t} outside [0, {horizon}]")
    })?;
    ensure(quad_points >= 2, || "need at least two quadrature sub-intervals".into())?;
    let n = model.n_states();
    if t == horizon {
        return Ok(NodeTable { a_t: 0.0, b_t: 0.0, data: Vec::new(), n_states: n });
    }
    let gamma = taxexp.gamma;
    let g = 1.0 - gamma;
    let (nodes, weights) = simpson_rule(t, horizon, quad_points);
    let deflation = expense_deflation(taxexp)?;
    let transitions = deflated_transition_curve(model, &deflation, t, &nodes, nodes.len() - 1)?;
    let (a_t, b_t) = log_bond_ab(vasicek.kappa, vasicek.theta, vasicek.sigma, horizon - t);
    let stride = NodeTable::stride(n);
    let mut data = Vec::with_capacity(nodes.len() * stride);
    let mut rates = vec![0.0; n];
    let mut ys = vec![0.0; n];
    for ((&s, &w), p) in nodes.iter().zip(weights.iter()).zip(transitions.iter()) {
        let (a_g, b) = log_bond_ab(vasicek.kappa, g * vasicek.theta, g * vasicek.sigma, s - t);
        data.push(a_g);
        data.push(g * b);
        let ratio = if b_t > 0.0 { b / b_t } else { 0.0 };
        for (j, slot) in rates.iter_mut().enumerate() {
            *slot = payments.payment_rate(model, j, s);
        }
        for (i, y) in ys.iter_mut().enumerate() {
            *y = (0..n).map(|j| p.get(i, j) * rates[j]).sum();
        }
        for &y in &ys {
            data.push(w * y);
        }
        for &y in &ys {
            data.push(w * ratio * y);
        }
    }
    Ok(NodeTable { a_t, b_t, data, n_states: n })
}

/// State-wise prospective reserve `V_i(t)` at short rate `r`.
pub fn reserve(
    model: &MarkovModel,
    payments: &PaymentSpec,
    taxexp: &TaxExpenseSpec,
    vasicek: &VasicekParams,
    i: usize,
    t: f64,
    r: f64,
    quad_points: usize,
) -> Result<f64> {
    ensure(i < model.n_states(), || {
        format!("state {i} outside 0..{}", model.n_states())
    })?;
    Ok(reserves_all(model, payments, taxexp, vasicek, t, r, quad_points)?[i])
}

/// Reserves of every state at once.
pub fn reserves_all(
    model: &MarkovModel,
    payments: &PaymentSpec,
    taxexp: &TaxExpenseSpec,
    vasicek: &VasicekParams,
    t: f64,
    r: f64,
    quad_points: usize,
) -> Result<Vec<f64>> {
    let node = build_node(model, payments, taxexp, vasicek, t, quad_points)?;
    let n = model.n_states();
    let mut reserves = vec![0.0; n];
    let mut h1 = vec![0.0; n];
    node.eval_into(r, &mut reserves, &mut h1);
    Ok(reserves)
}

/// The risk-minimizing strategy point at time `t`.
///
/// `state_pre` is the pre-jump state `Z(t-)` (drives the bond holding),
/// `state_now` the current state `Z(t)` (drives the reserve the portfolio is
/// rebalanced to); they differ only at jump times. `accumulated_rate` is the
/// realized `int_0^t r(u) du`, needed for the savings-account price.
#[allow(clippy::too_many_arguments)]
pub fn optimal_strategy(
    model: &MarkovModel,
    payments: &PaymentSpec,
    taxexp: &TaxExpenseSpec,
    vasicek: &VasicekParams,
    state_pre: usize,
    state_now: usize,
    t: f64,
    r: f64,
    accumulated_rate: f64,
    quad_points: usize,
) -> Result<StrategyPoint> {
    let n = model.n_states();
    ensure(state_pre < n && state_now < n, || {
        format!("states ({state_pre}, {state_now}) outside 0..{n}")
    })?;
    let node = build_node(model, payments, taxexp, vasicek, t, quad_points)?;
    if node.data.is_empty() {
        // at expiry there are no remaining payments; the strategy is zero
        return Ok(StrategyPoint::ZERO);
    }
    let mut reserves = vec![0.0; n];
    let mut h1 = vec![0.0; n];
    node.eval_into(r, &mut reserves, &mut h1);
    let s0 = accumulated_rate.exp();
    let s1 = (node.a_t - node.b_t * r).exp();
    let h1 = h1[state_pre];
    let value = reserves[state_now];
    Ok(StrategyPoint { h0: (value - h1 * s1) / s0, h1, value })
}

/// Integrands of the martingale decomposition at time `t`.
///
/// `accumulated_rate` and `accumulated_expense` are the realized path
/// functionals `int_0^t r(u) du` and `int_0^t delta_{Z(u)}(u) du`.
#[allow(clippy::too_many_arguments)]
pub fn gkw_integrands(
    model: &MarkovModel,
    payments: &PaymentSpec,
    taxexp: &TaxExpenseSpec,
    vasicek: &VasicekParams,
    t: f64,
    r: f64,
    accumulated_rate: f64,
    accumulated_expense: f64,
    quad_points: usize,
) -> Result<GkwIntegrands> {
    let node = build_node(model, payments, taxexp, vasicek, t, quad_points)?;
    let n = model.n_states();
    let mut reserves = vec![0.0; n];
    let mut h1 = vec![0.0; n];
    node.eval_into(r, &mut reserves, &mut h1);
    let gamma = taxexp.gamma;
    // xi_i = (1-gamma) e^{int_0^t (gamma r + delta)} h1_i
    let growth = (gamma * accumulated_rate + accumulated_expense).exp();
    let xi: Vec<f64> = h1.iter().map(|&h| (1.0 - gamma) * growth * h).collect();
    // v_{jk} = e^{-int_0^t ((1-gamma) r - delta)} (b_{jk}(t) + V_k - V_j)
    let deflator = (-((1.0 - gamma) * accumulated_rate - accumulated_expense)).exp();
    let mut v = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            if j != k {
                v[j * n + k] =
                    deflator * (payments.transition_payment(j, k, t) + reserves[k] - reserves[j]);
            }
        }
    }
    Ok(GkwIntegrands { n_states: n, xi, v })
}

/// Reserve curves on a reporting grid, one rate per node.
#[derive(Debug, Clone)]
pub struct ReserveCurve {
    pub times: Vec<f64>,
    /// Short rate each row was evaluated at.
    pub rates: Vec<f64>,
    /// `values[node][state]`.
    pub values: Vec<Vec<f64>>,
    /// Simpson sub-interval count used.
    pub quad_points: usize,
}

pub fn reserve_curve(
    model: &MarkovModel,
    payments: &PaymentSpec,
    taxexp: &TaxExpenseSpec,
    vasicek: &VasicekParams,
    times: &[f64],
    rates: &[f64],
    quad_points: usize,
) -> Result<ReserveCurve> {
    ensure(times.len() == rates.len(), || {
        format!("{} report times vs {} rates", times.len(), rates.len())
    })?;
    let mut values = Vec::with_capacity(times.len());
    for (&t, &r) in times.iter().zip(rates.iter()) {
        values.push(reserves_all(model, payments, taxexp, vasicek, t, r, quad_points)?);
    }
    Ok(ReserveCurve { times: times.to_vec(), rates: rates.to_vec(), values, quad_points })
}

/// Per-node hedging tables for a whole time grid, shared across simulated
/// paths. Node evaluation is a function of the short rate only.
#[derive(Debug, Clone)]
pub struct HedgeTables {
    model: MarkovModel,
    payments: PaymentSpec,
    taxexp: TaxExpenseSpec,
    vasicek: VasicekParams,
    quad_points: usize,
    times: Vec<f64>,
    nodes: Vec<NodeTable>,
}

/// Reusable output buffers for node evaluation.
#[derive(Debug, Clone)]
pub struct NodeBuffers {
    pub reserves: Vec<f64>,
    pub h1: Vec<f64>,
}

impl NodeBuffers {
    pub fn new(n_states: usize) -> Self {
        Self { reserves: vec![0.0; n_states], h1: vec![0.0; n_states] }
    }
}

impl HedgeTables {
    pub fn new(
        model: &MarkovModel,
        payments: &PaymentSpec,
        taxexp: &TaxExpenseSpec,
        vasicek: &VasicekParams,
        times: &[f64],
        quad_points: usize,
    ) -> Result<Self> {
        ensure(!times.is_empty(), || "need at least one table time".into())?;
        let mut nodes = Vec::with_capacity(times.len());
        for &t in times {
            nodes.push(build_node(model, payments, taxexp, vasicek, t, quad_points)?);
        }
        Ok(Self {
            model: model.clone(),
            payments: payments.clone(),
            taxexp: taxexp.clone(),
            vasicek: *vasicek,
            quad_points,
            times: times.to_vec(),
            nodes,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_states(&self) -> usize {
        self.model.n_states()
    }

    pub fn gamma(&self) -> f64 {
        self.taxexp.gamma
    }

    pub fn quad_points(&self) -> usize {
        self.quad_points
    }

    /// Evaluate the precomputed node `k` at rate `r`.
    pub fn eval_node_into(&self, k: usize, r: f64, out: &mut NodeBuffers) {
        self.nodes[k].eval_into(r, &mut out.reserves, &mut out.h1);
    }

    /// Evaluate at an arbitrary time (used for jump times that are not table
    /// nodes); builds the quadrature for this time on the fly.
    pub fn eval_time_into(&self, t: f64, r: f64, out: &mut NodeBuffers) -> Result<()> {
        if let Ok(k) = self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            self.eval_node_into(k, r, out);
            return Ok(());
        }
        let node = build_node(
            &self.model,
            &self.payments,
            &self.taxexp,
            &self.vasicek,
            t,
            self.quad_points,
        )?;
        node.eval_into(r, &mut out.reserves, &mut out.h1);
        Ok(())
    }

    /// `F(t_k, r, T)`, the bond price at table node `k`.
    pub fn bond_price_at(&self, k: usize, r: f64) -> f64 {
        (self.nodes[k].a_t - self.nodes[k].b_t * r).exp()
    }
}
