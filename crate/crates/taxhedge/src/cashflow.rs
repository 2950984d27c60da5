//! Insurance payment process, tax/expense payment streams, and the expected
//! expense-modified cash flow.
//!
//! The benefit process pays sojourn rates `b_j(t)` while in state `j` and
//! lump transition payments `b_{jk}(t)` on `j -> k` jumps; the initial
//! premium is the single payment atom at time 0. The expected
//! expense-modified cash flow
//!
//! ```text
//! Y_i(t,s) = sum_j p~_{ij}(t,s) ( b_j(s) + sum_{k != j} mu_{jk}(s) b_{jk}(s) )
//! ```
//!
//! uses expense-deflated transition probabilities `p~` with deflator
//! `exp(+int delta)`; this module owns the sign flip into the solver's
//! `exp(-int .)` convention.

use crate::error::{ensure, Result};
use crate::markov::{deflated_transition_curve, DeflationSpec, JumpRecord, MarkovModel};
use crate::time::PiecewiseConstant;

/// Sojourn payment rates, transition payments, and the initial premium.
#[derive(Debug, Clone)]
pub struct PaymentSpec {
    /// Payment atom at time zero (negative for a single premium).
    pub initial_premium: f64,
    n_states: usize,
    sojourn: Vec<Option<PiecewiseConstant>>,
    /// Row-major `n x n`; `None` off the declared pairs and on the diagonal.
    transition: Vec<Option<PiecewiseConstant>>,
}

impl PaymentSpec {
    pub fn new(
        n_states: usize,
        horizon: f64,
        initial_premium: f64,
        sojourn: Vec<(usize, PiecewiseConstant)>,
        transition: Vec<(usize, usize, PiecewiseConstant)>,
    ) -> Result<Self> {
        ensure(n_states >= 1, || "need at least one state".into())?;
        ensure(initial_premium.is_finite(), || {
            format!("initial premium must be finite, got {initial_premium}")
        })?;
        let mut soj: Vec<Option<PiecewiseConstant>> = vec![None; n_states];
        for (j, b) in sojourn {
            ensure(j < n_states, || format!("sojourn payment for unknown state {j}"))?;
            ensure(b.end() == horizon, || {
                format!("sojourn payment for state {j} must be defined up to the horizon {horizon}")
            })?;
            ensure(soj[j].is_none(), || format!("duplicate sojourn payment for state {j}"))?;
            soj[j] = Some(b);
        }
        let mut tr: Vec<Option<PiecewiseConstant>> = vec![None; n_states * n_states];
        for (j, k, b) in transition {
            ensure(j < n_states && k < n_states && j != k, || {
                format!("transition payment ({j} -> {k}) must connect distinct known states")
            })?;
            ensure(b.end() == horizon, || {
                format!("transition payment ({j} -> {k}) must be defined up to the horizon {horizon}")
            })?;
            let slot = &mut tr[j * n_states + k];
            ensure(slot.is_none(), || format!("duplicate transition payment ({j} -> {k})"))?;
            *slot = Some(b);
        }
        Ok(Self { initial_premium, n_states, sojourn: soj, transition: tr })
    }

    /// No payments at all.
    pub fn zero(n_states: usize) -> Self {
        Self {
            initial_premium: 0.0,
            n_states,
            sojourn: vec![None; n_states],
            transition: vec![None; n_states * n_states],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn sojourn_rate(&self, state: usize, t: f64) -> f64 {
        match &self.sojourn[state] {
            Some(f) => f.eval(t),
            None => 0.0,
        }
    }

    /// Exact integral of the sojourn rate of `state` over `[a, b]`.
    pub fn sojourn_integral(&self, state: usize, a: f64, b: f64) -> f64 {
        match &self.sojourn[state] {
            Some(f) => f.integral(a, b),
            None => 0.0,
        }
    }

    pub fn transition_payment(&self, from: usize, to: usize, t: f64) -> f64 {
        match &self.transition[from * self.n_states + to] {
            Some(f) => f.eval(t),
            None => 0.0,
        }
    }

    /// `b_j(s) + sum_{k != j} mu_{jk}(s) b_{jk}(s)`: the expected payment
    /// rate out of state `j` at time `s`.
    pub fn payment_rate(&self, model: &MarkovModel, state: usize, s: f64) -> f64 {
        let mut rate = self.sojourn_rate(state, s);
        for k in 0..self.n_states {
            if k != state {
                let b = self.transition_payment(state, k, s);
                if b != 0.0 {
                    rate += model.intensity(state, k, s) * b;
                }
            }
        }
        rate
    }

    /// All payment functions scaled by `factor` (premium included).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            initial_premium: self.initial_premium * factor,
            n_states: self.n_states,
            sojourn: self.sojourn.iter().map(|o| o.as_ref().map(|f| f.scaled(factor))).collect(),
            transition: self
                .transition
                .iter()
                .map(|o| o.as_ref().map(|f| f.scaled(factor)))
                .collect(),
        }
    }
}

/// Flat tax rate on investment returns and state-wise expense rates on
/// portfolio value.
#[derive(Debug, Clone)]
pub struct TaxExpenseSpec {
    pub gamma: f64,
    expense: Vec<PiecewiseConstant>,
}

impl TaxExpenseSpec {
    pub fn new(gamma: f64, expense: Vec<PiecewiseConstant>) -> Result<Self> {
        ensure(gamma.is_finite() && (0.0..1.0).contains(&gamma), || {
            format!("gamma must lie in [0,1), got {gamma}")
        })?;
        ensure(!expense.is_empty(), || "need one expense rate per state".into())?;
        for (j, f) in expense.iter().enumerate() {
            ensure(f.inf(0.0, f.end()) >= 0.0, || {
                format!("expense rate for state {j} must be nonnegative")
            })?;
        }
        Ok(Self { gamma, expense })
    }

    /// `gamma = 0`, `delta_j == 0`.
    pub fn none(n_states: usize, horizon: f64) -> Self {
        let zero = PiecewiseConstant::constant(0.0, horizon).unwrap();
        Self { gamma: 0.0, expense: vec![zero; n_states] }
    }

    pub fn n_states(&self) -> usize {
        self.expense.len()
    }

    pub fn expense_rate(&self, state: usize, t: f64) -> f64 {
        self.expense[state].eval(t)
    }

    /// Exact integral of the expense rate of `state` over `[a, b]`.
    pub fn expense_integral(&self, state: usize, a: f64, b: f64) -> f64 {
        self.expense[state].integral(a, b)
    }

    pub fn expense_rates(&self) -> &[PiecewiseConstant] {
        &self.expense
    }
}

/// Deflation with rates `-delta_j`: feeding this to the Markov solvers (whose
/// deflator is `exp(-int .)`) yields the expense-deflated probabilities with
/// deflator `exp(+int delta)`. The sign flip lives here and nowhere else.
pub fn expense_deflation(taxexp: &TaxExpenseSpec) -> Result<DeflationSpec> {
    Ok(DeflationSpec::new(taxexp.expense_rates().to_vec())?.negated())
}

/// Expected expense-modified cash flow `Y_i(t, s)`.
pub fn expected_modified_cashflow(
    model: &MarkovModel,
    payments: &PaymentSpec,
    taxexp: &TaxExpenseSpec,
    i: usize,
    t: f64,
    s: f64,
    steps: usize,
) -> Result<f64> {
    let curve = expected_modified_cashflow_curve(model, payments, taxexp, i, &[s], t, steps)?;
    Ok(curve[0])
}

/// `Y_i(t, s)` for many targets `s` off one forward sweep.
pub fn expected_modified_cashflow_curve(
    model: &MarkovModel,
    payments: &PaymentSpec,
    taxexp: &TaxExpenseSpec,
    i: usize,
    targets: &[f64],
    t: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    ensure(i < model.n_states(), || {
        format!("state {i} outside 0..{}", model.n_states())
    })?;
    ensure(payments.n_states() == model.n_states(), || {
        format!(
            "payments cover {} states, model has {}",
            payments.n_states(),
            model.n_states()
        )
    })?;
    let deflation = expense_deflation(taxexp)?;
    let matrices = deflated_transition_curve(model, &deflation, t, targets, steps)?;
    let n = model.n_states();
    Ok(matrices
        .iter()
        .zip(targets.iter())
        .map(|(p, &s)| {
            (0..n)
                .map(|j| p.get(i, j) * payments.payment_rate(model, j, s))
                .sum()
        })
        .collect())
}

/// Benefit payment increments along a simulated path.
#[derive(Debug, Clone)]
pub struct BenefitIncrements {
    /// `A^b(0)`, the initial premium.
    pub at_start: f64,
    /// Increment over `(t_k, t_{k+1}]`: exact sojourn integral plus any
    /// transition payments at jumps in the step.
    pub per_step: Vec<f64>,
}

impl BenefitIncrements {
    pub fn total(&self) -> f64 {
        self.at_start + self.per_step.iter().sum::<f64>()
    }
}

/// Accumulate the benefit process along a path given as node times, the
/// (right-continuous) state at each node, and the jump records. Jump times
/// must appear as nodes.
pub fn accumulate_benefit_payments(
    payments: &PaymentSpec,
    times: &[f64],
    states: &[usize],
    jumps: &[JumpRecord],
) -> Result<BenefitIncrements> {
    ensure(times.len() == states.len(), || {
        format!("{} node times vs {} states", times.len(), states.len())
    })?;
    ensure(times.len() >= 2, || "path needs at least two nodes".into())?;
    let mut per_step = Vec::with_capacity(times.len() - 1);
    let mut jump_idx = 0;
    while jump_idx < jumps.len() && jumps[jump_idx].time <= times[0] {
        jump_idx += 1;
    }
    for k in 0..times.len() - 1 {
        let (a, b) = (times[k], times[k + 1]);
        // the state is constant on [t_k, t_{k+1}) because jumps are nodes
        let mut inc = payments.sojourn_integral(states[k], a, b);
        while jump_idx < jumps.len() && jumps[jump_idx].time <= b {
            let j = &jumps[jump_idx];
            inc += payments.transition_payment(j.from, j.to, j.time);
            jump_idx += 1;
        }
        per_step.push(inc);
    }
    Ok(BenefitIncrements { at_start: payments.initial_premium, per_step })
}

/// Tax and expense payment increments generated by a strategy along a path:
/// `dA^tax = gamma * sum_j h_j dS_j` and `dA^e = delta(t) V dt`, both with
/// left-point holdings/value.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_tax_expense_payments(
    taxexp: &TaxExpenseSpec,
    times: &[f64],
    states: &[usize],
    savings: &[f64],
    bond: &[f64],
    h0: &[f64],
    h1: &[f64],
    value: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = times.len();
    for (name, len) in [
        ("states", states.len()),
        ("savings", savings.len()),
        ("bond", bond.len()),
        ("h0", h0.len()),
        ("h1", h1.len()),
        ("value", value.len()),
    ] {
        ensure(len == n, || format!("{name} has {len} entries, path has {n} nodes"))?;
    }
    let mut tax = Vec::with_capacity(n - 1);
    let mut expense = Vec::with_capacity(n - 1);
    for k in 0..n - 1 {
        let dt = times[k + 1] - times[k];
        let gains = h0[k] * (savings[k + 1] - savings[k]) + h1[k] * (bond[k + 1] - bond[k]);
        tax.push(taxexp.gamma * gains);
        expense.push(taxexp.expense_rate(states[k], times[k]) * value[k] * dt);
    }
    Ok((tax, expense))
}
