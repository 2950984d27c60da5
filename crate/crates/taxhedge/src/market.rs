//! Joint path simulation of (short rate, savings account, bond, insurance
//! state), cost and risk diagnostics for the tax- and expense-modified
//! criterion, the after-tax market strategy map, and the two-step
//! consistency check.
//!
//! Discretization conventions, applied uniformly:
//! * stochastic integrals are left-point sums with holdings evaluated on
//!   pre-step information,
//! * jump times are inserted as extra grid nodes, so transition payments and
//!   sum-at-risk accounting land exactly on nodes,
//! * the short rate and its time integral are simulated exactly (jointly
//!   Gaussian per step), so discounted prices are discrete martingales with
//!   no quadrature bias,
//! * the after-tax bond uses its exact log-dynamics
//!   `d log S~1 = (1-gamma) d log S1 + ((1-gamma) gamma (sigma B)^2 / 2 - delta) dt`,
//! * Monte Carlo estimates are reduced by pairwise summation over
//!   path-indexed ChaCha streams, so results are bit-identical for any
//!   worker count.

use rayon::prelude::*;

use crate::cashflow::{accumulate_benefit_payments, PaymentSpec, TaxExpenseSpec};
use crate::error::{ensure, Result};
use crate::hedging::{HedgeTables, NodeBuffers, StrategyPoint};
use crate::markov::{simulate_state_path_with, states_at, JumpRecord, MarkovModel};
use crate::stats::{covariance_with_error, pairwise_sum, MeanWithError};
use crate::term_structure::{
    log_bond_ab, rng_for, simulate_short_rate_with, VasicekParams, STREAM_JUMPS, STREAM_RATES,
};
use crate::time::TimeGrid;

/// The complete model: market, insurance states, payments, taxes/expenses.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub vasicek: VasicekParams,
    pub model: MarkovModel,
    pub payments: PaymentSpec,
    pub tax_expense: TaxExpenseSpec,
}

impl Scenario {
    pub fn new(
        vasicek: VasicekParams,
        model: MarkovModel,
        payments: PaymentSpec,
        tax_expense: TaxExpenseSpec,
    ) -> Result<Self> {
        ensure(payments.n_states() == model.n_states(), || {
            format!(
                "payments cover {} states, model has {}",
                payments.n_states(),
                model.n_states()
            )
        })?;
        ensure(tax_expense.n_states() == model.n_states(), || {
            format!(
                "expense rates cover {} states, model has {}",
                tax_expense.n_states(),
                model.n_states()
            )
        })?;
        Ok(Self { vasicek, model, payments, tax_expense })
    }

    pub fn horizon(&self) -> f64 {
        self.model.horizon()
    }

    /// Hedging tables on a grid, the per-node precomputation shared by all
    /// paths of a batch.
    pub fn hedge_tables(&self, grid: &TimeGrid, quad_points: usize) -> Result<HedgeTables> {
        HedgeTables::new(
            &self.model,
            &self.payments,
            &self.tax_expense,
            &self.vasicek,
            grid.times(),
            quad_points,
        )
    }
}

/// One simulated joint trajectory on a grid refined with the path's jump
/// times. All accumulated quantities are carried along the path rather than
/// recomputed.
#[derive(Debug, Clone)]
pub struct ScenarioPath {
    /// Base grid nodes plus this path's jump times.
    pub times: Vec<f64>,
    /// For each node, the index into the base grid if the node is a base
    /// node, `None` for inserted jump times.
    pub base_index: Vec<Option<usize>>,
    pub rates: Vec<f64>,
    pub brownian_increments: Vec<f64>,
    /// `int_0^{t_k} r(u) du`, exact in distribution.
    pub accumulated_rate: Vec<f64>,
    /// `int_0^{t_k} delta_{Z(u)}(u) du`, exact.
    pub accumulated_expense_rate: Vec<f64>,
    pub states: Vec<usize>,
    pub jumps: Vec<JumpRecord>,
    /// `S1(t_k) = F(t_k, r(t_k), T)`.
    pub bond_prices: Vec<f64>,
    /// `S0(t_k) = exp(accumulated_rate)`.
    pub savings: Vec<f64>,
    /// `S~0(t_k) = exp((1-gamma) int r - int delta)`.
    pub after_tax_savings: Vec<f64>,
    /// `S~1(t_k)` by exact log-dynamics.
    pub after_tax_bond: Vec<f64>,
}

impl ScenarioPath {
    pub fn n_nodes(&self) -> usize {
        self.times.len()
    }

    /// `Z(t_k-)`: the pre-jump state at node `k`.
    pub fn pre_state(&self, k: usize) -> usize {
        if k == 0 {
            return self.states[0];
        }
        // a jump exactly at t_k means states[k-1] is the pre-jump state
        if self.jumps.iter().any(|j| j.time == self.times[k]) {
            self.states[k - 1]
        } else {
            self.states[k]
        }
    }

    /// Discounted bond price `S1*(t_k)`.
    pub fn discounted_bond(&self, k: usize) -> f64 {
        self.bond_prices[k] / self.savings[k]
    }
}

/// Exact `int_a^b B(u, horizon)^2 du` for the Vasicek bond volatility factor.
fn integral_b_squared(kappa: f64, a: f64, b: f64, horizon: f64) -> f64 {
    let e = |x: f64| (-kappa * x).exp();
    let i1 = (e(horizon - b) - e(horizon - a)) / kappa;
    let e2 = |x: f64| (-2.0 * kappa * x).exp();
    let i2 = (e2(horizon - b) - e2(horizon - a)) / (2.0 * kappa);
    ((b - a) - 2.0 * i1 + i2) / (kappa * kappa)
}

/// Simulate one scenario path; `simulate_scenario_indexed` with path 0.
pub fn simulate_scenario(scenario: &Scenario, grid: &TimeGrid, seed: u64) -> Result<ScenarioPath> {
    simulate_scenario_indexed(scenario, grid, seed, 0)
}

/// Path `path_index` of the batch owned by `seed`. Rate draws and jump draws
/// use separate ChaCha streams per path, so any path is reproducible in
/// isolation and independent of batching.
pub fn simulate_scenario_indexed(
    scenario: &Scenario,
    grid: &TimeGrid,
    seed: u64,
    path_index: u64,
) -> Result<ScenarioPath> {
    ensure(grid.horizon() == scenario.horizon(), || {
        format!(
            "grid horizon {} does not match the model horizon {}",
            grid.horizon(),
            scenario.horizon()
        )
    })?;
    let horizon = scenario.horizon();
    let gamma = scenario.tax_expense.gamma;

    let mut jump_rng = rng_for(seed, 2 * path_index + STREAM_JUMPS);
    let base = simulate_state_path_with(&scenario.model, grid, 0, &mut jump_rng)?;
    let jump_times: Vec<f64> = base.jumps.iter().map(|j| j.time).collect();
    let refined = grid.refined_with(&jump_times);

    let mut rate_rng = rng_for(seed, 2 * path_index + STREAM_RATES);
    let short = simulate_short_rate_with(&scenario.vasicek, &refined, &mut rate_rng)?;

    let times = refined.times().to_vec();
    let n = times.len();
    let states = states_at(&times, &base.jumps, 0);
    let base_times = grid.times();
    let mut base_index = Vec::with_capacity(n);
    let mut bi = 0usize;
    for &t in &times {
        if bi < base_times.len() && base_times[bi] == t {
            base_index.push(Some(bi));
            bi += 1;
        } else {
            base_index.push(None);
        }
    }

    let mut accumulated_expense = Vec::with_capacity(n);
    accumulated_expense.push(0.0);
    for k in 0..n - 1 {
        let inc = scenario
            .tax_expense
            .expense_integral(states[k], times[k], times[k + 1]);
        accumulated_expense.push(accumulated_expense[k] + inc);
    }

    let savings: Vec<f64> = short.integrated_rates.iter().map(|&i| i.exp()).collect();
    let after_tax_savings: Vec<f64> = short
        .integrated_rates
        .iter()
        .zip(accumulated_expense.iter())
        .map(|(&ir, &ie)| ((1.0 - gamma) * ir - ie).exp())
        .collect();

    let p = &scenario.vasicek;
    let mut log_bond = Vec::with_capacity(n);
    for (&t, &r) in times.iter().zip(short.rates.iter()) {
        let (a, b) = log_bond_ab(p.kappa, p.theta, p.sigma, horizon - t);
        log_bond.push(a - b * r);
    }
    let bond_prices: Vec<f64> = log_bond.iter().map(|&x| x.exp()).collect();

    // d log S~1 = (1-gamma) d log S1 + ((1-gamma) gamma sigma^2 B^2 / 2 - delta) dt
    let mut after_tax_bond = Vec::with_capacity(n);
    let mut log_check = log_bond[0];
    after_tax_bond.push(bond_prices[0]);
    let ito = 0.5 * (1.0 - gamma) * gamma * p.sigma * p.sigma;
    for k in 0..n - 1 {
        let d_log_s1 = log_bond[k + 1] - log_bond[k];
        let b2 = integral_b_squared(p.kappa, times[k], times[k + 1], horizon);
        let d_expense = accumulated_expense[k + 1] - accumulated_expense[k];
        log_check += (1.0 - gamma) * d_log_s1 + ito * b2 - d_expense;
        after_tax_bond.push(log_check.exp());
    }

    Ok(ScenarioPath {
        times,
        base_index,
        rates: short.rates,
        brownian_increments: short.brownian_increments,
        accumulated_rate: short.integrated_rates,
        accumulated_expense_rate: accumulated_expense,
        states,
        jumps: base.jumps,
        bond_prices,
        savings,
        after_tax_savings,
        after_tax_bond,
    })
}

/// What a strategy sees at a node: path information up to `t_k` plus the
/// hedging-table evaluation at `(t_k, r_k)`.
pub struct StrategyContext<'a> {
    pub node_index: usize,
    pub t: f64,
    pub horizon: f64,
    pub r: f64,
    pub accumulated_rate: f64,
    pub accumulated_expense: f64,
    pub state_pre: usize,
    pub state_now: usize,
    pub savings: f64,
    pub bond: f64,
    /// Reserves per state and optimal bond holdings per pre-jump state.
    pub eval: &'a NodeBuffers,
}

impl StrategyContext<'_> {
    pub fn is_terminal(&self) -> bool {
        self.t == self.horizon
    }
}

/// A trading strategy evaluated node by node along a path.
pub trait PathStrategy: Sync {
    fn point(&self, ctx: &StrategyContext<'_>) -> StrategyPoint;
}

/// The risk-minimizing strategy: bond holding for the pre-jump state,
/// portfolio rebalanced to the current state's reserve.
pub struct OptimalStrategy;

impl PathStrategy for OptimalStrategy {
    fn point(&self, ctx: &StrategyContext<'_>) -> StrategyPoint {
        if ctx.is_terminal() {
            return StrategyPoint::ZERO;
        }
        let h1 = ctx.eval.h1[ctx.state_pre];
        let value = ctx.eval.reserves[ctx.state_now];
        StrategyPoint { h0: (value - h1 * ctx.bond) / ctx.savings, h1, value }
    }
}

/// Hold nothing; the cost process then just accumulates the payments.
pub struct ZeroStrategy;

impl PathStrategy for ZeroStrategy {
    fn point(&self, _ctx: &StrategyContext<'_>) -> StrategyPoint {
        StrategyPoint::ZERO
    }
}

/// 0-admissible distortions of the optimal strategy used by the optimality
/// tests. All variants leave the terminal point at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    /// `h1 += c`, portfolio value unchanged (savings rebalanced).
    BondShift(f64),
    /// `h1 *= 1 + c`, value unchanged.
    BondScale(f64),
    /// `h1 += c (T - t)/T`, value unchanged.
    TimeScaledShift(f64),
    /// `h1 -> -h1`, value unchanged.
    SignFlip,
    /// Portfolio value shifted by `c (T - t)/T` through the savings account.
    ValueShift(f64),
    /// `h1 = 0`, value unchanged: insurance cash flows left unhedged.
    NoHedge,
}

impl Perturbation {
    pub fn label(&self) -> String {
        match self {
            Perturbation::BondShift(c) => format!("bond_shift({c})"),
            Perturbation::BondScale(c) => format!("bond_scale({c})"),
            Perturbation::TimeScaledShift(c) => format!("time_scaled_shift({c})"),
            Perturbation::SignFlip => "sign_flip".into(),
            Perturbation::ValueShift(c) => format!("value_shift({c})"),
            Perturbation::NoHedge => "no_hedge".into(),
        }
    }
}

/// The optimal strategy distorted by one [`Perturbation`].
pub struct PerturbedStrategy(pub Perturbation);

impl PathStrategy for PerturbedStrategy {
    fn point(&self, ctx: &StrategyContext<'_>) -> StrategyPoint {
        if ctx.is_terminal() {
            return StrategyPoint::ZERO;
        }
        let base = OptimalStrategy.point(ctx);
        let relief = (ctx.horizon - ctx.t) / ctx.horizon;
        let (h1, value) = match self.0 {
            Perturbation::BondShift(c) => (base.h1 + c, base.value),
            Perturbation::BondScale(c) => (base.h1 * (1.0 + c), base.value),
            Perturbation::TimeScaledShift(c) => (base.h1 + c * relief, base.value),
            Perturbation::SignFlip => (-base.h1, base.value),
            Perturbation::ValueShift(c) => (base.h1, base.value + c * relief),
            Perturbation::NoHedge => (0.0, base.value),
        };
        StrategyPoint { h0: (value - h1 * ctx.bond) / ctx.savings, h1, value }
    }
}

/// Cost-process diagnostics of one strategy along one path.
#[derive(Debug, Clone)]
pub struct CostDiagnostics {
    pub times: Vec<f64>,
    /// Modified cost `C~(h, t_k)`.
    pub modified_cost: Vec<f64>,
    /// Discounted cost `C*(h, t_k)`.
    pub discounted_cost: Vec<f64>,
    /// Realized residual-martingale increments `sum v dM` per step (a model
    /// property, identical for every strategy on the path).
    pub residual_increments: Vec<f64>,
    pub initial_modified_cost: f64,
    pub terminal_modified_cost: f64,
    /// Total tax payments `A^tax(h, T)`.
    pub tax_total: f64,
    /// Total expense payments `A^e(h, T)`.
    pub expense_total: f64,
    /// `A*(T)`: all payments (benefits + taxes + expenses) discounted at the
    /// before-tax savings account, including the time-0 premium atom.
    pub discounted_payments_terminal: f64,
    /// Worst `|h0 S0 + h1 S1 - value|` across nodes.
    pub max_value_gap: f64,
}

impl CostDiagnostics {
    pub fn cost_change(&self) -> f64 {
        self.terminal_modified_cost - self.initial_modified_cost
    }

    pub fn residual_total(&self) -> f64 {
        pairwise_sum(&self.residual_increments)
    }
}

/// Run several strategies over one path in a single sweep; the per-node
/// hedging-table evaluation (the expensive part) is shared.
pub fn run_strategies(
    scenario: &Scenario,
    tables: &HedgeTables,
    path: &ScenarioPath,
    strategies: &[&dyn PathStrategy],
) -> Result<Vec<CostDiagnostics>> {
    let n = path.n_nodes();
    ensure(n >= 2, || "path needs at least two nodes".into())?;
    let n_states = scenario.model.n_states();
    let gamma = scenario.tax_expense.gamma;
    let horizon = scenario.horizon();
    let benefits =
        accumulate_benefit_payments(&scenario.payments, &path.times, &path.states, &path.jumps)?;

    let n_strat = strategies.len();
    let mut modified = vec![Vec::with_capacity(n); n_strat];
    let mut discounted = vec![Vec::with_capacity(n); n_strat];
    let mut tax_totals = vec![0.0; n_strat];
    let mut expense_totals = vec![0.0; n_strat];
    let mut discounted_payments = vec![benefits.at_start; n_strat];
    let mut value_gaps = vec![0.0f64; n_strat];
    let mut residuals = Vec::with_capacity(n - 1);
    let mut prev_points = vec![StrategyPoint::ZERO; n_strat];

    let mut eval_prev = NodeBuffers::new(n_states);
    let mut eval_cur = NodeBuffers::new(n_states);

    for k in 0..n {
        match path.base_index[k] {
            Some(b) => tables.eval_node_into(b, path.rates[k], &mut eval_cur),
            None => tables.eval_time_into(path.times[k], path.rates[k], &mut eval_cur)?,
        }
        let ctx = StrategyContext {
            node_index: k,
            t: path.times[k],
            horizon,
            r: path.rates[k],
            accumulated_rate: path.accumulated_rate[k],
            accumulated_expense: path.accumulated_expense_rate[k],
            state_pre: path.pre_state(k),
            state_now: path.states[k],
            savings: path.savings[k],
            bond: path.bond_prices[k],
            eval: &eval_cur,
        };
        if k == 0 {
            for (s, strategy) in strategies.iter().enumerate() {
                let pt = strategy.point(&ctx);
                let c0 = pt.value + benefits.at_start;
                modified[s].push(c0);
                discounted[s].push(c0);
                let gap = (pt.h0 * ctx.savings + pt.h1 * ctx.bond - pt.value).abs();
                value_gaps[s] = value_gaps[s].max(gap);
                prev_points[s] = pt;
            }
        } else {
            let kp = k - 1;
            let dt = path.times[k] - path.times[kp];
            let ds0 = path.savings[k] - path.savings[kp];
            let ds1 = path.bond_prices[k] - path.bond_prices[kp];
            let s0_prev = path.savings[kp];
            let growth =
                (gamma * path.accumulated_rate[kp] + path.accumulated_expense_rate[kp]).exp();
            let delta_prev = scenario
                .tax_expense
                .expense_rate(path.states[kp], path.times[kp]);
            let d_benefit = benefits.per_step[kp];

            for (s, strategy) in strategies.iter().enumerate() {
                let pt = strategy.point(&ctx);
                let prev = prev_points[s];
                let gains = prev.h0 * ds0 + prev.h1 * ds1;
                let d_tax = gamma * gains;
                let d_expense = delta_prev * prev.value * dt;
                let d_cost = (pt.value - prev.value) - gains + d_benefit + d_tax + d_expense;
                let d_cost_star = d_cost / s0_prev;
                let c_star = discounted[s][kp] + d_cost_star;
                let c_tilde = modified[s][kp] + growth * d_cost_star;
                discounted[s].push(c_star);
                modified[s].push(c_tilde);
                tax_totals[s] += d_tax;
                expense_totals[s] += d_expense;
                discounted_payments[s] += (d_benefit + d_tax + d_expense) / s0_prev;
                let gap = (pt.h0 * ctx.savings + pt.h1 * ctx.bond - pt.value).abs();
                value_gaps[s] = value_gaps[s].max(gap);
                prev_points[s] = pt;
            }

            // residual-martingale increment over (t_{k-1}, t_k]:
            // the jump term at t_k minus the left-point compensator
            let j = path.states[kp];
            let deflator_prev = (-((1.0 - gamma) * path.accumulated_rate[kp]
                - path.accumulated_expense_rate[kp]))
                .exp();
            let mut compensator = 0.0;
            for to in 0..n_states {
                if to != j {
                    let mu = scenario.model.intensity(j, to, path.times[kp]);
                    if mu > 0.0 {
                        let v = deflator_prev
                            * (scenario.payments.transition_payment(j, to, path.times[kp])
                                + eval_prev.reserves[to]
                                - eval_prev.reserves[j]);
                        compensator += mu * v;
                    }
                }
            }
            let mut increment = -compensator * dt;
            for jump in &path.jumps {
                if jump.time == path.times[k] {
                    let deflator_now = (-((1.0 - gamma) * path.accumulated_rate[k]
                        - path.accumulated_expense_rate[k]))
                        .exp();
                    increment += deflator_now
                        * (scenario.payments.transition_payment(jump.from, jump.to, jump.time)
                            + eval_cur.reserves[jump.to]
                            - eval_cur.reserves[jump.from]);
                }
            }
            residuals.push(increment);
        }
        std::mem::swap(&mut eval_prev, &mut eval_cur);
    }

    Ok((0..n_strat)
        .map(|s| {
            let modified_cost = std::mem::take(&mut modified[s]);
            let initial = modified_cost[0];
            let terminal = *modified_cost.last().unwrap();
            CostDiagnostics {
                times: path.times.clone(),
                modified_cost,
                discounted_cost: std::mem::take(&mut discounted[s]),
                residual_increments: residuals.clone(),
                initial_modified_cost: initial,
                terminal_modified_cost: terminal,
                tax_total: tax_totals[s],
                expense_total: expense_totals[s],
                discounted_payments_terminal: discounted_payments[s],
                max_value_gap: value_gaps[s],
            }
        })
        .collect())
}

/// A single strategy over a single path.
pub fn run_strategy(
    scenario: &Scenario,
    tables: &HedgeTables,
    path: &ScenarioPath,
    strategy: &dyn PathStrategy,
) -> Result<CostDiagnostics> {
    Ok(run_strategies(scenario, tables, path, &[strategy])?.pop().unwrap())
}

/// Simulate `n_paths` paths and map each through `f`, in parallel, with the
/// result vector ordered by path index regardless of the worker count.
pub fn map_paths<R, F>(
    scenario: &Scenario,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    f: F,
) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(u64, &ScenarioPath) -> Result<R> + Sync,
{
    (0..n_paths as u64)
        .into_par_iter()
        .map(|idx| {
            let path = simulate_scenario_indexed(scenario, grid, seed, idx)?;
            f(idx, &path)
        })
        .collect()
}

/// Monte Carlo risk report for one strategy.
#[derive(Debug, Clone)]
pub struct RiskReport {
    /// `E[(C~(T) - C~(0))^2]`, the modified risk at time 0.
    pub risk: MeanWithError,
    /// `E[C~(T) - C~(0)]`; zero for a martingale cost process.
    pub cost_drift: MeanWithError,
    /// `E[(sum v dM)^2]`: the residual-based risk estimate.
    pub residual_risk: MeanWithError,
    /// Sample covariance between the residual total and the discounted-bond
    /// change; zero under orthogonality.
    pub residual_market_cov: MeanWithError,
    /// Worst portfolio-value bookkeeping gap seen on any node of any path.
    pub max_value_gap: f64,
}

struct PathSummary {
    cost_change: f64,
    residual_total: f64,
    bond_star_change: f64,
    value_gap: f64,
}

fn summarize(
    scenario: &Scenario,
    tables: &HedgeTables,
    path: &ScenarioPath,
    strategy: &dyn PathStrategy,
) -> Result<PathSummary> {
    let d = run_strategy(scenario, tables, path, strategy)?;
    Ok(PathSummary {
        cost_change: d.cost_change(),
        residual_total: d.residual_total(),
        bond_star_change: path.discounted_bond(path.n_nodes() - 1) - path.discounted_bond(0),
        value_gap: d.max_value_gap,
    })
}

/// Estimate the modified risk `R~(h, 0)` of a strategy by Monte Carlo.
pub fn estimate_modified_risk(
    scenario: &Scenario,
    strategy: &dyn PathStrategy,
    grid: &TimeGrid,
    quad_points: usize,
    n_paths: usize,
    seed: u64,
) -> Result<RiskReport> {
    ensure(n_paths >= 2, || {
        "risk estimation needs at least two paths for a standard error".into()
    })?;
    let tables = scenario.hedge_tables(grid, quad_points)?;
    let summaries = map_paths(scenario, grid, n_paths, seed, |_, path| {
        summarize(scenario, &tables, path, strategy)
    })?;
    let sq: Vec<f64> = summaries.iter().map(|s| s.cost_change * s.cost_change).collect();
    let drift: Vec<f64> = summaries.iter().map(|s| s.cost_change).collect();
    let res_sq: Vec<f64> = summaries.iter().map(|s| s.residual_total * s.residual_total).collect();
    let res: Vec<f64> = summaries.iter().map(|s| s.residual_total).collect();
    let bond: Vec<f64> = summaries.iter().map(|s| s.bond_star_change).collect();
    Ok(RiskReport {
        risk: MeanWithError::from_samples(&sq),
        cost_drift: MeanWithError::from_samples(&drift),
        residual_risk: MeanWithError::from_samples(&res_sq),
        residual_market_cov: covariance_with_error(&res, &bond),
        max_value_gap: summaries.iter().fold(0.0f64, |m, s| m.max(s.value_gap)),
    })
}

/// Risk of one perturbed strategy, paired with the optimal strategy on the
/// same paths.
#[derive(Debug, Clone)]
pub struct PerturbationResult {
    pub label: String,
    pub risk: MeanWithError,
    /// Paired estimate of `R~(pert) - R~(optimal)`; its standard error is the
    /// combined error of the comparison.
    pub excess_over_optimal: MeanWithError,
}

/// Run the optimal strategy and all perturbations over shared paths.
pub fn perturbation_study(
    scenario: &Scenario,
    grid: &TimeGrid,
    quad_points: usize,
    n_paths: usize,
    seed: u64,
    perturbations: &[Perturbation],
) -> Result<(RiskReport, Vec<PerturbationResult>)> {
    ensure(n_paths >= 2, || {
        "risk estimation needs at least two paths for a standard error".into()
    })?;
    let tables = scenario.hedge_tables(grid, quad_points)?;
    let perturbed: Vec<PerturbedStrategy> =
        perturbations.iter().map(|&p| PerturbedStrategy(p)).collect();
    let mut strategies: Vec<&dyn PathStrategy> = vec![&OptimalStrategy];
    for p in &perturbed {
        strategies.push(p);
    }
    // per path: (optimal summary pieces, per-perturbation squared cost changes)
    let rows = map_paths(scenario, grid, n_paths, seed, |_, path| {
        let diags = run_strategies(scenario, &tables, path, &strategies)?;
        let opt = &diags[0];
        let opt_change = opt.cost_change();
        let mut row = Vec::with_capacity(diags.len() + 2);
        row.push(opt_change);
        row.push(opt.residual_total());
        row.push(path.discounted_bond(path.n_nodes() - 1) - path.discounted_bond(0));
        for d in &diags[1..] {
            row.push(d.cost_change());
        }
        Ok(row)
    })?;
    let opt_sq: Vec<f64> = rows.iter().map(|r| r[0] * r[0]).collect();
    let opt_drift: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let res: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    let res_sq: Vec<f64> = rows.iter().map(|r| r[1] * r[1]).collect();
    let bond: Vec<f64> = rows.iter().map(|r| r[2]).collect();
    let report = RiskReport {
        risk: MeanWithError::from_samples(&opt_sq),
        cost_drift: MeanWithError::from_samples(&opt_drift),
        residual_risk: MeanWithError::from_samples(&res_sq),
        residual_market_cov: covariance_with_error(&res, &bond),
        max_value_gap: 0.0,
    };
    let results = perturbations
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let sq: Vec<f64> = rows.iter().map(|r| r[3 + i] * r[3 + i]).collect();
            let diff: Vec<f64> = rows.iter().map(|r| r[3 + i] * r[3 + i] - r[0] * r[0]).collect();
            PerturbationResult {
                label: p.label(),
                risk: MeanWithError::from_samples(&sq),
                excess_over_optimal: MeanWithError::from_samples(&diff),
            }
        })
        .collect();
    Ok((report, results))
}

/// Map after-tax-market holdings to before-tax holdings along a path:
/// `h1 = (S~1/S1) h~1`, savings chosen so the portfolio value is unchanged.
pub fn after_tax_strategy_map(
    path: &ScenarioPath,
    check_holdings: &[(f64, f64)],
) -> Result<Vec<StrategyPoint>> {
    ensure(check_holdings.len() == path.n_nodes(), || {
        format!(
            "{} holdings vs {} path nodes",
            check_holdings.len(),
            path.n_nodes()
        )
    })?;
    Ok(check_holdings
        .iter()
        .enumerate()
        .map(|(k, &(h0c, h1c))| {
            let value = h0c * path.after_tax_savings[k] + h1c * path.after_tax_bond[k];
            let h1 = h1c * path.after_tax_bond[k] / path.bond_prices[k];
            StrategyPoint { h0: (value - h1 * path.bond_prices[k]) / path.savings[k], h1, value }
        })
        .collect())
}

/// Two-step consistency at time 0: the mean of all discounted payments
/// generated by the optimal strategy against the time-0 intrinsic value.
#[derive(Debug, Clone)]
pub struct TwoStepReport {
    /// Monte Carlo mean of `A*(T)`.
    pub simulated: MeanWithError,
    /// `A(0) + V_0(0)`.
    pub predicted: f64,
    pub gap: f64,
    /// Gap in standard errors.
    pub z_score: f64,
}

pub fn two_step_check(
    scenario: &Scenario,
    grid: &TimeGrid,
    quad_points: usize,
    n_paths: usize,
    seed: u64,
) -> Result<TwoStepReport> {
    ensure(n_paths >= 2, || {
        "the two-step check needs at least two paths for a standard error".into()
    })?;
    let tables = scenario.hedge_tables(grid, quad_points)?;
    let totals = map_paths(scenario, grid, n_paths, seed, |_, path| {
        let d = run_strategy(scenario, &tables, path, &OptimalStrategy)?;
        Ok(d.discounted_payments_terminal)
    })?;
    let simulated = MeanWithError::from_samples(&totals);
    let mut buf = NodeBuffers::new(scenario.model.n_states());
    tables.eval_node_into(0, scenario.vasicek.r0, &mut buf);
    let predicted = scenario.payments.initial_premium + buf.reserves[0];
    let gap = simulated.mean - predicted;
    let z = if simulated.std_error > 0.0 { gap.abs() / simulated.std_error } else { 0.0 };
    Ok(TwoStepReport { simulated, predicted, gap, z_score: z })
}
