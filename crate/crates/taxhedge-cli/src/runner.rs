//! Batch runners behind the CLI subcommands: reserve curves, hedge reports,
//! and the two-step consistency check.

use taxhedge::hedging::{reserve_curve, NodeBuffers};
use taxhedge::market::{
    perturbation_study, run_strategy, simulate_scenario_indexed, OptimalStrategy, PathStrategy,
    Perturbation, StrategyContext,
};
use taxhedge::stats::MeanWithError;

use crate::config::ScenarioConfig;
use crate::report::{Cell, ResultTable};

/// Failures after validation: numerical (non-finite output) or internal.
#[derive(Debug)]
pub enum RunError {
    Validation(Vec<crate::config::ValidationError>),
    Numerical(String),
    Internal(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Validation(errors) => {
                writeln!(f, "configuration invalid:")?;
                for e in errors {
                    writeln!(f, "  {e}")?;
                }
                Ok(())
            }
            RunError::Numerical(m) => write!(f, "numerical failure: {m}"),
            RunError::Internal(m) => write!(f, "{m}"),
        }
    }
}

impl From<taxhedge::Error> for RunError {
    fn from(e: taxhedge::Error) -> Self {
        RunError::Internal(e.to_string())
    }
}

fn reject_non_finite(table: ResultTable, what: &str) -> Result<ResultTable, RunError> {
    if let Some((row, column)) = table.find_non_finite() {
        return Err(RunError::Numerical(format!(
            "non-finite value in {what} (row {row}, column {column})"
        )));
    }
    Ok(table)
}

/// Reserve curve on a uniform reporting grid. The default rate column uses
/// the model mean `E[r(t)]`; extra fixed-rate scenarios append one block of
/// state columns each.
pub fn run_reserves(config: &ScenarioConfig) -> Result<ResultTable, RunError> {
    let scenario = config.to_scenario().map_err(RunError::Validation)?;
    let nodes = config.outputs.reporting_nodes;
    let times: Vec<f64> = (0..nodes)
        .map(|k| config.horizon * k as f64 / (nodes - 1) as f64)
        .collect();
    let mean_rates: Vec<f64> = times.iter().map(|&t| scenario.vasicek.mean_rate(t)).collect();

    let mut columns = vec!["t".to_string(), "rate".to_string()];
    for state in &config.states {
        columns.push(format!("reserve_{state}"));
    }
    for (k, _) in config.outputs.rate_scenarios.iter().enumerate() {
        for state in &config.states {
            columns.push(format!("reserve_{state}_r{k}"));
        }
    }
    let mut table = ResultTable {
        columns,
        rows: Vec::new(),
    };

    let base = reserve_curve(
        &scenario.model,
        &scenario.payments,
        &scenario.tax_expense,
        &scenario.vasicek,
        &times,
        &mean_rates,
        config.quad_points,
    )?;
    let mut scenario_curves = Vec::new();
    for &r in &config.outputs.rate_scenarios {
        let fixed = vec![r; times.len()];
        scenario_curves.push(reserve_curve(
            &scenario.model,
            &scenario.payments,
            &scenario.tax_expense,
            &scenario.vasicek,
            &times,
            &fixed,
            config.quad_points,
        )?);
    }

    for (i, &t) in times.iter().enumerate() {
        let mut row = vec![Cell::Float(t), Cell::Float(mean_rates[i])];
        for v in &base.values[i] {
            row.push(Cell::Float(*v));
        }
        for curve in &scenario_curves {
            for v in &curve.values[i] {
                row.push(Cell::Float(*v));
            }
        }
        table.push_row(row);
    }
    reject_non_finite(table, "reserve curve")
}

/// The deterministic perturbation battery used by hedge reports.
pub fn default_perturbations() -> Vec<Perturbation> {
    let mut p = Vec::new();
    for &c in &[0.01, 0.02, 0.05, 0.1, 0.2] {
        p.push(Perturbation::BondShift(c));
        p.push(Perturbation::BondShift(-c));
    }
    for &c in &[0.1, 0.25, 0.5] {
        p.push(Perturbation::BondScale(c));
        p.push(Perturbation::BondScale(-c));
    }
    for &c in &[0.05, 0.1] {
        p.push(Perturbation::TimeScaledShift(c));
        p.push(Perturbation::TimeScaledShift(-c));
    }
    p.push(Perturbation::SignFlip);
    for &c in &[0.01, 0.05] {
        p.push(Perturbation::ValueShift(c));
        p.push(Perturbation::ValueShift(-c));
    }
    p.push(Perturbation::NoHedge);
    p
}

/// Hedge report: per-path illustration table, perturbation risk table, and
/// aggregate diagnostics.
pub fn run_hedge_report(
    config: &ScenarioConfig,
) -> Result<(ResultTable, ResultTable, ResultTable), RunError> {
    let scenario = config.to_scenario().map_err(RunError::Validation)?;
    let grid = config.time_grid();
    let seed = config.monte_carlo.seed;
    let tables = scenario.hedge_tables(&grid, config.quad_points)?;

    // illustration paths: the realized optimal strategy node by node
    let mut paths_table = ResultTable::new(vec![
        "path", "t", "r", "state", "s0", "s1", "h0", "h1", "value", "c_star", "c_tilde",
    ]);
    let mut buf = NodeBuffers::new(scenario.model.n_states());
    for idx in 0..config.outputs.illustration_paths {
        let path = simulate_scenario_indexed(&scenario, &grid, seed, idx as u64)?;
        let diag = run_strategy(&scenario, &tables, &path, &OptimalStrategy)?;
        for k in 0..path.n_nodes() {
            match path.base_index[k] {
                Some(b) => tables.eval_node_into(b, path.rates[k], &mut buf),
                None => tables.eval_time_into(path.times[k], path.rates[k], &mut buf)?,
            }
            let ctx = StrategyContext {
                node_index: k,
                t: path.times[k],
                horizon: scenario.horizon(),
                r: path.rates[k],
                accumulated_rate: path.accumulated_rate[k],
                accumulated_expense: path.accumulated_expense_rate[k],
                state_pre: path.pre_state(k),
                state_now: path.states[k],
                savings: path.savings[k],
                bond: path.bond_prices[k],
                eval: &buf,
            };
            let pt = OptimalStrategy.point(&ctx);
            paths_table.push_row(vec![
                Cell::Int(idx as i64),
                Cell::Float(path.times[k]),
                Cell::Float(path.rates[k]),
                Cell::Int(path.states[k] as i64),
                Cell::Float(path.savings[k]),
                Cell::Float(path.bond_prices[k]),
                Cell::Float(pt.h0),
                Cell::Float(pt.h1),
                Cell::Float(pt.value),
                Cell::Float(diag.discounted_cost[k]),
                Cell::Float(diag.modified_cost[k]),
            ]);
        }
    }

    let perturbations = default_perturbations();
    let (report, results) = perturbation_study(
        &scenario,
        &grid,
        config.quad_points,
        config.monte_carlo.paths,
        seed,
        &perturbations,
    )?;

    let mut risk_table = ResultTable::new(vec![
        "strategy",
        "risk",
        "risk_std_error",
        "excess_over_optimal",
        "excess_std_error",
    ]);
    risk_table.push_row(vec![
        Cell::Text("optimal".into()),
        Cell::Float(report.risk.mean),
        Cell::Float(report.risk.std_error),
        Cell::Float(0.0),
        Cell::Float(0.0),
    ]);
    for r in &results {
        risk_table.push_row(vec![
            Cell::Text(r.label.clone()),
            Cell::Float(r.risk.mean),
            Cell::Float(r.risk.std_error),
            Cell::Float(r.excess_over_optimal.mean),
            Cell::Float(r.excess_over_optimal.std_error),
        ]);
    }

    let mut diag_table = ResultTable::new(vec!["quantity", "value", "std_error"]);
    let mut push_diag = |name: &str, m: &MeanWithError| {
        diag_table.push_row(vec![
            Cell::Text(name.into()),
            Cell::Float(m.mean),
            Cell::Float(m.std_error),
        ]);
    };
    push_diag("modified_risk", &report.risk);
    push_diag("cost_drift", &report.cost_drift);
    push_diag("residual_risk", &report.residual_risk);
    push_diag("residual_market_covariance", &report.residual_market_cov);

    let paths_table = reject_non_finite(paths_table, "hedge path table")?;
    let risk_table = reject_non_finite(risk_table, "risk table")?;
    let diag_table = reject_non_finite(diag_table, "diagnostics table")?;
    Ok((paths_table, risk_table, diag_table))
}

/// Two-step consistency report: both sides of the time-0 identity.
pub fn run_two_step(config: &ScenarioConfig) -> Result<ResultTable, RunError> {
    let scenario = config.to_scenario().map_err(RunError::Validation)?;
    let grid = config.time_grid();
    let report = taxhedge::market::two_step_check(
        &scenario,
        &grid,
        config.quad_points,
        config.monte_carlo.paths,
        config.monte_carlo.seed,
    )?;
    let mut table = ResultTable::new(vec![
        "simulated_mean",
        "simulated_std_error",
        "predicted",
        "gap",
        "z_score",
    ]);
    table.push_row(vec![
        Cell::Float(report.simulated.mean),
        Cell::Float(report.simulated.std_error),
        Cell::Float(report.predicted),
        Cell::Float(report.gap),
        Cell::Float(report.z_score),
    ]);
    reject_non_finite(table, "two-step report")
}
