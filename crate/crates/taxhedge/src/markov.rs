//! Finite-state time-inhomogeneous Markov jump process: intensity tables,
//! deflated transition probabilities via forward/backward matrix ODEs, and
//! exact jump-path simulation by thinning.
//!
//! Sign convention: [`deflated_transitions_forward`] and its backward twin
//! compute
//!
//! ```text
//! p^delta_{ij}(t,s) = E[ 1{Z(s)=j} exp(-int_t^s delta_{Z(u)}(u) du) | Z(t)=i ],
//! ```
//!
//! i.e. the deflator is `exp(-int delta)`. The "expense-deflated" quantities
//! used for reserves carry the opposite sign (`exp(+int delta)`); callers
//! obtain them by negating the rates (see [`DeflationSpec::negated`]), which
//! the cash-flow layer does in exactly one place.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{ensure, Error, Result};
use crate::term_structure::{rng_for, STREAM_JUMPS};
use crate::time::{PiecewiseConstant, TimeGrid};

/// Finite state set with per-pair piecewise-constant transition intensities
/// on `[0, horizon]`. The diagonal is never stored; the generator's diagonal
/// is always `-sum of off-diagonal row entries`.
#[derive(Debug, Clone)]
pub struct MarkovModel {
    n_states: usize,
    horizon: f64,
    /// Row-major `n x n`, `None` on the diagonal and for impossible moves.
    intensities: Vec<Option<PiecewiseConstant>>,
}

impl MarkovModel {
    pub fn new(
        n_states: usize,
        horizon: f64,
        intensities: Vec<(usize, usize, PiecewiseConstant)>,
    ) -> Result<Self> {
        ensure(n_states >= 1, || "need at least one state".into())?;
        ensure(horizon.is_finite() && horizon > 0.0, || {
            format!("horizon must be positive and finite, got {horizon}")
        })?;
        let mut table: Vec<Option<PiecewiseConstant>> = vec![None; n_states * n_states];
        for (from, to, mu) in intensities {
            ensure(from < n_states && to < n_states, || {
                format!("intensity ({from} -> {to}) references a state outside 0..{n_states}")
            })?;
            ensure(from != to, || {
                format!("intensity ({from} -> {to}) must connect distinct states")
            })?;
            ensure(mu.inf(0.0, horizon) >= 0.0, || {
                format!("intensity ({from} -> {to}) must be nonnegative on [0, {horizon}]")
            })?;
            ensure(mu.end() == horizon, || {
                format!(
                    "intensity ({from} -> {to}) is defined up to {}, expected horizon {horizon}",
                    mu.end()
                )
            })?;
            let slot = &mut table[from * n_states + to];
            ensure(slot.is_none(), || {
                format!("duplicate intensity for ({from} -> {to})")
            })?;
            *slot = Some(mu);
        }
        Ok(Self { n_states, horizon, intensities: table })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `mu_{jk}(t)`; zero where no intensity was declared.
    pub fn intensity(&self, from: usize, to: usize, t: f64) -> f64 {
        match &self.intensities[from * self.n_states + to] {
            Some(f) => f.eval(t),
            None => 0.0,
        }
    }

    /// Total exit intensity `sum_k mu_{jk}(t)` out of `from`.
    pub fn exit_intensity(&self, from: usize, t: f64) -> f64 {
        (0..self.n_states)
            .filter(|&k| k != from)
            .map(|k| self.intensity(from, k, t))
            .sum()
    }

    /// Upper bound for the exit intensity out of `from` on `[a, b]`
    /// (sum of per-pair suprema; a valid thinning majorant).
    fn exit_intensity_bound(&self, from: usize, a: f64, b: f64) -> f64 {
        (0..self.n_states)
            .filter(|&k| k != from)
            .map(|k| match &self.intensities[from * self.n_states + k] {
                Some(f) => f.sup(a, b).max(0.0),
                None => 0.0,
            })
            .sum()
    }

    /// Fill `q` (row-major `n x n`) with the generator at `t`:
    /// off-diagonal `mu_{jk}(t)`, diagonal `-sum`.
    pub fn generator_into(&self, t: f64, q: &mut [f64]) {
        let n = self.n_states;
        debug_assert_eq!(q.len(), n * n);
        for j in 0..n {
            let mut row_sum = 0.0;
            for k in 0..n {
                if k != j {
                    let v = self.intensity(j, k, t);
                    q[j * n + k] = v;
                    row_sum += v;
                }
            }
            q[j * n + j] = -row_sum;
        }
    }

    /// All interior breakpoints of the intensity table, sorted, deduplicated.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self
            .intensities
            .iter()
            .flatten()
            .flat_map(|f| f.breakpoints().iter().copied())
            .collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup();
        pts
    }
}

/// State-wise deflation rates `delta_j(t)`, one function per state.
#[derive(Debug, Clone)]
pub struct DeflationSpec {
    rates: Vec<PiecewiseConstant>,
}

impl DeflationSpec {
    pub fn new(rates: Vec<PiecewiseConstant>) -> Result<Self> {
        ensure(!rates.is_empty(), || "need one deflation rate per state".into())?;
        Ok(Self { rates })
    }

    /// `delta_j == 0` for every state.
    pub fn zero(n_states: usize, horizon: f64) -> Self {
        let zero = PiecewiseConstant::constant(0.0, horizon).unwrap();
        Self { rates: vec![zero; n_states] }
    }

    pub fn n_states(&self) -> usize {
        self.rates.len()
    }

    pub fn rate(&self, state: usize, t: f64) -> f64 {
        self.rates[state].eval(t)
    }

    pub fn rates(&self) -> &[PiecewiseConstant] {
        &self.rates
    }

    /// Sign-flipped rates: turns the `exp(-int delta)` deflator implemented by
    /// the solvers into the `exp(+int delta)` one used for expense-modified
    /// cash flows.
    pub fn negated(&self) -> Self {
        Self { rates: self.rates.iter().map(|f| f.scaled(-1.0)).collect() }
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self
            .rates
            .iter()
            .flat_map(|f| f.breakpoints().iter().copied())
            .collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup();
        pts
    }
}

/// Matrix of deflated transition probabilities `p^delta_{ij}(t, s)`.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    n: usize,
    pub t: f64,
    pub s: f64,
    entries: Vec<f64>,
}

impl TransitionMatrix {
    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.entries[i * self.n..(i + 1) * self.n].iter().sum()
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

/// `out = a * b` for row-major `n x n` matrices.
fn mat_mul(a: &[f64], b: &[f64], out: &mut [f64], n: usize) {
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += a[i * n + k] * b[k * n + j];
            }
            out[i * n + j] = acc;
        }
    }
}

/// Classical fourth-order Runge-Kutta transfer matrix for the linear system
/// with constant coefficient matrix `m` over a step of length `h`:
/// `I + hM + (hM)^2/2 + (hM)^3/6 + (hM)^4/24`, assembled by Horner's scheme.
/// Coefficients are constant on each sub-interval (breakpoints are grid
/// nodes), so the four stage evaluations coincide and this is exactly the
/// classical RK4 update.
fn rk4_transfer(m: &[f64], h: f64, n: usize) -> Vec<f64> {
    let ident = |buf: &mut [f64]| {
        buf.fill(0.0);
        for i in 0..n {
            buf[i * n + i] = 1.0;
        }
    };
    let mut acc = vec![0.0; n * n];
    let mut tmp = vec![0.0; n * n];
    ident(&mut acc);
    // acc = I + (h/4) M
    for (a, &b) in acc.iter_mut().zip(m.iter()) {
        *a += h / 4.0 * b;
    }
    for &div in &[3.0, 2.0, 1.0] {
        // acc <- I + (h/div) M * acc
        mat_mul(m, &acc, &mut tmp, n);
        ident(&mut acc);
        for (a, &b) in acc.iter_mut().zip(tmp.iter()) {
            *a += h / div * b;
        }
    }
    acc
}

/// Integration nodes for `[t, s]`: `steps` uniform sub-intervals with every
/// intensity/deflation breakpoint inserted as an extra node.
fn ode_nodes(
    model: &MarkovModel,
    deflation: &DeflationSpec,
    t: f64,
    s: f64,
    steps: usize,
    extra: &[f64],
) -> Vec<f64> {
    // endpoints exact; rounding in the interior nodes is harmless
    let mut nodes: Vec<f64> = std::iter::once(t)
        .chain((1..steps).map(|k| t + (s - t) * k as f64 / steps as f64))
        .chain(std::iter::once(s))
        .collect();
    nodes.extend(model.breakpoints().into_iter().filter(|&b| b > t && b < s));
    nodes.extend(deflation.breakpoints().into_iter().filter(|&b| b > t && b < s));
    nodes.extend(extra.iter().copied().filter(|&b| b > t && b < s));
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nodes.dedup();
    nodes
}

fn check_solver_inputs(
    model: &MarkovModel,
    deflation: &DeflationSpec,
    t: f64,
    s: f64,
    steps: usize,
) -> Result<()> {
    ensure(deflation.n_states() == model.n_states(), || {
        format!(
            "deflation covers {} states, model has {}",
            deflation.n_states(),
            model.n_states()
        )
    })?;
    ensure(steps >= 1, || "need at least one integration step".into())?;
    ensure(t.is_finite() && s.is_finite() && 0.0 <= t && t <= s, || {
        format!("need 0 <= t <= s, got t={t}, s={s}")
    })?;
    ensure(s <= model.horizon(), || {
        format!("s={s} lies after the model horizon {}", model.horizon())
    })?;
    Ok(())
}

/// Deflated generator `mu(t) - diag(delta)(t)` into `q`.
fn deflated_generator_into(model: &MarkovModel, deflation: &DeflationSpec, t: f64, q: &mut [f64]) {
    let n = model.n_states();
    model.generator_into(t, q);
    for j in 0..n {
        q[j * n + j] -= deflation.rate(j, t);
    }
}

/// Solve the forward system `d/ds p(t,s) = p(t,s) [mu - diag(delta)](s)` from
/// `p(t,t) = I` by classical RK4 on `steps` uniform sub-intervals (plus
/// breakpoint nodes).
pub fn deflated_transitions_forward(
    model: &MarkovModel,
    deflation: &DeflationSpec,
    t: f64,
    s: f64,
    steps: usize,
) -> Result<TransitionMatrix> {
    let curve = deflated_transition_curve(model, deflation, t, &[s], steps)?;
    Ok(curve.into_iter().next().unwrap())
}

/// Forward sweep recording `p^delta(t, target)` for every target in one pass.
/// Targets must be nondecreasing and lie in `[t, horizon]`.
pub fn deflated_transition_curve(
    model: &MarkovModel,
    deflation: &DeflationSpec,
    t: f64,
    targets: &[f64],
    steps: usize,
) -> Result<Vec<TransitionMatrix>> {
    ensure(!targets.is_empty(), || "need at least one target time".into())?;
    let s_last = *targets.last().unwrap();
    check_solver_inputs(model, deflation, t, s_last, steps)?;
    for w in targets.windows(2) {
        ensure(w[0] <= w[1], || "targets must be nondecreasing".into())?;
    }
    ensure(targets[0] >= t, || {
        format!("first target {} lies before t={t}", targets[0])
    })?;

    let n = model.n_states();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        p[i * n + i] = 1.0;
    }
    let mut out = Vec::with_capacity(targets.len());
    let mut record = |p: &[f64], s: f64| {
        out.push(TransitionMatrix { n, t, s, entries: p.to_vec() });
    };

    if s_last == t {
        for &tgt in targets {
            record(&p, tgt);
        }
        return Ok(out);
    }

    let nodes = ode_nodes(model, deflation, t, s_last, steps, targets);
    let mut q = vec![0.0; n * n];
    let mut next = vec![0.0; n * n];
    let mut target_idx = 0;
    while target_idx < targets.len() && targets[target_idx] <= nodes[0] {
        record(&p, targets[target_idx]);
        target_idx += 1;
    }
    for w in nodes.windows(2) {
        let (a, b) = (w[0], w[1]);
        let h = b - a;
        deflated_generator_into(model, deflation, 0.5 * (a + b), &mut q);
        let transfer = rk4_transfer(&q, h, n);
        mat_mul(&p, &transfer, &mut next, n);
        std::mem::swap(&mut p, &mut next);
        while target_idx < targets.len() && targets[target_idx] <= b {
            record(&p, targets[target_idx]);
            target_idx += 1;
        }
    }
    Ok(out)
}

/// Solve the backward system `d/dt p(t,s) = -[mu - diag(delta)](t) p(t,s)`
/// from `p(s,s) = I` down to `t`.
pub fn deflated_transitions_backward(
    model: &MarkovModel,
    deflation: &DeflationSpec,
    t: f64,
    s: f64,
    steps: usize,
) -> Result<TransitionMatrix> {
    check_solver_inputs(model, deflation, t, s, steps)?;
    let n = model.n_states();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        p[i * n + i] = 1.0;
    }
    if s == t {
        return Ok(TransitionMatrix { n, t, s, entries: p });
    }
    let nodes = ode_nodes(model, deflation, t, s, steps, &[]);
    let mut q = vec![0.0; n * n];
    let mut next = vec![0.0; n * n];
    for w in nodes.windows(2).rev() {
        let (a, b) = (w[0], w[1]);
        let h = b - a;
        deflated_generator_into(model, deflation, 0.5 * (a + b), &mut q);
        let transfer = rk4_transfer(&q, h, n);
        mat_mul(&transfer, &p, &mut next, n);
        std::mem::swap(&mut p, &mut next);
    }
    Ok(TransitionMatrix { n, t, s, entries: p })
}

/// One simulated trajectory of the state process on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpRecord {
    pub time: f64,
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone)]
pub struct StatePath {
    pub times: Vec<f64>,
    /// State at each grid time (right-continuous: the post-jump state at a
    /// jump time).
    pub states: Vec<usize>,
    pub jumps: Vec<JumpRecord>,
}

/// Simulate the jump process by thinning against a per-state bound on the
/// total exit intensity; exact for piecewise-constant intensities.
/// Deterministic in `seed`.
pub fn simulate_state_path(
    model: &MarkovModel,
    grid: &TimeGrid,
    initial_state: usize,
    seed: u64,
) -> Result<StatePath> {
    let mut rng = rng_for(seed, STREAM_JUMPS);
    simulate_state_path_with(model, grid, initial_state, &mut rng)
}

pub(crate) fn simulate_state_path_with(
    model: &MarkovModel,
    grid: &TimeGrid,
    initial_state: usize,
    rng: &mut ChaCha8Rng,
) -> Result<StatePath> {
    ensure(initial_state < model.n_states(), || {
        format!("initial state {initial_state} outside 0..{}", model.n_states())
    })?;
    ensure(grid.horizon() <= model.horizon(), || {
        format!(
            "grid horizon {} exceeds model horizon {}",
            grid.horizon(),
            model.horizon()
        )
    })?;
    let horizon = grid.horizon();
    let mut jumps = Vec::new();
    let mut state = initial_state;
    let mut clock = 0.0;
    loop {
        let bound = model.exit_intensity_bound(state, clock, horizon);
        if bound <= 0.0 {
            break;
        }
        let proposal: f64 = Exp::new(bound)
            .map_err(|e| Error::InvalidInput(format!("bad thinning bound {bound}: {e}")))?
            .sample(rng);
        clock += proposal;
        if clock >= horizon {
            break;
        }
        let actual = model.exit_intensity(state, clock);
        let accept: f64 = rng.random();
        if accept * bound < actual {
            // jump occurs; pick the destination by its intensity share
            let pick: f64 = rng.random::<f64>() * actual;
            let mut acc = 0.0;
            let mut dest = state;
            for k in 0..model.n_states() {
                if k == state {
                    continue;
                }
                acc += model.intensity(state, k, clock);
                if pick < acc {
                    dest = k;
                    break;
                }
            }
            if dest == state {
                // numerical edge: pick == actual; take the last reachable state
                dest = (0..model.n_states())
                    .rev()
                    .find(|&k| k != state && model.intensity(state, k, clock) > 0.0)
                    .unwrap_or(state);
                if dest == state {
                    continue;
                }
            }
            jumps.push(JumpRecord { time: clock, from: state, to: dest });
            state = dest;
        }
    }

    let times = grid.times().to_vec();
    let states = states_at(&times, &jumps, initial_state);
    Ok(StatePath { times, states, jumps })
}

/// Right-continuous state at each time given the jump records.
pub(crate) fn states_at(times: &[f64], jumps: &[JumpRecord], initial_state: usize) -> Vec<usize> {
    let mut states = Vec::with_capacity(times.len());
    let mut jump_idx = 0;
    let mut current = initial_state;
    for &t in times {
        while jump_idx < jumps.len() && jumps[jump_idx].time <= t {
            current = jumps[jump_idx].to;
            jump_idx += 1;
        }
        states.push(current);
    }
    states
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_state(mu: f64, horizon: f64) -> MarkovModel {
        MarkovModel::new(
            2,
            horizon,
            vec![(0, 1, PiecewiseConstant::constant(mu, horizon).unwrap())],
        )
        .unwrap()
    }

    /// active / disabled / dead with recovery, piecewise-constant in time.
    fn three_state(horizon: f64) -> MarkovModel {
        let seg = |vals: &[(f64, f64)]| {
            let (starts, values): (Vec<f64>, Vec<f64>) = vals.iter().copied().unzip();
            PiecewiseConstant::new(starts, values, horizon).unwrap()
        };
        MarkovModel::new(
            3,
            horizon,
            vec![
                (0, 1, seg(&[(0.0, 0.04), (4.0, 0.07)])),
                (0, 2, seg(&[(0.0, 0.01), (6.0, 0.02)])),
                (1, 0, seg(&[(0.0, 0.03)])),
                (1, 2, seg(&[(0.0, 0.05), (2.5, 0.06)])),
            ],
        )
        .unwrap()
    }

    #[test]
    fn rejects_invalid_models() {
        let f = PiecewiseConstant::constant(0.1, 10.0).unwrap();
        assert!(MarkovModel::new(2, 10.0, vec![(0, 0, f.clone())]).is_err());
        assert!(MarkovModel::new(2, 10.0, vec![(0, 3, f.clone())]).is_err());
        assert!(MarkovModel::new(2, 5.0, vec![(0, 1, f.clone())]).is_err());
        let neg = PiecewiseConstant::constant(-0.1, 10.0).unwrap();
        assert!(MarkovModel::new(2, 10.0, vec![(0, 1, neg)]).is_err());
        assert!(MarkovModel::new(2, 10.0, vec![(0, 1, f.clone()), (0, 1, f)]).is_err());
    }

    #[test]
    fn two_state_survival_closed_form() {
        let model = two_state(0.03, 20.0);
        let zero = DeflationSpec::zero(2, 20.0);
        let p = deflated_transitions_forward(&model, &zero, 1.0, 15.0, 200).unwrap();
        let expected = (-0.03f64 * 14.0).exp();
        assert_relative_eq!(p.get(0, 0), expected, max_relative = 1e-10);
        assert_relative_eq!(p.get(0, 1), 1.0 - expected, max_relative = 1e-10);
        assert_relative_eq!(p.get(1, 1), 1.0, max_relative = 1e-12);
        assert_eq!(p.get(1, 0), 0.0);
    }

    #[test]
    fn deflated_two_state_scalar_oracle() {
        // d/ds p00 = -(mu + delta_0) p00  =>  p00(0,10) = e^{-0.15}
        let model = two_state(0.01, 10.0);
        let defl = DeflationSpec::new(vec![
            PiecewiseConstant::constant(0.005, 10.0).unwrap(),
            PiecewiseConstant::constant(0.0, 10.0).unwrap(),
        ])
        .unwrap();
        let fwd = deflated_transitions_forward(&model, &defl, 0.0, 10.0, 200).unwrap();
        assert_relative_eq!(fwd.get(0, 0), 0.8607079764250578, max_relative = 1e-10);
        let bwd = deflated_transitions_backward(&model, &defl, 0.0, 10.0, 200).unwrap();
        assert_relative_eq!(bwd.get(0, 0), 0.8607079764250578, max_relative = 1e-10);
    }

    #[test]
    fn uniform_deflation_factorizes() {
        // delta_j == f for all j  =>  p^delta = e^{-int f} p
        let model = three_state(10.0);
        let f = PiecewiseConstant::new(vec![0.0, 3.0], vec![0.02, 0.05], 10.0).unwrap();
        let defl = DeflationSpec::new(vec![f.clone(), f.clone(), f.clone()]).unwrap();
        let zero = DeflationSpec::zero(3, 10.0);
        let (t, s) = (1.0, 9.0);
        let deflated = deflated_transitions_forward(&model, &defl, t, s, 200).unwrap();
        let plain = deflated_transitions_forward(&model, &zero, t, s, 200).unwrap();
        let factor = (-f.integral(t, s)).exp();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(
                    deflated.get(i, j),
                    factor * plain.get(i, j),
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn backward_boundary_is_identity() {
        let model = three_state(10.0);
        let zero = DeflationSpec::zero(3, 10.0);
        let p = deflated_transitions_backward(&model, &zero, 4.0, 4.0, 50).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(p.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn forward_backward_agree() {
        let model = three_state(10.0);
        let defl = DeflationSpec::new(vec![
            PiecewiseConstant::constant(0.004, 10.0).unwrap(),
            PiecewiseConstant::new(vec![0.0, 5.0], vec![0.01, 0.002], 10.0).unwrap(),
            PiecewiseConstant::constant(0.0, 10.0).unwrap(),
        ])
        .unwrap();
        let fwd = deflated_transitions_forward(&model, &defl, 0.5, 9.5, 200).unwrap();
        let bwd = deflated_transitions_backward(&model, &defl, 0.5, 9.5, 200).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((fwd.get(i, j) - bwd.get(i, j)).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn rows_sum_to_one_without_deflation() {
        let model = three_state(10.0);
        let zero = DeflationSpec::zero(3, 10.0);
        let p = deflated_transitions_forward(&model, &zero, 0.0, 10.0, 200).unwrap();
        for i in 0..3 {
            assert!((p.row_sum(i) - 1.0).abs() <= 1e-10, "row {i}: {}", p.row_sum(i));
            for j in 0..3 {
                let v = p.get(i, j);
                assert!((-1e-12..=1.0 + 1e-12).contains(&v));
            }
        }
    }

    #[test]
    fn semigroup_composition() {
        let model = three_state(10.0);
        let defl = DeflationSpec::new(vec![
            PiecewiseConstant::constant(0.01, 10.0).unwrap(),
            PiecewiseConstant::constant(-0.02, 10.0).unwrap(),
            PiecewiseConstant::constant(0.0, 10.0).unwrap(),
        ])
        .unwrap();
        let (t, u, s) = (0.0, 4.0, 10.0);
        let a = deflated_transitions_forward(&model, &defl, t, u, 200).unwrap();
        let b = deflated_transitions_forward(&model, &defl, u, s, 200).unwrap();
        let c = deflated_transitions_forward(&model, &defl, t, s, 400).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let composed: f64 = (0..3).map(|k| a.get(i, k) * b.get(k, j)).sum();
                assert!((composed - c.get(i, j)).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn curve_matches_single_shots() {
        let model = three_state(10.0);
        let defl = DeflationSpec::zero(3, 10.0);
        let targets = [2.0, 2.0, 5.5, 10.0];
        let curve = deflated_transition_curve(&model, &defl, 1.0, &targets, 180).unwrap();
        assert_eq!(curve.len(), targets.len());
        for (m, &s) in curve.iter().zip(targets.iter()) {
            let single = deflated_transitions_forward(&model, &defl, 1.0, s, 180).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    assert!((m.get(i, j) - single.get(i, j)).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn solver_rejects_bad_inputs() {
        let model = two_state(0.1, 10.0);
        let zero = DeflationSpec::zero(2, 10.0);
        assert!(deflated_transitions_forward(&model, &zero, 5.0, 4.0, 100).is_err());
        assert!(deflated_transitions_forward(&model, &zero, 0.0, 5.0, 0).is_err());
        assert!(deflated_transitions_forward(&model, &zero, 0.0, 11.0, 100).is_err());
        let wrong = DeflationSpec::zero(3, 10.0);
        assert!(deflated_transitions_forward(&model, &wrong, 0.0, 5.0, 100).is_err());
    }

    #[test]
    fn absorbing_everywhere_has_no_jumps() {
        let model = MarkovModel::new(3, 10.0, vec![]).unwrap();
        let grid = TimeGrid::uniform(10.0, 20).unwrap();
        let path = simulate_state_path(&model, &grid, 1, 7).unwrap();
        assert!(path.jumps.is_empty());
        assert!(path.states.iter().all(|&s| s == 1));
    }

    #[test]
    fn holding_time_matches_exponential() {
        // P(no jump by T) = e^{-mu T} = e^{-0.5}
        let model = two_state(0.05, 10.0);
        let grid = TimeGrid::uniform(10.0, 1).unwrap();
        let n = 1_000_000usize;
        let mut survived = 0usize;
        for seed in 0..n {
            let path = simulate_state_path(&model, &grid, 0, seed as u64).unwrap();
            if path.jumps.is_empty() {
                survived += 1;
            }
        }
        let p_hat = survived as f64 / n as f64;
        let p = 0.6065306597126334;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((p_hat - p).abs() <= 3.0 * se, "p_hat {p_hat} vs {p} (se {se})");
    }

    #[test]
    fn thinning_matches_ode_probabilities() {
        // empirical occupancy at T vs the forward solver, inhomogeneous rates
        let model = three_state(10.0);
        let zero = DeflationSpec::zero(3, 10.0);
        let probs = deflated_transitions_forward(&model, &zero, 0.0, 10.0, 200).unwrap();
        let grid = TimeGrid::uniform(10.0, 1).unwrap();
        let n = 100_000usize;
        let mut counts = [0usize; 3];
        for seed in 0..n {
            let path = simulate_state_path(&model, &grid, 0, seed as u64).unwrap();
            counts[*path.states.last().unwrap()] += 1;
        }
        for j in 0..3 {
            let p = probs.get(0, j);
            let p_hat = counts[j] as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (p_hat - p).abs() <= 3.0 * se,
                "state {j}: empirical {p_hat} vs ODE {p} (se {se})"
            );
        }
    }

    #[test]
    fn jump_paths_deterministic_in_seed() {
        let model = three_state(10.0);
        let grid = TimeGrid::uniform(10.0, 40).unwrap();
        let a = simulate_state_path(&model, &grid, 0, 99).unwrap();
        let b = simulate_state_path(&model, &grid, 0, 99).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.jumps, b.jumps);
    }

    #[test]
    fn invalid_initial_state_rejected() {
        let model = two_state(0.1, 10.0);
        let grid = TimeGrid::uniform(10.0, 4).unwrap();
        assert!(simulate_state_path(&model, &grid, 2, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        // Chapman-Kolmogorov composition on random constant-rate models
        #[test]
        fn composition_holds(
            m01 in 0.0f64..0.5,
            m10 in 0.0f64..0.5,
            m02 in 0.0f64..0.3,
            d0 in -0.05f64..0.05,
            split in 0.1f64..0.9,
        ) {
            let horizon = 8.0;
            let model = MarkovModel::new(3, horizon, vec![
                (0, 1, PiecewiseConstant::constant(m01, horizon).unwrap()),
                (1, 0, PiecewiseConstant::constant(m10, horizon).unwrap()),
                (0, 2, PiecewiseConstant::constant(m02, horizon).unwrap()),
            ]).unwrap();
            let defl = DeflationSpec::new(vec![
                PiecewiseConstant::constant(d0, horizon).unwrap(),
                PiecewiseConstant::constant(0.01, horizon).unwrap(),
                PiecewiseConstant::constant(0.0, horizon).unwrap(),
            ]).unwrap();
            let u = split * horizon;
            let a = deflated_transitions_forward(&model, &defl, 0.0, u, 150).unwrap();
            let b = deflated_transitions_forward(&model, &defl, u, horizon, 150).unwrap();
            let c = deflated_transitions_forward(&model, &defl, 0.0, horizon, 300).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let composed: f64 = (0..3).map(|k| a.get(i, k) * b.get(k, j)).sum();
                    prop_assert!((composed - c.get(i, j)).abs() <= 1e-8);
                }
            }
        }
    }
}
