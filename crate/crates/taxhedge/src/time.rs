//! Time grids and piecewise-constant functions of time.
//!
//! All model inputs that vary over time (transition intensities, payment
//! rates, expense rates) are represented as right-continuous step functions
//! on `[0, T]`. Step functions integrate exactly and make jump simulation
//! exact, which keeps every downstream discretization error attributable to
//! the discretization under test rather than to input interpolation.

use crate::error::{ensure, Error, Result};

/// Strictly increasing times `t_0 = 0 < t_1 < ... < t_n = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid with `steps` intervals on `[0, horizon]`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        ensure(horizon.is_finite() && horizon > 0.0, || {
            format!("horizon must be positive and finite, got {horizon}")
        })?;
        ensure(steps >= 1, || "grid needs at least one step".into())?;
        let times = (0..=steps)
            .map(|k| horizon * k as f64 / steps as f64)
            .collect();
        Ok(Self { times })
    }

    /// Grid from explicit times; must start at 0 and be strictly increasing.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        ensure(times.len() >= 2, || "grid needs at least two nodes".into())?;
        ensure(times[0] == 0.0, || {
            format!("grid must start at 0, got {}", times[0])
        })?;
        for w in times.windows(2) {
            ensure(w[1].is_finite() && w[1] > w[0], || {
                format!("grid times must be strictly increasing ({} !< {})", w[0], w[1])
            })?;
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Number of intervals (nodes minus one).
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// New grid with `extra` times merged in (deduplicated, order preserved).
    /// Times outside `(0, horizon)` are ignored.
    pub fn refined_with(&self, extra: &[f64]) -> Self {
        let horizon = self.horizon();
        let mut times = self.times.clone();
        times.extend(
            extra
                .iter()
                .copied()
                .filter(|&t| t > 0.0 && t < horizon),
        );
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times.dedup();
        Self { times }
    }
}

/// Right-continuous step function: value `values[i]` on `[starts[i], starts[i+1])`,
/// and `values[last]` on `[starts[last], end]` (closed at the right endpoint).
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstant {
    starts: Vec<f64>,
    values: Vec<f64>,
    end: f64,
}

impl PiecewiseConstant {
    /// Single segment covering `[0, end]`.
    pub fn constant(value: f64, end: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![value], end)
    }

    /// `starts` must begin at 0 and be strictly increasing below `end`.
    pub fn new(starts: Vec<f64>, values: Vec<f64>, end: f64) -> Result<Self> {
        ensure(!starts.is_empty() && starts.len() == values.len(), || {
            "segment starts/values must be non-empty and of equal length".into()
        })?;
        ensure(starts[0] == 0.0, || {
            format!("first segment must start at 0, got {}", starts[0])
        })?;
        ensure(end.is_finite() && end > 0.0, || {
            format!("domain end must be positive and finite, got {end}")
        })?;
        for w in starts.windows(2) {
            ensure(w[1] > w[0], || {
                format!("segment starts must be strictly increasing ({} !< {})", w[0], w[1])
            })?;
        }
        ensure(*starts.last().unwrap() < end, || {
            format!("last segment starts at or after the domain end {end}")
        })?;
        for &v in &values {
            ensure(v.is_finite(), || format!("segment value must be finite, got {v}"))?;
        }
        Ok(Self { starts, values, end })
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    /// Interior breakpoints (segment starts other than 0).
    pub fn breakpoints(&self) -> &[f64] {
        &self.starts[1..]
    }

    /// Evaluate at `t`; `t` is clamped to `[0, end]`.
    pub fn eval(&self, t: f64) -> f64 {
        // partition_point returns the number of starts <= t
        let idx = self.starts.partition_point(|&s| s <= t);
        self.values[idx.saturating_sub(1).min(self.values.len() - 1)]
    }

    /// Exact integral over `[a, b]` (requires `a <= b`).
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        debug_assert!(a <= b);
        let mut total = 0.0;
        for i in 0..self.values.len() {
            let seg_a = self.starts[i];
            let seg_b = if i + 1 < self.starts.len() {
                self.starts[i + 1]
            } else {
                f64::INFINITY
            };
            let lo = a.max(seg_a);
            let hi = b.min(seg_b);
            if hi > lo {
                total += self.values[i] * (hi - lo);
            }
        }
        total
    }

    /// Infimum of the function over `[a, b]`.
    pub fn inf(&self, a: f64, b: f64) -> f64 {
        let mut worst = f64::INFINITY;
        for i in 0..self.values.len() {
            let seg_a = self.starts[i];
            let seg_b = if i + 1 < self.starts.len() {
                self.starts[i + 1]
            } else {
                f64::INFINITY
            };
            if seg_b > a && seg_a <= b {
                worst = worst.min(self.values[i]);
            }
        }
        worst
    }

    /// Supremum of the function over `[a, b]`.
    pub fn sup(&self, a: f64, b: f64) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for i in 0..self.values.len() {
            let seg_a = self.starts[i];
            let seg_b = if i + 1 < self.starts.len() {
                self.starts[i + 1]
            } else {
                f64::INFINITY
            };
            if seg_b > a && seg_a <= b {
                best = best.max(self.values[i]);
            }
        }
        best
    }

    /// Pointwise scaling by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            starts: self.starts.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
            end: self.end,
        }
    }
}

/// Validated conversion from (start, end, value) triples as used by scenario
/// files: segments must tile `[0, end]` contiguously.
pub fn segments_to_step_function(segments: &[(f64, f64, f64)], end: f64) -> Result<PiecewiseConstant> {
    ensure(!segments.is_empty(), || "at least one segment required".into())?;
    let mut starts = Vec::with_capacity(segments.len());
    let mut values = Vec::with_capacity(segments.len());
    let mut cursor = 0.0;
    for (i, &(a, b, v)) in segments.iter().enumerate() {
        if a != cursor {
            return Err(Error::InvalidInput(format!(
                "segment {i} starts at {a}, expected {cursor} (segments must be contiguous from 0)"
            )));
        }
        if b <= a {
            return Err(Error::InvalidInput(format!(
                "segment {i} has non-positive length ({a}..{b})"
            )));
        }
        if b > end {
            return Err(Error::InvalidInput(format!(
                "segment {i} ends at {b}, after the horizon {end}"
            )));
        }
        starts.push(a);
        values.push(v);
        cursor = b;
    }
    if cursor != end {
        return Err(Error::InvalidInput(format!(
            "segments end at {cursor}, but must cover up to the horizon {end}"
        )));
    }
    PiecewiseConstant::new(starts, values, end)
}
