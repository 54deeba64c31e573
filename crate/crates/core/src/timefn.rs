//! Scalar functions of time used for boundary data and actuator schedules.
//!
//! Every boundary input (injections, slack densities, compression ratios) is a
//! [`TimeFunction`]. Functions serialize to a tagged table so they can live in
//! network and scenario files:
//!
//! ```toml
//! kind = "sinusoid"
//! amplitude = 60.0
//! period = 28800.0
//! phase = 1.5707963267948966
//! offset = -60.0
//! ```

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::netgraph::GraphError;

/// A time function `t ↦ value`, with an analytic time derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeFunction {
    Constant {
        value: f64,
    },
    /// `offset + amplitude * sin(2π t / period + phase)`
    Sinusoid {
        amplitude: f64,
        period: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
    /// Piecewise-linear interpolation through `(t, value)` breakpoints, held
    /// constant outside the table.
    Piecewise {
        points: Vec<[f64; 2]>,
    },
    Sum {
        terms: Vec<TimeFunction>,
    },
    Product {
        factors: Vec<TimeFunction>,
    },
    /// `before(t)` for `t < at`, `after(t)` from `at` onward.
    Switch {
        at: f64,
        before: Box<TimeFunction>,
        after: Box<TimeFunction>,
    },
}

impl TimeFunction {
    pub fn constant(value: f64) -> Self {
        TimeFunction::Constant { value }
    }

    pub fn sinusoid(amplitude: f64, period: f64, phase: f64, offset: f64) -> Self {
        TimeFunction::Sinusoid {
            amplitude,
            period,
            phase,
            offset,
        }
    }

    /// `offset - amplitude * cos(2π t / period)`, the smooth ramp-from-rest
    /// shape used by the sinusoidal withdrawal experiments.
    pub fn raised_cosine(amplitude: f64, period: f64, offset: f64) -> Self {
        TimeFunction::sinusoid(-amplitude, period, std::f64::consts::FRAC_PI_2, offset)
    }

    pub fn piecewise(points: Vec<[f64; 2]>) -> Self {
        TimeFunction::Piecewise { points }
    }

    pub fn sum(terms: Vec<TimeFunction>) -> Self {
        TimeFunction::Sum { terms }
    }

    pub fn product(factors: Vec<TimeFunction>) -> Self {
        TimeFunction::Product { factors }
    }

    pub fn switch(at: f64, before: TimeFunction, after: TimeFunction) -> Self {
        TimeFunction::Switch {
            at,
            before: Box::new(before),
            after: Box::new(after),
        }
    }

    /// `self * k`.
    pub fn scaled(self, k: f64) -> Self {
        match self {
            TimeFunction::Constant { value } => TimeFunction::constant(value * k),
            other => TimeFunction::product(vec![other, TimeFunction::constant(k)]),
        }
    }

    /// `self + other`.
    pub fn plus(self, other: TimeFunction) -> Self {
        TimeFunction::sum(vec![self, other])
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            TimeFunction::Constant { value } => *value,
            TimeFunction::Sinusoid {
                amplitude,
                period,
                phase,
                offset,
            } => offset + amplitude * (TAU * t / period + phase).sin(),
            TimeFunction::Piecewise { points } => piecewise_value(points, t),
            TimeFunction::Sum { terms } => terms.iter().map(|f| f.value(t)).sum(),
            TimeFunction::Product { factors } => factors.iter().map(|f| f.value(t)).product(),
            TimeFunction::Switch { at, before, after } => {
                if t < *at {
                    before.value(t)
                } else {
                    after.value(t)
                }
            }
        }
    }

    /// Time derivative. Piecewise-linear tables and switches return the
    /// right-sided derivative at their breakpoints.
    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            TimeFunction::Constant { .. } => 0.0,
            TimeFunction::Sinusoid {
                amplitude,
                period,
                phase,
                ..
            } => amplitude * TAU / period * (TAU * t / period + phase).cos(),
            TimeFunction::Piecewise { points } => piecewise_slope(points, t),
            TimeFunction::Sum { terms } => terms.iter().map(|f| f.derivative(t)).sum(),
            TimeFunction::Product { factors } => {
                let mut total = 0.0;
                for (k, fk) in factors.iter().enumerate() {
                    let mut term = fk.derivative(t);
                    for (m, fm) in factors.iter().enumerate() {
                        if m != k {
                            term *= fm.value(t);
                        }
                    }
                    total += term;
                }
                total
            }
            TimeFunction::Switch { at, before, after } => {
                if t < *at {
                    before.derivative(t)
                } else {
                    after.derivative(t)
                }
            }
        }
    }

    /// Times where the function is not smooth. The integrator lands on these.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.collect_breakpoints(&mut out);
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    fn collect_breakpoints(&self, out: &mut Vec<f64>) {
        match self {
            TimeFunction::Constant { .. } | TimeFunction::Sinusoid { .. } => {}
            TimeFunction::Piecewise { points } => out.extend(points.iter().map(|p| p[0])),
            TimeFunction::Sum { terms: fs } | TimeFunction::Product { factors: fs } => {
                fs.iter().for_each(|f| f.collect_breakpoints(out))
            }
            TimeFunction::Switch { at, before, after } => {
                out.push(*at);
                before.collect_breakpoints(out);
                after.collect_breakpoints(out);
            }
        }
    }

    /// True when the function is C¹ everywhere (no table or switch inside).
    pub fn is_smooth(&self) -> bool {
        self.breakpoints().is_empty()
    }

    /// Structural validation: finite parameters, positive periods, sorted tables.
    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |msg: &str| Err(GraphError::InvalidTimeFunction(msg.to_string()));
        match self {
            TimeFunction::Constant { value } => {
                if !value.is_finite() {
                    return bad("non-finite constant");
                }
            }
            TimeFunction::Sinusoid {
                amplitude,
                period,
                phase,
                offset,
            } => {
                if !(amplitude.is_finite() && phase.is_finite() && offset.is_finite()) {
                    return bad("non-finite sinusoid parameter");
                }
                if !(period.is_finite() && *period > 0.0) {
                    return bad("sinusoid period must be positive");
                }
            }
            TimeFunction::Piecewise { points } => {
                if points.is_empty() {
                    return bad("empty breakpoint table");
                }
                if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
                    return bad("non-finite breakpoint");
                }
                if points.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return bad("breakpoint times must be strictly increasing");
                }
            }
            TimeFunction::Sum { terms: fs } | TimeFunction::Product { factors: fs } => {
                if fs.is_empty() {
                    return bad("empty sum or product");
                }
                for f in fs {
                    f.validate()?;
                }
            }
            TimeFunction::Switch { at, before, after } => {
                if !at.is_finite() {
                    return bad("non-finite switch time");
                }
                before.validate()?;
                after.validate()?;
            }
        }
        Ok(())
    }

    /// Samples `[0, horizon]` on `n + 1` points plus every breakpoint inside.
    pub fn sample_times(&self, horizon: f64, n: usize) -> Vec<f64> {
        let mut ts: Vec<f64> = (0..=n).map(|k| horizon * k as f64 / n as f64).collect();
        ts.extend(
            self.breakpoints()
                .into_iter()
                .filter(|&b| b >= 0.0 && b <= horizon),
        );
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }
}

fn piecewise_value(points: &[[f64; 2]], t: f64) -> f64 {
    let first = points[0];
    let last = points[points.len() - 1];
    if t <= first[0] {
        return first[1];
    }
    if t >= last[0] {
        return last[1];
    }
    let k = points.partition_point(|p| p[0] <= t);
    let (a, b) = (points[k - 1], points[k]);
    a[1] + (b[1] - a[1]) * (t - a[0]) / (b[0] - a[0])
}

fn piecewise_slope(points: &[[f64; 2]], t: f64) -> f64 {
    if points.len() < 2 || t < points[0][0] || t >= points[points.len() - 1][0] {
        return 0.0;
    }
    let k = points.partition_point(|p| p[0] <= t);
    let (a, b) = (points[k - 1], points[k]);
    (b[1] - a[1]) / (b[0] - a[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn raised_cosine_starts_at_offset_minus_amplitude() {
        let f = TimeFunction::raised_cosine(60.0, 28800.0, -60.0);
        assert_relative_eq!(f.value(0.0), -120.0, epsilon = 1e-12);
        assert_relative_eq!(f.value(14400.0), 0.0, epsilon = 1e-9);
        assert_relative_eq!(f.derivative(0.0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn piecewise_interpolates_and_holds() {
        let f = TimeFunction::piecewise(vec![[0.0, 1.0], [10.0, 3.0], [20.0, 3.0]]);
        assert_eq!(f.value(-5.0), 1.0);
        assert_eq!(f.value(5.0), 2.0);
        assert_eq!(f.value(25.0), 3.0);
        assert_eq!(f.derivative(5.0), 0.2);
        assert_eq!(f.derivative(10.0), 0.0);
        assert_eq!(f.breakpoints(), vec![0.0, 10.0, 20.0]);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let f = TimeFunction::product(vec![
            TimeFunction::sinusoid(0.3, 5000.0, 0.2, 1.1),
            TimeFunction::sum(vec![
                TimeFunction::constant(2.0),
                TimeFunction::sinusoid(1.0, 700.0, 0.0, 0.0),
            ]),
        ]);
        for &t in &[0.0, 123.0, 4567.0] {
            let h = 1e-3;
            let fd = (f.value(t + h) - f.value(t - h)) / (2.0 * h);
            assert_relative_eq!(f.derivative(t), fd, max_relative = 1e-6, epsilon = 1e-9);
        }
    }

    #[test]
    fn switch_takes_after_branch_at_breakpoint() {
        let f = TimeFunction::switch(
            10.0,
            TimeFunction::constant(1.0),
            TimeFunction::constant(2.0),
        );
        assert_eq!(f.value(9.999), 1.0);
        assert_eq!(f.value(10.0), 2.0);
        assert!(!f.is_smooth());
    }

    #[test]
    fn validation_rejects_bad_tables() {
        assert!(TimeFunction::piecewise(vec![[1.0, 0.0], [1.0, 2.0]])
            .validate()
            .is_err());
        assert!(TimeFunction::sinusoid(1.0, 0.0, 0.0, 0.0).validate().is_err());
        assert!(TimeFunction::constant(f64::NAN).validate().is_err());
    }
}
