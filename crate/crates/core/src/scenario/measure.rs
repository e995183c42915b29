use serde::{Deserialize, Serialize};

use super::cantor;
use crate::error::{invalid, Result};

/// Recursion depth for the Cantor function.
pub const CANTOR_LEVELS: usize = 20;

/// An atomless measure, stored through its distribution function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AtomlessMeasure {
    #[default]
    Zero,
    /// `scale` times the Cantor measure stretched onto `interval`.
    Cantor { scale: f64, interval: [f64; 2] },
    /// Piecewise-linear distribution function through `points` (`[x, G(x)]`),
    /// constant outside the table.
    Table { points: Vec<[f64; 2]> },
    /// `base` restricted to a union of intervals.
    Restricted { base: Box<AtomlessMeasure>, intervals: Vec<[f64; 2]> },
}

impl AtomlessMeasure {
    /// Distribution function `G(x) = μ((-∞, x])`.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            AtomlessMeasure::Zero => 0.0,
            AtomlessMeasure::Cantor { scale, interval } => {
                let u = (x - interval[0]) / (interval[1] - interval[0]);
                scale * cantor::cantor_function(u, CANTOR_LEVELS)
            }
            AtomlessMeasure::Table { points } => {
                if points.is_empty() {
                    return 0.0;
                }
                let g0 = points[0][1];
                let k = points.partition_point(|p| p[0] <= x);
                if k == 0 {
                    0.0
                } else if k == points.len() {
                    points[k - 1][1] - g0
                } else {
                    let (p, q) = (points[k - 1], points[k]);
                    let w = (x - p[0]) / (q[0] - p[0]);
                    p[1] + w * (q[1] - p[1]) - g0
                }
            }
            AtomlessMeasure::Restricted { base, intervals } => intervals
                .iter()
                .filter(|iv| iv[0] < x)
                .map(|iv| base.cdf(iv[1].min(x)) - base.cdf(iv[0]))
                .sum(),
        }
    }

    /// `μ([a, b])` without argument checks; zero when `b <= a`.
    pub fn mass_unchecked(&self, a: f64, b: f64) -> f64 {
        if b <= a || matches!(self, AtomlessMeasure::Zero) {
            return 0.0;
        }
        (self.cdf(b) - self.cdf(a)).max(0.0)
    }

    /// `μ([a, b])`.
    pub fn mass(&self, a: f64, b: f64) -> Result<f64> {
        if a > b {
            return Err(invalid(format!("measure_mass needs a <= b, got [{a}, {b}]")));
        }
        Ok(self.mass_unchecked(a, b))
    }

    pub fn is_zero(&self) -> bool {
        match self {
            AtomlessMeasure::Zero => true,
            AtomlessMeasure::Cantor { scale, .. } => *scale == 0.0,
            AtomlessMeasure::Table { points } => points.first().map(|p| p[1]) == points.last().map(|p| p[1]),
            AtomlessMeasure::Restricted { base, intervals } => base.is_zero() || intervals.is_empty(),
        }
    }

    /// Smallest closed interval carrying all the mass, if any.
    pub fn support_hull(&self) -> Option<(f64, f64)> {
        match self {
            AtomlessMeasure::Zero => None,
            AtomlessMeasure::Cantor { interval, .. } => Some((interval[0], interval[1])),
            AtomlessMeasure::Table { points } => Some((points.first()?[0], points.last()?[0])),
            AtomlessMeasure::Restricted { base, intervals } => {
                let (bl, br) = base.support_hull()?;
                let l = intervals.iter().map(|iv| iv[0]).fold(f64::INFINITY, f64::min).max(bl);
                let r = intervals.iter().map(|iv| iv[1]).fold(f64::NEG_INFINITY, f64::max).min(br);
                (l <= r).then_some((l, r))
            }
        }
    }

    /// Structural problems with the stored parameters.
    pub fn structural_problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            AtomlessMeasure::Zero => {}
            AtomlessMeasure::Cantor { scale, interval } => {
                if !(*scale >= 0.0) || !scale.is_finite() {
                    out.push(format!("cantor scale must be finite and nonnegative, got {scale}"));
                }
                if !(interval[0] < interval[1]) {
                    out.push(format!("cantor interval must satisfy lo < hi, got {interval:?}"));
                }
            }
            AtomlessMeasure::Table { points } => {
                for w in points.windows(2) {
                    if !(w[0][0] < w[1][0]) {
                        out.push(format!("table abscissae must increase strictly at {}", w[1][0]));
                    }
                    if w[1][1] < w[0][1] {
                        out.push(format!("table distribution decreases at {}", w[1][0]));
                    }
                }
            }
            AtomlessMeasure::Restricted { base, intervals } => {
                out.extend(base.structural_problems());
                for iv in intervals {
                    if !(iv[0] <= iv[1]) {
                        out.push(format!("restriction interval {iv:?} is reversed"));
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_measure_is_zero() {
        assert_eq!(AtomlessMeasure::Zero.mass(-3.0, 7.0).unwrap(), 0.0);
    }

    #[test]
    fn cantor_masses() {
        let m = AtomlessMeasure::Cantor { scale: 1.0, interval: [0.0, 1.0] };
        assert!((m.mass(0.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(m.mass(1.0, 0.0).is_err());
    }

    #[test]
    fn restricted_drops_outside_mass() {
        let m = AtomlessMeasure::Restricted {
            base: Box::new(AtomlessMeasure::Cantor { scale: 1.0, interval: [0.0, 1.0] }),
            intervals: vec![[0.0, 1.0 / 3.0]],
        };
        assert!((m.mass(0.0, 1.0).unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn table_interpolates() {
        let m = AtomlessMeasure::Table { points: vec![[0.0, 1.0], [2.0, 3.0]] };
        assert!((m.mass(-1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((m.cdf(10.0) - 2.0).abs() < 1e-15);
    }
}
