//! Middle-thirds Cantor set on the unit interval: distance function,
//! integrals of negative powers of the distance, and the Cantor function.

/// Levels of ternary expansion used when locating a point relative to the set.
const DIST_LEVELS: usize = 40;

/// Distance from `u` to the Cantor set in [0, 1].
pub fn distance(u: f64) -> f64 {
    if u <= 0.0 {
        return -u;
    }
    if u >= 1.0 {
        return u - 1.0;
    }
    let mut v = u;
    let mut scale = 1.0;
    for _ in 0..DIST_LEVELS {
        if v > 1.0 / 3.0 && v < 2.0 / 3.0 {
            return scale * (v - 1.0 / 3.0).min(2.0 / 3.0 - v);
        }
        if v <= 1.0 / 3.0 {
            v *= 3.0;
        } else {
            v = 3.0 * v - 2.0;
        }
        scale /= 3.0;
    }
    0.0
}

/// Whether `[u1, u2]` lies inside a single complementary gap of the set
/// (so the distance is bounded away from zero on it).
pub fn inside_gap(u1: f64, u2: f64) -> bool {
    if u2 < 0.0 || u1 > 1.0 {
        return true;
    }
    if u1 <= 0.0 || u2 >= 1.0 {
        return false;
    }
    let (mut a, mut b) = (u1, u2);
    for _ in 0..DIST_LEVELS {
        if a > 1.0 / 3.0 && b < 2.0 / 3.0 {
            return true;
        }
        if b <= 1.0 / 3.0 {
            a *= 3.0;
            b *= 3.0;
        } else if a >= 2.0 / 3.0 {
            a = 3.0 * a - 2.0;
            b = 3.0 * b - 2.0;
        } else {
            return false;
        }
    }
    false
}

/// Exponent threshold below which `dist(u, C)^(-p)` is integrable:
/// the two sub-copies contribute `2 * 3^(p-1)` of the whole, which must be < 1.
pub fn integrable_exponent(p: f64) -> bool {
    2.0 * 3f64.powf(p - 1.0) < 1.0
}

/// `∫ s^(-p) ds` from 0 to `s` for a distance `s >= 0`.
fn power_antiderivative(s: f64, p: f64) -> f64 {
    s.powf(1.0 - p) / (1.0 - p)
}

/// Integral of `dist^(-p)` across the first-level gap `(1/3, 2/3)`,
/// restricted to `[u1, u2]`.
fn gap_integral(u1: f64, u2: f64, p: f64) -> f64 {
    let lo = u1.max(1.0 / 3.0);
    let hi = u2.min(2.0 / 3.0);
    if hi <= lo {
        return 0.0;
    }
    let mid = 0.5;
    let left = |x: f64| power_antiderivative(x - 1.0 / 3.0, p);
    let right = |x: f64| power_antiderivative(2.0 / 3.0 - x, p);
    let mut total = 0.0;
    if lo < mid {
        let h = hi.min(mid);
        total += left(h) - left(lo);
    }
    if hi > mid {
        let l = lo.max(mid);
        total += right(l) - right(hi);
    }
    total
}

/// Self-similar evaluator for `∫ dist(u, C)^(-p) du` over sub-intervals of [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceIntegral {
    p: f64,
    ratio: f64,
    total: f64,
}

impl DistanceIntegral {
    /// Returns `None` when the integral over [0, 1] diverges.
    pub fn new(p: f64) -> Option<Self> {
        if !(0.0..1.0).contains(&p) || !integrable_exponent(p) {
            return None;
        }
        let ratio = 3f64.powf(p - 1.0);
        let gap = gap_integral(0.0, 1.0, p);
        Some(Self { p, ratio, total: gap / (1.0 - 2.0 * ratio) })
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Integral over `[u1, u2] ∩ [0, 1]`.
    pub fn over(&self, u1: f64, u2: f64) -> f64 {
        self.rec(u1.max(0.0), u2.min(1.0), 1.0, 0)
    }

    fn rec(&self, u1: f64, u2: f64, weight: f64, depth: usize) -> f64 {
        if u2 <= u1 || weight < 1e-18 * self.total.max(1.0) || depth > 80 {
            return 0.0;
        }
        if u1 <= 0.0 && u2 >= 1.0 {
            return weight * self.total;
        }
        let mut acc = weight * gap_integral(u1, u2, self.p);
        if u1 < 1.0 / 3.0 {
            acc += self.rec(3.0 * u1, (3.0 * u2).min(1.0), weight * self.ratio, depth + 1);
        }
        if u2 > 2.0 / 3.0 {
            acc += self.rec((3.0 * u1 - 2.0).max(0.0), 3.0 * u2 - 2.0, weight * self.ratio, depth + 1);
        }
        acc
    }
}

/// The Cantor function evaluated by `levels` steps of ternary recursion,
/// linear at the final level (error below `2^-levels`).
pub fn cantor_function(u: f64, levels: usize) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    let mut v = u;
    let mut base = 0.0;
    let mut weight = 1.0;
    for _ in 0..levels {
        if v < 1.0 / 3.0 {
            v *= 3.0;
        } else if v <= 2.0 / 3.0 {
            return base + 0.5 * weight;
        } else {
            base += 0.5 * weight;
            v = 3.0 * v - 2.0;
        }
        weight *= 0.5;
    }
    base + weight * v.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_samples() {
        assert_eq!(distance(0.0), 0.0);
        assert!((distance(0.5) - 1.0 / 6.0).abs() < 1e-15);
        assert!((distance(0.4) - (0.4 - 1.0 / 3.0)).abs() < 1e-15);
        assert!(distance(0.25) < 1e-12);
        assert!((distance(1.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gap_membership() {
        assert!(inside_gap(0.4, 0.6));
        assert!(!inside_gap(0.3, 0.4));
        assert!(inside_gap(0.12, 0.2));
        assert!(!inside_gap(0.0, 0.01));
    }

    #[test]
    fn cantor_function_values() {
        assert!((cantor_function(1.0 / 3.0, 20) - 0.5).abs() < 1e-6);
        assert!((cantor_function(0.5, 20) - 0.5).abs() < 1e-15);
        assert!((cantor_function(0.25, 30) - 1.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn divergent_exponent_rejected() {
        assert!(DistanceIntegral::new(0.5).is_none());
        assert!(DistanceIntegral::new(0.25).is_some());
    }
}
