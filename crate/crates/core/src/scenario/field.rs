use serde::{Deserialize, Serialize};

use super::cantor::{self, DistanceIntegral};
use crate::quad;

/// Evaluator for one piece of a regulated field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PieceEval {
    /// `f(x) = value`.
    Const { value: f64 },
    /// `f(x) = scale * |x - center|^exponent`.
    Power { scale: f64, center: f64, exponent: f64 },
    /// `f(x) = scale * dist(x, C)^exponent` with `C` the middle-thirds Cantor
    /// set stretched onto `[lo, hi]`.
    CantorDistance { scale: f64, exponent: f64, lo: f64, hi: f64 },
}

/// A piece: an evaluator on the open interval between two breakpoints, plus
/// its one-sided limits at the finite ends (`[at left end, at right end]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Piece {
    pub eval: PieceEval,
    pub limits: [Option<f64>; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    PiecewiseConstant,
    General,
}

impl PieceEval {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            PieceEval::Const { value } => value,
            PieceEval::Power { scale, center, exponent } => scale * (x - center).abs().powf(exponent),
            PieceEval::CantorDistance { scale, exponent, lo, hi } => {
                let w = hi - lo;
                scale * (w * cantor::distance((x - lo) / w)).powf(exponent)
            }
        }
    }

    pub fn is_const(&self) -> bool {
        matches!(self, PieceEval::Const { .. })
    }

    /// Sign of the piece away from its zeros.
    pub fn sign(&self) -> f64 {
        let s = match *self {
            PieceEval::Const { value } => value,
            PieceEval::Power { scale, .. } => scale,
            PieceEval::CantorDistance { scale, .. } => scale,
        };
        if s > 0.0 {
            1.0
        } else if s < 0.0 {
            -1.0
        } else {
            0.0
        }
    }

    /// Isolated zeros strictly inside `(l, r)`.
    pub fn isolated_zeros(&self, l: f64, r: f64) -> Vec<f64> {
        match *self {
            PieceEval::Power { center, exponent, .. } if exponent > 0.0 && center > l && center < r => {
                vec![center]
            }
            _ => Vec::new(),
        }
    }

    /// Whether the piece is bounded away from zero on `[l, r]`.
    pub fn zero_free(&self, l: f64, r: f64) -> bool {
        match *self {
            PieceEval::Const { value } => value != 0.0,
            PieceEval::Power { scale, center, exponent } => {
                scale != 0.0 && (exponent == 0.0 || center < l || center > r)
            }
            PieceEval::CantorDistance { scale, lo, hi, .. } => {
                scale != 0.0 && cantor::inside_gap((l - lo) / (hi - lo), (r - lo) / (hi - lo))
            }
        }
    }

    /// `∫_l^r dy / |f(y)|` for `l <= r` inside the piece, with no isolated
    /// zeros strictly inside. Returns `+∞` when the integral diverges.
    pub fn inverse_integral(&self, l: f64, r: f64) -> f64 {
        if r <= l {
            return 0.0;
        }
        match *self {
            PieceEval::Const { value } => {
                if value == 0.0 {
                    f64::INFINITY
                } else {
                    (r - l) / value.abs()
                }
            }
            PieceEval::Power { scale, center, exponent } => {
                if scale == 0.0 {
                    return f64::INFINITY;
                }
                let g = |y: f64| (scale * (y - center).abs().powf(exponent)).abs();
                improper_inverse_integral(&g, l, r, exponent > 0.0 && l == center, exponent > 0.0 && r == center)
            }
            PieceEval::CantorDistance { scale, exponent, lo, hi } => {
                if scale == 0.0 {
                    return f64::INFINITY;
                }
                let w = hi - lo;
                let (u1, u2) = ((l - lo) / w, (r - lo) / w);
                let mut total = 0.0;
                // Parts of [l, r] outside [lo, hi], where the distance is to an endpoint.
                let outside = |a: f64, b: f64| {
                    let g = |y: f64| (scale * (w * cantor::distance((y - lo) / w)).powf(exponent)).abs();
                    improper_inverse_integral(&g, a, b, exponent > 0.0 && (a == hi), exponent > 0.0 && (b == lo))
                };
                if l < lo {
                    total += outside(l, r.min(lo));
                }
                if r > hi {
                    total += outside(l.max(hi), r);
                }
                if u2 > 0.0 && u1 < 1.0 {
                    match DistanceIntegral::new(exponent) {
                        Some(di) => total += w.powf(1.0 - exponent) * di.over(u1, u2) / scale.abs(),
                        None => return f64::INFINITY,
                    }
                }
                total
            }
        }
    }
}

/// Cap beyond which a partial inverse integral is declared divergent.
pub const DIVERGENCE_CAP: f64 = 1e9;

/// `∫_l^r dy / g(y)` for a positive integrand that may vanish at the flagged
/// endpoints. Near a flagged endpoint the range is refined geometrically
/// (`2^-k` of the half width); the integral is declared divergent once the
/// partial sum exceeds [`DIVERGENCE_CAP`] or the dyadic contributions stop
/// shrinking (ratio above 0.97 over eight consecutive refinements).
pub fn improper_inverse_integral<G: Fn(f64) -> f64>(g: &G, l: f64, r: f64, sing_l: bool, sing_r: bool) -> f64 {
    if r <= l {
        return 0.0;
    }
    let inv = |y: f64| 1.0 / g(y);
    let regular = |a: f64, b: f64| quad::integrate(inv, a, b, 1e-15, 1e-13, 200).value;
    match (sing_l, sing_r) {
        (false, false) => regular(l, r),
        (true, true) => {
            let m = 0.5 * (l + r);
            let a = improper_inverse_integral(g, l, m, true, false);
            if !a.is_finite() {
                return a;
            }
            a + improper_inverse_integral(g, m, r, false, true)
        }
        _ => {
            let half = 0.5 * (r - l);
            let mid = l + half;
            let mut sum = if sing_l { regular(mid, r) } else { regular(l, mid) };
            let point = |k: i32| {
                let off = half * 2f64.powi(-k);
                if sing_l {
                    l + off
                } else {
                    r - off
                }
            };
            let mut prev = f64::NAN;
            let mut slow = 0;
            for k in 0..4000 {
                let (p0, p1) = (point(k), point(k + 1));
                if p0 == p1 {
                    break;
                }
                let c = if sing_l { regular(p1, p0) } else { regular(p0, p1) };
                if !c.is_finite() {
                    return f64::INFINITY;
                }
                sum += c;
                if sum > DIVERGENCE_CAP {
                    return f64::INFINITY;
                }
                let ratio = c / prev;
                slow = if ratio > 0.97 { slow + 1 } else { 0 };
                if slow >= 8 && k > 16 {
                    return f64::INFINITY;
                }
                if k >= 3 && c <= 1e-14 * sum {
                    if ratio < 1.0 {
                        sum += c * ratio / (1.0 - ratio);
                    }
                    return sum;
                }
                prev = c;
            }
            sum
        }
    }
}

/// A regulated scalar field: finitely many breakpoints, a piece evaluator on
/// each open interval between them, and explicit values at the breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub breakpoints: Vec<f64>,
    pub pieces: Vec<Piece>,
    pub at_values: Vec<f64>,
    #[serde(rename = "bound_M")]
    pub bound_m: f64,
    pub flavor: Flavor,
}

/// Where a point sits relative to the breakpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Piece(usize),
    Breakpoint(usize),
}

impl FieldSpec {
    /// Piecewise-constant field from breakpoints, piece values and breakpoint values.
    pub fn piecewise_constant(breakpoints: Vec<f64>, values: Vec<f64>, at_values: Vec<f64>) -> Self {
        let n = values.len();
        let pieces = values
            .iter()
            .enumerate()
            .map(|(k, &v)| Piece {
                eval: PieceEval::Const { value: v },
                limits: [(k > 0).then_some(v), (k + 1 < n).then_some(v)],
            })
            .collect();
        let bound = values.iter().chain(at_values.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        FieldSpec {
            breakpoints,
            pieces,
            at_values,
            bound_m: if bound > 0.0 { bound } else { 1.0 },
            flavor: Flavor::PiecewiseConstant,
        }
    }

    /// Constant field `f ≡ c`.
    pub fn constant(c: f64) -> Self {
        Self::piecewise_constant(Vec::new(), vec![c], Vec::new())
    }

    pub fn locate(&self, x: f64) -> Location {
        let k = self.breakpoints.partition_point(|&b| b < x);
        if k < self.breakpoints.len() && self.breakpoints[k] == x {
            Location::Breakpoint(k)
        } else {
            Location::Piece(k)
        }
    }

    /// Closure of piece `k` as `(left, right)`, infinite at the ends.
    pub fn piece_bounds(&self, k: usize) -> (f64, f64) {
        let l = if k == 0 { f64::NEG_INFINITY } else { self.breakpoints[k - 1] };
        let r = if k == self.breakpoints.len() { f64::INFINITY } else { self.breakpoints[k] };
        (l, r)
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.locate(x) {
            Location::Breakpoint(k) => self.at_values[k],
            Location::Piece(k) => self.pieces[k].eval.eval(x),
        }
    }

    /// Left limit at breakpoint `k`, from the stored data.
    pub fn left_limit_at_breakpoint(&self, k: usize) -> f64 {
        let b = self.breakpoints[k];
        self.pieces[k].limits[1].unwrap_or_else(|| self.pieces[k].eval.eval(b))
    }

    /// Right limit at breakpoint `k`, from the stored data.
    pub fn right_limit_at_breakpoint(&self, k: usize) -> f64 {
        let b = self.breakpoints[k];
        self.pieces[k + 1].limits[0].unwrap_or_else(|| self.pieces[k + 1].eval.eval(b))
    }

    /// `(f(x-), f(x), f(x+))`.
    pub fn limits_at(&self, x: f64) -> (f64, f64, f64) {
        match self.locate(x) {
            Location::Breakpoint(k) => {
                (self.left_limit_at_breakpoint(k), self.at_values[k], self.right_limit_at_breakpoint(k))
            }
            Location::Piece(k) => {
                let v = self.pieces[k].eval.eval(x);
                (v, v, v)
            }
        }
    }

    /// Points where `[l, r]` must be split so each part is one piece with no
    /// isolated interior zero: breakpoints and isolated zeros strictly inside.
    pub fn split_points(&self, l: f64, r: f64) -> Vec<f64> {
        let mut pts = vec![l];
        let start = self.breakpoints.partition_point(|&b| b <= l);
        let mut k = start;
        let mut cursor = l;
        loop {
            let next_b = self.breakpoints.get(k).copied().filter(|&b| b < r);
            let end = next_b.unwrap_or(r);
            let mut zeros = self.pieces[k].eval.isolated_zeros(cursor, end);
            zeros.sort_by(f64::total_cmp);
            pts.extend(zeros);
            match next_b {
                Some(b) => {
                    pts.push(b);
                    cursor = b;
                    k += 1;
                }
                None => break,
            }
        }
        if r > l {
            pts.push(r);
        }
        pts.dedup();
        pts
    }

    /// `∫_l^r dy / f^dir(y)` where `f^+ = max(f, 0)` for `dir = +1` and
    /// `f^- = max(-f, 0)` for `dir = -1`. Infinite when the wrong sign holds
    /// on a sub-interval of positive length.
    pub fn inverse_integral(&self, l: f64, r: f64, dir: f64) -> f64 {
        if r <= l {
            return 0.0;
        }
        let pts = self.split_points(l, r);
        let mut total = 0.0;
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let mid = if a.is_finite() && b.is_finite() {
                0.5 * (a + b)
            } else if a.is_finite() {
                a + 1.0
            } else {
                b - 1.0
            };
            let k = self.breakpoints.partition_point(|&bp| bp < mid);
            let piece = &self.pieces[k].eval;
            if piece.sign() != dir {
                return f64::INFINITY;
            }
            if !a.is_finite() || !b.is_finite() {
                return f64::INFINITY;
            }
            total += piece.inverse_integral(a, b);
            if !total.is_finite() {
                return total;
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sign_field() -> FieldSpec {
        FieldSpec::piecewise_constant(vec![0.0], vec![-1.0, 1.0], vec![0.0])
    }

    #[test]
    fn limits_of_sign_field() {
        let f = sign_field();
        assert_eq!(f.limits_at(0.0), (-1.0, 0.0, 1.0));
        assert_eq!(f.limits_at(0.5), (1.0, 1.0, 1.0));
    }

    #[test]
    fn two_speed_limits() {
        let f = FieldSpec::piecewise_constant(vec![0.0], vec![1.0, 2.0], vec![2.0]);
        assert_eq!(f.limits_at(0.0), (1.0, 2.0, 2.0));
    }

    #[test]
    fn inverse_integral_two_speed() {
        let f = FieldSpec::piecewise_constant(vec![0.0], vec![1.0, 2.0], vec![2.0]);
        assert!((f.inverse_integral(-1.0, 1.0, 1.0) - 1.5).abs() < 1e-15);
        assert!(f.inverse_integral(-1.0, 1.0, -1.0).is_infinite());
    }

    #[test]
    fn sqrt_is_integrable_and_linear_is_not() {
        let sqrt = PieceEval::Power { scale: 1.0, center: 0.0, exponent: 0.5 };
        let v = sqrt.inverse_integral(0.0, 0.25);
        assert!((v - 1.0).abs() < 1e-9, "{v}");
        let lin = PieceEval::Power { scale: 1.0, center: 0.0, exponent: 1.0 };
        assert!(lin.inverse_integral(0.0, 1.0).is_infinite());
        let steep = PieceEval::Power { scale: 1.0, center: 0.0, exponent: 2.0 };
        assert!(steep.inverse_integral(0.0, 1.0).is_infinite());
    }

    #[test]
    fn split_points_include_power_zero() {
        let f = FieldSpec {
            breakpoints: vec![],
            pieces: vec![Piece {
                eval: PieceEval::Power { scale: 1.0, center: 0.3, exponent: 0.5 },
                limits: [None, None],
            }],
            at_values: vec![],
            bound_m: 10.0,
            flavor: Flavor::General,
        };
        assert_eq!(f.split_points(0.0, 1.0), vec![0.0, 0.3, 1.0]);
    }
}
