//! The deterministic semigroup: maximal intervals of increase and decrease,
//! travel times, and the flow obtained by inverting the travel-time identity
//!
//! ```text
//! t = ∫_{x0}^{x(t)} dy / f⁺(y) + μ([x0, x(t)])
//! ```
//!
//! on intervals of increase (mirrored on intervals of decrease). Points that
//! belong to neither family are stationary, and so are stop points.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::quad;
use crate::scenario::{Mode, SemigroupSpec};

/// Direction of motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Up => 1.0,
            Direction::Down => -1.0,
        }
    }
}

/// A maximal interval of monotone motion with endpoint inclusion flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonoInterval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl MonoInterval {
    pub fn contains(&self, x: f64) -> bool {
        (x > self.lo || (self.lo_closed && x == self.lo)) && (x < self.hi || (self.hi_closed && x == self.hi))
    }

    pub fn closure_contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Maximal intervals of increase (right-open) and decrease (left-open).
/// Everything else is stationary.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MonotoneIntervals {
    pub increase: Vec<MonoInterval>,
    pub decrease: Vec<MonoInterval>,
}

impl MonotoneIntervals {
    pub fn increase_at(&self, x: f64) -> Option<MonoInterval> {
        self.increase.iter().copied().find(|i| i.contains(x))
    }

    pub fn decrease_at(&self, x: f64) -> Option<MonoInterval> {
        self.decrease.iter().copied().find(|i| i.contains(x))
    }

    pub fn is_stationary(&self, x: f64) -> bool {
        self.increase_at(x).is_none() && self.decrease_at(x).is_none()
    }
}

/// Cut points: breakpoints, special points and isolated zeros of the pieces.
fn cut_points(spec: &SemigroupSpec) -> Vec<f64> {
    let f = &spec.field;
    let mut cuts = spec.special_points();
    for (k, p) in f.pieces.iter().enumerate() {
        let (l, r) = f.piece_bounds(k);
        cuts.extend(p.eval.isolated_zeros(l, r));
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts
}

/// Sign of motion on an open elementary interval (no cut inside), or 0.
fn elementary_sign(spec: &SemigroupSpec, l: f64, r: f64) -> f64 {
    let mid = match (l.is_finite(), r.is_finite()) {
        (true, true) => 0.5 * (l + r),
        (true, false) => l + 1.0,
        (false, true) => r - 1.0,
        (false, false) => 0.0,
    };
    let f = &spec.field;
    let k = f.breakpoints.partition_point(|&b| b < mid);
    let piece = &f.pieces[k].eval;
    let s = piece.sign();
    if s == 0.0 {
        return 0.0;
    }
    // Compact sub-intervals must have finite travel time.
    let (a, b) = match (l.is_finite(), r.is_finite()) {
        (true, true) => (l + 0.25 * (r - l), r - 0.25 * (r - l)),
        _ => (mid - 0.5, mid + 0.5),
    };
    if f.inverse_integral(a, b, s).is_finite() {
        s
    } else {
        0.0
    }
}

/// Whether the travel integral is finite on a one-sided neighbourhood of `c`
/// inside `(l, r)` (`from_right` selects `[c, c + δ]`, otherwise `[c - δ, c]`).
fn one_sided_finite(spec: &SemigroupSpec, c: f64, l: f64, r: f64, from_right: bool, dir: f64) -> bool {
    let reach = if from_right { r - c } else { c - l };
    let delta = if reach.is_finite() { 0.5 * reach } else { 1.0 };
    let (a, b) = if from_right { (c, c + delta) } else { (c - delta, c) };
    spec.field.inverse_integral(a, b, dir).is_finite() && spec.measure.mass_unchecked(a, b).is_finite()
}

/// Classify the line into maximal intervals of increase and decrease.
///
/// A left endpoint of an interval of increase is included iff it is not a
/// stop point and the travel integral is finite just to its right (mirror
/// rule for right endpoints of intervals of decrease).
pub fn classify(spec: &SemigroupSpec) -> MonotoneIntervals {
    let cuts = cut_points(spec);
    let mut bounds = vec![f64::NEG_INFINITY];
    bounds.extend(cuts.iter().copied());
    bounds.push(f64::INFINITY);
    let signs: Vec<f64> = bounds.windows(2).map(|w| elementary_sign(spec, w[0], w[1])).collect();
    let mut out = MonotoneIntervals::default();
    for dir in [1.0, -1.0] {
        let mut i = 0;
        while i < signs.len() {
            if signs[i] != dir {
                i += 1;
                continue;
            }
            let start = i;
            while i + 1 < signs.len() && signs[i + 1] == dir {
                let c = bounds[i + 1];
                let joined = !spec.is_stop(c)
                    && one_sided_finite(spec, c, bounds[i], c, false, dir)
                    && one_sided_finite(spec, c, c, bounds[i + 2], true, dir);
                if !joined {
                    break;
                }
                i += 1;
            }
            let (lo, hi) = (bounds[start], bounds[i + 1]);
            let mut iv = MonoInterval { lo, hi, lo_closed: false, hi_closed: false };
            if dir > 0.0 {
                iv.lo_closed =
                    lo.is_finite() && !spec.is_stop(lo) && one_sided_finite(spec, lo, lo, bounds[start + 1], true, dir);
                out.increase.push(iv);
            } else {
                iv.hi_closed = hi.is_finite() && !spec.is_stop(hi) && one_sided_finite(spec, hi, bounds[i], hi, false, dir);
                out.decrease.push(iv);
            }
            i += 1;
        }
    }
    out
}

/// Result of evaluating the flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowResult {
    pub position: f64,
    /// The trajectory reached the far end of its interval and stays there.
    pub clamped: bool,
    /// Direction chosen at a branch point, if the start was one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branch_used: Option<i8>,
}

/// The deterministic flow of a spec, with its interval classification cached.
#[derive(Debug, Clone)]
pub struct Flow<'a> {
    spec: &'a SemigroupSpec,
    intervals: MonotoneIntervals,
}

/// Motion available from a starting point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    Stationary,
    Up(MonoInterval),
    Down(MonoInterval),
    /// Both directions possible: increasing interval, decreasing interval.
    Branch(MonoInterval, MonoInterval),
}

impl<'a> Flow<'a> {
    pub fn new(spec: &'a SemigroupSpec) -> Self {
        Flow { spec, intervals: classify(spec) }
    }

    pub fn spec(&self) -> &SemigroupSpec {
        self.spec
    }

    pub fn intervals(&self) -> &MonotoneIntervals {
        &self.intervals
    }

    pub fn motion(&self, x0: f64) -> Motion {
        if self.spec.is_stop(x0) {
            return Motion::Stationary;
        }
        match (self.intervals.increase_at(x0), self.intervals.decrease_at(x0)) {
            (Some(u), Some(d)) => Motion::Branch(u, d),
            (Some(u), None) => Motion::Up(u),
            (None, Some(d)) => Motion::Down(d),
            (None, None) => Motion::Stationary,
        }
    }

    /// Travel time `∫ dy / f^± + μ` between `a <= b` in the given direction,
    /// without checking interval membership.
    pub fn travel_time_unchecked(&self, a: f64, b: f64, dir: Direction) -> f64 {
        if b <= a {
            return 0.0;
        }
        self.spec.field.inverse_integral(a, b, dir.sign()) + self.spec.measure.mass_unchecked(a, b)
    }

    /// Travel time across `[a, b]`, which must lie in the closure of a single
    /// interval of the given direction.
    pub fn travel_time(&self, a: f64, b: f64, dir: Direction) -> Result<f64> {
        if a > b {
            return Err(invalid(format!("travel_time needs a <= b, got [{a}, {b}]")));
        }
        let family = match dir {
            Direction::Up => &self.intervals.increase,
            Direction::Down => &self.intervals.decrease,
        };
        if !family.iter().any(|i| i.closure_contains(a) && i.closure_contains(b)) {
            return Err(Error::Straddle { a, b });
        }
        Ok(self.travel_time_unchecked(a, b, dir))
    }

    /// Move from `x0` for time `t` along `iv` in direction `dir`.
    pub fn flow_along(&self, x0: f64, t: f64, iv: MonoInterval, dir: Direction) -> FlowResult {
        let (target, sgn) = match dir {
            Direction::Up => (iv.hi, 1.0),
            Direction::Down => (iv.lo, -1.0),
        };
        let f = &self.spec.field;
        // Walk piece by piece toward the target, accumulating travel time.
        let pts = match dir {
            Direction::Up => f.split_points(x0, if target.is_finite() { target } else { f64::INFINITY }),
            Direction::Down => {
                let mut p = f.split_points(if target.is_finite() { target } else { f64::NEG_INFINITY }, x0);
                p.reverse();
                p
            }
        };
        let mut acc = 0.0;
        let mut from = x0;
        for &to in pts.iter().skip(1) {
            let seg = if sgn > 0.0 {
                self.segment_time(from, to, dir)
            } else {
                self.segment_time(to, from, dir)
            };
            if acc + seg > t {
                let rem = t - acc;
                return FlowResult { position: self.invert_segment(from, to, rem, dir), clamped: false, branch_used: None };
            }
            acc += seg;
            from = to;
        }
        if target.is_finite() {
            FlowResult { position: target, clamped: true, branch_used: None }
        } else {
            FlowResult { position: from, clamped: false, branch_used: None }
        }
    }

    fn segment_time(&self, a: f64, b: f64, dir: Direction) -> f64 {
        if !a.is_finite() || !b.is_finite() {
            return f64::INFINITY;
        }
        self.travel_time_unchecked(a, b, dir)
    }

    /// Position reached from `from` after time `rem` inside one split segment
    /// ending at `to` (which may be infinite).
    fn invert_segment(&self, from: f64, to: f64, rem: f64, dir: Direction) -> f64 {
        let sgn = dir.sign();
        let f = &self.spec.field;
        let probe = if to.is_finite() { 0.5 * (from + to) } else { from + sgn };
        let k = f.breakpoints.partition_point(|&b| b < probe);
        let piece = &f.pieces[k].eval;
        let span = if to.is_finite() { (to - from).abs() } else { f64::INFINITY };
        let reach = f.bound_m * rem;
        let far = from + sgn * span.min(reach.max(f64::MIN_POSITIVE));
        let mass_free = self.spec.measure.mass_unchecked(from.min(far), from.max(far)) == 0.0;
        if let (crate::scenario::PieceEval::Const { value }, true) = (piece, mass_free) {
            return from + sgn * value.abs() * rem;
        }
        let time_to = |y: f64| {
            if sgn > 0.0 {
                self.travel_time_unchecked(from, y, dir)
            } else {
                self.travel_time_unchecked(y, from, dir)
            }
        };
        let (mut lo, mut hi) = (0.0, span.min(reach));
        // Bisection on the distance travelled.
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi || hi - lo <= 1e-15 * (1.0 + from.abs()) {
                break;
            }
            if time_to(from + sgn * mid) <= rem {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        from + sgn * 0.5 * (lo + hi)
    }

    /// `S_t x0`, with branch direction `choice` (+1/-1) overriding the spec's
    /// rule when the start is a branch point.
    pub fn flow_with_choice(&self, x0: f64, t: f64, choice: Option<i8>) -> FlowResult {
        let stay = FlowResult { position: x0, clamped: false, branch_used: None };
        if t <= 0.0 {
            return stay;
        }
        match self.motion(x0) {
            Motion::Stationary => stay,
            Motion::Up(iv) => self.flow_along(x0, t, iv, Direction::Up),
            Motion::Down(iv) => self.flow_along(x0, t, iv, Direction::Down),
            Motion::Branch(u, d) => {
                let phi = choice.or_else(|| self.spec.branch_at(x0).and_then(|b| b.phi)).unwrap_or(1);
                let mut r = if phi > 0 {
                    self.flow_along(x0, t, u, Direction::Up)
                } else {
                    self.flow_along(x0, t, d, Direction::Down)
                };
                r.branch_used = Some(phi);
                r
            }
        }
    }

    /// `S_t x0` for a deterministic-mode spec.
    pub fn flow(&self, x0: f64, t: f64) -> Result<FlowResult> {
        if !(t >= 0.0) {
            return Err(invalid(format!("flow needs t >= 0, got {t}")));
        }
        if self.spec.mode() != Mode::Deterministic {
            return Err(Error::WrongMode { expected: "deterministic" });
        }
        Ok(self.flow_with_choice(x0, t, None))
    }

    /// Time at which the trajectory from `x0` reaches the far end of its
    /// interval (`τ±(x0)`), infinite if never; zero for stationary points.
    pub fn exit_time(&self, x0: f64, choice: Option<i8>) -> f64 {
        let along = |iv: MonoInterval, dir: Direction| match dir {
            Direction::Up => self.segment_time(x0, iv.hi, dir),
            Direction::Down => self.segment_time(iv.lo, x0, dir),
        };
        match self.motion(x0) {
            Motion::Stationary => 0.0,
            Motion::Up(iv) => along(iv, Direction::Up),
            Motion::Down(iv) => along(iv, Direction::Down),
            Motion::Branch(u, d) => {
                let phi = choice.or_else(|| self.spec.branch_at(x0).and_then(|b| b.phi)).unwrap_or(1);
                if phi > 0 {
                    along(u, Direction::Up)
                } else {
                    along(d, Direction::Down)
                }
            }
        }
    }

    /// Whether `|S_t(S_s x0) - S_{s+t} x0| <= tol`.
    pub fn semigroup_property_check(&self, x0: f64, s: f64, t: f64, tol: f64) -> Result<bool> {
        if !(s >= 0.0 && t >= 0.0) {
            return Err(invalid("semigroup check needs s, t >= 0"));
        }
        let once = self.flow(x0, s + t)?.position;
        let mid = self.flow(x0, s)?.position;
        let twice = self.flow(mid, t)?.position;
        Ok((once - twice).abs() <= tol)
    }

    /// Positions at the given times.
    pub fn trajectory(&self, x0: f64, times: &[f64]) -> Result<Vec<f64>> {
        times.iter().map(|&t| self.flow(x0, t).map(|r| r.position)).collect()
    }
}

/// Classification plus flow evaluation in one call.
pub fn flow(spec: &SemigroupSpec, x0: f64, t: f64) -> Result<FlowResult> {
    Flow::new(spec).flow(x0, t)
}

/// Travel time across `[a, b]` in the given direction.
pub fn travel_time(spec: &SemigroupSpec, a: f64, b: f64, dir: Direction) -> Result<f64> {
    Flow::new(spec).travel_time(a, b, dir)
}

/// Time grid helper: `n + 1` equally spaced points on `[0, t_max]`.
pub fn time_grid(t_max: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| t_max * i as f64 / n as f64).collect()
}

/// Carathéodory residual `|x(t) - x0 - ∫_0^t f(x(s)) ds|` of a trajectory.
pub fn caratheodory_residual(flow: &Flow<'_>, x0: f64, t: f64) -> Result<f64> {
    let xt = flow.flow(x0, t)?.position;
    let integrand = |s: f64| {
        let x = flow.flow_with_choice(x0, s, None).position;
        flow.spec().field.eval(x)
    };
    let r = quad::integrate(integrand, 0.0, t, 1e-10, 1e-10, 2000);
    Ok((xt - x0 - r.value).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::library::*;
    use crate::scenario::{FieldSpec, SemigroupSpec};

    #[test]
    fn constant_field_single_interval() {
        let spec = SemigroupSpec::new(FieldSpec::constant(1.0));
        let iv = classify(&spec);
        assert_eq!(iv.increase.len(), 1);
        assert!(iv.increase[0].lo.is_infinite() && iv.increase[0].hi.is_infinite());
        assert!(iv.decrease.is_empty());
    }

    #[test]
    fn stop_point_splits_bode_case1() {
        let mut spec = bode(1.0, 1.0, 0.0);
        spec.stops.push(0.0);
        let iv = classify(&spec);
        assert_eq!(iv.increase.len(), 2);
        assert_eq!(iv.increase[0].hi, 0.0);
        assert_eq!(iv.increase[1].lo, 0.0);
        assert!(!iv.increase[1].lo_closed);
    }

    #[test]
    fn sqrt_start_includes_left_endpoint() {
        let iv = classify(&sqrt_start());
        assert_eq!(iv.increase.len(), 1);
        assert_eq!(iv.increase[0].lo, 0.0);
        assert!(iv.increase[0].lo_closed);
    }

    #[test]
    fn two_speed_travel_time() {
        let t = travel_time(&two_speed(), -1.0, 1.0, Direction::Up).unwrap();
        assert!((t - 1.5).abs() < 1e-15);
    }

    #[test]
    fn straddle_is_an_error() {
        let spec = sign_up();
        assert!(matches!(travel_time(&spec, -1.0, 1.0, Direction::Up), Err(Error::Straddle { .. })));
    }

    #[test]
    fn flow_examples() {
        let spec = SemigroupSpec::new(FieldSpec::constant(1.0));
        assert!((flow(&spec, 0.0, 2.5).unwrap().position - 2.5).abs() < 1e-15);
        let mut case1 = bode(1.0, 1.0, 0.0);
        case1.stops.push(0.0);
        let r = flow(&case1, -1.0, 3.0).unwrap();
        assert_eq!(r.position, 0.0);
        assert!(r.clamped);
        let r = flow(&sign_up(), 0.0, 2.0).unwrap();
        assert!((r.position - 2.0).abs() < 1e-15);
        assert_eq!(r.branch_used, Some(1));
    }

    #[test]
    fn flow_rejects_negative_time_and_markov_specs() {
        assert!(flow(&two_speed(), 0.0, -1.0).is_err());
        let mut spec = bode(1.0, 1.0, 0.0);
        spec.waits.push(crate::scenario::Wait { x: 0.0, lambda: 1.0 });
        assert!(matches!(flow(&spec, 0.0, 1.0), Err(Error::WrongMode { .. })));
    }

    #[test]
    fn semigroup_two_speed() {
        let spec = two_speed();
        let fl = Flow::new(&spec);
        assert!(fl.semigroup_property_check(-1.0, 0.7, 0.9, 1e-8).unwrap());
        assert!(fl.semigroup_property_check(-1.0, 0.0, 0.0, 1e-8).unwrap());
        // Closed form: reach 0 at t = 1, then speed 2.
        assert!((fl.flow(-1.0, 1.6).unwrap().position - 1.2).abs() < 1e-12);
    }

    #[test]
    fn decreasing_clamps_at_lower_end() {
        let mut spec = bode(1.0, -1.0, 0.0);
        spec.stops.push(0.0);
        let r = flow(&spec, 2.0, 5.0).unwrap();
        assert_eq!(r.position, 0.0);
        assert!(r.clamped);
    }
}
