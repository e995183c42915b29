//! Problem data: the field `f`, the waiting measure `μ`, and the stop, wait
//! and branch sets that together select one semigroup.

mod cantor;
mod field;
mod graph;
mod measure;
mod simplify;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cantor::{cantor_function, distance as cantor_distance, DistanceIntegral};
pub use field::{improper_inverse_integral, FieldSpec, Flavor, Location, Piece, PieceEval, DIVERGENCE_CAP};
pub use graph::{graph_distance, multifunction_at, GraphInterval};
pub use measure::{AtomlessMeasure, CANTOR_LEVELS};
pub use simplify::{simplify_spec, truncate_to_box, SimplifyOptions};

use crate::error::Result;
use crate::flow;

/// Absolute tolerance for invariant checks.
pub const CHECK_TOL: f64 = 1e-9;

/// A point of `S*` with its exponential rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wait {
    pub x: f64,
    pub lambda: f64,
}

/// A point of `Ω*`: either a deterministic direction `phi = ±1` or the
/// probability `theta` of starting upward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<i8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
}

impl Branch {
    /// Probability of the increasing branch.
    pub fn up_probability(&self) -> f64 {
        match (self.phi, self.theta) {
            (_, Some(t)) => t,
            (Some(p), None) => {
                if p > 0 {
                    1.0
                } else {
                    0.0
                }
            }
            (None, None) => 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Deterministic,
    Markov,
}

/// Full data selecting one deterministic or Markov semigroup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemigroupSpec {
    pub field: FieldSpec,
    #[serde(default)]
    pub measure: AtomlessMeasure,
    #[serde(default)]
    pub stops: Vec<f64>,
    #[serde(default)]
    pub waits: Vec<Wait>,
    #[serde(default)]
    pub branches: Vec<Branch>,
    /// Half-width of the truncation box used by approximation commands.
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub box_half_width: Option<f64>,
}

impl SemigroupSpec {
    pub fn new(field: FieldSpec) -> Self {
        SemigroupSpec {
            field,
            measure: AtomlessMeasure::Zero,
            stops: Vec::new(),
            waits: Vec::new(),
            branches: Vec::new(),
            box_half_width: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("specs always serialize")
    }

    pub fn mode(&self) -> Mode {
        if !self.waits.is_empty() || self.branches.iter().any(|b| b.theta.is_some()) {
            Mode::Markov
        } else {
            Mode::Deterministic
        }
    }

    pub fn is_stop(&self, x: f64) -> bool {
        self.stops.contains(&x)
    }

    pub fn wait_at(&self, x: f64) -> Option<Wait> {
        self.waits.iter().copied().find(|w| w.x == x)
    }

    pub fn branch_at(&self, x: f64) -> Option<Branch> {
        self.branches.iter().copied().find(|b| b.x == x)
    }

    /// Whether the spec has property (P): piecewise-constant field, no
    /// waiting measure, finitely many special points (always true here).
    pub fn has_property_p(&self) -> bool {
        self.field.flavor == Flavor::PiecewiseConstant
            && self.field.pieces.iter().all(|p| p.eval.is_const())
            && self.measure.is_zero()
    }

    /// Sorted special points: breakpoints, stops, waits and branch points.
    pub fn special_points(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self
            .field
            .breakpoints
            .iter()
            .copied()
            .chain(self.stops.iter().copied())
            .chain(self.waits.iter().map(|w| w.x))
            .chain(self.branches.iter().map(|b| b.x))
            .collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// `μ([a, b])`.
    pub fn measure_mass(&self, a: f64, b: f64) -> Result<f64> {
        self.measure.mass(a, b)
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub rule: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<f64>,
    pub message: String,
}

/// Outcome of [`validate`]; empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, rule: &'static str, location: Option<f64>, message: impl Into<String>) {
        self.violations.push(Violation { rule, location, message: message.into() });
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= CHECK_TOL * (1.0 + a.abs().max(b.abs()))
}

/// Sample points covering piece `k` (finite windows for unbounded pieces).
fn piece_samples(field: &FieldSpec, k: usize, n: usize) -> Vec<f64> {
    let (l, r) = field.piece_bounds(k);
    let (lo, hi) = match (l.is_finite(), r.is_finite()) {
        (true, true) => (l, r),
        (true, false) => (l, l + 50.0),
        (false, true) => (r - 50.0, r),
        (false, false) => (-50.0, 50.0),
    };
    (1..n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

fn check_structure(spec: &SemigroupSpec, rep: &mut ValidationReport) {
    let f = &spec.field;
    if f.breakpoints.iter().any(|b| !b.is_finite()) {
        rep.push("structure", None, "breakpoints must be finite");
    }
    for w in f.breakpoints.windows(2) {
        if !(w[0] < w[1]) {
            rep.push("structure", Some(w[1]), "breakpoints must be strictly increasing");
        }
    }
    if f.pieces.len() != f.breakpoints.len() + 1 {
        rep.push(
            "structure",
            None,
            format!("expected {} pieces for {} breakpoints, got {}", f.breakpoints.len() + 1, f.breakpoints.len(), f.pieces.len()),
        );
    }
    if f.at_values.len() != f.breakpoints.len() {
        rep.push("structure", None, "at_values must have one entry per breakpoint");
    }
    if !(f.bound_m > 0.0) || !f.bound_m.is_finite() {
        rep.push("A1", None, "bound_M must be positive and finite");
    }
    for p in &f.pieces {
        match p.eval {
            PieceEval::Power { exponent, .. } if !(exponent >= 0.0) => {
                rep.push("structure", None, "power exponent must be nonnegative");
            }
            PieceEval::CantorDistance { exponent, lo, hi, .. } if !(lo < hi) || !(exponent >= 0.0) => {
                rep.push("structure", None, "cantor_distance needs lo < hi and a nonnegative exponent");
            }
            _ => {}
        }
    }
    for msg in spec.measure.structural_problems() {
        rep.push("Q1", None, msg);
    }
    if let Some(b) = spec.box_half_width {
        if !(b > 0.0) {
            rep.push("structure", None, "box must be positive");
        }
    }
}

fn check_field(spec: &SemigroupSpec, rep: &mut ValidationReport) {
    let f = &spec.field;
    let m = f.bound_m * (1.0 + CHECK_TOL) + CHECK_TOL;
    for (k, piece) in f.pieces.iter().enumerate() {
        let (l, r) = f.piece_bounds(k);
        if let PieceEval::Power { scale, exponent, .. } = piece.eval {
            if scale != 0.0 && exponent > 0.0 && !(l.is_finite() && r.is_finite()) {
                rep.push("A1", None, format!("piece {k} grows without bound on an unbounded interval"));
                continue;
            }
        }
        for x in piece_samples(f, k, 256) {
            let v = piece.eval.eval(x);
            if !(v.abs() <= m) {
                rep.push("A1", Some(x), format!("|f({x})| = {} exceeds bound_M = {}", v.abs(), f.bound_m));
                break;
            }
        }
        for (side, end) in [(0usize, l), (1usize, r)] {
            let stored = piece.limits[side];
            if !end.is_finite() {
                continue;
            }
            let eval_lim = piece.eval.eval(end);
            match stored {
                None => rep.push("regulated", Some(end), format!("piece {k} lacks its one-sided limit at {end}")),
                Some(s) if !close(s, eval_lim) => rep.push(
                    "regulated",
                    Some(end),
                    format!("piece {k} stores limit {s} at {end} but its evaluator tends to {eval_lim}"),
                ),
                Some(s) if s.abs() > m => rep.push("A1", Some(end), format!("limit {s} exceeds bound_M")),
                _ => {}
            }
        }
        if f.flavor == Flavor::PiecewiseConstant && !piece.eval.is_const() {
            rep.push("flavor", None, format!("piece {k} is not constant in a piecewise_constant field"));
        }
    }
    for (k, &y) in f.breakpoints.iter().enumerate() {
        let (fl, fy, fr) = f.limits_at(y);
        if fy.abs() > m {
            rep.push("A1", Some(y), format!("f({y}) = {fy} exceeds bound_M"));
        }
        let jam = fl * fr == 0.0 || (fl > 0.0 && fr < 0.0);
        if jam && fy != 0.0 {
            rep.push(
                "A2",
                Some(y),
                format!("no-jam condition fails at {y}: f(y-) = {fl}, f(y+) = {fr} but f(y) = {fy} (breakpoint {k})"),
            );
        }
    }
}

fn check_measure_support(spec: &SemigroupSpec, rep: &mut ValidationReport) {
    let Some((lo, hi)) = spec.measure.support_hull() else {
        return;
    };
    let f = &spec.field;
    let cells = 512;
    for (k, piece) in f.pieces.iter().enumerate() {
        let (l, r) = f.piece_bounds(k);
        let (a, b) = (l.max(lo), r.min(hi));
        if !(a < b) {
            continue;
        }
        let h = (b - a) / cells as f64;
        for i in 0..cells {
            let (c0, c1) = (a + h * i as f64, a + h * (i + 1) as f64);
            if piece.eval.zero_free(c0, c1) && spec.measure.mass_unchecked(c0, c1) > CHECK_TOL {
                rep.push("Q1", Some(c0), format!("measure charges [{c0}, {c1}] where f does not vanish"));
                return;
            }
        }
    }
}

fn check_sets(spec: &SemigroupSpec, rep: &mut ValidationReport) {
    let zero = |x: f64| spec.field.eval(x).abs() <= CHECK_TOL;
    for &s in &spec.stops {
        if !zero(s) {
            rep.push("Q2", Some(s), "stop point is not a zero of f");
        }
    }
    for w in &spec.waits {
        if !zero(w.x) {
            rep.push("Q4", Some(w.x), "wait point is not a zero of f");
        }
        if !(w.lambda > 0.0) || !w.lambda.is_finite() {
            rep.push("Q4", Some(w.x), "wait rate must be positive and finite");
        }
        if spec.stops.contains(&w.x) {
            rep.push("disjoint", Some(w.x), "point is both a stop and a wait");
        }
    }
    for b in &spec.branches {
        match (b.phi, b.theta) {
            (Some(p), None) if p == 1 || p == -1 => {}
            (None, Some(t)) if (0.0..=1.0).contains(&t) => {}
            _ => rep.push("Q3", Some(b.x), "branch needs exactly one of phi in {-1, 1} or theta in [0, 1]"),
        }
        if spec.stops.contains(&b.x) || spec.waits.iter().any(|w| w.x == b.x) {
            rep.push("disjoint", Some(b.x), "branch point also listed as stop or wait");
        }
    }
    let mut pts: Vec<f64> = spec.stops.clone();
    pts.extend(spec.waits.iter().map(|w| w.x));
    pts.extend(spec.branches.iter().map(|b| b.x));
    let n = pts.len();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    if pts.len() != n {
        rep.push("disjoint", None, "repeated special point");
    }
}

fn check_branch_geometry(spec: &SemigroupSpec, rep: &mut ValidationReport) {
    let iv = flow::classify(spec);
    let starts_up = |z: f64| iv.increase.iter().any(|i| i.lo == z && i.lo_closed);
    let starts_down = |z: f64| iv.decrease.iter().any(|i| i.hi == z && i.hi_closed);
    for b in &spec.branches {
        if !(starts_up(b.x) && starts_down(b.x)) {
            rep.push("Q3", Some(b.x), "branch point does not start both an increasing and a decreasing solution");
        }
    }
    for i in &iv.increase {
        if i.lo_closed && starts_down(i.lo) && spec.branch_at(i.lo).is_none() {
            rep.push("Q3", Some(i.lo), "both directions can start here but no branch rule is given");
        }
    }
}

/// Check every invariant of the spec; violations are returned as data.
pub fn validate(spec: &SemigroupSpec) -> ValidationReport {
    let mut rep = ValidationReport::default();
    check_structure(spec, &mut rep);
    if !rep.is_valid() {
        return rep;
    }
    check_field(spec, &mut rep);
    check_measure_support(spec, &mut rep);
    check_sets(spec, &mut rep);
    if rep.is_valid() {
        check_branch_geometry(spec, &mut rep);
    }
    rep
}

/// Convenience constructors for the scenarios used throughout the tests and guide.
pub mod library {
    use super::*;

    /// `f = a` on `x < 0`, `f(0) = at0`, `f = b` on `x > 0`.
    pub fn bode(a: f64, b: f64, at0: f64) -> SemigroupSpec {
        SemigroupSpec::new(FieldSpec::piecewise_constant(vec![0.0], vec![a, b], vec![at0]))
    }

    /// Speed 1 left of the origin, speed 2 from the origin on.
    pub fn two_speed() -> SemigroupSpec {
        bode(1.0, 2.0, 2.0)
    }

    /// `f = -1, 0, 1` with an upward branch rule at 0.
    pub fn sign_up() -> SemigroupSpec {
        let mut s = bode(-1.0, 1.0, 0.0);
        s.branches.push(Branch { x: 0.0, phi: Some(1), theta: None });
        s
    }

    /// `f = 1` outside `[0, 1]`, `dist(x, C)^(1/4)` on `[0, 1]`, with the
    /// Cantor measure as waiting mass.
    pub fn cantor_gap() -> SemigroupSpec {
        let field = FieldSpec {
            breakpoints: vec![0.0, 1.0],
            pieces: vec![
                Piece { eval: PieceEval::Const { value: 1.0 }, limits: [None, Some(1.0)] },
                Piece {
                    eval: PieceEval::CantorDistance { scale: 1.0, exponent: 0.25, lo: 0.0, hi: 1.0 },
                    limits: [Some(0.0), Some(0.0)],
                },
                Piece { eval: PieceEval::Const { value: 1.0 }, limits: [Some(1.0), None] },
            ],
            at_values: vec![0.0, 0.0],
            bound_m: 1.0,
            flavor: Flavor::General,
        };
        SemigroupSpec {
            measure: AtomlessMeasure::Cantor { scale: 1.0, interval: [0.0, 1.0] },
            ..SemigroupSpec::new(field)
        }
    }

    /// Speed `b` on both sides of 0, with an exponential wait of rate
    /// `lambda` at 0.
    pub fn poisson_wait(lambda: f64, b: f64) -> SemigroupSpec {
        let mut s = bode(b, b, 0.0);
        s.waits.push(Wait { x: 0.0, lambda });
        s
    }

    /// Increasing field with speeds 1, 2, 1, 1.5 split at 0, 1, 2, a wait of
    /// rate 1 at 0, truncated to `[-3, 3]`.
    pub fn three_gap() -> SemigroupSpec {
        let field = FieldSpec::piecewise_constant(vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 1.0, 1.5], vec![0.0, 1.0, 1.0]);
        let mut spec = SemigroupSpec::new(field);
        spec.waits.push(Wait { x: 0.0, lambda: 1.0 });
        truncate_to_box(&spec, 3.0).expect("three-gap field is valid")
    }

    /// `f = 0` for `x <= 0`, `f = sqrt(x)` for `0 < x <= 1`, `f = 1` beyond.
    pub fn sqrt_start() -> SemigroupSpec {
        let field = FieldSpec {
            breakpoints: vec![0.0, 1.0],
            pieces: vec![
                Piece { eval: PieceEval::Const { value: 0.0 }, limits: [None, Some(0.0)] },
                Piece { eval: PieceEval::Power { scale: 1.0, center: 0.0, exponent: 0.5 }, limits: [Some(0.0), Some(1.0)] },
                Piece { eval: PieceEval::Const { value: 1.0 }, limits: [Some(1.0), None] },
            ],
            at_values: vec![0.0, 1.0],
            bound_m: 1.0,
            flavor: Flavor::General,
        };
        SemigroupSpec::new(field)
    }
}

#[cfg(test)]
mod tests {
    use super::library::*;
    use super::*;

    #[test]
    fn sign_field_with_branch_is_valid() {
        let rep = validate(&sign_up());
        assert!(rep.is_valid(), "{rep:?}");
    }

    #[test]
    fn jam_without_zero_is_flagged() {
        let spec = bode(1.0, -1.0, 0.5);
        let rep = validate(&spec);
        assert!(rep.violations.iter().any(|v| v.rule == "A2" && v.location == Some(0.0)), "{rep:?}");
    }

    #[test]
    fn constant_field_is_valid() {
        let spec = SemigroupSpec::new(FieldSpec::constant(2.0));
        assert!(validate(&spec).is_valid());
    }

    #[test]
    fn cantor_gap_is_valid() {
        let rep = validate(&cantor_gap());
        assert!(rep.is_valid(), "{rep:?}");
    }

    #[test]
    fn measure_off_the_zero_set_is_flagged() {
        let mut spec = two_speed();
        spec.measure = AtomlessMeasure::Table { points: vec![[0.5, 0.0], [0.7, 1.0]] };
        assert!(validate(&spec).violations.iter().any(|v| v.rule == "Q1"));
    }

    #[test]
    fn missing_branch_rule_is_flagged() {
        let spec = bode(-1.0, 1.0, 0.0);
        assert!(validate(&spec).violations.iter().any(|v| v.rule == "Q3"));
    }

    #[test]
    fn stored_limit_mismatch_is_flagged() {
        let mut spec = two_speed();
        spec.field.pieces[1].limits[0] = Some(3.0);
        assert!(validate(&spec).violations.iter().any(|v| v.rule == "regulated"));
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let text = r#"{"field":{"breakpoints":[],"pieces":[{"eval":{"kind":"const","value":1.0},"limits":[null,null]}],
            "at_values":[],"bound_M":1.0,"flavor":"piecewise_constant"},"extra":1}"#;
        assert!(SemigroupSpec::from_json(text).is_err());
        let inner = r#"{"field":{"breakpoints":[],"pieces":[{"eval":{"kind":"const","value":1.0,"oops":2},"limits":[null,null]}],
            "at_values":[],"bound_M":1.0,"flavor":"piecewise_constant"}}"#;
        assert!(SemigroupSpec::from_json(inner).is_err());
    }

    #[test]
    fn json_round_trip() {
        let spec = cantor_gap();
        let back = SemigroupSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(back, spec);
    }
}
