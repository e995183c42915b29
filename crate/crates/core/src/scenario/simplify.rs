//! Simplification of a spec into one with finitely many intervals of motion:
//! box truncation, selection of long intervals, shrinking near exit ends,
//! restriction of the waiting data, and an optional truncation of waits by
//! expected residual time.

use super::field::{FieldSpec, Piece, PieceEval};
use super::measure::AtomlessMeasure;
use super::SemigroupSpec;
use crate::error::{invalid, Result};
use crate::flow::classify;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplifyOptions {
    pub eps: f64,
    pub box_n: f64,
    /// Remove waits with the smallest mean durations while their total stays
    /// below this budget.
    pub wait_budget: Option<f64>,
}

impl SimplifyOptions {
    pub fn new(eps: f64, box_n: f64) -> Self {
        SimplifyOptions { eps, box_n, wait_budget: None }
    }
}

#[derive(Debug, Clone, Copy)]
struct Region {
    lo: f64,
    hi: f64,
    lo_closed: bool,
    hi_closed: bool,
}

impl Region {
    fn contains(&self, x: f64) -> bool {
        (x > self.lo || (self.lo_closed && x == self.lo)) && (x < self.hi || (self.hi_closed && x == self.hi))
    }

    fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && !(self.lo_closed && self.hi_closed))
    }
}

fn piece_index(field: &FieldSpec, l: f64, r: f64) -> usize {
    let mid = match (l.is_finite(), r.is_finite()) {
        (true, true) => 0.5 * (l + r),
        (true, false) => l + 1.0,
        (false, true) => r - 1.0,
        (false, false) => 0.0,
    };
    field.breakpoints.partition_point(|&b| b < mid)
}

/// Rebuild `field` on the breakpoint set `cuts` (a superset of the old one),
/// with `zero(l, r)` deciding which new pieces become identically zero and
/// `zero_at(y)` which breakpoint values become zero.
fn rebuild<Z: Fn(f64, f64) -> bool, P: Fn(f64) -> bool>(field: &FieldSpec, cuts: Vec<f64>, zero: Z, zero_at: P) -> FieldSpec {
    let mut bounds = vec![f64::NEG_INFINITY];
    bounds.extend(cuts.iter().copied());
    bounds.push(f64::INFINITY);
    let pieces = bounds
        .windows(2)
        .map(|w| {
            let (l, r) = (w[0], w[1]);
            let lim = |end: f64| end.is_finite().then_some(0.0);
            if zero(l, r) {
                return Piece { eval: PieceEval::Const { value: 0.0 }, limits: [lim(l), lim(r)] };
            }
            let k = piece_index(field, l, r);
            let (ol, or) = field.piece_bounds(k);
            let old = &field.pieces[k];
            let left = if !l.is_finite() {
                None
            } else if l == ol {
                old.limits[0]
            } else {
                Some(old.eval.eval(l))
            };
            let right = if !r.is_finite() {
                None
            } else if r == or {
                old.limits[1]
            } else {
                Some(old.eval.eval(r))
            };
            Piece { eval: old.eval.clone(), limits: [left, right] }
        })
        .collect();
    let at_values = cuts
        .iter()
        .map(|&y| {
            if zero_at(y) {
                0.0
            } else {
                match field.breakpoints.iter().position(|&b| b == y) {
                    Some(k) => field.at_values[k],
                    None => field.eval(y),
                }
            }
        })
        .collect();
    let mut out = FieldSpec { breakpoints: cuts, pieces, at_values, bound_m: field.bound_m, flavor: field.flavor };
    enforce_no_jam(&mut out);
    out
}

/// Zero the breakpoint values where the no-jam condition demands it.
fn enforce_no_jam(field: &mut FieldSpec) {
    for k in 0..field.breakpoints.len() {
        let (fl, _, fr) = field.limits_at(field.breakpoints[k]);
        if fl * fr == 0.0 || (fl > 0.0 && fr < 0.0) {
            field.at_values[k] = 0.0;
        }
    }
}

fn is_zero_piece(p: &PieceEval) -> bool {
    matches!(p, PieceEval::Const { value } if *value == 0.0) || p.sign() == 0.0
}

/// Whether `f` already vanishes on the region.
fn already_zero(field: &FieldSpec, r: &Region) -> bool {
    if r.lo < r.hi {
        let pts = field.split_points(r.lo, r.hi);
        for w in pts.windows(2) {
            if w[1] > w[0] && !is_zero_piece(&field.pieces[piece_index(field, w[0], w[1])].eval) {
                return false;
            }
        }
    }
    field.breakpoints.iter().zip(&field.at_values).all(|(&b, &v)| !r.contains(b) || v == 0.0)
}

/// Set `f = 0` on each region; regions where `f` already vanishes are left
/// alone so the breakpoint set does not grow.
fn zero_on(field: &FieldSpec, regions: &[Region]) -> FieldSpec {
    let live: Vec<Region> = regions.iter().copied().filter(|r| !r.is_empty() && !already_zero(field, r)).collect();
    if live.is_empty() {
        return field.clone();
    }
    let mut cuts = field.breakpoints.clone();
    for r in &live {
        cuts.extend([r.lo, r.hi].into_iter().filter(|v| v.is_finite()));
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let inside = |l: f64, r: f64| {
        let mid = piece_index_mid(l, r);
        live.iter().any(|g| g.lo <= l && r <= g.hi && g.contains(mid))
    };
    rebuild(field, cuts, inside, |y| live.iter().any(|g| g.contains(y)))
}

fn piece_index_mid(l: f64, r: f64) -> f64 {
    match (l.is_finite(), r.is_finite()) {
        (true, true) => 0.5 * (l + r),
        (true, false) => l + 1.0,
        (false, true) => r - 1.0,
        (false, false) => 0.0,
    }
}

/// `μ` restricted to a union of intervals, flattening nested restrictions.
fn restrict(measure: &AtomlessMeasure, ivs: Vec<[f64; 2]>) -> AtomlessMeasure {
    let ivs = merge(ivs);
    match measure {
        AtomlessMeasure::Zero => AtomlessMeasure::Zero,
        AtomlessMeasure::Restricted { base, intervals } => {
            let mut both = Vec::new();
            for a in intervals {
                for b in &ivs {
                    let (l, r) = (a[0].max(b[0]), a[1].min(b[1]));
                    if l < r {
                        both.push([l, r]);
                    }
                }
            }
            AtomlessMeasure::Restricted { base: base.clone(), intervals: merge(both) }
        }
        m => AtomlessMeasure::Restricted { base: Box::new(m.clone()), intervals: ivs },
    }
}

fn merge(mut ivs: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    ivs.retain(|iv| iv[0] < iv[1]);
    ivs.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let mut out: Vec<[f64; 2]> = Vec::new();
    for iv in ivs {
        match out.last_mut() {
            Some(last) if iv[0] <= last[1] => last[1] = last[1].max(iv[1]),
            _ => out.push(iv),
        }
    }
    out
}

/// Truncate to the box `[-n, n]`: `f = 0` outside, `±n` become stop points,
/// and waits, branches, stops and waiting mass outside the box are dropped.
pub fn truncate_to_box(spec: &SemigroupSpec, n: f64) -> Result<SemigroupSpec> {
    if !(n > 0.0) || !n.is_finite() {
        return Err(invalid(format!("box half-width must be positive and finite, got {n}")));
    }
    let f = &spec.field;
    let mut cuts = vec![-n];
    cuts.extend(f.breakpoints.iter().copied().filter(|&b| b > -n && b < n));
    cuts.push(n);
    let field = rebuild(f, cuts, |l, r| r <= -n || l >= n, |y| y.abs() >= n);
    let inside = |x: f64| x.abs() <= n;
    let mut stops: Vec<f64> = spec.stops.iter().copied().filter(|&s| inside(s)).collect();
    for e in [-n, n] {
        if !stops.contains(&e) {
            stops.push(e);
        }
    }
    Ok(SemigroupSpec {
        field,
        measure: restrict(&spec.measure, vec![[-n, n]]),
        stops,
        waits: spec.waits.iter().copied().filter(|w| w.x.abs() < n).collect(),
        branches: spec.branches.iter().copied().filter(|b| b.x.abs() < n).collect(),
        box_half_width: spec.box_half_width,
    })
}

/// Width of the zero stretch of `f` next to `end` on the side `outward`
/// (`+1` right, `-1` left), capped at `cap`.
fn zero_buffer(field: &FieldSpec, end: f64, outward: f64, cap: f64) -> f64 {
    if !(cap > 0.0) {
        return 0.0;
    }
    let (l, r) = if outward > 0.0 { (end, end + cap) } else { (end - cap, end) };
    let mut pts = field.split_points(l, r);
    if outward < 0.0 {
        pts.reverse();
    }
    let mut width = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0].min(w[1]), w[0].max(w[1]));
        if b <= a {
            continue;
        }
        if !is_zero_piece(&field.pieces[piece_index(field, a, b)].eval) {
            break;
        }
        width += b - a;
    }
    width.min(cap)
}

/// A selected stretch: the part kept moving and the outer ends used for the
/// near-end wait removal.
#[derive(Debug, Clone, Copy)]
struct Kept {
    keep: Region,
    outer: (f64, f64),
    trims_ends: bool,
}

/// Simplify `spec` for accuracy `eps` inside the box `[-box_n, box_n]`.
///
/// Specs with property (P) are truncated to the box and stripped of intervals
/// shorter than `eps`; their remaining intervals are not shrunk. For other
/// specs each kept interval is shrunk at its exit end (by `eps/2`, or
/// proportionally around a branch point) unless `f` already vanishes on a
/// stretch of that width beyond the end, which makes the transform
/// idempotent.
pub fn simplify_spec(spec: &SemigroupSpec, opts: &SimplifyOptions) -> Result<SemigroupSpec> {
    let eps = opts.eps;
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(invalid(format!("eps must be positive, got {eps}")));
    }
    if let Some(d) = opts.wait_budget {
        if !(d > 0.0) {
            return Err(invalid(format!("wait budget must be positive, got {d}")));
        }
    }
    let boxed = truncate_to_box(spec, opts.box_n)?;
    let shrink = !boxed.has_property_p();
    let ivs = classify(&boxed);
    let field = &boxed.field;
    let mut kept: Vec<Kept> = Vec::new();
    let mut paired_up = Vec::new();
    let mut paired_down = Vec::new();
    let mut live_branches = Vec::new();

    for b in &boxed.branches {
        let z = b.x;
        let up = ivs.increase.iter().position(|i| i.lo == z && i.lo_closed);
        let down = ivs.decrease.iter().position(|i| i.hi == z && i.hi_closed);
        let (Some(ui), Some(di)) = (up, down) else { continue };
        paired_up.push(ui);
        paired_down.push(di);
        let (u, d) = (ivs.increase[ui], ivs.decrease[di]);
        // Outer ends, undoing an earlier proportional shrink when f already
        // vanishes beyond them.
        let ratio = if eps < 1.0 { eps / (1.0 - eps) } else { 0.0 };
        let zm = if shrink { d.lo - zero_buffer(field, d.lo, -1.0, ratio * (z - d.lo)) } else { d.lo };
        let zp = if shrink { u.hi + zero_buffer(field, u.hi, 1.0, ratio * (u.hi - z)) } else { u.hi };
        if zp - zm < eps || (shrink && eps >= 1.0) {
            continue;
        }
        live_branches.push(z);
        let (lo, hi) = if shrink { (zm + eps * (z - zm), zp - eps * (zp - z)) } else { (d.lo, u.hi) };
        kept.push(Kept {
            keep: Region { lo, hi, lo_closed: false, hi_closed: false },
            outer: (zm, zp),
            trims_ends: false,
        });
    }
    for (k, iv) in ivs.increase.iter().enumerate() {
        if paired_up.contains(&k) {
            continue;
        }
        let half = 0.5 * eps;
        let buf = if shrink { zero_buffer(field, iv.hi, 1.0, half) } else { 0.0 };
        let outer_hi = iv.hi + buf;
        if outer_hi - iv.lo < eps {
            continue;
        }
        let hi = if shrink { outer_hi - half } else { iv.hi };
        kept.push(Kept {
            keep: Region { lo: iv.lo, hi, lo_closed: iv.lo_closed, hi_closed: false },
            outer: (iv.lo, outer_hi),
            trims_ends: shrink,
        });
    }
    for (k, iv) in ivs.decrease.iter().enumerate() {
        if paired_down.contains(&k) {
            continue;
        }
        let half = 0.5 * eps;
        let buf = if shrink { zero_buffer(field, iv.lo, -1.0, half) } else { 0.0 };
        let outer_lo = iv.lo - buf;
        if iv.hi - outer_lo < eps {
            continue;
        }
        let lo = if shrink { outer_lo + half } else { iv.lo };
        kept.push(Kept {
            keep: Region { lo, hi: iv.hi, lo_closed: false, hi_closed: iv.hi_closed },
            outer: (outer_lo, iv.hi),
            trims_ends: shrink,
        });
    }
    kept.sort_by(|a, b| a.keep.lo.total_cmp(&b.keep.lo));

    // f = 0 on the complement of the kept regions inside the box.
    let n = opts.box_n;
    let mut gaps = Vec::new();
    let mut cursor = Region { lo: -n, hi: n, lo_closed: true, hi_closed: true };
    for k in &kept {
        gaps.push(Region { hi: k.keep.lo, hi_closed: !k.keep.lo_closed, ..cursor });
        cursor = Region { lo: k.keep.hi, lo_closed: !k.keep.hi_closed, ..cursor };
    }
    gaps.push(cursor);
    let new_field = zero_on(field, &gaps);

    let in_kept = |x: f64| kept.iter().any(|k| k.keep.contains(x));
    let near_end = |x: f64| {
        kept.iter().any(|k| {
            k.trims_ends && ((x >= k.outer.0 && x <= k.outer.0 + 0.5 * eps) || (x >= k.outer.1 - 0.5 * eps && x <= k.outer.1))
        })
    };
    let mut waits: Vec<_> = boxed.waits.iter().copied().filter(|w| in_kept(w.x) && !near_end(w.x)).collect();
    if let Some(budget) = opts.wait_budget {
        let mut order: Vec<usize> = (0..waits.len()).collect();
        order.sort_by(|&a, &b| waits[b].lambda.total_cmp(&waits[a].lambda));
        let mut residual = 0.0;
        let mut drop = Vec::new();
        for i in order {
            let r = 1.0 / waits[i].lambda;
            if residual + r >= budget {
                break;
            }
            residual += r;
            drop.push(i);
        }
        let mut idx = 0;
        waits.retain(|_| {
            let keep = !drop.contains(&idx);
            idx += 1;
            keep
        });
    }
    let measure = if shrink {
        restrict(&boxed.measure, kept.iter().map(|k| [k.keep.lo, k.keep.hi]).collect())
    } else {
        boxed.measure.clone()
    };
    Ok(SemigroupSpec {
        field: new_field,
        measure,
        stops: boxed.stops.clone(),
        waits,
        branches: boxed.branches.iter().copied().filter(|b| live_branches.contains(&b.x)).collect(),
        box_half_width: boxed.box_half_width,
    })
}

#[cfg(test)]
mod tests {
    use super::super::library::*;
    use super::super::{validate, Wait};
    use super::*;

    #[test]
    fn box_truncation_adds_stops_and_zeroes_outside() {
        let s = truncate_to_box(&two_speed(), 5.0).unwrap();
        assert_eq!(s.field.eval(6.0), 0.0);
        assert_eq!(s.field.eval(-5.0), 0.0);
        assert_eq!(s.field.eval(4.0), 2.0);
        assert!(s.is_stop(5.0) && s.is_stop(-5.0));
        assert!(validate(&s).is_valid(), "{:?}", validate(&s));
    }

    #[test]
    fn property_p_spec_unchanged_up_to_box() {
        let spec = sign_up();
        let boxed = truncate_to_box(&spec, 4.0).unwrap();
        let simple = simplify_spec(&spec, &SimplifyOptions::new(0.5, 4.0)).unwrap();
        assert_eq!(simple, boxed);
    }

    #[test]
    fn short_interval_is_zeroed() {
        let eps = 0.2;
        let mut spec = bode(1.0, 1.0, 0.0);
        spec.field = FieldSpec::piecewise_constant(vec![0.0, 0.1], vec![0.0, 1.0, 0.0], vec![0.0, 0.0]);
        let s = simplify_spec(&spec, &SimplifyOptions::new(eps, 3.0)).unwrap();
        assert_eq!(s.field.eval(0.05), 0.0);
    }

    #[test]
    fn budget_drops_fast_wait() {
        let mut spec = bode(1.0, 1.0, 0.0);
        spec.field = FieldSpec::piecewise_constant(vec![0.0, 1.0], vec![1.0, 1.0, 1.0], vec![0.0, 0.0]);
        spec.waits = vec![Wait { x: 0.0, lambda: 1.0 }, Wait { x: 1.0, lambda: 1e6 }];
        let opts = SimplifyOptions { eps: 0.1, box_n: 5.0, wait_budget: Some(1e-3) };
        let s = simplify_spec(&spec, &opts).unwrap();
        assert_eq!(s.waits, vec![Wait { x: 0.0, lambda: 1.0 }]);
    }

    fn sqrt_then_down() -> SemigroupSpec {
        let mut spec = sqrt_start();
        spec.field.pieces[2] = Piece { eval: PieceEval::Const { value: -1.0 }, limits: [Some(-1.0), None] };
        spec.field.at_values[1] = 0.0;
        spec
    }

    #[test]
    fn general_spec_is_shrunk_and_idempotent() {
        let spec = sqrt_then_down();
        assert!(validate(&spec).is_valid(), "{:?}", validate(&spec));
        let opts = SimplifyOptions::new(0.2, 3.0);
        let once = simplify_spec(&spec, &opts).unwrap();
        assert!(validate(&once).is_valid(), "{:?}", validate(&once));
        // [0, 1) stops moving at 0.9, (1, 3) at 1.1.
        assert_eq!(once.field.eval(0.95), 0.0);
        assert!(once.field.eval(0.85) > 0.0);
        assert_eq!(once.field.eval(1.05), 0.0);
        assert_eq!(once.field.eval(1.15), -1.0);
        let twice = simplify_spec(&once, &opts).unwrap();
        assert_eq!(twice, once);
    }

    #[test]
    fn box_edge_already_buffers_the_exit() {
        let opts = SimplifyOptions::new(0.2, 3.0);
        let once = simplify_spec(&cantor_gap(), &opts).unwrap();
        assert_eq!(once.field.eval(2.95), 1.0);
        assert_eq!(simplify_spec(&once, &opts).unwrap(), once);
    }

    #[test]
    fn rejects_bad_eps() {
        assert!(simplify_spec(&two_speed(), &SimplifyOptions::new(0.0, 3.0)).is_err());
    }
}
