//! Markov semigroups compatible with the ODE: paths follow the deterministic
//! flow, pause for independent exponential times at wait points, and pick a
//! direction at random at branch points.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::flow::{Direction, Flow, MonoInterval, Motion};
use crate::metrics::TransitionKernelCdf;
use crate::rng;
use crate::scenario::SemigroupSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmentKind {
    /// Rest at `x`: a random wait, or the permanent rest after reaching a
    /// stationary point.
    Wait { x: f64 },
    /// Deterministic motion from `from` to `to` along one interval.
    Move { from: f64, to: f64, up: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Segment {
    pub t0: f64,
    pub t1: f64,
    #[serde(flatten)]
    pub kind: SegmentKind,
}

/// A sampled path on `[0, horizon]`, stored as a segment list.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplePath {
    pub x0: f64,
    pub horizon: f64,
    pub segments: Vec<Segment>,
    /// Direction drawn at a starting branch point.
    pub branch: Option<i8>,
    /// `(wait point, realized duration)` in the order met.
    pub waits: Vec<(f64, f64)>,
}

impl SamplePath {
    pub fn end_position(&self) -> f64 {
        match self.segments.last().map(|s| s.kind) {
            Some(SegmentKind::Wait { x }) => x,
            Some(SegmentKind::Move { to, .. }) => to,
            None => self.x0,
        }
    }
}

/// Path sampler for one spec; the interval classification is computed once.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    flow: Flow<'a>,
}

impl<'a> Sampler<'a> {
    pub fn new(spec: &'a SemigroupSpec) -> Self {
        Sampler { flow: Flow::new(spec) }
    }

    pub fn flow(&self) -> &Flow<'a> {
        &self.flow
    }

    fn interval_for(&self, x: f64, up: bool) -> Option<MonoInterval> {
        let ivs = self.flow.intervals();
        if up {
            ivs.increase_at(x)
        } else {
            ivs.decrease_at(x)
        }
    }

    /// Wait points strictly ahead of `x` inside `iv`, nearest first.
    fn waits_ahead(&self, x: f64, iv: &MonoInterval, up: bool) -> Vec<(f64, f64)> {
        let mut w: Vec<(f64, f64)> = self
            .flow
            .spec()
            .waits
            .iter()
            .filter(|w| iv.contains(w.x) && if up { w.x > x } else { w.x < x })
            .map(|w| (w.x, w.lambda))
            .collect();
        w.sort_by(|a, b| if up { a.0.total_cmp(&b.0) } else { b.0.total_cmp(&a.0) });
        w
    }

    fn travel(&self, a: f64, b: f64, up: bool) -> f64 {
        let dir = if up { Direction::Up } else { Direction::Down };
        self.flow.travel_time_unchecked(a.min(b), a.max(b), dir)
    }

    /// Draw a path from `x0` up to time `horizon` with the random source `rng`.
    pub fn sample_with<R: Rng + ?Sized>(&self, x0: f64, horizon: f64, rng: &mut R) -> SamplePath {
        let spec = self.flow.spec();
        let mut path = SamplePath { x0, horizon, segments: Vec::new(), branch: None, waits: Vec::new() };
        let up = match self.flow.motion(x0) {
            Motion::Stationary => None,
            Motion::Up(_) => Some(true),
            Motion::Down(_) => Some(false),
            Motion::Branch(..) => {
                let b = spec.branch_at(x0);
                let p = b.map_or(1.0, |b| b.up_probability());
                let go_up = match b.and_then(|b| b.theta) {
                    Some(_) => rng.random::<f64>() < p,
                    None => p > 0.5,
                };
                path.branch = Some(if go_up { 1 } else { -1 });
                Some(go_up)
            }
        };
        let mut t = 0.0;
        let mut x = x0;
        let mut wait_here = spec.wait_at(x0).map(|w| w.lambda);
        loop {
            if let Some(lambda) = wait_here.take() {
                let y = Exp::new(lambda).expect("wait rates are positive").sample(rng);
                let t1 = (t + y).min(horizon);
                path.segments.push(Segment { t0: t, t1, kind: SegmentKind::Wait { x } });
                path.waits.push((x, y));
                t = t1;
                if t >= horizon {
                    break;
                }
            }
            let Some(go_up) = up else {
                path.segments.push(Segment { t0: t, t1: horizon, kind: SegmentKind::Wait { x } });
                break;
            };
            let Some(iv) = self.interval_for(x, go_up) else {
                path.segments.push(Segment { t0: t, t1: horizon, kind: SegmentKind::Wait { x } });
                break;
            };
            let next = self.waits_ahead(x, &iv, go_up).first().copied();
            let end = if go_up { iv.hi } else { iv.lo };
            let (target, cost) = match next {
                Some((y, _)) => (y, self.travel(x, y, go_up)),
                None if end.is_finite() => (end, self.travel(x, end, go_up)),
                None => (end, f64::INFINITY),
            };
            if t + cost >= horizon {
                let dir = if go_up { Direction::Up } else { Direction::Down };
                let to = self.flow.flow_along(x, horizon - t, iv, dir).position;
                path.segments.push(Segment { t0: t, t1: horizon, kind: SegmentKind::Move { from: x, to, up: go_up } });
                break;
            }
            path.segments.push(Segment { t0: t, t1: t + cost, kind: SegmentKind::Move { from: x, to: target, up: go_up } });
            t += cost;
            x = target;
            match next {
                Some((_, lambda)) => wait_here = Some(lambda),
                None => {
                    path.segments.push(Segment { t0: t, t1: horizon, kind: SegmentKind::Wait { x } });
                    break;
                }
            }
        }
        path
    }

    /// Position of `path` at time `t`.
    pub fn position(&self, path: &SamplePath, t: f64) -> f64 {
        let k = path.segments.partition_point(|s| s.t1 < t);
        let Some(seg) = path.segments.get(k) else {
            return path.end_position();
        };
        match seg.kind {
            SegmentKind::Wait { x } => x,
            SegmentKind::Move { from, to, up } => {
                if t >= seg.t1 {
                    return to;
                }
                let Some(iv) = self.interval_for(from, up) else { return from };
                let dir = if up { Direction::Up } else { Direction::Down };
                let p = self.flow.flow_along(from, t - seg.t0, iv, dir).position;
                if up {
                    p.min(to)
                } else {
                    p.max(to)
                }
            }
        }
    }

    /// Sample `index` of the run `seed`.
    pub fn sample(&self, x0: f64, horizon: f64, seed: u64, index: u64) -> SamplePath {
        self.sample_with(x0, horizon, &mut rng::stream(seed, index))
    }
}

/// One path of the Markov semigroup from `x0` on `[0, horizon]`.
///
/// Deterministic specs are accepted and give the deterministic trajectory.
pub fn sample_path(spec: &SemigroupSpec, x0: f64, horizon: f64, seed: u64) -> Result<SamplePath> {
    if !(horizon > 0.0) {
        return Err(invalid(format!("horizon must be positive, got {horizon}")));
    }
    Ok(Sampler::new(spec).sample(x0, horizon, seed, 0))
}

/// Positions at time `t` of `n` independent paths.
pub fn sample_positions(spec: &SemigroupSpec, x0: f64, t: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid("need at least one sample"));
    }
    if !(t >= 0.0) {
        return Err(invalid(format!("time must be nonnegative, got {t}")));
    }
    let sampler = Sampler::new(spec);
    if t == 0.0 {
        return Ok(vec![x0; n]);
    }
    Ok((0..n as u64).into_par_iter().map(|i| sampler.sample(x0, t, seed, i).end_position()).collect())
}

/// Empirical law of `X(t, x0, ·)` over `n` paths.
pub fn empirical_kernel(spec: &SemigroupSpec, x0: f64, t: f64, n: usize, seed: u64) -> Result<TransitionKernelCdf> {
    Ok(TransitionKernelCdf::from_samples(&sample_positions(spec, x0, t, n, seed)?))
}

/// Relative rate separation below which rates are treated as equal.
const RATE_MERGE: f64 = 1e-8;

/// `P(Y_1 + ... + Y_k <= s)` for independent `Y_i ~ Exp(rates[i])`.
///
/// Distinct rates use the partial-fraction formula, equal rates the Erlang
/// formula, and mixtures of (near-)equal and distinct rates the matrix
/// exponential of the phase generator.
pub fn hypoexponential_cdf(rates: &[f64], s: f64) -> f64 {
    if rates.is_empty() {
        return if s >= 0.0 { 1.0 } else { 0.0 };
    }
    if s <= 0.0 {
        return 0.0;
    }
    let near = |a: f64, b: f64| (a - b).abs() < RATE_MERGE * a.max(b);
    let k = rates.len();
    let all_equal = rates.iter().all(|&r| near(r, rates[0]));
    if all_equal {
        let lam = rates.iter().sum::<f64>() / k as f64;
        let x = lam * s;
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 1..k {
            term *= x / n as f64;
            sum += term;
        }
        return (1.0 - (-x).exp() * sum).clamp(0.0, 1.0);
    }
    let distinct = (0..k).all(|i| (0..k).all(|j| i == j || !near(rates[i], rates[j])));
    if distinct {
        let mut surv = 0.0;
        for i in 0..k {
            let mut c = 1.0;
            for j in 0..k {
                if j != i {
                    c *= rates[j] / (rates[j] - rates[i]);
                }
            }
            surv += c * (-rates[i] * s).exp();
        }
        return (1.0 - surv).clamp(0.0, 1.0);
    }
    (1.0 - phase_survival(rates, s)).clamp(0.0, 1.0)
}

/// Survival of the phase-type law with bidiagonal generator, by scaling and
/// squaring of a Taylor expansion.
fn phase_survival(rates: &[f64], s: f64) -> f64 {
    let k = rates.len();
    let norm = rates.iter().fold(0.0f64, |m, &r| m.max(2.0 * r)) * s;
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let h = s / 2f64.powi(squarings as i32);
    let mut q = vec![vec![0.0; k]; k];
    for i in 0..k {
        q[i][i] = -rates[i] * h;
        if i + 1 < k {
            q[i][i + 1] = rates[i] * h;
        }
    }
    let mul = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| {
        let mut c = vec![vec![0.0; k]; k];
        for i in 0..k {
            for l in i..k {
                if a[i][l] == 0.0 {
                    continue;
                }
                for j in l..k {
                    c[i][j] += a[i][l] * b[l][j];
                }
            }
        }
        c
    };
    let mut e = vec![vec![0.0; k]; k];
    let mut term = e.clone();
    for i in 0..k {
        e[i][i] = 1.0;
        term[i][i] = 1.0;
    }
    for n in 1..=24 {
        term = mul(&term, &q);
        for row in term.iter_mut() {
            for v in row.iter_mut() {
                *v /= n as f64;
            }
        }
        for i in 0..k {
            for j in 0..k {
                e[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        e = mul(&e, &e);
    }
    e[0].iter().sum()
}

/// `(position, mass)` pairs.
type Pairs = Vec<(f64, f64)>;

/// Direction-relative description of the motion used by the closed form.
struct Leg<'s, 'a> {
    sampler: &'s Sampler<'a>,
    x0: f64,
    up: bool,
    iv: MonoInterval,
}

impl Leg<'_, '_> {
    fn pos(&self, u: f64) -> f64 {
        if self.up {
            self.x0 + u
        } else {
            self.x0 - u
        }
    }

    fn cost(&self, u: f64) -> f64 {
        self.sampler.travel(self.x0, self.pos(u), self.up)
    }

    /// Progress reached after moving for time `s`.
    fn reach(&self, s: f64) -> f64 {
        let dir = if self.up { Direction::Up } else { Direction::Down };
        (self.sampler.flow.flow_along(self.x0, s, self.iv, dir).position - self.x0).abs()
    }

    /// Law of the progress `|X_t - x0|`: atoms and continuous table in the
    /// progress coordinate.
    fn progress_law(&self, t: f64, cells: usize) -> (Pairs, Pairs) {
        let spec = self.sampler.flow.spec();
        // Waits met in order, with their progress; the start first if it is one.
        let mut stops: Vec<(f64, f64)> = Vec::new();
        if let Some(w) = spec.wait_at(self.x0) {
            stops.push((0.0, w.lambda));
        }
        for (y, lambda) in self.sampler.waits_ahead(self.x0, &self.iv, self.up) {
            stops.push(((y - self.x0).abs(), lambda));
        }
        let end = if self.up { self.iv.hi } else { self.iv.lo };
        let u_end = (end - self.x0).abs();
        let reach_t = self.reach(t);
        // Survival of the progress past u with k >= 1 waits met: H_k(t - c(u)).
        let h = |k: usize, s: f64| -> f64 {
            let rates: Vec<f64> = stops[..k].iter().map(|w| w.1).collect();
            hypoexponential_cdf(&rates, s)
        };
        let mut atoms = Vec::new();
        let mut cont: Vec<(f64, f64)> = Vec::new();
        let mut acc = 0.0;
        let mut k = 0usize;
        let mut q = 0.0;
        // Survival just left of q.
        let mut surv_left = 1.0;
        loop {
            while k < stops.len() && stops[k].0 <= q {
                k += 1;
            }
            let s_at = if k == 0 { surv_left } else { h(k, t - self.cost(q)) };
            if surv_left - s_at > 0.0 {
                atoms.push((q, surv_left - s_at));
            }
            let next = if k < stops.len() { stops[k].0 } else { u_end };
            if k == 0 {
                if reach_t < next {
                    atoms.push((reach_t, s_at));
                    return (atoms, cont);
                }
                surv_left = s_at;
            } else {
                let top = next.min(reach_t);
                if top > q {
                    for j in 0..=cells {
                        let u = q + (top - q) * j as f64 / cells as f64;
                        cont.push((u, acc + s_at - h(k, t - self.cost(u))));
                    }
                }
                let s_top = h(k, t - self.cost(top));
                acc += s_at - s_top;
                surv_left = s_top;
                if surv_left == 0.0 {
                    return (atoms, cont);
                }
            }
            if k >= stops.len() {
                if u_end.is_finite() && surv_left > 0.0 {
                    atoms.push((u_end, surv_left));
                }
                return (atoms, cont);
            }
            q = next;
        }
    }
}

fn kernel_for_leg(leg: &Leg<'_, '_>, t: f64, cells: usize) -> TransitionKernelCdf {
    let (atoms_u, cont_u) = leg.progress_law(t, cells);
    let mut atoms: Vec<(f64, f64)> = atoms_u.iter().map(|&(u, m)| (leg.pos(u), m)).collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let continuous = if leg.up {
        cont_u.iter().map(|&(u, m)| (leg.pos(u), m)).collect()
    } else {
        let total = cont_u.last().map_or(0.0, |p| p.1);
        let mut c: Vec<(f64, f64)> = cont_u.iter().map(|&(u, m)| (leg.pos(u), total - m)).collect();
        c.reverse();
        c
    };
    TransitionKernelCdf { atoms, continuous }
}

/// Closed-form law of `X(t, x0, ·)` for piecewise-constant specs without
/// waiting mass: waits met along the way add hypoexponential delays, the
/// mass not yet past a wait point sits on it, and mass that reaches the end
/// of the interval stays there. The continuous part is tabulated with `4096`
/// cells per stretch between waits.
pub fn analytic_kernel(spec: &SemigroupSpec, x0: f64, t: f64) -> Result<TransitionKernelCdf> {
    if !spec.has_property_p() {
        return Err(Error::Unsupported("analytic kernels need a piecewise-constant field and no waiting measure".into()));
    }
    if !(t >= 0.0) {
        return Err(invalid(format!("time must be nonnegative, got {t}")));
    }
    let sampler = Sampler::new(spec);
    if t == 0.0 {
        return Ok(TransitionKernelCdf::unit_atom(x0));
    }
    let cells = 4096;
    let leg = |up: bool, iv: MonoInterval| Leg { sampler: &sampler, x0, up, iv };
    Ok(match sampler.flow.motion(x0) {
        Motion::Stationary => TransitionKernelCdf::unit_atom(x0),
        Motion::Up(iv) => kernel_for_leg(&leg(true, iv), t, cells),
        Motion::Down(iv) => kernel_for_leg(&leg(false, iv), t, cells),
        Motion::Branch(u, d) => {
            let p = spec.branch_at(x0).map_or(1.0, |b| b.up_probability());
            let ku = kernel_for_leg(&leg(true, u), t, cells);
            let kd = kernel_for_leg(&leg(false, d), t, cells);
            ku.mix(p, &kd)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Cdf;
    use crate::scenario::library::bode;
    use crate::scenario::{Branch, Wait};

    fn case3(lambda: f64, b: f64) -> SemigroupSpec {
        let mut s = bode(b, b, 0.0);
        s.waits.push(Wait { x: 0.0, lambda });
        s
    }

    #[test]
    fn hypoexponential_branches_agree() {
        // 1 - 2e^-s + e^-2s for rates 1, 2
        let s = 0.8;
        let v = hypoexponential_cdf(&[1.0, 2.0], s);
        assert!((v - (1.0 - 2.0 * (-s).exp() + (-2.0 * s).exp())).abs() < 1e-14);
        let erlang = hypoexponential_cdf(&[1.5, 1.5], s);
        let x = 1.5 * s;
        assert!((erlang - (1.0 - (-x).exp() * (1.0 + x))).abs() < 1e-14);
        let near = hypoexponential_cdf(&[1.5, 1.5 * (1.0 + 1e-7)], s);
        assert!((near - erlang).abs() < 1e-6);
        let mixed = hypoexponential_cdf(&[1.0, 2.0, 2.0], s);
        let via_phase = 1.0 - phase_survival(&[1.0, 2.0, 2.0], s);
        assert!((mixed - via_phase).abs() < 1e-15);
        let distinct_like = 1.0 - phase_survival(&[1.0, 2.0], s);
        assert!((distinct_like - v).abs() < 1e-13);
    }

    #[test]
    fn case3_path_waits_then_moves() {
        let spec = case3(1.0, 2.0);
        let p = sample_path(&spec, 0.0, 5.0, 11).unwrap();
        let (x, y) = p.waits[0];
        assert_eq!(x, 0.0);
        assert!(matches!(p.segments[0].kind, SegmentKind::Wait { x } if x == 0.0));
        if y < 5.0 {
            assert!((p.end_position() - 2.0 * (5.0 - y)).abs() < 1e-12);
        }
    }

    #[test]
    fn case3_analytic_value() {
        let k = analytic_kernel(&case3(1.0, 1.0), 0.0, 1.0).unwrap();
        assert!((k.eval(0.5) - (-0.5f64).exp()).abs() < 1e-7);
        assert!((k.eval(0.0) - (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(k.eval(-1e-9), 0.0);
        assert!((k.eval(1.0) - 1.0).abs() < 1e-12);
        assert!((k.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_waits_gives_unit_step() {
        let spec = bode(1.0, 2.0, 2.0);
        let k = analytic_kernel(&spec, -1.0, 1.5).unwrap();
        assert_eq!(k.atoms.len(), 1);
        assert!((k.atoms[0].0 - 1.0).abs() < 1e-12);
        let e = empirical_kernel(&spec, -1.0, 1.5, 10, 1).unwrap();
        assert_eq!(e.atoms.len(), 1);
    }

    #[test]
    fn branch_mixture() {
        let mut spec = bode(-1.0, 1.0, 0.0);
        spec.branches.push(Branch { x: 0.0, phi: None, theta: Some(0.7) });
        let k = analytic_kernel(&spec, 0.0, 1.0).unwrap();
        assert!((k.eval(0.0) - 0.3).abs() < 1e-12);
        let pos = sample_positions(&spec, 0.0, 1.0, 20_000, 5).unwrap();
        let up = pos.iter().filter(|&&x| x > 0.0).count() as f64 / 20_000.0;
        assert!((up - 0.7).abs() < 3.0 * (0.21f64 / 20_000.0).sqrt() + 1e-9, "{up}");
    }

    #[test]
    fn decreasing_wait_mirror() {
        let mut spec = bode(-1.0, -1.0, 0.0);
        spec.waits.push(Wait { x: 0.0, lambda: 2.0 });
        let k = analytic_kernel(&spec, 0.0, 1.0).unwrap();
        // P(X <= -x) = P(wait < 1 - x) for x in [0, 1]
        let x: f64 = 0.4;
        assert!((k.eval(-x) - (1.0 - (-2.0 * (1.0 - x)).exp())).abs() < 1e-7);
        assert!((k.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn position_follows_segments() {
        let spec = case3(1.0, 1.0);
        let sampler = Sampler::new(&spec);
        let p = sampler.sample(0.0, 3.0, 4, 2);
        let y = p.waits[0].1;
        assert_eq!(sampler.position(&p, 0.5 * y.min(3.0)), 0.0);
        if y < 2.0 {
            assert!((sampler.position(&p, y + 0.5) - 0.5).abs() < 1e-12);
        }
    }
}
