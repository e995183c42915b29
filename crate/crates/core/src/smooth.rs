//! Smooth approximation of a deterministic semigroup.
//!
//! Every interval of monotone motion at least `eps` long is cut into segments
//! shorter than `eps` whose crossing times (travel integral plus waiting
//! mass) are below `eps`. The field is replaced by the piecewise-constant
//! speed "segment length / crossing time", and that step field is smoothed
//! with narrow C^∞ transitions whose levels are rescaled so that each segment
//! is still crossed in exactly its original time. The flow of the smooth
//! field then converges to the semigroup, pointwise in the starting point.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::flow::{classify, Direction, Flow, MonoInterval, Motion};
use crate::quad;
use crate::scenario::{graph_distance, truncate_to_box, Mode, SemigroupSpec};

/// Box half-width used when the scenario does not set one.
pub const DEFAULT_BOX: f64 = 5.0;

/// Nodes inserted in one interval, listed in the direction of motion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalNodes {
    pub interval: MonoInterval,
    pub direction: Direction,
    /// The entry end belongs to the interval, so the first node is that end.
    pub half_open: bool,
    pub nodes: Vec<f64>,
    /// `taus[k]` is the crossing time from `nodes[k]` to `nodes[k + 1]`.
    pub taus: Vec<f64>,
}

impl IntervalNodes {
    /// Speed on segment `k`, signed.
    pub fn speed(&self, k: usize) -> f64 {
        (self.nodes[k + 1] - self.nodes[k]) / self.taus[k]
    }
}

/// A plateau of the step field. `[seg_lo, seg_hi]` is the segment whose
/// crossing time is `tau`; the plateau can extend beyond it at an entry end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Level {
    pub lo: f64,
    pub hi: f64,
    pub value: f64,
    pub seg_lo: f64,
    pub seg_hi: f64,
    pub tau: f64,
}

/// Piecewise-constant field `g_eps`: zero outside the levels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepField {
    pub eps: f64,
    pub intervals: Vec<IntervalNodes>,
    /// Sorted, pairwise disjoint.
    pub levels: Vec<Level>,
}

impl StepField {
    pub fn eval(&self, x: f64) -> f64 {
        let j = self.levels.partition_point(|l| l.lo <= x);
        match j.checked_sub(1).map(|j| &self.levels[j]) {
            Some(l) if x < l.hi => l.value,
            _ => 0.0,
        }
    }
}

/// A transition between two neighbouring plateaus, centred at `x`, of
/// half-width `w`. `left`/`right` index levels, `None` meaning zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Seam {
    pub x: f64,
    pub w: f64,
    pub left: Option<usize>,
    pub right: Option<usize>,
}

/// The smooth field `f_eps`: calibrated plateaus joined by C^∞ seams.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothField {
    pub eps: f64,
    pub levels: Vec<Level>,
    pub seams: Vec<Seam>,
    /// Calibration sweeps used.
    pub sweeps: usize,
}

/// C^∞ step from 0 on `s <= -1` to 1 on `s >= 1`.
pub fn smooth_step(s: f64) -> f64 {
    let psi = |u: f64| if u > 0.0 { (-1.0 / u).exp() } else { 0.0 };
    let (a, b) = (psi(1.0 + s), psi(1.0 - s));
    a / (a + b)
}

impl SmoothField {
    fn level_value(&self, i: Option<usize>) -> f64 {
        i.map_or(0.0, |i| self.levels[i].value)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.seams.partition_point(|s| s.x + s.w <= x);
        if let Some(s) = self.seams.get(k) {
            if x > s.x - s.w {
                let (l, r) = (self.level_value(s.left), self.level_value(s.right));
                return l + (r - l) * smooth_step((x - s.x) / s.w);
            }
        }
        let j = self.levels.partition_point(|l| l.lo <= x);
        match j.checked_sub(1).map(|j| &self.levels[j]) {
            Some(l) if x < l.hi => l.value,
            _ => 0.0,
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.levels.iter().fold(0.0, |m, l| m.max(l.value.abs()))
    }

    /// `∫_a^b dy / |f_eps(y)|` for `a <= b`; infinite across a zero plateau.
    pub fn crossing_time(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut cuts = vec![a, b];
        let first = self.seams.partition_point(|s| s.x + s.w <= a);
        for s in &self.seams[first..] {
            if s.x - s.w >= b {
                break;
            }
            cuts.extend([s.x - s.w, s.x, s.x + s.w]);
        }
        let first = self.levels.partition_point(|l| l.hi <= a);
        for l in &self.levels[first..] {
            if l.lo >= b {
                break;
            }
            cuts.extend([l.lo, l.hi]);
        }
        cuts.retain(|&c| c >= a && c <= b);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let (l, r) = (w[0], w[1]);
            if r <= l {
                continue;
            }
            let m = 0.5 * (l + r);
            let k = self.seams.partition_point(|s| s.x + s.w <= m);
            let in_seam = self.seams.get(k).is_some_and(|s| m > s.x - s.w);
            if in_seam {
                let g = |y: f64| 1.0 / self.eval(y).abs();
                total += quad::integrate(g, l, r, 1e-15, 1e-14, 400).value;
            } else {
                let v = self.eval(m).abs();
                if v == 0.0 {
                    return f64::INFINITY;
                }
                total += (r - l) / v;
            }
        }
        total
    }

    /// Far end of the run started at `x0`: the centre of the first seam in
    /// the direction of motion that leads to zero, and the time to get there.
    pub fn run_end(&self, x0: f64) -> (f64, f64) {
        let v = self.eval(x0);
        if v == 0.0 {
            return (x0, 0.0);
        }
        if v > 0.0 {
            let k = self.seams.partition_point(|s| s.x <= x0);
            for s in &self.seams[k..] {
                if s.right.is_none() {
                    return (s.x, self.crossing_time(x0, s.x));
                }
            }
        } else {
            let k = self.seams.partition_point(|s| s.x < x0);
            for s in self.seams[..k].iter().rev() {
                if s.left.is_none() {
                    return (s.x, self.crossing_time(s.x, x0));
                }
            }
        }
        (x0, 0.0)
    }

    /// Longest time step from `x` (moving at speed `v`) that stays on the
    /// current plateau, or a fraction of the crossing time inside a seam.
    fn step_cap(&self, x: f64, v: f64) -> f64 {
        if v > 0.0 {
            let k = self.seams.partition_point(|s| s.x + s.w <= x);
            match self.seams.get(k) {
                Some(s) => (s.x - s.w - x).max(0.5 * s.w) / v,
                None => f64::INFINITY,
            }
        } else {
            let k = self.seams.partition_point(|s| s.x - s.w < x);
            match k.checked_sub(1).map(|k| &self.seams[k]) {
                Some(s) => (x - s.x - s.w).max(0.5 * s.w) / -v,
                None => f64::INFINITY,
            }
        }
    }
}

/// Branch points leave along one side only: the other interval loses the
/// branch point as an endpoint.
fn selected_families(spec: &SemigroupSpec) -> Vec<(MonoInterval, Direction)> {
    let ivs = classify(spec);
    let mut up = ivs.increase.clone();
    let mut down = ivs.decrease.clone();
    for u in up.iter_mut().filter(|u| u.lo_closed) {
        if let Some(d) = down.iter_mut().find(|d| d.hi_closed && d.hi == u.lo) {
            let phi = spec.branch_at(u.lo).and_then(|b| b.phi).unwrap_or(1);
            if phi > 0 {
                d.hi_closed = false;
            } else {
                u.lo_closed = false;
            }
        }
    }
    up.into_iter()
        .map(|i| (i, Direction::Up))
        .chain(down.into_iter().map(|i| (i, Direction::Down)))
        .collect()
}

/// Intervals of length at least `eps`, with the branch rule applied.
pub fn selected_intervals(spec: &SemigroupSpec, eps: f64) -> Vec<(MonoInterval, Direction)> {
    selected_families(spec).into_iter().filter(|(i, _)| i.length() >= eps).collect()
}

/// Insert nodes in `iv`: margins of `eps/2` at the ends that do not belong
/// to the interval, greedy steps whose length and crossing time are both at
/// most `eps/2`.
pub fn build_nodes(spec: &SemigroupSpec, eps: f64, iv: MonoInterval, dir: Direction) -> Result<IntervalNodes> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(invalid(format!("eps must be positive, got {eps}")));
    }
    if !(iv.lo.is_finite() && iv.hi.is_finite()) {
        return Err(invalid("node insertion needs a bounded interval; truncate to a box first"));
    }
    if iv.length() < eps {
        return Err(invalid(format!("interval [{}, {}] is shorter than eps = {eps}", iv.lo, iv.hi)));
    }
    let flow = Flow::new(spec);
    // Work in the coordinate u = sign * x, where motion is increasing.
    let sgn = dir.sign();
    let (entry, exit, half_open) = match dir {
        Direction::Up => (iv.lo, iv.hi, iv.lo_closed),
        Direction::Down => (-iv.hi, -iv.lo, iv.hi_closed),
    };
    let tau = |p: f64, q: f64| match dir {
        Direction::Up => flow.travel_time_unchecked(p, q, dir),
        Direction::Down => flow.travel_time_unchecked(-q, -p, dir),
    };
    let half = 0.5 * eps;
    let start = if half_open { entry } else { entry + half };
    let end = exit - half;
    let mut us = vec![start];
    let mut taus = Vec::new();
    let mut u = start;
    while u < end {
        let reach = half.min(end - u);
        let step = if tau(u, u + reach) <= half {
            reach
        } else {
            quad::last_true(|s| tau(u, u + s) <= half, 0.0, reach, 1e-12 * eps)
        };
        if !(step > 0.0) {
            return Err(Error::Numerical(format!("node insertion stalled at {}", sgn * u)));
        }
        let mut next = u + step;
        if end - next < 1e-9 * eps {
            next = end;
        }
        taus.push(tau(u, next));
        us.push(next);
        u = next;
    }
    Ok(IntervalNodes { interval: iv, direction: dir, half_open, nodes: us.iter().map(|&u| sgn * u).collect(), taus })
}

/// The step field `g_eps` of a spec whose intervals are all bounded.
///
/// Half-open intervals carry their first speed on an extension of `eps/3`
/// beyond the entry end, clipped at the box and at the preceding domain.
pub fn build_geps(spec: &SemigroupSpec, eps: f64) -> Result<StepField> {
    if spec.mode() != Mode::Deterministic {
        return Err(Error::WrongMode { expected: "deterministic" });
    }
    let mut intervals = Vec::new();
    for (iv, dir) in selected_intervals(spec, eps) {
        intervals.push(build_nodes(spec, eps, iv, dir)?);
    }
    let mut levels = Vec::new();
    for n in &intervals {
        let sgn = n.direction.sign();
        for k in 0..n.taus.len() {
            let (p, q) = (n.nodes[k], n.nodes[k + 1]);
            let (seg_lo, seg_hi) = (p.min(q), p.max(q));
            let (mut lo, mut hi) = (seg_lo, seg_hi);
            if k == 0 && n.half_open {
                if sgn > 0.0 {
                    lo -= eps / 3.0;
                } else {
                    hi += eps / 3.0;
                }
            }
            levels.push(Level { lo, hi, value: n.speed(k), seg_lo, seg_hi, tau: n.taus[k] });
        }
    }
    levels.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let n_box = spec.box_half_width.unwrap_or(f64::INFINITY);
    for j in 0..levels.len() {
        let floor = if j > 0 { levels[j - 1].hi } else { -n_box };
        let ceil = levels.get(j + 1).map_or(n_box, |l| l.lo);
        levels[j].lo = levels[j].lo.max(floor);
        levels[j].hi = levels[j].hi.min(ceil);
    }
    Ok(StepField { eps, intervals, levels })
}

/// Replace the jumps of `g` by smooth seams of half-width at most `eps/20`
/// (and at most a quarter of the neighbouring plateaus), then rescale each
/// level until every segment is crossed in its original time to 1e-12.
/// Seams between two levels are centred on the node; seams to or from zero
/// are pushed off the level, onto the zero side.
pub fn mollify(g: &StepField) -> Result<SmoothField> {
    let eps = g.eps;
    let levels = g.levels.clone();
    let cap = eps / 20.0;
    // Plateau ends, including the zero gaps between levels.
    let mut seams: Vec<Seam> = Vec::new();
    for (j, l) in levels.iter().enumerate() {
        let attached = seams.last().is_some_and(|s| s.x == l.lo);
        if attached {
            seams.last_mut().unwrap().right = Some(j);
        } else {
            seams.push(Seam { x: l.lo, w: 0.0, left: None, right: Some(j) });
        }
        seams.push(Seam { x: l.hi, w: 0.0, left: Some(j), right: None });
    }
    for k in 0..seams.len() {
        let before = if k > 0 { seams[k].x - seams[k - 1].x } else { f64::INFINITY };
        let after = seams.get(k + 1).map_or(f64::INFINITY, |s| s.x - seams[k].x);
        seams[k].w = cap.min(0.25 * before).min(0.25 * after);
        // Calibration moves a level by about w * contrast / length; keep
        // that below eps / 4 per seam.
        if let (Some(i), Some(j)) = (seams[k].left, seams[k].right) {
            let (a, b) = (&levels[i], &levels[j]);
            let (vi, vj) = (a.value.abs(), b.value.abs());
            let contrast = (vi - vj).abs() * vi.max(vj) / vi.min(vj);
            let len = (a.seg_hi - a.seg_lo).min(b.seg_hi - b.seg_lo);
            if contrast > 0.0 {
                seams[k].w = seams[k].w.min(0.25 * eps * len / contrast);
            }
        }
    }
    // Transitions to and from zero sit wholly on the zero side, so the
    // segments next to them are crossed at their plateau speed.
    for s in &mut seams {
        match (s.left, s.right) {
            (None, Some(_)) => s.x -= s.w,
            (Some(_), None) => s.x += s.w,
            _ => {}
        }
    }
    let mut f = SmoothField { eps, levels, seams, sweeps: 0 };
    for sweep in 1..=200 {
        let mut worst: f64 = 0.0;
        for j in 0..f.levels.len() {
            let l = f.levels[j];
            let t = f.crossing_time(l.seg_lo, l.seg_hi);
            let r = t / l.tau;
            worst = worst.max((r - 1.0).abs());
            f.levels[j].value *= r;
        }
        f.sweeps = sweep;
        if worst < 1e-12 {
            return Ok(f);
        }
    }
    Err(Error::Numerical("calibration of the smooth field did not converge".into()))
}

/// Box truncation, step field and smooth field for one `eps`.
#[derive(Debug, Clone)]
pub struct ApproxField {
    pub eps: f64,
    pub box_n: f64,
    pub boxed: SemigroupSpec,
    pub g: StepField,
    pub f: SmoothField,
}

pub fn approximate(spec: &SemigroupSpec, eps: f64) -> Result<ApproxField> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(invalid(format!("eps must be positive, got {eps}")));
    }
    let box_n = spec.box_half_width.unwrap_or(DEFAULT_BOX);
    let mut boxed = truncate_to_box(spec, box_n)?;
    boxed.box_half_width = Some(box_n);
    let g = build_geps(&boxed, eps)?;
    let f = mollify(&g)?;
    Ok(ApproxField { eps, box_n, boxed, g, f })
}

const DP_A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_E: [f64; 7] =
    [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];

/// Dormand-Prince 5(4) for the autonomous scalar ODE `x' = f(x)`, reporting
/// `x` at each of the ascending `times`. `h_cap(x, f(x))` bounds each step.
pub fn rk45<F, C>(f: F, h_cap: C, x0: f64, times: &[f64], tol: f64) -> Vec<f64>
where
    F: Fn(f64) -> f64,
    C: Fn(f64, f64) -> f64,
{
    let mut out = Vec::with_capacity(times.len());
    let mut x = x0;
    let mut t = 0.0;
    let mut k1 = f(x);
    let mut h: f64 = 1e-3;
    for &target in times {
        while t < target {
            if k1 == 0.0 {
                // Rest point of an autonomous field.
                t = target;
                break;
            }
            let step = h.min(h_cap(x, k1));
            let last = target - t <= step;
            let step = if last { target - t } else { step };
            let mut k = [k1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
            for s in 0..6 {
                let mut y = x;
                for (j, kj) in k.iter().enumerate().take(s + 1) {
                    y += step * DP_A[s][j] * kj;
                }
                k[s + 1] = f(y);
            }
            let mut x_new = x;
            for j in 0..6 {
                x_new += step * DP_A[5][j] * k[j];
            }
            let err_est = (step * DP_E.iter().zip(&k).map(|(e, k)| e * k).sum::<f64>()).abs();
            let ratio = err_est / (tol * (1.0 + x.abs()));
            let grow = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
            if ratio <= 1.0 {
                x = x_new;
                t = if last { target } else { t + step };
                k1 = k[6];
                h = h.max(step * grow);
            } else {
                h = step * grow;
            }
        }
        out.push(x);
    }
    out
}

/// Positions of the smooth flow from `x0` at the ascending `times`.
pub fn smooth_trajectory(f: &SmoothField, x0: f64, times: &[f64]) -> Vec<f64> {
    rk45(|x| f.eval(x), |x, v| f.step_cap(x, v), x0, times, 1e-12)
}

/// `S^eps_t x0`.
pub fn smooth_flow(f: &SmoothField, x0: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(invalid(format!("smooth flow needs t >= 0, got {t}")));
    }
    Ok(smooth_trajectory(f, x0, &[t])[0])
}

/// Which convergence estimate applies to a starting point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StartCase {
    /// Inside an interval of increase whose entry end is excluded.
    OpenIncrease,
    /// Inside an interval of increase that contains its entry end.
    HalfOpenIncrease,
    Decrease,
    /// Stationary, or in an interval shorter than `eps`.
    Stationary,
    /// `eps` is still too large for the estimate at this point.
    PreAsymptotic,
}

impl StartCase {
    pub fn label(self) -> &'static str {
        match self {
            StartCase::OpenIncrease => "open_increase",
            StartCase::HalfOpenIncrease => "half_open_increase",
            StartCase::Decrease => "decrease",
            StartCase::Stationary => "stationary",
            StartCase::PreAsymptotic => "pre_asymptotic",
        }
    }
}

fn start_case(boxed: &SemigroupSpec, x0: f64, eps: f64) -> StartCase {
    let fams = selected_families(boxed);
    let moving = fams.iter().find(|(i, _)| i.contains(x0) && !boxed.is_stop(x0));
    match moving {
        Some(&(iv, dir)) if iv.length() >= eps => {
            let (to_entry, to_exit, half_open) = match dir {
                Direction::Up => (x0 - iv.lo, iv.hi - x0, iv.lo_closed),
                Direction::Down => (iv.hi - x0, x0 - iv.lo, iv.hi_closed),
            };
            let ok = eps < to_exit && eps < 3.0 / 7.0 && (half_open || eps < to_entry);
            match (ok, dir, half_open) {
                (false, _, _) => StartCase::PreAsymptotic,
                (true, Direction::Down, _) => StartCase::Decrease,
                (true, Direction::Up, true) => StartCase::HalfOpenIncrease,
                (true, Direction::Up, false) => StartCase::OpenIncrease,
            }
        }
        _ => {
            // Points just outside a selected entry end are swept in by f_eps.
            let near_entry = fams.iter().any(|&(iv, dir)| {
                iv.length() >= eps
                    && match dir {
                        Direction::Up => x0 >= iv.lo - 0.5 * eps && x0 < iv.lo,
                        Direction::Down => x0 > iv.hi && x0 <= iv.hi + 0.5 * eps,
                    }
            });
            if near_entry {
                StartCase::PreAsymptotic
            } else {
                StartCase::Stationary
            }
        }
    }
}

/// One row of a convergence report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub x0: f64,
    pub case: StartCase,
    /// Largest deviation on the time grid.
    pub sup_error: f64,
    /// Certified bound on the deviation between grid points, using that both
    /// trajectories are monotone.
    pub sup_upper: f64,
    pub bound: f64,
    pub pass: bool,
    pub t_cap: f64,
    pub grid_points: usize,
}

/// Largest deviation on the grid and the certified bound between grid
/// points for two trajectories that are monotone in time.
pub fn monotone_sup(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut lower: f64 = 0.0;
    let mut upper: f64 = 0.0;
    for i in 0..a.len() {
        lower = lower.max((a[i] - b[i]).abs());
        upper = upper.max((a[i] - b[i]).abs());
        if i + 1 < a.len() {
            upper = upper.max((a[i + 1] - b[i]).abs()).max((a[i] - b[i + 1]).abs());
        }
    }
    (lower, upper)
}

/// `sup_t |S^eps_t x0 - S_t x0|` for each `eps`, against the flow of the
/// box-truncated spec.
///
/// The window is `[0, T]` with `T` one time unit past the later of the two
/// arrival times at the far end of the run, after which neither trajectory
/// moves by more than a seam width. The grid step is `eps / (20 (M + 1))`,
/// so the certified bound exceeds the grid maximum by at most `eps / 10`.
/// The bound is `(M + 2) eps` for moving starts (and for pre-asymptotic
/// ones, where no estimate is claimed) and `eps` for stationary starts.
pub fn convergence_report(spec: &SemigroupSpec, x0: f64, eps_list: &[f64]) -> Result<Vec<ConvergenceRow>> {
    if spec.mode() != Mode::Deterministic {
        return Err(Error::WrongMode { expected: "deterministic" });
    }
    if eps_list.is_empty() {
        return Err(invalid("empty eps list"));
    }
    let m = spec.field.bound_m;
    let approx: Vec<ApproxField> = eps_list.par_iter().map(|&e| approximate(spec, e)).collect::<Result<_>>()?;
    let boxed = &approx[0].boxed;
    let flow = Flow::new(boxed);
    let true_end = match flow.motion(x0) {
        Motion::Stationary => 0.0,
        _ => {
            let t = flow.exit_time(x0, None);
            if t.is_finite() {
                t
            } else {
                // Exit never reached: stop once within eps_min / 100 of it.
                let e = eps_list.iter().copied().fold(f64::INFINITY, f64::min) / 100.0;
                match flow.motion(x0) {
                    Motion::Up(iv) => flow.travel_time_unchecked(x0, iv.hi - e, Direction::Up),
                    Motion::Down(iv) => flow.travel_time_unchecked(iv.lo + e, x0, Direction::Down),
                    Motion::Branch(u, d) => {
                        let phi = boxed.branch_at(x0).and_then(|b| b.phi).unwrap_or(1);
                        if phi > 0 {
                            flow.travel_time_unchecked(x0, u.hi - e, Direction::Up)
                        } else {
                            flow.travel_time_unchecked(d.lo + e, x0, Direction::Down)
                        }
                    }
                    Motion::Stationary => 0.0,
                }
            }
        }
    };
    approx
        .par_iter()
        .map(|a| {
            let eps = a.eps;
            let t_cap = true_end.max(a.f.run_end(x0).1) + 1.0;
            let dt = eps / (20.0 * (m + 1.0));
            let n = (t_cap / dt).ceil() as usize;
            let times: Vec<f64> = (0..=n).map(|i| t_cap * i as f64 / n as f64).collect();
            let exact: Vec<f64> = times.par_iter().map(|&t| flow.flow_with_choice(x0, t, None).position).collect();
            let smooth = smooth_trajectory(&a.f, x0, &times);
            let (sup_error, sup_upper) = monotone_sup(&smooth, &exact);
            let case = start_case(boxed, x0, eps);
            let bound = if case == StartCase::Stationary { eps } else { (m + 2.0) * eps };
            Ok(ConvergenceRow {
                eps,
                x0,
                case,
                sup_error,
                sup_upper,
                bound,
                pass: sup_upper <= bound,
                t_cap,
                grid_points: times.len(),
            })
        })
        .collect()
}

/// Graph distance between `f_eps` and the box-truncated field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraphRow {
    pub eps: f64,
    pub distance: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Graph distance of `f_eps` to `F` on `[-window_n, window_n]`, sampled at
/// step `eps / 40`, against the bound `4 eps / 3 + eps`.
pub fn graph_report(spec: &SemigroupSpec, eps_list: &[f64], window_n: f64) -> Result<Vec<GraphRow>> {
    eps_list
        .par_iter()
        .map(|&eps| {
            let a = approximate(spec, eps)?;
            let distance = graph_distance(|x| a.f.eval(x), &a.boxed.field, window_n, eps / 40.0)?;
            let bound = 4.0 * eps / 3.0 + eps;
            Ok(GraphRow { eps, distance, bound, pass: distance <= bound })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::library::*;
    use crate::scenario::{FieldSpec, SemigroupSpec};

    fn boxed(spec: &SemigroupSpec, n: f64) -> SemigroupSpec {
        let mut b = truncate_to_box(spec, n).unwrap();
        b.box_half_width = Some(n);
        b
    }

    #[test]
    fn smooth_step_shape() {
        assert_eq!(smooth_step(-1.0), 0.0);
        assert_eq!(smooth_step(1.0), 1.0);
        assert!((smooth_step(0.0) - 0.5).abs() < 1e-15);
        assert!((smooth_step(0.3) + smooth_step(-0.3) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unit_speed_nodes() {
        let spec = SemigroupSpec::new(FieldSpec::constant(1.0));
        let iv = MonoInterval { lo: 0.0, hi: 10.0, lo_closed: false, hi_closed: false };
        let n = build_nodes(&spec, 1.0, iv, Direction::Up).unwrap();
        assert!((n.nodes[0] - 0.5).abs() < 1e-12);
        assert!((n.nodes.last().unwrap() - 9.5).abs() < 1e-12);
        assert_eq!(n.nodes.len(), 19);
        for (k, t) in n.taus.iter().enumerate() {
            assert!((t - (n.nodes[k + 1] - n.nodes[k])).abs() < 1e-12);
            assert!(*t < 1.0);
        }
    }

    #[test]
    fn half_open_starts_at_entry() {
        let spec = boxed(&sqrt_start(), 5.0);
        let (iv, dir) = selected_intervals(&spec, 0.2)[0];
        assert!(iv.lo_closed && iv.lo == 0.0);
        let n = build_nodes(&spec, 0.2, iv, dir).unwrap();
        assert_eq!(n.nodes[0], 0.0);
        assert!(n.half_open);
    }

    #[test]
    fn node_postconditions_with_cantor_mass() {
        let spec = boxed(&cantor_gap(), 3.0);
        let eps = 0.1;
        let mut slowed = 0;
        for (iv, dir) in selected_intervals(&spec, eps) {
            let n = build_nodes(&spec, eps, iv, dir).unwrap();
            let first = n.nodes[0] - iv.lo;
            let last = iv.hi - n.nodes.last().unwrap();
            assert!(first > eps / 3.0 && first < eps);
            assert!(last > eps / 3.0 && last < eps);
            for k in 0..n.taus.len() {
                let (p, q) = (n.nodes[k], n.nodes[k + 1]);
                assert!(q - p > 0.0 && q - p < eps);
                assert!(n.taus[k] < eps);
                // Inside the Cantor interval the oracle is the self-similar
                // closed form; outside, plain quadrature.
                let travel = if q <= 0.0 || p >= 1.0 {
                    quad::integrate(|y| 1.0 / spec.field.eval(y), p, q, 1e-13, 1e-12, 200).value
                } else {
                    spec.field.inverse_integral(p, q, 1.0)
                };
                let oracle = travel + spec.measure.mass_unchecked(p, q);
                assert!((n.taus[k] - oracle).abs() < 1e-9, "segment {k}: {} vs {oracle}", n.taus[k]);
                if n.speed(k) < 0.9 * (q - p) / travel {
                    slowed += 1;
                }
            }
        }
        // Waiting mass lowers the effective speed inside the Cantor interval.
        assert!(slowed > 5);
    }

    #[test]
    fn cantor_travel_near_origin() {
        // Self-similar sum over the removed gaps, evaluated independently.
        let spec = cantor_gap();
        let v = spec.field.inverse_integral(0.0, 0.0012814998407471218, 1.0);
        assert!((v - 0.03632812499618533).abs() < 1e-9);
    }

    #[test]
    fn constant_speed_step_field() {
        let spec = boxed(&SemigroupSpec::new(FieldSpec::constant(2.0)), 5.0);
        let g = build_geps(&spec, 0.1).unwrap();
        assert!((g.eval(0.0) - 2.0).abs() < 1e-12);
        assert_eq!(g.eval(-4.97), 0.0);
        assert_eq!(g.eval(4.96), 0.0);
    }

    #[test]
    fn decreasing_mirrors() {
        let spec = boxed(&SemigroupSpec::new(FieldSpec::constant(-1.0)), 2.0);
        let g = build_geps(&spec, 0.2).unwrap();
        assert_eq!(g.intervals[0].direction, Direction::Down);
        assert!((g.intervals[0].nodes[0] - 1.9).abs() < 1e-12);
        assert!((g.eval(0.0) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn calibration_preserves_crossing_times() {
        let a = approximate(&two_speed(), 0.1).unwrap();
        for l in &a.f.levels {
            let t = a.f.crossing_time(l.seg_lo, l.seg_hi);
            assert!((t - l.tau).abs() < 1e-9 * l.tau.max(1.0));
        }
        // Away from seams the smooth field equals the step field.
        assert!((a.f.eval(-2.02) - 1.0).abs() < 1e-9 || (a.f.eval(-2.02) - a.g.eval(-2.02)).abs() < 0.02);
        // Outside the enlarged supports f_eps vanishes.
        assert_eq!(a.f.eval(-4.99), 0.0);
        assert_eq!(a.f.eval(4.99), 0.0);
    }

    #[test]
    fn seam_traversal_time() {
        let a = approximate(&two_speed(), 0.1).unwrap();
        let first = a.g.intervals[0].nodes[0];
        let last = *a.g.intervals[0].nodes.last().unwrap();
        let want: f64 = a.g.intervals[0].taus.iter().sum();
        let got = a.f.crossing_time(first, last);
        assert!((got - want).abs() < 1e-6);
        // RK45 against inversion of the crossing time.
        let t = 2.0;
        let x = smooth_flow(&a.f, -1.0, t).unwrap();
        let back = a.f.crossing_time(-1.0, x);
        assert!((back - t).abs() < 1e-8, "{back}");
    }

    #[test]
    fn unit_field_flow_is_translation() {
        let a = approximate(&SemigroupSpec::new(FieldSpec::constant(1.0)), 0.2).unwrap();
        let x = smooth_flow(&a.f, 0.0, 2.5).unwrap();
        assert!((x - 2.5).abs() < 1e-9);
    }

    #[test]
    fn zero_region_is_stationary() {
        let a = approximate(&sqrt_start(), 0.2).unwrap();
        assert_eq!(smooth_flow(&a.f, -1.0, 3.0).unwrap(), -1.0);
    }

    #[test]
    fn two_speed_rate() {
        let rows = convergence_report(&two_speed(), -1.0, &[0.2, 0.1]).unwrap();
        for r in &rows {
            assert_eq!(r.case, StartCase::OpenIncrease);
            assert!(r.pass, "{r:?}");
            assert!(r.sup_upper <= r.sup_error + r.eps / 10.0 + 1e-12);
        }
        let slope = rows[0].sup_error / rows[1].sup_error;
        assert!((1.0..=4.0).contains(&slope), "{slope}");
    }

    #[test]
    fn stop_point_stays() {
        let mut spec = two_speed();
        spec.stops.push(0.0);
        let rows = convergence_report(&spec, 0.0, &[0.1]).unwrap();
        assert_eq!(rows[0].case, StartCase::Stationary);
        assert_eq!(rows[0].sup_upper, 0.0);
    }

    #[test]
    fn graph_bound_two_speed() {
        for r in graph_report(&two_speed(), &[0.2, 0.1], 5.0).unwrap() {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn rejects_markov_and_bad_eps() {
        let mut spec = two_speed();
        spec.waits.push(crate::scenario::Wait { x: 1.0, lambda: 1.0 });
        assert!(matches!(convergence_report(&spec, 0.0, &[0.1]), Err(Error::WrongMode { .. })));
        assert!(approximate(&two_speed(), 0.0).is_err());
        let iv = MonoInterval { lo: 0.0, hi: 0.05, lo_closed: false, hi_closed: false };
        assert!(build_nodes(&two_speed(), 0.1, iv, Direction::Up).is_err());
    }
}
