//! Forward equation `u_t + g(x) u_x = (σ²/2) u_xx` for the distribution
//! function of the diffusion, solved implicitly with upwinded advection on
//! a graded grid, plus the barrier functions of the wait case and their
//! comparison with the Poisson kernel.

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::diffusion::{eigen_profile, schedule_case3, upper_profile, Case3Schedule, EigenProfile, StepDrift};
use crate::error::{invalid, Error, Result};
use crate::metrics::{l1_cdf, Cdf, CdfCurve, Interp};
use crate::quad;

/// Largest tolerated mass at the first or last interior node.
pub const LEAKAGE_TOL: f64 = 1e-4;

/// Nodes between `lo` and `hi` with spacing `dx_fine` inside the `fine`
/// zones, growing by the factor `ratio` per cell away from them up to
/// `dx_max`. Every zone end and every `anchor` is a node.
pub fn graded_grid(lo: f64, hi: f64, fine: &[(f64, f64)], anchors: &[f64], dx_fine: f64, dx_max: f64, ratio: f64) -> Result<Vec<f64>> {
    if !(lo < hi) || !(dx_fine > 0.0) || !(dx_max >= dx_fine) || !(ratio > 1.0) {
        return Err(invalid("graded grid needs lo < hi, 0 < dx_fine <= dx_max and ratio > 1"));
    }
    let dist = |x: f64| {
        fine.iter()
            .map(|&(a, b)| if x < a { a - x } else if x > b { x - b } else { 0.0 })
            .fold(f64::INFINITY, f64::min)
    };
    let spacing = |x: f64| (dx_fine + (ratio - 1.0) * dist(x)).min(dx_max);
    let mut cuts: Vec<f64> = vec![lo, hi];
    for &(a, b) in fine {
        cuts.extend([a, b]);
    }
    cuts.extend(anchors.iter().copied());
    cuts.retain(|&x| x >= lo && x <= hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut xs = vec![lo];
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        // March with the local spacing, then stretch the marks to end at b.
        let mut marks = vec![a];
        let mut x = a;
        while x < b {
            x += spacing(x).min(spacing(x + 0.5 * spacing(x)));
            marks.push(x);
        }
        let cells = (marks.len() - 1).max(1);
        let span = marks[cells] - a;
        for m in marks.iter().take(cells).skip(1) {
            xs.push(a + (m - a) * (b - a) / span);
        }
        xs.push(b);
    }
    Ok(xs)
}

/// Insert the midpoint of every cell.
pub fn refine(xs: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * xs.len());
    for w in xs.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    out.extend(xs.last());
    out
}

/// Solution slices of the forward equation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdeSolution {
    pub xs: Vec<f64>,
    pub times: Vec<f64>,
    /// `slices[k][i] = u(times[k], xs[i])`.
    pub slices: Vec<Vec<f64>>,
    pub sigma: f64,
    /// Largest time step used.
    pub dt: f64,
    pub steps: usize,
    /// Mass that reached the nodes next to the pinned ends.
    pub leakage: f64,
    /// Every slice is nondecreasing in `x` and within `[0, 1]` up to 1e-12.
    pub monotone: bool,
}

impl PdeSolution {
    pub fn final_slice(&self) -> &[f64] {
        self.slices.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Linear interpolant of slice `k`.
    pub fn curve(&self, k: usize) -> CdfCurve {
        CdfCurve::new(self.xs.clone(), self.slices[k].clone(), Interp::Linear)
    }

    pub fn value(&self, k: usize, x: f64) -> f64 {
        self.curve(k).eval(x)
    }
}

/// Time-step schedule: steps start at `dt_min` and grow by `growth` per
/// step up to `dt_max`, shortened to land on every output time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stepping {
    pub dt_min: f64,
    pub dt_max: f64,
    pub growth: f64,
}

impl Default for Stepping {
    fn default() -> Self {
        Stepping { dt_min: 1e-8, dt_max: 1e-4, growth: 1.02 }
    }
}

impl Stepping {
    fn check(&self) -> Result<()> {
        if !(self.dt_min > 0.0 && self.dt_max >= self.dt_min && self.growth >= 1.0 && self.dt_max.is_finite()) {
            return Err(invalid("stepping needs 0 < dt_min <= dt_max and growth >= 1"));
        }
        Ok(())
    }
}

/// Solve `u_t + g u_x = (σ²/2) u_xx` from `initial` on the nodes `xs`,
/// recording the solution at each of `times` (sorted, nonnegative). The
/// end values stay pinned to their initial values.
pub fn solve_forward(drift: &StepDrift, sigma: f64, initial: &[f64], xs: &[f64], times: &[f64]) -> Result<PdeSolution> {
    solve_forward_with(drift, sigma, initial, xs, times, &Stepping::default())
}

/// [`solve_forward`] with an explicit step schedule.
///
/// Both terms are implicit (backward Euler) with upwinded advection, so
/// the update matrix is an M-matrix for every step size and ordering and
/// the bounds `[0, 1]` are kept without a step restriction. Where the cell
/// Péclet number is at most 2 the upwind diffusion `|g| h/2` is subtracted,
/// which makes the advection central there.
pub fn solve_forward_with(drift: &StepDrift, sigma: f64, initial: &[f64], xs: &[f64], times: &[f64], stepping: &Stepping) -> Result<PdeSolution> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    stepping.check()?;
    let n = xs.len();
    if n < 3 || initial.len() != n || xs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("grid needs at least 3 increasing nodes and one initial value per node"));
    }
    if times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("output times must be finite, nonnegative and sorted"));
    }
    let d = 0.5 * sigma * sigma;
    // Off-diagonal rates of the generator at each interior node.
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    for i in 1..n - 1 {
        let (hl, hr) = (xs[i] - xs[i - 1], xs[i + 1] - xs[i]);
        let g = node_drift(drift, xs[i]);
        let h_up = if g > 0.0 { hl } else { hr };
        let d_eff = (d - 0.5 * g.abs() * h_up).max(0.0);
        left[i] = 2.0 * d_eff / (hl * (hl + hr)) + g.max(0.0) / hl;
        right[i] = 2.0 * d_eff / (hr * (hl + hr)) + (-g).max(0.0) / hr;
    }
    let mut u = initial.to_vec();
    let mut slices = Vec::with_capacity(times.len());
    let mut t = 0.0;
    let mut dt = stepping.dt_min;
    let mut steps = 0usize;
    let mut dt_used: f64 = 0.0;
    let mut work = Tridiag::new(n);
    for &t_out in times {
        while t_out - t > 1e-14 * t_out.max(1.0) {
            let h = dt.min(t_out - t);
            work.implicit_step(&left, &right, h, &mut u);
            t += h;
            steps += 1;
            dt_used = dt_used.max(h);
            dt = (dt * stepping.growth).min(stepping.dt_max);
        }
        t = t_out;
        slices.push(u.clone());
    }
    let monotone = slices
        .iter()
        .all(|s| s.windows(2).all(|w| w[1] >= w[0] - 1e-12) && s.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
    let leakage = slices
        .iter()
        .map(|s| (s[1] - s[0]).abs().max((s[n - 1] - s[n - 2]).abs()))
        .fold(0.0, f64::max);
    Ok(PdeSolution { xs: xs.to_vec(), times: times.to_vec(), slices, sigma, dt: dt_used, steps, leakage, monotone })
}

/// Drift at a node; a node on a break takes the mean of the one-sided
/// values, which keeps the error there second order.
fn node_drift(drift: &StepDrift, x: f64) -> f64 {
    match drift.breaks.iter().position(|&c| c == x) {
        Some(k) => 0.5 * (drift.values[k] + drift.values[k + 1]),
        None => drift.eval(x),
    }
}

/// Scratch space for `(I - h L) u_new = u` with Dirichlet ends (Thomas).
struct Tridiag {
    c: Vec<f64>,
    y: Vec<f64>,
}

impl Tridiag {
    fn new(n: usize) -> Self {
        Tridiag { c: vec![0.0; n], y: vec![0.0; n] }
    }

    fn implicit_step(&mut self, left: &[f64], right: &[f64], h: f64, u: &mut [f64]) {
        let n = u.len();
        self.c[0] = 0.0;
        self.y[0] = u[0];
        for i in 1..n {
            let (lo, up, di) = if i == n - 1 { (0.0, 0.0, 1.0) } else { (-h * left[i], -h * right[i], 1.0 + h * (left[i] + right[i])) };
            let m = di - lo * self.c[i - 1];
            self.c[i] = up / m;
            self.y[i] = (u[i] - lo * self.y[i - 1]) / m;
        }
        u[n - 1] = self.y[n - 1];
        for i in (0..n - 1).rev() {
            u[i] = self.y[i] - self.c[i] * u[i + 1];
        }
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Distribution function of the diffusion started at `x0`, at time `t`,
/// from a Gaussian initial datum of width `w0`.
pub fn fundamental_kernel(drift: &StepDrift, sigma: f64, x0: f64, t: f64, xs: &[f64], w0: f64) -> Result<CdfCurve> {
    if !(t > 0.0) {
        return Err(invalid("kernel time must be positive"));
    }
    if !(w0 > 0.0) || w0 > 0.1 * sigma * t.sqrt() {
        return Err(invalid(format!("initial width {w0} must lie in (0, 0.1 sigma sqrt(t)]")));
    }
    let init: Vec<f64> = xs.iter().map(|&x| normal_cdf((x - x0) / w0)).collect();
    let sol = solve_forward(drift, sigma, &init, xs, &[t])?;
    if sol.leakage > LEAKAGE_TOL {
        return Err(Error::Numerical(format!("mass {} reached the domain ends; widen the grid", sol.leakage)));
    }
    Ok(sol.curve(0))
}

/// Poisson-wait kernel: rest at 0 for an exponential time of rate `lambda`,
/// then move right at speed `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoissonKernel {
    pub lambda: f64,
    pub b: f64,
    pub t: f64,
}

impl PoissonKernel {
    const KNOTS: usize = 4000;
}

impl Cdf for PoissonKernel {
    fn eval(&self, x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else if x < self.b * self.t {
            (-self.lambda * (self.t - x / self.b)).exp()
        } else {
            1.0
        }
    }

    fn eval_left(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            self.eval(x)
        }
    }

    fn knots(&self) -> Vec<f64> {
        let end = self.b * self.t;
        (0..=Self::KNOTS).map(|i| end * i as f64 / Self::KNOTS as f64).collect()
    }
}

/// Lower and upper barrier functions of the wait case for one `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Case3Barriers {
    pub a: f64,
    pub b: f64,
    pub schedule: Case3Schedule,
    pub lower_profile: EigenProfile,
    pub upper_profile: EigenProfile,
    pub kappa_lower: f64,
    /// Front speed of the lower barrier, above `b`.
    pub b_lower: f64,
    pub kappa_upper: f64,
    /// Decay rate of the upper barrier, the eigenvalue of its profile.
    pub lambda_upper: f64,
    /// Front speed of the upper barrier, below `b`.
    pub b_upper: f64,
    /// Tangency point of the exponential tail and the upper profile.
    pub xi: f64,
    pub x_n: f64,
}

pub fn lower_upper_profiles(lambda: f64, a: f64, b: f64, s: f64) -> Result<Case3Barriers> {
    if !(a > 0.0 && b > 0.0) {
        return Err(invalid(format!("wait case needs a, b > 0, got a={a}, b={b}")));
    }
    let sch = schedule_case3(lambda, s)?;
    let (eps, sig2) = (sch.eps, sch.sigma * sch.sigma);
    let lower = eigen_profile(s, lambda)?;
    let upper = upper_profile(s, lambda, sch.delta)?;
    let kappa_lower = s * s;
    let b_lower = b + 0.5 * sig2 * kappa_lower;
    let lam_up = upper.lambda_eff;
    let r0 = upper.dw(0.0) / upper.w(0.0);
    let kappa_upper = (2.0 * r0 / eps).max(2.0 * lam_up / a);
    if a * kappa_upper < lam_up + 0.5 * sig2 * kappa_upper * kappa_upper {
        return Err(Error::Numerical(format!(
            "exponential tail is not a supersolution: a kappa = {}, lambda + sigma^2 kappa^2/2 = {}",
            a * kappa_upper,
            lam_up + 0.5 * sig2 * kappa_upper * kappa_upper
        )));
    }
    let b_upper = b - sig2 * lam_up.max(1.0) / b;
    if !(b_upper > 0.5 * b) {
        return Err(Error::Numerical(format!("upper front speed {b_upper} too far below b = {b}")));
    }
    let d = sch.delta;
    let slope_gap = |y: f64| upper.dw(y) - kappa_upper * eps * upper.w(y);
    let y = quad::bisect(slope_gap, -d, 0.0, 1e-14).ok_or_else(|| {
        Error::Numerical(format!(
            "tangency bracket [-{d}, 0] fails: gap = {}, {} for kappa = {kappa_upper}",
            slope_gap(-d + 1e-12),
            slope_gap(0.0)
        ))
    })?;
    let xi = eps * y;
    let x_n = xi - upper.w(y).ln() / kappa_upper;
    Ok(Case3Barriers {
        a,
        b,
        schedule: sch,
        lower_profile: lower,
        upper_profile: upper,
        kappa_lower,
        b_lower,
        kappa_upper,
        lambda_upper: lam_up,
        b_upper,
        xi,
        x_n,
    })
}

impl Case3Barriers {
    pub fn lower(&self, t: f64, x: f64) -> f64 {
        let (eps, d, lam) = (self.schedule.eps, self.schedule.delta, self.schedule.lambda);
        let front = eps + self.b_lower * t;
        if x < 0.0 {
            0.0
        } else if x <= eps {
            (1.0 - d) * (-lam * t).exp() * self.lower_profile.w(x / eps)
        } else if x <= front {
            (1.0 - d) * (-lam * (t - (x - eps) / self.b_lower)).exp()
        } else {
            1.0 - d * (-self.kappa_lower * (x - front)).exp()
        }
    }

    pub fn upper(&self, t: f64, x: f64) -> f64 {
        let eps = self.schedule.eps;
        let lam = self.lambda_upper;
        let w1 = self.upper_profile.w(1.0);
        let front = eps + self.b_upper * t;
        if x < self.xi {
            (-lam * t).exp() * (self.kappa_upper * (x - self.x_n)).exp()
        } else if x <= eps {
            (-lam * t).exp() * self.upper_profile.w(x / eps)
        } else if x <= front {
            w1 * (-lam * (t - (x - eps) / self.b_upper)).exp()
        } else {
            w1
        }
    }

    pub fn drift(&self) -> StepDrift {
        let eta = self.schedule.eta;
        StepDrift { breaks: vec![0.0, self.schedule.eps], values: vec![self.a, -eta, self.b], at: vec![-eta, -eta] }
    }
}

/// One `s` of the wait-case comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Case3Row {
    pub s: f64,
    pub eps: f64,
    pub sigma: f64,
    pub eta: f64,
    pub nodes: usize,
    pub steps: usize,
    pub l1: f64,
    pub tol_grid: f64,
    /// Largest `u⁻ - u` and `u - u⁺` over grid nodes and output times.
    pub lower_gap: f64,
    pub upper_gap: f64,
    pub bracket_ok: bool,
    pub monotone: bool,
    pub leakage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Case3Report {
    pub lambda: f64,
    pub b: f64,
    pub t: f64,
    pub window: (f64, f64),
    pub rows: Vec<Case3Row>,
    pub decreasing: bool,
    pub final_l1: f64,
}

impl Case3Report {
    pub fn bracket_ok(&self) -> bool {
        self.rows.iter().all(|r| r.bracket_ok && r.monotone && r.leakage <= LEAKAGE_TOL)
    }

    pub fn pass(&self, final_bound: f64) -> bool {
        self.bracket_ok() && self.decreasing && self.final_l1 < final_bound
    }
}

/// Grid settings for the wait-case solves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Case3Grid {
    pub lo: f64,
    pub hi: f64,
    /// Coarse-grid cells per plateau; the reported solution uses twice as many.
    pub plateau_cells: usize,
    /// Width of the fine zone beyond each plateau end, in boundary-layer
    /// widths `σ²/(2|g|)`.
    pub layers: f64,
    /// Largest cell Péclet number `|g| h / (σ²/2)` of the coarse grid in
    /// the fine zone.
    pub peclet: f64,
    pub dx_max: f64,
    pub ratio: f64,
    /// Steps of the coarse solve; the fine solve halves `dt_min` and `dt_max`.
    pub stepping: Stepping,
    /// Output times between 0 and `t` (exclusive) at which the bracket is
    /// also checked.
    pub checkpoints: usize,
}

impl Default for Case3Grid {
    fn default() -> Self {
        Case3Grid {
            lo: -1.0,
            hi: 2.5,
            plateau_cells: 20,
            layers: 20.0,
            peclet: 0.5,
            dx_max: 2e-3,
            ratio: 1.1,
            stepping: Stepping::default(),
            checkpoints: 3,
        }
    }
}

/// Coarse grid for one schedule: the plateau and its two boundary layers
/// are resolved to the cell Péclet bound of `grid`.
pub fn case3_grid(bar: &Case3Barriers, grid: &Case3Grid, anchors: &[f64]) -> Result<Vec<f64>> {
    let eps = bar.schedule.eps;
    let d = 0.5 * bar.schedule.sigma * bar.schedule.sigma;
    let gmax = bar.a.max(bar.b).max(bar.schedule.eta);
    let dx = (eps / grid.plateau_cells as f64).min(grid.peclet * d / gmax).min(grid.dx_max);
    let zone = (-grid.layers * d / bar.a, eps + grid.layers * d / bar.b);
    graded_grid(grid.lo, grid.hi, &[zone], &[&[0.0, eps][..], anchors].concat(), dx, grid.dx_max, grid.ratio)
}

/// Run the forward solve for one `s` on a grid and its midpoint
/// refinement, and compare the fine solution with the barriers and the
/// Poisson kernel.
pub fn case3_row(lambda: f64, a: f64, b: f64, s: f64, t: f64, window: (f64, f64), grid: &Case3Grid) -> Result<Case3Row> {
    let bar = lower_upper_profiles(lambda, a, b, s)?;
    let eps = bar.schedule.eps;
    let coarse = case3_grid(&bar, grid, &[window.0, window.1])?;
    let fine = refine(&coarse);
    let times: Vec<f64> = (1..=grid.checkpoints + 1).map(|k| t * k as f64 / (grid.checkpoints + 1) as f64).collect();
    let step = |xs: &[f64]| xs.iter().map(|&x| if x >= 0.0 { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let drift = bar.drift();
    let st = grid.stepping;
    let halved = Stepping { dt_min: 0.5 * st.dt_min, dt_max: 0.5 * st.dt_max, ..st };
    let sol_f = solve_forward_with(&drift, bar.schedule.sigma, &step(&fine), &fine, &times, &halved)?;
    let sol_c = solve_forward_with(&drift, bar.schedule.sigma, &step(&coarse), &coarse, &times, &st)?;
    // Coarse node i sits at fine node 2i.
    let mut diff: f64 = 0.0;
    for (sf, sc) in sol_f.slices.iter().zip(&sol_c.slices) {
        for (i, &uc) in sc.iter().enumerate() {
            diff = diff.max((sf[2 * i] - uc).abs());
        }
    }
    let tol_grid = 5.0 * diff;
    let (mut lower_gap, mut upper_gap) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let init = step(&fine);
    for (k, tk) in std::iter::once(0.0).chain(times.iter().copied()).enumerate() {
        let u = if k == 0 { &init } else { &sol_f.slices[k - 1] };
        for (i, &x) in fine.iter().enumerate() {
            lower_gap = lower_gap.max(bar.lower(tk, x) - u[i]);
            upper_gap = upper_gap.max(u[i] - bar.upper(tk, x));
        }
    }
    let kernel = PoissonKernel { lambda, b, t };
    let l1 = l1_cdf(&sol_f.curve(times.len() - 1), &kernel, window);
    Ok(Case3Row {
        s,
        eps,
        sigma: bar.schedule.sigma,
        eta: bar.schedule.eta,
        nodes: fine.len(),
        steps: sol_f.steps,
        l1,
        tol_grid,
        lower_gap,
        upper_gap,
        bracket_ok: lower_gap <= tol_grid && upper_gap <= tol_grid,
        monotone: sol_f.monotone && sol_c.monotone,
        leakage: sol_f.leakage,
    })
}

/// Solve for every `s` in `s_list` (in parallel) and report bracketing and
/// the L¹ distance to the Poisson kernel at time `t` on `window`.
pub fn bracket_and_converge(lambda: f64, a: f64, b: f64, s_list: &[f64], t: f64, window: (f64, f64), grid: &Case3Grid) -> Result<Case3Report> {
    if s_list.is_empty() || !(t > 0.0) || !(window.1 > window.0) {
        return Err(invalid("need at least one s, t > 0 and a nonempty window"));
    }
    let rows = s_list
        .par_iter()
        .map(|&s| case3_row(lambda, a, b, s, t, window, grid))
        .collect::<Result<Vec<_>>>()?;
    let decreasing = rows.windows(2).all(|w| w[1].l1 < w[0].l1);
    let final_l1 = rows.last().map(|r| r.l1).unwrap_or(f64::NAN);
    Ok(Case3Report { lambda, b, t, window, rows, decreasing, final_l1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{simulate_sde, Sde, SdeRun};
    use crate::metrics::kolmogorov;

    fn uniform(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
    }

    #[test]
    fn graded_grid_hits_anchors_and_grades() {
        let xs = graded_grid(-1.0, 2.0, &[(0.0, 0.01)], &[0.5], 1e-3, 0.05, 1.1).unwrap();
        for a in [-1.0, 0.0, 0.01, 0.5, 2.0] {
            assert!(xs.contains(&a), "{a}");
        }
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(h.iter().all(|&d| d > 0.0 && d <= 0.05 + 1e-12));
        assert!(h.windows(2).all(|p| p[1] / p[0] < 1.25 && p[0] / p[1] < 1.25));
        let r = refine(&xs);
        assert_eq!(r.len(), 2 * xs.len() - 1);
    }

    #[test]
    fn heat_step_stays_centered() {
        let xs = uniform(-2.0, 2.0, 800);
        let init: Vec<f64> = xs.iter().map(|&x| if x > 0.0 { 1.0 } else if x == 0.0 { 0.5 } else { 0.0 }).collect();
        let sol = solve_forward(&StepDrift::constant(0.0), 0.1, &init, &xs, &[0.5, 1.0]).unwrap();
        assert!((sol.value(1, 0.0) - 0.5).abs() < 1e-3);
        assert!(sol.monotone);
        // Odd symmetry about the origin.
        let u = sol.final_slice();
        assert!((u[300] + u[500] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_drift_translates_the_step() {
        let xs = uniform(-1.0, 3.0, 4000);
        let init: Vec<f64> = xs.iter().map(|&x| if x >= 0.0 { 1.0 } else { 0.0 }).collect();
        let sol = solve_forward(&StepDrift::constant(1.5), 0.02, &init, &xs, &[1.0]).unwrap();
        let u = sol.final_slice();
        let i = u.iter().position(|&v| v >= 0.5).unwrap();
        let x_half = xs[i - 1] + (0.5 - u[i - 1]) / (u[i] - u[i - 1]) * (xs[i] - xs[i - 1]);
        assert!((x_half - 1.5).abs() < 2e-3, "{x_half}");
    }

    #[test]
    fn ordered_data_stay_ordered() {
        let xs = graded_grid(-2.0, 2.0, &[(0.0, 0.1)], &[], 0.005, 0.05, 1.1).unwrap();
        let drift = StepDrift::new(vec![0.0, 0.1], vec![1.0, -0.5, 1.0], vec![-0.5, -0.5]).unwrap();
        let lo: Vec<f64> = xs.iter().map(|&x| if x >= 0.3 { 1.0 } else { 0.0 }).collect();
        let hi: Vec<f64> = xs.iter().map(|&x| if x >= -0.2 { 1.0 } else { 0.0 }).collect();
        let a = solve_forward(&drift, 0.2, &lo, &xs, &[0.3, 0.6]).unwrap();
        let b = solve_forward(&drift, 0.2, &hi, &xs, &[0.3, 0.6]).unwrap();
        for k in 0..2 {
            assert!(a.slices[k].iter().zip(&b.slices[k]).all(|(p, q)| p <= q));
        }
    }

    #[test]
    fn kernel_without_drift_is_gaussian() {
        let xs = uniform(-2.0, 2.0, 2000);
        let (sigma, t) = (0.3, 1.0);
        let k = fundamental_kernel(&StepDrift::constant(0.0), sigma, 0.2, t, &xs, 0.01).unwrap();
        let exact = CdfCurve::sample(|x| normal_cdf((x - 0.2) / (sigma * t.sqrt())), -2.0, 2.0, 4000);
        assert!(kolmogorov(&k, &exact) < 2e-3);
        let shifted = fundamental_kernel(&StepDrift::constant(0.5), sigma, 0.2, t, &xs, 0.01).unwrap();
        let exact = CdfCurve::sample(|x| normal_cdf((x - 0.7) / (sigma * t.sqrt())), -2.0, 2.0, 4000);
        assert!(kolmogorov(&shifted, &exact) < 5e-3);
        assert!(fundamental_kernel(&StepDrift::constant(0.0), sigma, 0.0, t, &xs, 0.1).is_err());
        assert!(fundamental_kernel(&StepDrift::constant(0.0), sigma, 0.0, t, &uniform(-0.3, 0.3, 100), 0.01).is_err());
    }

    #[test]
    fn stop_kernel_matches_simulation() {
        let sigma: f64 = 0.25;
        let r = sigma.sqrt();
        let drift = StepDrift::new(vec![-r, r], vec![1.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        let t = 0.5;
        let xs = graded_grid(-2.0, 2.5, &[(-r, r)], &[], 2e-3, 5e-3, 1.1).unwrap();
        let pde = fundamental_kernel(&drift, sigma, 0.0, t, &xs, 0.005).unwrap();
        let sde = Sde { drift, noise: sigma, mollify: 0.0 };
        let run = SdeRun { dt: 5e-4, horizon: t, barriers: (f64::NEG_INFINITY, f64::INFINITY), bridge: false, occupation: None };
        let pos: Vec<f64> = simulate_sde(&sde, 0.0, &run, 20_000, 5).unwrap().iter().map(|p| p.position).collect();
        let d = kolmogorov(&pde, &CdfCurve::empirical(&pos));
        assert!(d <= 0.02, "{d}");
    }

    #[test]
    fn poisson_kernel_values() {
        let u = PoissonKernel { lambda: 1.0, b: 1.0, t: 1.0 };
        assert!((u.eval(0.5) - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(u.eval_left(0.0), 0.0);
        assert_eq!(u.eval(1.0), 1.0);
        assert_eq!(u.eval(-0.1), 0.0);
    }

    #[test]
    fn barriers_order_the_initial_step() {
        for s in [2.0, 3.0, 4.0] {
            let bar = lower_upper_profiles(1.0, 1.0, 1.0, s).unwrap();
            let eps = bar.schedule.eps;
            for i in 0..=4000 {
                let x = -0.5 + 3.0 * i as f64 / 4000.0;
                let step = if x >= 0.0 { 1.0 } else { 0.0 };
                assert!(bar.lower(0.0, x) <= step + 1e-12 && step <= bar.upper(0.0, x) + 1e-12, "s={s} x={x}");
            }
            // Middle branch of the lower barrier.
            let t = 0.3_f64;
            let x = 0.4 * eps;
            let want = (1.0 - bar.schedule.delta) * (-t).exp() * bar.lower_profile.w(0.4);
            assert!((bar.lower(t, x) - want).abs() < 1e-15);
            assert!(bar.xi <= 0.0 && bar.xi >= -bar.schedule.delta * eps);
        }
    }

    #[test]
    fn barrier_seams_kink_the_right_way() {
        let bar = lower_upper_profiles(1.0, 1.0, 1.0, 3.0).unwrap();
        let eps = bar.schedule.eps;
        let t = 0.5;
        let h = 1e-7 * eps;
        let slope = |f: &dyn Fn(f64) -> f64, x: f64, side: f64| side * (f(x + side * h) - f(x)) / h;
        let lo = |x: f64| bar.lower(t, x);
        let up = |x: f64| bar.upper(t, x);
        let front = eps + bar.b_lower * t;
        assert!(slope(&lo, front, 1.0) > slope(&lo, front, -1.0));
        assert!(slope(&lo, eps, 1.0) > slope(&lo, eps, -1.0));
        assert!(slope(&up, eps, 1.0) < slope(&up, eps, -1.0));
        // Tangency: value and slope continuous at xi.
        let g = 1e-6 * eps;
        assert!((up(bar.xi - g) - up(bar.xi + g)).abs() < 1e-4 * up(bar.xi));
    }

    #[test]
    fn barriers_are_sub_and_super_solutions() {
        // u_t + g u_x - (σ²/2) u_xx has the right sign away from the seams.
        let bar = lower_upper_profiles(1.0, 1.0, 1.0, 3.0).unwrap();
        let (eps, sig) = (bar.schedule.eps, bar.schedule.sigma);
        let drift = bar.drift();
        let t = 0.4;
        let op = |f: &dyn Fn(f64, f64) -> f64, x: f64, scale: f64| {
            let (ht, hx) = (1e-6, 1e-4 * scale);
            let ut = (f(t + ht, x) - f(t - ht, x)) / (2.0 * ht);
            let ux = (f(t, x + hx) - f(t, x - hx)) / (2.0 * hx);
            let uxx = (f(t, x + hx) - 2.0 * f(t, x) + f(t, x - hx)) / (hx * hx);
            ut + drift.eval(x) * ux - 0.5 * sig * sig * uxx
        };
        let lower = |tt: f64, x: f64| bar.lower(tt, x);
        let upper = |tt: f64, x: f64| bar.upper(tt, x);
        for &y in &[0.2, 0.5, 0.8] {
            assert!(op(&lower, y * eps, eps) <= 1e-6);
            assert!(op(&upper, y * eps, eps) >= -1e-6);
        }
        for &x in &[0.2, 0.4] {
            assert!(op(&lower, x, 1.0) <= 1e-6);
            assert!(op(&upper, x, 1.0) >= -1e-6);
        }
        assert!(op(&upper, bar.xi - 0.5, 1.0) >= -1e-6);
        assert!(op(&lower, eps + bar.b_lower * t + 0.3, 1.0) <= 1e-6);
    }

    #[test]
    fn break_nodes_take_the_mean_drift() {
        let drift = StepDrift::new(vec![0.0, 1.0], vec![1.0, -0.5, 2.0], vec![-0.5, -0.5]).unwrap();
        assert_eq!(node_drift(&drift, 0.0), 0.25);
        assert_eq!(node_drift(&drift, 1.0), 0.75);
        assert_eq!(node_drift(&drift, 0.5), -0.5);
    }

    #[test]
    fn wait_distance_matches_reference() {
        // Reference from an independent fully implicit finite-difference
        // solve refined until the distance settled.
        let row = case3_row(1.0, 1.0, 1.0, 2.0, 1.0, (-0.5, 2.0), &Case3Grid::default()).unwrap();
        assert!((row.l1 - 0.181).abs() < 0.004, "{}", row.l1);
        assert!(row.bracket_ok && row.monotone);
        assert!(row.tol_grid < 0.05);
    }
}
