//! Vanishing-viscosity approximation of the Markov dynamics at a single
//! special point at the origin, for `f = a` on the left and `b` on the right.
//!
//! Each case gets a piecewise-constant drift `g_n` and a noise level
//! `sigma_n`; the diffusion `dX = g_n(X) dt + sigma_n dW` reproduces the
//! stop, branch or wait behaviour as `sigma_n -> 0`. The module also holds
//! the closed-form exit statistics of the branch drift, the schedule and
//! eigenfunction profiles of the wait case, and an Euler–Maruyama sampler.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{invalid, Error, Result};
use crate::quad;
use crate::rng;
use crate::smooth::smooth_step;
use crate::stopped::PathSource;

/// Canonical situation at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    /// Trajectories reaching the origin stay there.
    Stop,
    /// Trajectories leave the origin to the right with probability `theta`.
    Branch,
    /// Trajectories rest at the origin for an exponential time.
    Wait,
    /// Motion through the origin without stopping.
    Pass,
    /// Both sides point at the origin.
    Trap,
}

impl Case {
    pub fn label(self) -> &'static str {
        match self {
            Case::Stop => "stop",
            Case::Branch => "branch",
            Case::Wait => "wait",
            Case::Pass => "pass",
            Case::Trap => "trap",
        }
    }
}

/// Case data. `s` drives the wait-case schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchemeParams {
    Stop { a: f64, b: f64 },
    Branch { a: f64, b: f64, theta: f64 },
    Wait { a: f64, b: f64, lambda: f64, s: f64 },
    Pass { a: f64, b: f64 },
    Trap { a: f64, b: f64 },
}

impl SchemeParams {
    pub fn case(&self) -> Case {
        match self {
            SchemeParams::Stop { .. } => Case::Stop,
            SchemeParams::Branch { .. } => Case::Branch,
            SchemeParams::Wait { .. } => Case::Wait,
            SchemeParams::Pass { .. } => Case::Pass,
            SchemeParams::Trap { .. } => Case::Trap,
        }
    }

    pub fn speeds(&self) -> (f64, f64) {
        match *self {
            SchemeParams::Stop { a, b }
            | SchemeParams::Branch { a, b, .. }
            | SchemeParams::Wait { a, b, .. }
            | SchemeParams::Pass { a, b }
            | SchemeParams::Trap { a, b } => (a, b),
        }
    }
}

/// Piecewise-constant drift: `values[k]` on the open cell left of
/// `breaks[k]`, `values.last()` beyond the last break, `at[k]` at `breaks[k]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDrift {
    pub breaks: Vec<f64>,
    pub values: Vec<f64>,
    pub at: Vec<f64>,
}

impl StepDrift {
    pub fn new(breaks: Vec<f64>, values: Vec<f64>, at: Vec<f64>) -> Result<Self> {
        if values.len() != breaks.len() + 1 || at.len() != breaks.len() {
            return Err(invalid("drift needs one value per cell and one per break"));
        }
        if breaks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("drift breaks must increase"));
        }
        if values.iter().chain(&at).chain(&breaks).any(|v| !v.is_finite()) {
            return Err(invalid("drift data must be finite"));
        }
        Ok(StepDrift { breaks, values, at })
    }

    pub fn constant(v: f64) -> Self {
        StepDrift { breaks: vec![], values: vec![v], at: vec![] }
    }

    pub fn eval(&self, x: f64) -> f64 {
        for (k, &c) in self.breaks.iter().enumerate() {
            if x < c {
                return self.values[k];
            }
            if x == c {
                return self.at[k];
            }
        }
        self.values[self.breaks.len()]
    }

    /// Convolution with the bump `H'(x/w)/w`, `H` the smooth step. The
    /// result is C^∞ and differs from the step only within `w` of a break.
    pub fn mollified(&self, x: f64, w: f64) -> f64 {
        if w <= 0.0 {
            return self.eval(x);
        }
        let mut v = self.values[0];
        for (k, &c) in self.breaks.iter().enumerate() {
            let s = (x - c) / w;
            if s >= 1.0 {
                v += self.values[k + 1] - self.values[k];
            } else if s > -1.0 {
                v += (self.values[k + 1] - self.values[k]) * smooth_step(s);
            }
        }
        v
    }

    /// `sup |g|` over the open window `(lo, hi)`.
    pub fn sup_on(&self, lo: f64, hi: f64) -> f64 {
        let mut m: f64 = 0.0;
        for k in 0..self.values.len() {
            let left = if k == 0 { f64::NEG_INFINITY } else { self.breaks[k - 1] };
            let right = self.breaks.get(k).copied().unwrap_or(f64::INFINITY);
            if left < hi && right > lo {
                m = m.max(self.values[k].abs());
            }
        }
        for (k, &c) in self.breaks.iter().enumerate() {
            if c > lo && c < hi {
                m = m.max(self.at[k].abs());
            }
        }
        m
    }
}

/// A scalar diffusion `dX = drift(X) dt + noise dW` with a mollified
/// piecewise-constant drift.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sde {
    pub drift: StepDrift,
    pub noise: f64,
    /// Mollifier half-width; 0 uses the step drift itself.
    pub mollify: f64,
}

impl Sde {
    pub fn drift_at(&self, x: f64) -> f64 {
        self.drift.mollified(x, self.mollify)
    }
}

/// Chosen intermediate point of the branch case, in the rescaled variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Zeta {
    pub zeta: f64,
    /// `theta` was 0 or 1, so no root exists and `±sqrt(sigma)/3` is used.
    pub boundary: bool,
    /// `|zeta| <= sqrt(sigma)/3`.
    pub inner: bool,
}

/// Drift and noise for one `sigma_n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionScheme {
    pub case: Case,
    pub params: SchemeParams,
    pub sigma: f64,
    pub drift: StepDrift,
    /// Mollifier half-width, far below `sigma` and every plateau length.
    pub mollify: f64,
    /// Jump location of the branch drift.
    pub xi: Option<f64>,
    pub zeta: Option<Zeta>,
    pub schedule: Option<Case3Schedule>,
}

impl DiffusionScheme {
    pub fn sde(&self) -> Sde {
        Sde { drift: self.drift.clone(), noise: self.sigma, mollify: self.mollify }
    }

    /// Plateau or exit window relevant to the case: `[-sqrt σ, sqrt σ]` for
    /// stop, `xi ± sqrt σ` for branch, `[0, eps]` for wait.
    pub fn window(&self) -> Option<(f64, f64)> {
        let r = self.sigma.sqrt();
        match self.case {
            Case::Stop => Some((-r, r)),
            Case::Branch => self.xi.map(|xi| (xi - r, xi + r)),
            Case::Wait => self.schedule.map(|s| (0.0, s.eps)),
            Case::Pass | Case::Trap => None,
        }
    }
}

const MOLLIFY_FRACTION: f64 = 1e-3;

/// Drift `g_n` and noise for the case, at noise level `sigma`. The wait case
/// takes its noise level from [`schedule_case3`] and ignores `sigma`.
pub fn build_scheme(params: &SchemeParams, sigma: f64) -> Result<DiffusionScheme> {
    let (a, b) = params.speeds();
    if !(a.is_finite() && b.is_finite()) {
        return Err(invalid("speeds must be finite"));
    }
    let case = params.case();
    if case != Case::Wait && !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    let sign_error = |want: &str| Err(invalid(format!("{} case needs {want}, got a={a}, b={b}", case.label())));
    let mut scheme = DiffusionScheme {
        case,
        params: *params,
        sigma,
        drift: StepDrift::constant(0.0),
        mollify: 0.0,
        xi: None,
        zeta: None,
        schedule: None,
    };
    match *params {
        SchemeParams::Stop { .. } => {
            if !(a > 0.0 && b > 0.0) {
                return sign_error("a, b > 0");
            }
            let r = sigma.sqrt();
            scheme.drift = StepDrift::new(vec![-r, r], vec![a, 0.0, b], vec![0.0, 0.0])?;
            scheme.mollify = MOLLIFY_FRACTION * sigma.min(2.0 * r);
        }
        SchemeParams::Branch { theta, .. } => {
            if !(a < 0.0 && b > 0.0) {
                return sign_error("a < 0 < b");
            }
            if !(0.0..=1.0).contains(&theta) {
                return Err(invalid(format!("theta must lie in [0, 1], got {theta}")));
            }
            let z = select_zeta(theta, a, b, sigma)?;
            // The start sits at -xi relative to the jump, so the jump goes to
            // -sqrt(σ)·ζ for the rescaled start ζ to exit right with prob. θ.
            let xi = -sigma.sqrt() * z.zeta;
            scheme.drift = StepDrift::new(vec![xi], vec![a, b], vec![0.0])?;
            scheme.mollify = MOLLIFY_FRACTION * sigma;
            scheme.xi = Some(xi);
            scheme.zeta = Some(z);
        }
        SchemeParams::Wait { lambda, s, .. } => {
            if !(a > 0.0 && b > 0.0) {
                return sign_error("a, b > 0");
            }
            let sch = schedule_case3(lambda, s)?;
            scheme.sigma = sch.sigma;
            scheme.drift = StepDrift::new(vec![0.0, sch.eps], vec![a, -sch.eta, b], vec![-sch.eta, -sch.eta])?;
            scheme.mollify = MOLLIFY_FRACTION * sch.eps;
            scheme.schedule = Some(sch);
        }
        SchemeParams::Pass { .. } => {
            if !(a * b > 0.0) {
                return sign_error("a and b of one sign");
            }
            scheme.drift = StepDrift::new(vec![0.0], vec![a, b], vec![b])?;
            scheme.mollify = MOLLIFY_FRACTION * sigma;
        }
        SchemeParams::Trap { .. } => {
            if !(b < 0.0 && a > 0.0) {
                return sign_error("b < 0 < a");
            }
            scheme.drift = StepDrift::new(vec![0.0], vec![a, b], vec![0.0])?;
            scheme.mollify = MOLLIFY_FRACTION * sigma;
        }
    }
    Ok(scheme)
}

/// `P(sup_{[0,t]} |W| >= 1/sqrt(sigma)) <= 4 P(W_t >= 1/sqrt(sigma))`.
pub fn reflection_bound(sigma: f64, t: f64) -> f64 {
    let z = 1.0 / (sigma * t).sqrt();
    (4.0 * 0.5 * erfc(z / std::f64::consts::SQRT_2)).min(1.0)
}

/// Mean exit time and mean exit point from `[-1, 1]` of the rescaled branch
/// diffusion `dY = f(Y) dt + sqrt(σ) dW`, `f = a/sqrt σ` left of 0 and
/// `b/sqrt σ` right of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExitStats {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    pub a_n: f64,
    pub b_n: f64,
    pub c1: f64,
    pub c2: f64,
}

pub fn exit_stats(a: f64, b: f64, sigma: f64) -> Result<ExitStats> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    if !(a < 0.0 && b > 0.0) {
        return Err(invalid(format!("exit statistics need a < 0 < b, got a={a}, b={b}")));
    }
    let a_n = 2.0 * a / sigma.powf(1.5);
    let b_n = 2.0 * b / sigma.powf(1.5);
    let rs = sigma.sqrt();
    // v continuous with continuous slope at 0.
    let (m11, m12, r1) = (-a_n.exp_m1(), (-b_n).exp_m1(), rs * (1.0 / a + 1.0 / b));
    let (m21, m22, r2) = (-a_n, b_n, rs * (1.0 / a - 1.0 / b));
    let det = m11 * m22 - m12 * m21;
    if !(det.abs() > 0.0) || !det.is_finite() {
        return Err(Error::Numerical(format!("singular matching system for a={a}, b={b}, sigma={sigma}")));
    }
    let c1 = (r1 * m22 - m12 * r2) / det;
    let c2 = (m11 * r2 - m21 * r1) / det;
    Ok(ExitStats { a, b, sigma, a_n, b_n, c1, c2 })
}

impl ExitStats {
    fn denominator(&self) -> f64 {
        self.b * self.a_n.exp_m1() - self.a * (-self.b_n).exp_m1()
    }

    /// Mean exit point `E[Y_τ]` from `y`.
    pub fn mean_exit_point(&self, y: f64) -> f64 {
        let y = y.clamp(-1.0, 1.0);
        let d = self.denominator();
        if y <= 0.0 {
            -1.0 + 2.0 * self.b * (self.a_n.exp() - (-self.a_n * y).exp()) / d
        } else {
            1.0 + 2.0 * self.a * ((-self.b_n).exp() - (-self.b_n * y).exp()) / d
        }
    }

    /// Probability of leaving `[-1, 1]` through 1.
    pub fn right_exit_probability(&self, y: f64) -> f64 {
        0.5 * (1.0 + self.mean_exit_point(y))
    }

    /// Mean exit time `E[τ]` from `y`.
    pub fn mean_exit_time(&self, y: f64) -> f64 {
        let y = y.clamp(-1.0, 1.0);
        let rs = self.sigma.sqrt();
        if y <= 0.0 {
            -(y + 1.0) * rs / self.a + self.c1 * ((-self.a_n * y).exp() - self.a_n.exp())
        } else {
            (1.0 - y) * rs / self.b + self.c2 * ((-self.b_n * y).exp() - (-self.b_n).exp())
        }
    }

    /// `sqrt(σ)·max(|c1|, |c2|)`, bounded along any sequence `σ -> 0`.
    pub fn scaled_constant(&self) -> f64 {
        self.sigma.sqrt() * self.c1.abs().max(self.c2.abs())
    }

    /// The rescaled diffusion on `[-1, 1]`.
    pub fn rescaled_sde(&self) -> Sde {
        let rs = self.sigma.sqrt();
        Sde {
            drift: StepDrift { breaks: vec![0.0], values: vec![self.a / rs, self.b / rs], at: vec![0.0] },
            noise: rs,
            mollify: 0.0,
        }
    }
}

/// Solve `mean_exit_point(ζ) = 2θ - 1` for `ζ` in `[-sqrt σ, sqrt σ]`.
pub fn select_zeta(theta: f64, a: f64, b: f64, sigma: f64) -> Result<Zeta> {
    let stats = exit_stats(a, b, sigma)?;
    let r = sigma.sqrt();
    if !(0.0..=1.0).contains(&theta) {
        return Err(invalid(format!("theta must lie in [0, 1], got {theta}")));
    }
    if theta == 0.0 || theta == 1.0 {
        let zeta = if theta == 1.0 { r / 3.0 } else { -r / 3.0 };
        return Ok(Zeta { zeta, boundary: true, inner: true });
    }
    let target = 2.0 * theta - 1.0;
    let zeta = quad::bisect(|y| stats.mean_exit_point(y) - target, -r, r, 1e-12).ok_or_else(|| {
        Error::Numerical(format!(
            "no root in [-{r}, {r}]: mean exit point spans [{}, {}], target {target}",
            stats.mean_exit_point(-r),
            stats.mean_exit_point(r)
        ))
    })?;
    Ok(Zeta { zeta, boundary: false, inner: zeta.abs() <= r / 3.0 })
}

/// Constants of the wait-case drift for one value of the sharpness `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Case3Schedule {
    pub lambda: f64,
    pub s: f64,
    /// Noise and plateau drift in the variable `x / eps`.
    pub sigma_t: f64,
    pub eta_t: f64,
    pub delta: f64,
    pub eps: f64,
    pub sigma: f64,
    pub eta: f64,
}

/// The schedule uses `eps = 1 / (s·eta_t)`, so that `eta = 1/s`.
pub fn schedule_case3(lambda: f64, s: f64) -> Result<Case3Schedule> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    if !(s >= 1.0) || s > 300.0 {
        return Err(invalid(format!("s must lie in [1, 300], got {s}")));
    }
    let sigma_t = (2.0 * lambda).sqrt() * s.sinh() / s;
    let eta_t = s / s.tanh() * sigma_t * sigma_t;
    let eps = 1.0 / (s * eta_t);
    let sch = Case3Schedule {
        lambda,
        s,
        sigma_t,
        eta_t,
        delta: 1.0 / s.sqrt(),
        eps,
        sigma: eps * sigma_t,
        eta: eps * eta_t,
    };
    if !(sch.eps < sch.sigma && sch.sigma < sch.eta) {
        return Err(invalid(format!(
            "ordering eps < sigma < eta fails for lambda={lambda}, s={s}: {} / {} / {}",
            sch.eps, sch.sigma, sch.eta
        )));
    }
    Ok(sch)
}

/// Increasing solution of `σ²/2 w'' + η w' + λ w = 0` written as
/// `(e^{r1 (y+shift)} - e^{r2 (y+shift)}) / norm` with `r1 > r2` the
/// characteristic roots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenProfile {
    pub s: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub eta: f64,
    pub gamma: f64,
    /// Upper profiles: widening `delta` of the domain to `[-delta, 1]`.
    pub delta: Option<f64>,
    /// Half the root gap: `s` for the eigenfunction, `s_delta` for upper ones.
    pub s_eff: f64,
    /// Eigenvalue actually solved by `w`: `λ` or `λ_δ`.
    pub lambda_eff: f64,
    r1: f64,
    r2: f64,
    shift: f64,
    norm: f64,
}

fn base_constants(s: f64, lambda: f64) -> Result<(f64, f64, f64)> {
    if !(s >= 1.0) || s > 300.0 {
        return Err(invalid(format!("s must lie in [1, 300], got {s}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    let sigma = (2.0 * lambda).sqrt() * s.sinh() / s;
    let gamma = -s / s.tanh();
    let eta = -gamma * sigma * sigma;
    Ok((sigma, eta, gamma))
}

/// Eigenfunction on `[0, 1]` with `w(0) = 0`, `w'(1) = 0`, `w(1) = 1`.
pub fn eigen_profile(s: f64, lambda: f64) -> Result<EigenProfile> {
    let (sigma, eta, gamma) = base_constants(s, lambda)?;
    // γ + s = -2s / (e^{2s} - 1), written without cancellation.
    let r1 = -2.0 * s / (2.0 * s).exp_m1();
    let r2 = gamma - s;
    Ok(EigenProfile {
        s,
        lambda,
        sigma,
        eta,
        gamma,
        delta: None,
        s_eff: s,
        lambda_eff: 0.5 * sigma * sigma * r1 * r2,
        r1,
        r2,
        shift: 0.0,
        norm: r1.exp() - r2.exp(),
    })
}

/// Upper profile on `[-δ, 1]` with `w(-δ) = 0`, `w(0) = 1`. The root gap
/// `s_δ` solves `γ = -s_δ coth(s_δ (1 + 2δ))` and `λ_δ` is the eigenvalue
/// that the resulting `w_δ` satisfies.
pub fn upper_profile(s: f64, lambda: f64, delta: f64) -> Result<EigenProfile> {
    // The wait-case schedule uses delta = 1/sqrt(s) > 1/2 for s < 4; the
    // bracket below stays valid for any positive delta when s >= 1.
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(invalid(format!("delta must be positive, got {delta}")));
    }
    let (sigma, eta, gamma) = base_constants(s, lambda)?;
    let k = 1.0 + 2.0 * delta;
    let h = |x: f64| x / (x * k).tanh() + gamma;
    let (lo, hi) = (s, 2.0 * s);
    let s_d = quad::bisect(h, lo, hi, 1e-15 * s).ok_or_else(|| {
        Error::Numerical(format!(
            "s_delta bracket [{lo}, {hi}] has no sign change: h = {}, {} (s={s}, delta={delta})",
            h(lo),
            h(hi)
        ))
    })?;
    let r1 = -2.0 * s_d / (2.0 * s_d * k).exp_m1();
    let r2 = gamma - s_d;
    Ok(EigenProfile {
        s,
        lambda,
        sigma,
        eta,
        gamma,
        delta: Some(delta),
        s_eff: s_d,
        lambda_eff: 0.5 * sigma * sigma * r1 * r2,
        r1,
        r2,
        shift: delta,
        norm: (r1 * delta).exp() - (r2 * delta).exp(),
    })
}

impl EigenProfile {
    /// Left end of the domain: 0, or `-δ` for upper profiles.
    pub fn left(&self) -> f64 {
        -self.shift
    }

    fn combo(&self, y: f64, p: i32) -> f64 {
        let z = y + self.shift;
        (self.r1.powi(p) * (self.r1 * z).exp() - self.r2.powi(p) * (self.r2 * z).exp()) / self.norm
    }

    pub fn w(&self, y: f64) -> f64 {
        self.combo(y, 0)
    }

    pub fn dw(&self, y: f64) -> f64 {
        self.combo(y, 1)
    }

    pub fn d2w(&self, y: f64) -> f64 {
        self.combo(y, 2)
    }

    /// Largest `|w'' - 2γ w' + (γ² - s_eff²) w|` on `points` equispaced
    /// nodes: the eigen equation divided by `σ²/2`.
    pub fn residual(&self, points: usize) -> f64 {
        let c = self.r1 * self.r2;
        let b = -(self.r1 + self.r2);
        self.grid(points)
            .map(|y| (self.d2w(y) + b * self.dw(y) + c * self.w(y)).abs())
            .fold(0.0, f64::max)
    }

    /// The same residual in the undivided form `σ²/2 w'' + η w' + λ_eff w`.
    pub fn raw_residual(&self, points: usize) -> f64 {
        let q = 0.5 * self.sigma * self.sigma;
        self.grid(points)
            .map(|y| (q * self.d2w(y) + self.eta * self.dw(y) + self.lambda_eff * self.w(y)).abs())
            .fold(0.0, f64::max)
    }

    fn grid(&self, points: usize) -> impl Iterator<Item = f64> + '_ {
        let n = points.max(2);
        let lo = self.left();
        (0..n).map(move |i| lo + (1.0 - lo) * i as f64 / (n - 1) as f64)
    }

    /// True if `w` is nondecreasing on `points` equispaced nodes.
    pub fn is_increasing(&self, points: usize) -> bool {
        let v: Vec<f64> = self.grid(points).map(|y| self.w(y)).collect();
        v.windows(2).all(|p| p[1] >= p[0])
    }
}

/// One row of invariant checks for an eigen/upper profile pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileCheck {
    pub s: f64,
    pub delta: f64,
    pub lambda: f64,
    pub w0: f64,
    pub w1: f64,
    pub dw1: f64,
    pub residual: f64,
    pub w_delta_left: f64,
    pub w_delta_0: f64,
    pub w_delta_1: f64,
    pub dw_delta_1: f64,
    pub residual_delta: f64,
    pub s_delta: f64,
    pub lambda_delta: f64,
    pub increasing: bool,
    /// `s <= s_δ <= 2s`.
    pub s_delta_ok: bool,
    /// `w_δ(1) <= 1 + δ` and `w_δ'(1) > 0`.
    pub endpoint_ok: bool,
    /// `λ - δ <= λ_δ <= λ`.
    pub lambda_ok: bool,
    pub residual_ok: bool,
    pub boundary_ok: bool,
}

impl ProfileCheck {
    pub fn pass(&self) -> bool {
        self.increasing && self.s_delta_ok && self.endpoint_ok && self.lambda_ok && self.residual_ok && self.boundary_ok
    }
}

/// Residual tolerance on the normalized eigen equation.
pub const PROFILE_RESIDUAL_TOL: f64 = 1e-8;
/// Boundary-value tolerance.
pub const PROFILE_BOUNDARY_TOL: f64 = 1e-12;

pub fn check_profiles(s: f64, lambda: f64, delta: f64) -> Result<ProfileCheck> {
    let w = eigen_profile(s, lambda)?;
    let u = upper_profile(s, lambda, delta)?;
    let n = 1000;
    let (w0, w1, dw1) = (w.w(0.0), w.w(1.0), w.dw(1.0));
    let (wl, wz, wr, dwr) = (u.w(-delta), u.w(0.0), u.w(1.0), u.dw(1.0));
    let residual = w.residual(n);
    let residual_delta = u.residual(n);
    let tol = PROFILE_BOUNDARY_TOL;
    let scale = 1.0 + w.s * w.s;
    Ok(ProfileCheck {
        s,
        delta,
        lambda,
        w0,
        w1,
        dw1,
        residual,
        w_delta_left: wl,
        w_delta_0: wz,
        w_delta_1: wr,
        dw_delta_1: dwr,
        residual_delta,
        s_delta: u.s_eff,
        lambda_delta: u.lambda_eff,
        increasing: w.is_increasing(n) && u.is_increasing(n),
        s_delta_ok: s <= u.s_eff && u.s_eff <= 2.0 * s,
        endpoint_ok: wr <= 1.0 + delta && dwr > 0.0,
        lambda_ok: lambda - delta <= u.lambda_eff && u.lambda_eff <= lambda,
        residual_ok: residual <= PROFILE_RESIDUAL_TOL * scale && residual_delta <= PROFILE_RESIDUAL_TOL * scale,
        boundary_ok: w0.abs() <= tol && (w1 - 1.0).abs() <= tol && dw1.abs() <= 1e-9 * scale && wl.abs() <= tol && (wz - 1.0).abs() <= tol,
    })
}

/// How a path stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Exit {
    Left,
    Right,
    /// Still inside the barriers at the horizon.
    Horizon,
}

/// Euler–Maruyama settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SdeRun {
    pub dt: f64,
    pub horizon: f64,
    /// Absorbing barriers; use infinities for none.
    pub barriers: (f64, f64),
    /// Also test for crossings between grid times with the Brownian-bridge
    /// probability `exp(-2 d0 d1 / (noise² dt))`.
    pub bridge: bool,
    /// Window whose occupation time is recorded.
    pub occupation: Option<(f64, f64)>,
}

/// Outcome of one simulated path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathSummary {
    pub exit: Exit,
    pub time: f64,
    pub position: f64,
    pub occupation: f64,
}

/// Largest admissible step for `sup |drift| = m` on the live window.
pub fn max_dt(noise: f64, m: f64) -> f64 {
    if m > 0.0 {
        (noise / (10.0 * m)).powi(2)
    } else {
        f64::INFINITY
    }
}

fn check_run(sde: &Sde, run: &SdeRun) -> Result<()> {
    if !(run.dt > 0.0 && run.dt.is_finite()) || !(run.horizon >= 0.0 && run.horizon.is_finite()) {
        return Err(invalid("dt must be positive and the horizon finite"));
    }
    if !(run.barriers.0 < run.barriers.1) {
        return Err(invalid("barriers must satisfy lo < hi"));
    }
    if !(sde.noise >= 0.0 && sde.noise.is_finite()) {
        return Err(invalid("noise must be nonnegative"));
    }
    let m = sde.drift.sup_on(run.barriers.0, run.barriers.1);
    let cap = max_dt(sde.noise, m);
    if sde.noise > 0.0 && run.dt > cap {
        return Err(invalid(format!("dt = {} exceeds (noise/(10 M))^2 = {cap} for M = {m}", run.dt)));
    }
    Ok(())
}

/// One Euler–Maruyama path from `x0`, drawing from `rng`. `record` receives
/// every grid position.
fn euler_path<R: Rng + ?Sized>(sde: &Sde, x0: f64, run: &SdeRun, rng: &mut R, mut record: impl FnMut(f64)) -> PathSummary {
    let (lo, hi) = run.barriers;
    let steps = (run.horizon / run.dt).ceil() as u64;
    let sq = run.dt.sqrt();
    let var = sde.noise * sde.noise * run.dt;
    let mut x = x0;
    let mut occupation = 0.0;
    let in_window = |x: f64| run.occupation.is_some_and(|(a, b)| x >= a && x <= b);
    record(x);
    if x <= lo || x >= hi {
        let exit = if x <= lo { Exit::Left } else { Exit::Right };
        return PathSummary { exit, time: 0.0, position: x, occupation };
    }
    let mut t = 0.0;
    for k in 0..steps {
        let h = if k + 1 == steps { run.horizon - t } else { run.dt };
        if h <= 0.0 {
            break;
        }
        let dw: f64 = rng.sample(StandardNormal);
        let hs = if h == run.dt { sq } else { h.sqrt() };
        let y = x + sde.drift_at(x) * h + sde.noise * hs * dw;
        if in_window(x) {
            occupation += h;
        }
        if y <= lo || y >= hi {
            let (bar, exit) = if y <= lo { (lo, Exit::Left) } else { (hi, Exit::Right) };
            let frac = ((bar - x) / (y - x)).clamp(0.0, 1.0);
            record(bar);
            return PathSummary { exit, time: t + frac * h, position: bar, occupation };
        }
        if run.bridge && var > 0.0 {
            let u: f64 = rng.random();
            let p_lo = if lo.is_finite() { (-2.0 * (x - lo) * (y - lo) / (var * h / run.dt)).exp() } else { 0.0 };
            let p_hi = if hi.is_finite() { (-2.0 * (hi - x) * (hi - y) / (var * h / run.dt)).exp() } else { 0.0 };
            if u < p_lo + p_hi {
                let (bar, exit) = if u < p_lo { (lo, Exit::Left) } else { (hi, Exit::Right) };
                record(bar);
                return PathSummary { exit, time: t + 0.5 * h, position: bar, occupation };
            }
        }
        x = y;
        t += h;
        record(x);
    }
    PathSummary { exit: Exit::Horizon, time: run.horizon, position: x, occupation }
}

/// Simulate `n` paths from `x0`; path `i` uses child stream `i` of `seed`.
pub fn simulate_sde(sde: &Sde, x0: f64, run: &SdeRun, n: usize, seed: u64) -> Result<Vec<PathSummary>> {
    check_run(sde, run)?;
    Ok((0..n as u64)
        .into_par_iter()
        .map(|i| euler_path(sde, x0, run, &mut rng::stream(seed, i), |_| {}))
        .collect())
}

/// Counts and means over a batch of path summaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExitSummary {
    pub n: usize,
    pub left: usize,
    pub right: usize,
    pub horizon: usize,
    pub mean_time: f64,
    pub time_stderr: f64,
    pub mean_position: f64,
    pub position_stderr: f64,
    pub mean_occupation: f64,
}

impl ExitSummary {
    pub fn of(paths: &[PathSummary]) -> Self {
        let n = paths.len();
        let count = |e: Exit| paths.iter().filter(|p| p.exit == e).count();
        let (mt, st) = mean_stderr(paths.iter().map(|p| p.time));
        let (mp, sp) = mean_stderr(paths.iter().map(|p| p.position));
        let (mo, _) = mean_stderr(paths.iter().map(|p| p.occupation));
        ExitSummary {
            n,
            left: count(Exit::Left),
            right: count(Exit::Right),
            horizon: count(Exit::Horizon),
            mean_time: mt,
            time_stderr: st,
            mean_position: mp,
            position_stderr: sp,
            mean_occupation: mo,
        }
    }

    pub fn right_fraction(&self) -> f64 {
        self.right as f64 / self.n.max(1) as f64
    }

    pub fn escaped(&self) -> usize {
        self.left + self.right
    }
}

/// Sample mean and its standard error, summed in index order.
pub fn mean_stderr(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = xs.collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, (var / n).sqrt())
}

/// Half-width of the 3σ binomial interval around `p` for `n` trials.
pub fn binomial_3sigma(p: f64, n: usize) -> f64 {
    3.0 * (p * (1.0 - p) / n as f64).sqrt()
}

/// A simulated diffusion path on the Euler grid, usable for stopping at
/// levels like the exact Markov paths.
#[derive(Debug, Clone, PartialEq)]
pub struct SdePath {
    pub dt: f64,
    pub xs: Vec<f64>,
}

/// Path source backed by the Euler scheme, without barriers.
#[derive(Debug, Clone)]
pub struct SdeSource {
    pub sde: Sde,
    pub dt: f64,
}

impl PathSource for SdeSource {
    type Path = SdePath;

    fn draw(&self, x0: f64, horizon: f64, seed: u64, index: u64) -> SdePath {
        let run = SdeRun {
            dt: self.dt,
            horizon,
            barriers: (f64::NEG_INFINITY, f64::INFINITY),
            bridge: false,
            occupation: None,
        };
        let mut xs = Vec::with_capacity((horizon / self.dt).ceil() as usize + 1);
        euler_path(&self.sde, x0, &run, &mut rng::stream(seed, index), |x| xs.push(x));
        SdePath { dt: self.dt, xs }
    }

    fn first_hit(&self, path: &SdePath, levels: &[f64], exclude: f64) -> Option<(f64, f64)> {
        for (k, w) in path.xs.windows(2).enumerate() {
            let (x, y) = (w[0], w[1]);
            let hit = levels
                .iter()
                .copied()
                .filter(|&l| l != exclude && (l - x) * (l - y) <= 0.0 && x != l)
                .min_by(|p, q| (p - x).abs().total_cmp(&(q - x).abs()));
            if let Some(l) = hit {
                let frac = if y != x { ((l - x) / (y - x)).clamp(0.0, 1.0) } else { 0.0 };
                return Some(((k as f64 + frac) * path.dt, l));
            }
        }
        None
    }

    fn position(&self, path: &SdePath, t: f64) -> f64 {
        let k = ((t / path.dt).floor() as usize).min(path.xs.len().saturating_sub(1));
        path.xs[k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn stop_plateau() {
        let s = build_scheme(&SchemeParams::Stop { a: 1.0, b: 1.0 }, 0.04).unwrap();
        assert_eq!(s.drift.breaks, vec![-0.2, 0.2]);
        assert_eq!(s.drift.eval(0.2), 0.0);
        assert_eq!(s.drift.eval(-0.2), 0.0);
        assert_eq!(s.drift.eval(0.21), 1.0);
        assert_eq!(s.drift.eval(-0.3), 1.0);
        assert_eq!(s.window(), Some((-0.2, 0.2)));
    }

    #[test]
    fn sign_patterns_are_checked() {
        assert!(build_scheme(&SchemeParams::Stop { a: -1.0, b: 1.0 }, 0.1).is_err());
        assert!(build_scheme(&SchemeParams::Branch { a: 1.0, b: 1.0, theta: 0.5 }, 0.1).is_err());
        assert!(build_scheme(&SchemeParams::Trap { a: -1.0, b: 1.0 }, 0.1).is_err());
        assert!(build_scheme(&SchemeParams::Pass { a: 1.0, b: 2.0 }, 0.0).is_err());
        assert!(exit_stats(-1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn pass_and_trap_keep_the_field() {
        let p = build_scheme(&SchemeParams::Pass { a: 1.0, b: 2.0 }, 0.1).unwrap();
        assert_eq!((p.drift.eval(-1.0), p.drift.eval(1.0)), (1.0, 2.0));
        let t = build_scheme(&SchemeParams::Trap { a: 1.0, b: -2.0 }, 0.1).unwrap();
        assert_eq!((t.drift.eval(-1.0), t.drift.eval(0.0), t.drift.eval(1.0)), (1.0, 0.0, -2.0));
    }

    #[test]
    fn mollified_drift_matches_away_from_breaks() {
        let d = StepDrift::new(vec![0.0, 1.0], vec![2.0, -1.0, 3.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(d.mollified(-0.5, 0.01), 2.0);
        assert_eq!(d.mollified(0.5, 0.01), -1.0);
        assert_eq!(d.mollified(2.0, 0.01), 3.0);
        assert!(close(d.mollified(0.0, 0.01), 0.5, 1e-15));
        assert_eq!(d.sup_on(0.1, 0.9), 1.0);
        assert_eq!(d.sup_on(-1.0, 0.5), 2.0);
    }

    #[test]
    fn balanced_branch_is_symmetric() {
        let st = exit_stats(-1.0, 1.0, 0.1).unwrap();
        assert!(close(st.mean_exit_point(0.0), 0.0, 1e-14));
        assert!(close(st.right_exit_probability(0.0), 0.5, 1e-14));
        let s = build_scheme(&SchemeParams::Branch { a: -1.0, b: 1.0, theta: 0.5 }, 0.1).unwrap();
        assert!(s.xi.unwrap().abs() < 1e-12);
    }

    #[test]
    fn exit_point_boundary_values_and_monotonicity() {
        for &(a, b, sg) in &[(-1.0, 2.0, 0.25), (-1.0, 1.0, 0.3), (-3.0, 0.5, 0.6)] {
            let st = exit_stats(a, b, sg).unwrap();
            assert!(close(st.mean_exit_point(-1.0), -1.0, 1e-14));
            assert!(close(st.mean_exit_point(1.0), 1.0, 1e-14));
            assert!(close(st.mean_exit_time(-1.0), 0.0, 1e-14));
            assert!(close(st.mean_exit_time(1.0), 0.0, 1e-14));
            let ys: Vec<f64> = (0..=400).map(|i| -1.0 + i as f64 / 200.0).collect();
            assert!(ys.windows(2).all(|w| st.mean_exit_point(w[1]) > st.mean_exit_point(w[0])));
        }
    }

    #[test]
    fn exit_time_solves_its_ode() {
        // f v' + (σ/2) v'' = -1 on both sides, with C^1 matching at 0.
        let st = exit_stats(-1.0, 2.0, 0.25).unwrap();
        let rs = st.sigma.sqrt();
        let h = 1e-4;
        for &y in &[-0.7, -0.2, 0.3, 0.8] {
            let f = if y < 0.0 { st.a / rs } else { st.b / rs };
            let v = |z| st.mean_exit_time(z);
            let d1 = (v(y + h) - v(y - h)) / (2.0 * h);
            let d2 = (v(y + h) - 2.0 * v(y) + v(y - h)) / (h * h);
            assert!(close(f * d1 + 0.5 * st.sigma * d2, -1.0, 1e-5), "y={y}");
        }
        let v = |z| st.mean_exit_time(z);
        assert!(close((v(1e-7) - v(0.0)) / 1e-7, (v(0.0) - v(-1e-7)) / 1e-7, 1e-4));
    }

    #[test]
    fn exit_time_vanishes_and_constants_stay_bounded() {
        let mut prev = f64::INFINITY;
        for k in 1..12 {
            let sg = 0.5f64.powi(k);
            let st = exit_stats(-1.0, 1.5, sg).unwrap();
            let peak = (0..=200).map(|i| st.mean_exit_time(-1.0 + i as f64 / 100.0)).fold(0.0, f64::max);
            assert!(peak < prev);
            prev = peak;
            assert!(st.scaled_constant() < 2.0);
        }
        assert!(prev < 0.05);
    }

    #[test]
    fn zeta_for_skewed_branch() {
        let z = select_zeta(0.8, -1.0, 1.0, 0.3).unwrap();
        let st = exit_stats(-1.0, 1.0, 0.3).unwrap();
        assert!(close(st.mean_exit_point(z.zeta), 0.6, 1e-10));
        assert!(z.zeta > 0.0 && z.inner && !z.boundary);
        let mut prev = f64::INFINITY;
        for k in 1..8 {
            let z = select_zeta(0.8, -1.0, 1.0, 0.5f64.powi(k)).unwrap();
            assert!(z.zeta.abs() < prev);
            prev = z.zeta.abs();
        }
        let b = select_zeta(1.0, -1.0, 1.0, 0.09).unwrap();
        assert!(b.boundary && close(b.zeta, 0.1, 1e-15));
        assert!(select_zeta(1.2, -1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn reflection_bound_values() {
        // 4·Φ̄(10) ≈ 3.05e-23
        let v = reflection_bound(0.01, 1.0);
        assert!(v > 3.0e-23 && v < 3.1e-23, "{v}");
        assert!(reflection_bound(1.0 / 64.0, 1.0) < 1e-10);
        assert!(reflection_bound(1.0 / 32.0, 1.0) > 1e-10);
        // The literal "4 (1 - ∫_0^c φ)" form tends to 2 instead of 0.
        let c = 10.0f64;
        let literal = 4.0 * (1.0 - (1.0 - erfc(c / std::f64::consts::SQRT_2)) / 2.0);
        assert!(close(literal, 2.0, 1e-12));
    }

    #[test]
    fn schedule_examples() {
        let s = schedule_case3(1.0, 1.0).unwrap();
        assert!(close(s.sigma_t, std::f64::consts::SQRT_2 * 1.0f64.sinh(), 1e-14));
        assert!(close(0.5 * s.sigma_t.powi(2), (1f64.exp().powi(2) - 1.0).powi(2) / (4.0 * 1f64.exp().powi(2)), 1e-13));
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for n in 1..=12 {
            let s = schedule_case3(1.0, n as f64).unwrap();
            assert!(s.eps < s.sigma && s.sigma < s.eta);
            assert!(close(s.eta, 1.0 / n as f64, 1e-15));
            assert!(s.sigma < prev.0 && s.eta < prev.1);
            prev = (s.sigma, s.eta);
        }
        assert!(schedule_case3(1.0, 0.5).is_err());
    }

    #[test]
    fn eigen_profile_invariants() {
        for &(s, lam) in &[(1.0, 1.0), (4.0, 1.0), (9.0, 0.3), (16.0, 2.0)] {
            let w = eigen_profile(s, lam).unwrap();
            assert!(close(w.w(0.0), 0.0, 1e-15));
            assert!(close(w.w(1.0), 1.0, 1e-14));
            assert!(w.dw(1.0).abs() < 1e-9 * s * s);
            assert!(w.is_increasing(1000));
            assert!(w.residual(1000) < 1e-8 * (1.0 + s * s));
            assert!(close(w.lambda_eff, lam, 1e-9 * lam));
        }
        // At moderate s the undivided residual is also small.
        let w = eigen_profile(4.0, 1.0).unwrap();
        assert!(w.raw_residual(1000) < 1e-8);
    }

    #[test]
    fn upper_profile_shape() {
        let u = upper_profile(4.0, 1.0, 0.5).unwrap();
        assert!(close(u.w(-0.5), 0.0, 1e-15));
        assert!(close(u.w(0.0), 1.0, 1e-14));
        assert!(u.w(1.0) <= 1.5 && u.dw(1.0) > 0.0);
        assert!(u.s_eff >= 4.0 && u.s_eff <= 8.0);
        assert!(u.lambda_eff <= 1.0 && u.lambda_eff > 0.0);
        assert!(u.residual(1000) < 1e-8 * 17.0);
        assert!(upper_profile(4.0, 1.0, 0.0).is_err());
        assert!(upper_profile(2.0, 1.0, 0.5f64.sqrt()).is_ok());
    }

    #[test]
    fn deterministic_drift_without_noise() {
        let sde = Sde { drift: StepDrift::constant(1.0), noise: 0.0, mollify: 0.0 };
        let run = SdeRun { dt: 1e-3, horizon: 1.0, barriers: (f64::NEG_INFINITY, f64::INFINITY), bridge: false, occupation: None };
        let p = simulate_sde(&sde, 0.0, &run, 3, 1).unwrap();
        for q in p {
            assert_eq!(q.exit, Exit::Horizon);
            assert!(close(q.position, 1.0, 1e-3));
        }
    }

    #[test]
    fn coarse_dt_rejected() {
        let s = build_scheme(&SchemeParams::Branch { a: -1.0, b: 1.0, theta: 0.5 }, 0.1).unwrap();
        let run = SdeRun { dt: 2e-4, horizon: 1.0, barriers: (-0.3, 0.3), bridge: false, occupation: None };
        assert!(simulate_sde(&s.sde(), 0.0, &run, 1, 0).is_err());
        let run = SdeRun { dt: 1e-4, ..run };
        assert!(simulate_sde(&s.sde(), 0.0, &run, 1, 0).is_ok());
    }

    #[test]
    fn seeded_runs_repeat() {
        let s = build_scheme(&SchemeParams::Stop { a: 1.0, b: 1.0 }, 0.25).unwrap();
        let (lo, hi) = s.window().unwrap();
        let run = SdeRun { dt: 1e-3, horizon: 1.0, barriers: (lo, hi), bridge: false, occupation: None };
        let a = simulate_sde(&s.sde(), 0.0, &run, 200, 9).unwrap();
        let b = simulate_sde(&s.sde(), 0.0, &run, 200, 9).unwrap();
        assert_eq!(a, b);
        // sup|W| over [0,1] reaches 2 with probability about 0.18.
        let esc = ExitSummary::of(&a).escaped();
        assert!(esc > 10 && esc < 70, "{esc}");
    }

    #[test]
    fn sde_paths_stop_at_levels() {
        let src = SdeSource { sde: Sde { drift: StepDrift::constant(1.0), noise: 0.0, mollify: 0.0 }, dt: 0.01 };
        let p = src.draw(0.0, 1.0, 1, 0);
        let (t, l) = src.first_hit(&p, &[0.0, 0.5], 0.0).unwrap();
        assert_eq!(l, 0.5);
        assert!(close(t, 0.5, 1e-9));
        assert!(close(src.position(&p, 0.25), 0.25, 1e-9));
    }
}
