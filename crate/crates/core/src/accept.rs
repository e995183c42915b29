//! Acceptance suite. Each criterion runs at desk scale and yields a
//! PASS/FAIL verdict, a one-line summary and the tables it produced. The
//! determinism criterion re-runs the others in a pool of a different size
//! and compares table digests.

use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::artifact::{write_json, Artifact, Table};
use crate::diffusion::{
    binomial_3sigma, build_scheme, check_profiles, exit_stats, reflection_bound, simulate_sde, ExitSummary, SchemeParams, SdeRun,
};
use crate::error::{Error, Result};
use crate::flow::{time_grid, Flow};
use crate::markov::empirical_kernel;
use crate::metrics::{kolmogorov, Cdf};
use crate::pde::{bracket_and_converge, Case3Grid, PoissonKernel};
use crate::rng::{derive_seed, stream};
use crate::row;
use crate::scenario::library::{cantor_gap, poisson_wait, three_gap, two_speed};
use crate::scenario::{validate, Branch, FieldSpec, Mode, SemigroupSpec};
use crate::smooth::{convergence_report, graph_report};
use crate::stopped::{global_from_local, local_pieces};

/// Criterion number, short name and wall-time budget in seconds.
pub const CRITERIA: [(u8, &str, f64); 11] = [
    (1, "smooth flow rate", 30.0),
    (2, "graph convergence", 10.0),
    (3, "stop: no escape from the plateau", 60.0),
    (4, "branch: right-exit frequency", 90.0),
    (5, "exit-statistics oracle", 120.0),
    (6, "wait: bracket and kernel distance", 120.0),
    (7, "wait: analytic kernel", 30.0),
    (8, "chained local kernels", 60.0),
    (9, "semigroup identity and monotonicity", 20.0),
    (10, "eigen and upper profiles", 5.0),
    (11, "determinism across thread counts", f64::INFINITY),
];

/// Default suite seed.
pub const DEFAULT_SEED: u64 = 20240611;

/// Verdict for one criterion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub id: u8,
    pub name: String,
    /// The checks passed and the run finished within budget.
    pub pass: bool,
    pub checks_pass: bool,
    pub seconds: f64,
    pub budget: f64,
    pub summary: String,
    /// `(table name, sha256)` of every table produced.
    pub digests: Vec<(String, String)>,
}

impl Outcome {
    /// `PASS  3 stop: ... | summary`
    pub fn line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let time = if self.budget.is_finite() {
            format!("{:.1}s/{:.0}s", self.seconds, self.budget)
        } else {
            format!("{:.1}s", self.seconds)
        };
        format!("{verdict} {:>2} {} [{time}] {}", self.id, self.name, self.summary)
    }
}

/// Result of one criterion body: verdict, summary, tables.
pub struct Checked {
    pub pass: bool,
    pub summary: String,
    pub tables: Vec<Table>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Criteria to run; empty means all.
    pub only: Vec<u8>,
    /// Pool size for the main run.
    pub threads: usize,
    /// Pool size for the determinism re-run.
    pub rerun_threads: usize,
    /// Where tables and the summary go; nothing is written if `None`.
    pub out_dir: Option<PathBuf>,
    /// Count the wall-time budget toward the verdict.
    pub enforce_budget: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { seed: DEFAULT_SEED, only: Vec::new(), threads: 1, rerun_threads: 8, out_dir: None, enforce_budget: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub outcomes: Vec<Outcome>,
    pub artifacts: Vec<Artifact>,
    /// SHA-256 over the concatenated table digests of criteria 1 to 10.
    pub summary_hash: String,
}

impl SuiteReport {
    pub fn all_pass(&self) -> bool {
        self.outcomes.iter().all(|o| o.pass)
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Numerical(format!("thread pool: {e}")))
}

/// Run one criterion body (1 to 10) with the suite seed.
pub fn run_check(id: u8, seed: u64) -> Result<Checked> {
    let s = derive_seed(seed, id as u64);
    match id {
        1 => smooth_rate(),
        2 => graph(),
        3 => stop(s),
        4 => branch(s),
        5 => exit_oracle(s),
        6 => wait_pde(),
        7 => wait_kernel(s),
        8 => chained(s),
        9 => semigroup(s),
        10 => profiles(),
        _ => Err(Error::InvalidArgument(format!("no criterion {id} among 1..=10"))),
    }
}

fn timed(id: u8, seed: u64, enforce_budget: bool) -> (Outcome, Vec<Table>) {
    let (_, name, budget) = CRITERIA[id as usize - 1];
    let start = Instant::now();
    let res = run_check(id, seed);
    let seconds = start.elapsed().as_secs_f64();
    let (checks_pass, summary, tables) = match res {
        Ok(c) => (c.pass, c.summary, c.tables),
        Err(e) => (false, format!("error: {e}"), Vec::new()),
    };
    let digests = tables.iter().map(|t| (t.name.clone(), t.sha256().unwrap_or_default())).collect();
    let within = seconds <= budget;
    let summary = if enforce_budget && !within { format!("{summary}; over budget") } else { summary };
    let outcome = Outcome {
        id,
        name: name.to_string(),
        pass: checks_pass && (within || !enforce_budget),
        checks_pass,
        seconds,
        budget,
        summary,
        digests,
    };
    (outcome, tables)
}

/// Run the selected criteria, calling `report` as each verdict is known.
pub fn run_suite(opts: &SuiteOptions, mut report: impl FnMut(&Outcome)) -> Result<SuiteReport> {
    let want = |id: u8| opts.only.is_empty() || opts.only.contains(&id);
    let body: Vec<u8> = (1..=10).filter(|&i| want(i)).collect();
    let mut outcomes = Vec::new();
    let mut tables = Vec::new();
    let main = pool(opts.threads)?;
    for &id in &body {
        let (o, t) = main.install(|| timed(id, opts.seed, opts.enforce_budget));
        report(&o);
        outcomes.push(o);
        tables.extend(t);
    }
    if want(11) {
        let start = Instant::now();
        let again = pool(opts.rerun_threads)?;
        let (ids, first): (Vec<u8>, Vec<Vec<(String, String)>>) = if body.is_empty() {
            // Determinism alone: run every body twice.
            let ids: Vec<u8> = (1..=10).collect();
            let first = ids.iter().map(|&id| main.install(|| timed(id, opts.seed, false)).0.digests).collect();
            (ids, first)
        } else {
            (body.clone(), outcomes.iter().map(|o| o.digests.clone()).collect())
        };
        let mut mismatched = Vec::new();
        let mut compared = 0usize;
        for (k, &id) in ids.iter().enumerate() {
            let second = again.install(|| timed(id, opts.seed, false)).0.digests;
            compared += second.len();
            if second != first[k] || second.is_empty() {
                mismatched.push(id);
            }
        }
        let pass = mismatched.is_empty();
        let summary = if pass {
            format!("{compared} table digests identical on {} vs {} threads", opts.threads, opts.rerun_threads)
        } else {
            format!("digests differ (or are missing) for criteria {mismatched:?}")
        };
        let o = Outcome {
            id: 11,
            name: CRITERIA[10].1.to_string(),
            pass,
            checks_pass: pass,
            seconds: start.elapsed().as_secs_f64(),
            budget: f64::INFINITY,
            summary,
            digests: Vec::new(),
        };
        report(&o);
        outcomes.push(o);
    }
    let joined: String = outcomes.iter().flat_map(|o| o.digests.iter().map(|(n, h)| format!("{n}:{h}\n"))).collect();
    let summary_hash = crate::artifact::sha256_hex(joined.as_bytes());
    let mut artifacts = Vec::new();
    if let Some(dir) = &opts.out_dir {
        for t in &tables {
            artifacts.push(t.write(dir)?);
        }
        let mut verdicts = Table::new("acceptance_summary", &["id", "name", "pass", "checks_pass", "budget_s", "summary"]);
        for o in &outcomes {
            verdicts.push(row![o.id as i64, o.name.clone(), o.pass, o.checks_pass, o.budget, o.summary.clone()]);
        }
        artifacts.push(verdicts.write(dir)?);
        let rep = SuiteReport { seed: opts.seed, outcomes: outcomes.clone(), artifacts: artifacts.clone(), summary_hash: summary_hash.clone() };
        artifacts.push(write_json(dir, "acceptance_report", &rep)?);
    }
    Ok(SuiteReport { seed: opts.seed, outcomes, artifacts, summary_hash })
}

const EPS_LIST: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

fn smooth_rate() -> Result<Checked> {
    let mut t = Table::new("c01_smooth_rate", &["scenario", "eps", "x0", "start", "sup_error", "sup_upper", "bound", "pass"]);
    let mut pass = true;
    let mut worst: f64 = 0.0;
    for (name, spec) in [("two_speed", two_speed()), ("cantor_gap", cantor_gap())] {
        for i in 0..9 {
            let x0 = -2.0 + 0.5 * i as f64;
            for r in convergence_report(&spec, x0, &EPS_LIST)? {
                pass &= r.pass;
                worst = worst.max(r.sup_upper / r.bound);
                t.push(row![name, r.eps, r.x0, r.case.label(), r.sup_error, r.sup_upper, r.bound, r.pass]);
            }
        }
    }
    Ok(Checked { pass, summary: format!("{} runs, worst deviation/bound {worst:.3}", t.rows.len()), tables: vec![t] })
}

fn graph() -> Result<Checked> {
    let mut t = Table::new("c02_graph", &["scenario", "eps", "distance", "bound", "pass"]);
    let mut pass = true;
    let mut worst: f64 = 0.0;
    for (name, spec) in [("two_speed", two_speed()), ("cantor_gap", cantor_gap())] {
        for r in graph_report(&spec, &EPS_LIST, 5.0)? {
            pass &= r.pass;
            worst = worst.max(r.distance / r.bound);
            t.push(row![name, r.eps, r.distance, r.bound, r.pass]);
        }
    }
    Ok(Checked { pass, summary: format!("worst distance/bound {worst:.3}"), tables: vec![t] })
}

const PATHS: usize = 100_000;

fn stop(seed: u64) -> Result<Checked> {
    let sigmas: Vec<f64> = (4..=10).map(|n| 2f64.powi(-n)).collect();
    stop_escapes(&sigmas, PATHS, 1e-3, seed)
}

/// Escapes from the stop plateau `[-sqrt σ, sqrt σ]` by `t = 1`, started at
/// 0. A row passes with zero escapes, and for `σ <= 2^-6` also needs the
/// reflection bound below 1e-10.
pub fn stop_escapes(sigmas: &[f64], paths: usize, dt: f64, seed: u64) -> Result<Checked> {
    let mut t = Table::new("c03_stop", &["sigma", "paths", "escapes", "expected", "reflection_bound", "pass"]);
    let mut pass = true;
    let mut notes = Vec::new();
    for (k, &sigma) in sigmas.iter().enumerate() {
        let scheme = build_scheme(&SchemeParams::Stop { a: 1.0, b: 1.0 }, sigma)?;
        let (lo, hi) = scheme.window().expect("stop has a plateau");
        let run = SdeRun { dt, horizon: 1.0, barriers: (lo, hi), bridge: false, occupation: None };
        let sum = ExitSummary::of(&simulate_sde(&scheme.sde(), 0.0, &run, paths, derive_seed(seed, k as u64 + 4))?);
        let bound = reflection_bound(sigma, 1.0);
        let expected = bound * paths as f64;
        let ok = sum.escaped() == 0 && (sigma > 2f64.powi(-6) || bound < 1e-10);
        pass &= ok;
        if sum.escaped() > 0 {
            notes.push(format!("σ={sigma}: {} escapes, bound allows {expected:.1}", sum.escaped()));
        }
        t.push(row![sigma, paths, sum.escaped(), expected, bound, ok]);
    }
    let summary = if notes.is_empty() { format!("no escapes for {} noise levels", sigmas.len()) } else { notes.join("; ") };
    Ok(Checked { pass, summary, tables: vec![t] })
}

fn branch(seed: u64) -> Result<Checked> {
    branch_frequencies(-1.0, 1.0, 0.1, &[0.2, 0.5, 0.8], PATHS, 1e-4, seed)
}

/// Right-exit frequency from `[-1, 1]` of the branch diffusion started at 0,
/// against the 3σ binomial interval around `θ`.
pub fn branch_frequencies(a: f64, b: f64, sigma: f64, thetas: &[f64], paths: usize, dt: f64, seed: u64) -> Result<Checked> {
    let mut t = Table::new("c04_branch", &["theta", "zeta", "xi", "paths", "right", "frequency", "ci_3sigma", "pass"]);
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, &theta) in thetas.iter().enumerate() {
        let scheme = build_scheme(&SchemeParams::Branch { a, b, theta }, sigma)?;
        let run = SdeRun { dt, horizon: 20.0, barriers: (-1.0, 1.0), bridge: false, occupation: None };
        let sum = ExitSummary::of(&simulate_sde(&scheme.sde(), 0.0, &run, paths, derive_seed(seed, k as u64))?);
        let freq = sum.right_fraction();
        let ci = binomial_3sigma(theta, paths);
        let ok = (freq - theta).abs() <= ci && sum.horizon == 0;
        pass &= ok;
        parts.push(format!("θ={theta}: {freq:.4}±{ci:.4}"));
        t.push(row![theta, scheme.zeta.map_or(f64::NAN, |z| z.zeta), scheme.xi.unwrap_or(f64::NAN), paths, sum.right, freq, ci, ok]);
    }
    Ok(Checked { pass, summary: parts.join(", "), tables: vec![t] })
}

fn exit_oracle(seed: u64) -> Result<Checked> {
    exit_oracle_runs(&[(-1.0, 2.0, 0.25, 0.0), (-1.0, 1.0, 0.1, -0.02)], PATHS, 1e-4, seed)
}

/// Monte Carlo mean exit time and point of the rescaled branch diffusion
/// from `[-1, 1]` for each `(a, b, σ, y0)`, against the closed forms.
pub fn exit_oracle_runs(sets: &[(f64, f64, f64, f64)], paths: usize, dt: f64, seed: u64) -> Result<Checked> {
    let mut t = Table::new(
        "c05_exit_oracle",
        &["a", "b", "sigma", "y0", "paths", "time_mc", "time_se", "time_exact", "point_mc", "point_se", "point_exact", "pass"],
    );
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, &(a, b, sigma, y0)) in sets.iter().enumerate() {
        let st = exit_stats(a, b, sigma)?;
        let run = SdeRun { dt, horizon: 20.0, barriers: (-1.0, 1.0), bridge: false, occupation: None };
        let sum = ExitSummary::of(&simulate_sde(&st.rescaled_sde(), y0, &run, paths, derive_seed(seed, k as u64))?);
        let (te, xe) = (st.mean_exit_time(y0), st.mean_exit_point(y0));
        let ok = (sum.mean_time - te).abs() <= 3.0 * sum.time_stderr
            && (sum.mean_position - xe).abs() <= 3.0 * sum.position_stderr
            && sum.horizon == 0;
        pass &= ok;
        parts.push(format!("T {:.4}/{te:.4} X {:.4}/{xe:.4}", sum.mean_time, sum.mean_position));
        t.push(row![a, b, sigma, y0, paths, sum.mean_time, sum.time_stderr, te, sum.mean_position, sum.position_stderr, xe, ok]);
    }
    Ok(Checked { pass, summary: format!("MC/exact {}", parts.join("; ")), tables: vec![t] })
}

/// Final L1 bound of the wait criterion.
pub const WAIT_FINAL_L1: f64 = 0.05;

fn wait_pde() -> Result<Checked> {
    wait_pde_report(1.0, 1.0, &[2.0, 3.0, 4.0], WAIT_FINAL_L1)
}

/// Wait-case PDE solves at `t = 1` on the window `[-0.5, 2]`: bracket,
/// strict decrease of the L1 distance to the Poisson kernel, and the last
/// distance below `final_bound`.
pub fn wait_pde_report(lambda: f64, b: f64, s_list: &[f64], final_bound: f64) -> Result<Checked> {
    let rep = bracket_and_converge(lambda, 1.0, b, s_list, 1.0, (-0.5, 2.0), &Case3Grid::default())?;
    let mut t = Table::new(
        "c06_wait_pde",
        &["s", "eps", "sigma", "eta", "nodes", "steps", "l1", "tol_grid", "lower_gap", "upper_gap", "bracket_ok", "monotone", "leakage"],
    );
    for r in &rep.rows {
        t.push(row![r.s, r.eps, r.sigma, r.eta, r.nodes, r.steps, r.l1, r.tol_grid, r.lower_gap, r.upper_gap, r.bracket_ok, r.monotone, r.leakage]);
    }
    let l1: Vec<String> = rep.rows.iter().map(|r| format!("{:.4}", r.l1)).collect();
    let summary = format!(
        "bracket {}, L1 {} ({}), final < {final_bound}: {}",
        if rep.bracket_ok() { "ok" } else { "violated" },
        l1.join(", "),
        if rep.decreasing { "decreasing" } else { "not decreasing" },
        rep.final_l1 < final_bound
    );
    Ok(Checked { pass: rep.pass(final_bound), summary, tables: vec![t] })
}

fn wait_kernel(seed: u64) -> Result<Checked> {
    let spec = poisson_wait(1.0, 1.0);
    let emp = empirical_kernel(&spec, 0.0, 1.0, PATHS, seed)?;
    let exact = PoissonKernel { lambda: 1.0, b: 1.0, t: 1.0 };
    let d = kolmogorov(&emp, &exact);
    let mut t = Table::new("c07_wait_kernel", &["x", "empirical", "exact"]);
    for i in 0..=100 {
        let x = -0.5 + 2.5 * i as f64 / 100.0;
        t.push(row![x, emp.eval(x), exact.eval(x)]);
    }
    Ok(Checked { pass: d <= 0.01, summary: format!("Kolmogorov {d:.5} <= 0.01"), tables: vec![t] })
}

fn chained(seed: u64) -> Result<Checked> {
    let spec = three_gap();
    let (x_bar, t_end) = (-1.0, 3.0);
    let (n_local, n_direct, cells) = (20_000usize, PATHS, 1000usize);
    let z: Vec<f64> = (0..=40).map(|i| -1.0 + 4.0 * i as f64 / 40.0).collect();
    let pieces = local_pieces(&spec, x_bar, t_end, &z, n_local, derive_seed(seed, 1))?;
    let global = global_from_local(&pieces, cells);
    let half = global_from_local(&pieces, cells / 2);
    let direct = empirical_kernel(&spec, x_bar, t_end, n_direct, derive_seed(seed, 2))?;
    let ys = &pieces.ys;
    let mut t = Table::new("c08_chained", &["z", "chained", "direct", "mc_error", "grid_error", "tolerance", "pass"]);
    let mut pass = true;
    let mut worst: f64 = 0.0;
    for &zz in &z {
        let (g, d) = (global.eval(zz), direct.eval(zz));
        // Convolving with a probability law does not increase a sup-norm
        // error, so the chain's error is at most the sum over its pieces.
        let pieces_used = (ys.partition_point(|&y| y <= zz).saturating_sub(1)).saturating_sub(pieces.start) + 1;
        let p = d.clamp(0.0, 1.0);
        let se_direct = (p * (1.0 - p) / n_direct as f64).sqrt();
        let se_chain = pieces_used as f64 * 0.5 / (n_local as f64).sqrt();
        let mc = se_direct.hypot(se_chain);
        let grid = (g - half.eval(zz)).abs();
        let tol = 3.0 * (mc + grid);
        let ok = (g - d).abs() <= tol;
        pass &= ok;
        worst = worst.max((g - d).abs() / tol);
        t.push(row![zz, g, d, mc, grid, tol, ok]);
    }
    Ok(Checked { pass, summary: format!("{} levels, worst |chained - direct|/tolerance {worst:.3}", z.len()), tables: vec![t] })
}

/// Random deterministic scenario: up to four breakpoints in `[-3, 3]`,
/// speeds in `±[0.25, 2]` or 0, admissible values at the breakpoints, and
/// a random direction at every branch point.
pub fn random_scenario<R: Rng + ?Sized>(rng: &mut R) -> SemigroupSpec {
    loop {
        let k = rng.random_range(1..=4usize);
        let mut bps: Vec<f64> = (0..k).map(|_| (rng.random_range(-3.0..3.0f64) * 100.0).round() / 100.0).collect();
        bps.sort_by(f64::total_cmp);
        bps.dedup();
        let values: Vec<f64> = (0..=bps.len())
            .map(|_| {
                if rng.random_bool(0.2) {
                    0.0
                } else {
                    let v = rng.random_range(0.25..2.0f64);
                    if rng.random_bool(0.5) { v } else { -v }
                }
            })
            .collect();
        let at: Vec<f64> = (0..bps.len())
            .map(|i| match rng.random_range(0..3) {
                0 => values[i],
                1 => values[i + 1],
                _ => 0.0,
            })
            .collect();
        let mut spec = SemigroupSpec::new(FieldSpec::piecewise_constant(bps.clone(), values.clone(), at.clone()));
        for i in 0..bps.len() {
            if values[i] < 0.0 && values[i + 1] > 0.0 && at[i] == 0.0 {
                let phi = if rng.random_bool(0.5) { 1 } else { -1 };
                spec.branches.push(Branch { x: bps[i], phi: Some(phi), theta: None });
            }
        }
        if spec.mode() == Mode::Deterministic && validate(&spec).is_valid() {
            return spec;
        }
    }
}

fn semigroup(seed: u64) -> Result<Checked> {
    let mut rng = stream(seed, 0);
    let mut t = Table::new("c09_semigroup", &["case", "x0", "s", "t", "direct", "composed", "difference", "monotone", "pass"]);
    let mut pass = true;
    let mut worst: f64 = 0.0;
    let mut failures = 0usize;
    for i in 0..1000usize {
        let spec = random_scenario(&mut rng);
        let flow = Flow::new(&spec);
        let x0 = if rng.random_bool(0.1) {
            spec.field.breakpoints[rng.random_range(0..spec.field.breakpoints.len())]
        } else {
            rng.random_range(-4.0..4.0f64)
        };
        let (s, tt) = (rng.random_range(0.0..3.0f64), rng.random_range(0.0..3.0f64));
        let direct = flow.flow(x0, s + tt)?.position;
        let mid = flow.flow(x0, s)?.position;
        let composed = flow.flow(mid, tt)?.position;
        let diff = (direct - composed).abs();
        let path = flow.trajectory(x0, &time_grid(s + tt, 64))?;
        let monotone = path.windows(2).all(|w| w[1] >= w[0]) || path.windows(2).all(|w| w[1] <= w[0]);
        let ok = diff <= 1e-8 && monotone;
        if !ok {
            failures += 1;
        }
        pass &= ok;
        worst = worst.max(diff);
        t.push(row![i, x0, s, tt, direct, composed, diff, monotone, ok]);
    }
    Ok(Checked { pass, summary: format!("1000 triples, {failures} failures, worst |S_(s+t) - S_t S_s| {worst:.2e}"), tables: vec![t] })
}

fn profiles() -> Result<Checked> {
    let mut t = Table::new(
        "c10_profiles",
        &[
            "s", "delta", "w1", "dw1", "residual", "w_delta_1", "dw_delta_1", "residual_delta", "s_delta", "lambda_delta", "increasing",
            "s_delta_ok", "endpoint_ok", "lambda_ok", "residual_ok", "boundary_ok",
        ],
    );
    let mut pass = true;
    let mut bad = Vec::new();
    for s in [4.0f64, 9.0, 16.0] {
        let c = check_profiles(s, 1.0, 1.0 / s.sqrt())?;
        pass &= c.pass();
        if !c.lambda_ok {
            bad.push(format!("s={s}: λ_δ={:.2e} < λ-δ={:.3}", c.lambda_delta, 1.0 - c.delta));
        }
        if !(c.increasing && c.s_delta_ok && c.endpoint_ok && c.residual_ok && c.boundary_ok) {
            bad.push(format!("s={s}: shape checks failed"));
        }
        t.push(row![
            s, c.delta, c.w1, c.dw1, c.residual, c.w_delta_1, c.dw_delta_1, c.residual_delta, c.s_delta, c.lambda_delta, c.increasing,
            c.s_delta_ok, c.endpoint_ok, c.lambda_ok, c.residual_ok, c.boundary_ok
        ]);
    }
    let summary = if bad.is_empty() { "all profile invariants hold".to_string() } else { bad.join("; ") };
    Ok(Checked { pass, summary, tables: vec![t] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_scenarios_are_valid_and_repeatable() {
        let a: Vec<String> = (0..20).map(|i| random_scenario(&mut stream(5, i)).to_json()).collect();
        let b: Vec<String> = (0..20).map(|i| random_scenario(&mut stream(5, i)).to_json()).collect();
        assert_eq!(a, b);
        for i in 0..20 {
            let s = random_scenario(&mut stream(5, i));
            assert!(validate(&s).is_valid());
            assert_eq!(s.mode(), Mode::Deterministic);
        }
    }

    #[test]
    fn fast_criteria_run() {
        for id in [2u8, 10] {
            let c = run_check(id, 1).unwrap();
            assert_eq!(c.tables.len(), 1);
            assert!(!c.summary.is_empty());
        }
        assert!(run_check(12, 1).is_err());
    }

    #[test]
    fn outcome_line_format() {
        let o = Outcome {
            id: 3,
            name: "x".into(),
            pass: false,
            checks_pass: false,
            seconds: 1.25,
            budget: 60.0,
            summary: "s".into(),
            digests: vec![],
        };
        assert_eq!(o.line(), "FAIL  3 x [1.2s/60s] s");
    }
}
