//! `semiflow` command-line runner. Exit codes: 0 when every requested check
//! passes, 1 when a check fails, 2 for usage, parse or runtime errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use semiflow::accept::{self, Checked, SuiteOptions, DEFAULT_SEED};
use semiflow::artifact::{write_json, Artifact, Table};
use semiflow::flow::{caratheodory_residual, time_grid, Flow};
use semiflow::markov::{analytic_kernel, empirical_kernel, Sampler};
use semiflow::metrics::{dkw_radius, kolmogorov, Cdf};
use semiflow::row;
use semiflow::scenario::{validate, Mode, SemigroupSpec};
use semiflow::smooth::{convergence_report, graph_report};
use semiflow::stopped::{global_from_local, local_pieces};

#[derive(Parser, Debug)]
#[command(name = "semiflow", version, about = "Semigroups of discontinuous scalar ODEs and their approximations")]
struct Cli {
    /// Scenario JSON file.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Directory for CSV and JSON outputs.
    #[arg(long, global = true, default_value = "semiflow-out")]
    out_dir: PathBuf,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true, env = "SEMIFLOW_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a scenario against the model's structural conditions.
    Validate,
    /// Deterministic flow from each start on a time grid.
    Flow {
        #[arg(long, value_delimiter = ',', default_value = "0", allow_hyphen_values = true)]
        x0: Vec<f64>,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        t_max: f64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
    },
    /// Empirical transition kernel, compared with the closed form when one exists.
    Sample {
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        x0: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        t: f64,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        /// Output grid as `lo,hi,points`.
        #[arg(long, value_delimiter = ',', default_value = "-2,2,201", allow_hyphen_values = true)]
        grid: Vec<f64>,
    },
    /// Sampled paths as segment lists.
    Paths {
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        x0: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        horizon: f64,
        #[arg(long, default_value_t = 10)]
        n: usize,
    },
    /// Kernel chained from one-gap passage laws against direct sampling.
    Stopped {
        #[arg(long, allow_hyphen_values = true)]
        x_bar: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        t: f64,
        /// Levels as `lo,hi,points`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        z: Vec<f64>,
        #[arg(long, default_value_t = 20_000)]
        n: usize,
        #[arg(long, default_value_t = 100_000)]
        direct_n: usize,
        #[arg(long, default_value_t = 1000)]
        cells: usize,
    },
    /// Smooth approximations: flow rate and graph distance for each eps.
    Smooth {
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.1,0.05,0.025", allow_hyphen_values = true)]
        eps: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0", allow_hyphen_values = true)]
        x0: Vec<f64>,
        /// Half-width of the graph window.
        #[arg(long, default_value_t = 5.0, allow_hyphen_values = true)]
        window: f64,
    },
    /// Vanishing-noise diffusions: stop, branch and exit-statistics runs.
    Diffuse {
        #[arg(long, value_enum)]
        case: DiffuseCase,
        #[arg(long, value_delimiter = ',', default_value = "0.1", allow_hyphen_values = true)]
        sigma: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.5", allow_hyphen_values = true)]
        theta: Vec<f64>,
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        a: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        b: f64,
        /// Start of the exit run, in the rescaled variable.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        y0: f64,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 1e-4, allow_hyphen_values = true)]
        dt: f64,
    },
    /// Wait-case PDE solves bracketed by the barrier functions.
    Pde {
        #[arg(long, value_delimiter = ',', default_value = "2,3,4", allow_hyphen_values = true)]
        s: Vec<f64>,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        b: f64,
        /// Bound on the last L1 distance.
        #[arg(long, default_value_t = accept::WAIT_FINAL_L1)]
        final_l1: f64,
    },
    /// Run the acceptance suite.
    Accept {
        /// Criteria to run (default: all).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        only: Vec<u8>,
        /// Pool size of the determinism re-run.
        #[arg(long, default_value_t = 8)]
        rerun_threads: usize,
        /// Report wall times without failing over-budget criteria.
        #[arg(long)]
        no_budget: bool,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum DiffuseCase {
    Stop,
    Branch,
    Exit,
}

/// Outcome of a command: whether its checks passed, and what it wrote.
struct Done {
    pass: bool,
    artifacts: Vec<Artifact>,
}

fn load(path: &Option<PathBuf>) -> Result<SemigroupSpec> {
    let p = path.as_ref().context("this command needs --scenario <FILE>")?;
    SemigroupSpec::load(p).with_context(|| format!("reading scenario {}", p.display()))
}

fn write(out: &Path, tables: &[Table]) -> Result<Vec<Artifact>> {
    tables.iter().map(|t| t.write(out).map_err(Into::into)).collect()
}

fn checked(out: &Path, c: Checked) -> Result<Done> {
    println!("{}: {}", if c.pass { "pass" } else { "fail" }, c.summary);
    Ok(Done { pass: c.pass, artifacts: write(out, &c.tables)? })
}

fn range(v: &[f64], what: &str) -> Result<Vec<f64>> {
    match *v {
        [lo, hi, n] if hi > lo && n >= 2.0 && n.fract() == 0.0 => {
            let n = n as usize;
            Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
        }
        _ => bail!("--{what} takes lo,hi,points with lo < hi and an integer points >= 2"),
    }
}

fn run(cli: &Cli) -> Result<Done> {
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::Validate => {
            let spec = load(&cli.scenario)?;
            let rep = validate(&spec);
            println!("{}", serde_json::to_string_pretty(&rep)?);
            Ok(Done { pass: rep.is_valid(), artifacts: vec![write_json(out, "validation", &rep)?] })
        }
        Command::Flow { x0, t_max, steps } => {
            let spec = load(&cli.scenario)?;
            if spec.mode() != Mode::Deterministic {
                bail!("flow needs a deterministic scenario (no waits, no random branches)");
            }
            let flow = Flow::new(&spec);
            let times = time_grid(*t_max, *steps);
            let mut t = Table::new("flow", &["x0", "t", "x"]);
            let mut r = Table::new("flow_residual", &["x0", "t", "caratheodory_residual"]);
            let mut worst: f64 = 0.0;
            for &x in x0 {
                for (&tt, xt) in times.iter().zip(flow.trajectory(x, &times)?) {
                    t.push(row![x, tt, xt]);
                }
                let res = caratheodory_residual(&flow, x, *t_max)?;
                worst = worst.max(res);
                r.push(row![x, *t_max, res]);
            }
            println!("largest Carathéodory residual {worst:.2e}");
            Ok(Done { pass: worst <= 1e-6, artifacts: write(out, &[t, r])? })
        }
        Command::Sample { x0, t, n, grid } => {
            let spec = load(&cli.scenario)?;
            let xs = range(grid, "grid")?;
            let emp = empirical_kernel(&spec, *x0, *t, *n, cli.seed)?;
            let exact = analytic_kernel(&spec, *x0, *t).ok();
            let mut tab = Table::new("kernel", &["x", "empirical", "exact"]);
            for &x in &xs {
                tab.push(row![x, emp.eval(x), exact.as_ref().map_or(f64::NAN, |k| k.eval(x))]);
            }
            let pass = match &exact {
                Some(k) => {
                    let d = kolmogorov(&emp, k);
                    let r = dkw_radius(*n, 0.01);
                    println!("Kolmogorov distance {d:.5}, DKW 99% radius {r:.5}");
                    d <= r
                }
                None => {
                    println!("no closed-form kernel for this scenario; empirical kernel only");
                    true
                }
            };
            Ok(Done { pass, artifacts: write(out, &[tab])? })
        }
        Command::Paths { x0, horizon, n } => {
            let spec = load(&cli.scenario)?;
            let sampler = Sampler::new(&spec);
            let mut tab = Table::new("paths", &["path", "t0", "t1", "kind", "from", "to"]);
            for i in 0..*n {
                let p = sampler.sample(*x0, *horizon, cli.seed, i as u64);
                for s in &p.segments {
                    match s.kind {
                        semiflow::markov::SegmentKind::Wait { x } => tab.push(row![i, s.t0, s.t1, "wait", x, x]),
                        semiflow::markov::SegmentKind::Move { from, to, .. } => tab.push(row![i, s.t0, s.t1, "move", from, to]),
                    }
                }
            }
            Ok(Done { pass: true, artifacts: write(out, &[tab])? })
        }
        Command::Stopped { x_bar, t, z, n, direct_n, cells } => {
            let spec = load(&cli.scenario)?;
            let zs = range(z, "z")?;
            let pieces = local_pieces(&spec, *x_bar, *t, &zs, *n, cli.seed)?;
            let global = global_from_local(&pieces, *cells);
            let direct = empirical_kernel(&spec, *x_bar, *t, *direct_n, cli.seed.wrapping_add(1))?;
            let mut tab = Table::new("stopped", &["z", "chained", "direct"]);
            let mut worst: f64 = 0.0;
            for &zz in &zs {
                worst = worst.max((global.eval(zz) - direct.eval(zz)).abs());
                tab.push(row![zz, global.eval(zz), direct.eval(zz)]);
            }
            let tol = 3.0 * (dkw_radius(*direct_n, 0.01) + dkw_radius(*n, 0.01) * (pieces.ys.len() as f64));
            println!("largest |chained - direct| {worst:.5}, tolerance {tol:.5}");
            Ok(Done { pass: worst <= tol, artifacts: write(out, &[tab])? })
        }
        Command::Smooth { eps, x0, window } => {
            let spec = load(&cli.scenario)?;
            let mut rate = Table::new("smooth_rate", &["eps", "x0", "start", "sup_error", "sup_upper", "bound", "pass"]);
            let mut pass = true;
            for &x in x0 {
                for r in convergence_report(&spec, x, eps)? {
                    pass &= r.pass;
                    rate.push(row![r.eps, r.x0, r.case.label(), r.sup_error, r.sup_upper, r.bound, r.pass]);
                }
            }
            let mut graph = Table::new("smooth_graph", &["eps", "distance", "bound", "pass"]);
            for r in graph_report(&spec, eps, *window)? {
                pass &= r.pass;
                graph.push(row![r.eps, r.distance, r.bound, r.pass]);
            }
            println!("{}", if pass { "all rows within bounds" } else { "some rows exceed their bound" });
            Ok(Done { pass, artifacts: write(out, &[rate, graph])? })
        }
        Command::Diffuse { case, sigma, theta, a, b, y0, n, dt } => {
            let c = match case {
                DiffuseCase::Stop => accept::stop_escapes(sigma, *n, *dt, cli.seed)?,
                DiffuseCase::Branch => {
                    let &[s] = sigma.as_slice() else { bail!("branch runs take one --sigma") };
                    accept::branch_frequencies(*a, *b, s, theta, *n, *dt, cli.seed)?
                }
                DiffuseCase::Exit => {
                    let sets: Vec<_> = sigma.iter().map(|&s| (*a, *b, s, *y0)).collect();
                    accept::exit_oracle_runs(&sets, *n, *dt, cli.seed)?
                }
            };
            checked(out, c)
        }
        Command::Pde { s, lambda, b, final_l1 } => checked(out, accept::wait_pde_report(*lambda, *b, s, *final_l1)?),
        Command::Accept { only, rerun_threads, no_budget } => {
            let opts = SuiteOptions {
                seed: cli.seed,
                only: only.clone(),
                threads: cli.threads.unwrap_or(1),
                rerun_threads: *rerun_threads,
                out_dir: Some(cli.out_dir.clone()),
                enforce_budget: !no_budget,
            };
            let rep = accept::run_suite(&opts, |o| println!("{}", o.line()))?;
            println!("summary hash {}", rep.summary_hash);
            Ok(Done { pass: rep.all_pass(), artifacts: rep.artifacts })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(done) => {
            for a in &done.artifacts {
                println!("wrote {} ({})", a.path.display(), &a.sha256[..16]);
            }
            ExitCode::from(if done.pass { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
