//! Local-to-global assembly of transition kernels: paths are stopped at the
//! midpoints between consecutive special points, the stopped laws are
//! recorded as distribution functions on `Σ = {t}×ℝ ∪ [0,t]×{y_j}`, and the
//! kernel at time `t` is rebuilt by Stieltjes convolution of the one-gap
//! passage laws.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::markov::{SamplePath, Sampler, SegmentKind};
use crate::metrics::{Cdf, CdfCurve, Interp};
use crate::rng::derive_seed;
use crate::scenario::SemigroupSpec;

/// A source of random paths that can be stopped at levels.
pub trait PathSource: Sync {
    type Path: Send;

    /// Path `index` of the run `seed`, from `x0` on `[0, horizon]`.
    fn draw(&self, x0: f64, horizon: f64, seed: u64, index: u64) -> Self::Path;

    /// First time the path sits at a level other than `exclude`, with that level.
    fn first_hit(&self, path: &Self::Path, levels: &[f64], exclude: f64) -> Option<(f64, f64)>;

    fn position(&self, path: &Self::Path, t: f64) -> f64;
}

impl PathSource for Sampler<'_> {
    type Path = SamplePath;

    fn draw(&self, x0: f64, horizon: f64, seed: u64, index: u64) -> SamplePath {
        self.sample(x0, horizon, seed, index)
    }

    fn first_hit(&self, path: &SamplePath, levels: &[f64], exclude: f64) -> Option<(f64, f64)> {
        for seg in &path.segments {
            let SegmentKind::Move { from, to, up } = seg.kind else { continue };
            let crossed = levels.iter().copied().filter(|&y| {
                y != exclude && if up { y > from && y <= to } else { y < from && y >= to }
            });
            let nearest = if up { crossed.fold(f64::INFINITY, f64::min) } else { crossed.fold(f64::NEG_INFINITY, f64::max) };
            if nearest.is_finite() {
                let dir = if up { crate::flow::Direction::Up } else { crate::flow::Direction::Down };
                let dt = self.flow().travel_time_unchecked(from.min(nearest), from.max(nearest), dir);
                return Some((seg.t0 + dt, nearest));
            }
        }
        None
    }

    fn position(&self, path: &SamplePath, t: f64) -> f64 {
        Sampler::position(self, path, t)
    }
}

/// First time a monotone path is strictly past `z` in its direction of
/// motion (the time it leaves `z`, or passes it).
pub fn first_beyond(sampler: &Sampler<'_>, path: &SamplePath, z: f64) -> Option<f64> {
    let up_path = path.segments.iter().find_map(|s| match s.kind {
        SegmentKind::Move { up, .. } => Some(up),
        _ => None,
    })?;
    let past = |x: f64| if up_path { x > z } else { x < z };
    if past(path.x0) {
        return Some(0.0);
    }
    for seg in &path.segments {
        let SegmentKind::Move { from, to, up } = seg.kind else { continue };
        let inside = if up { from <= z && z < to } else { to < z && z <= from };
        if inside {
            let dir = if up { crate::flow::Direction::Up } else { crate::flow::Direction::Down };
            let dt = sampler.flow().travel_time_unchecked(from.min(z), from.max(z), dir);
            return Some(seg.t0 + dt);
        }
    }
    None
}

/// Midpoints of consecutive special points of a spec with property (P).
pub fn midpoints(spec: &SemigroupSpec) -> Result<Vec<f64>> {
    if !spec.has_property_p() {
        return Err(Error::Unsupported("midpoints need a piecewise-constant spec without waiting mass".into()));
    }
    midpoints_of(&spec.special_points())
}

/// Midpoints of a sorted list of points.
pub fn midpoints_of(points: &[f64]) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Err(invalid("need at least two special points"));
    }
    Ok(points.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect())
}

/// Law of `(τ ∧ t, X(τ ∧ t))` on `Σ`, with `τ` the first hit of a level
/// other than the start.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppedMeasure {
    pub t_horizon: f64,
    pub y_points: Vec<f64>,
    /// `s ↦ mass on [0, s] × {y_j}`.
    pub vertical: Vec<CdfCurve>,
    /// `y ↦ mass on {t} × (-∞, y]`.
    pub terminal: CdfCurve,
}

impl StoppedMeasure {
    pub fn vertical_mass(&self) -> f64 {
        self.vertical.iter().map(|c| c.ys.last().copied().unwrap_or(0.0)).sum()
    }

    pub fn terminal_mass(&self) -> f64 {
        self.terminal.ys.last().copied().unwrap_or(0.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.vertical_mass() + self.terminal_mass()
    }
}

fn weighted_step(mut xs: Vec<f64>, w: f64) -> CdfCurve {
    xs.sort_by(f64::total_cmp);
    let mut out_x: Vec<f64> = Vec::new();
    let mut out_y: Vec<f64> = Vec::new();
    for (i, x) in xs.iter().enumerate() {
        let m = (i + 1) as f64 * w;
        if out_x.last() == Some(x) {
            *out_y.last_mut().unwrap() = m;
        } else {
            out_x.push(*x);
            out_y.push(m);
        }
    }
    CdfCurve::new(out_x, out_y, Interp::Step)
}

/// Empirical stopped measure from `n` paths started at `x_bar`.
pub fn stopped_measure<S: PathSource>(source: &S, ys: &[f64], x_bar: f64, t: f64, n: usize, seed: u64) -> Result<StoppedMeasure> {
    if ys.is_empty() || x_bar < ys[0] || x_bar > ys[ys.len() - 1] {
        return Err(invalid(format!("start {x_bar} lies outside the midpoint range")));
    }
    if n == 0 || !(t > 0.0) {
        return Err(invalid("stopped_measure needs n >= 1 and t > 0"));
    }
    let outcomes: Vec<(Option<usize>, f64)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let path = source.draw(x_bar, t, seed, i);
            match source.first_hit(&path, ys, x_bar) {
                Some((tau, y)) if tau < t => {
                    let j = ys.iter().position(|&v| v == y).expect("hit levels come from ys");
                    (Some(j), tau)
                }
                _ => (None, source.position(&path, t)),
            }
        })
        .collect();
    let w = 1.0 / n as f64;
    let vertical = (0..ys.len())
        .map(|j| weighted_step(outcomes.iter().filter(|o| o.0 == Some(j)).map(|o| o.1).collect(), w))
        .collect();
    let terminal = weighted_step(outcomes.iter().filter(|o| o.0.is_none()).map(|o| o.1).collect(), w);
    Ok(StoppedMeasure { t_horizon: t, y_points: ys.to_vec(), vertical, terminal })
}

/// `Γ(τ)`: probability that a path from `ys[j-1]` reaches `ys[j]` within `τ`
/// before touching any other level, for `τ ∈ [0, t]`.
pub fn local_gamma<S: PathSource>(source: &S, ys: &[f64], j: usize, t: f64, n: usize, seed: u64) -> Result<CdfCurve> {
    if j == 0 || j >= ys.len() {
        return Err(invalid(format!("gap index {j} out of range")));
    }
    let m = stopped_measure(source, ys, ys[j - 1], t, n, seed)?;
    Ok(m.vertical[j].clone())
}

/// Uniform time grid on `[0, t]` with `cells` cells.
pub fn time_grid(t: f64, cells: usize) -> Vec<f64> {
    (0..=cells).map(|i| t * i as f64 / cells as f64).collect()
}

/// Masses of `dF` on the grid: `F(τ_0)` at `τ_0`, then each cell increment at
/// the cell midpoint.
fn grid_masses(f: &dyn Cdf, grid: &[f64]) -> Vec<(f64, f64)> {
    let mut out = vec![(grid[0], f.eval(grid[0]))];
    for w in grid.windows(2) {
        out.push((0.5 * (w[0] + w[1]), f.eval(w[1]) - f.eval(w[0])));
    }
    out
}

/// `∫_0^τ g(τ - ζ) dF(ζ)` by midpoint masses.
pub fn stieltjes_at(g: &dyn Cdf, f: &dyn Cdf, tau: f64, grid: &[f64]) -> f64 {
    grid_masses(f, grid).iter().filter(|m| m.0 <= tau).map(|&(z, m)| m * g.eval(tau - z)).sum()
}

/// `F_next(τ) = ∫_0^τ Γ(τ - ζ) dF_prev(ζ)` on `grid`, as a linear curve.
///
/// The increments of `F_prev` are placed at cell midpoints, which biases
/// times by at most half a cell.
pub fn compose_step(f_prev: &dyn Cdf, gamma: &dyn Cdf, grid: &[f64]) -> CdfCurve {
    let masses = grid_masses(f_prev, grid);
    let ys = grid
        .iter()
        .map(|&tau| masses.iter().take_while(|m| m.0 <= tau).map(|&(z, m)| m * gamma.eval(tau - z)).sum::<f64>())
        .collect();
    CdfCurve::new(grid.to_vec(), ys, Interp::Linear)
}

/// Local passage laws of a monotone increasing Markov scenario, estimated
/// from paths.
#[derive(Debug, Clone, Serialize)]
pub struct LocalPieces {
    pub ys: Vec<f64>,
    pub x_bar: f64,
    pub t: f64,
    /// Index `i` with `ys[i] <= x_bar < ys[i + 1]`.
    pub start: usize,
    /// Arrival law at `ys[start + 1]` from `x_bar`.
    pub first: CdfCurve,
    /// `gamma[j]`: arrival law at `ys[j]` from `ys[j - 1]`, for `j > start + 1`.
    pub gamma: Vec<Option<CdfCurve>>,
    /// `(z, Λ_z)`: law of the time at which a path from the gap's left
    /// midpoint (or `x_bar` in the first gap) is past `z`.
    pub lambda: Vec<(f64, CdfCurve)>,
}

/// Estimate the local pieces from `n` paths per starting point.
pub fn local_pieces(spec: &SemigroupSpec, x_bar: f64, t: f64, z_grid: &[f64], n: usize, seed: u64) -> Result<LocalPieces> {
    let ys = midpoints(spec)?;
    let sampler = Sampler::new(spec);
    if x_bar < ys[0] {
        return Err(invalid("start lies left of the first midpoint"));
    }
    let start = ys.partition_point(|&y| y <= x_bar) - 1;
    let last = ys.len() - 1;
    let from_of = |z: f64| -> (f64, usize) {
        let k = ys.partition_point(|&y| y <= z);
        if k == 0 || k - 1 <= start {
            (x_bar, start)
        } else {
            (ys[k - 1], k - 1)
        }
    };
    let first = if start < last {
        local_from(&sampler, &ys, x_bar, start + 1, t, n, derive_seed(seed, 1))?
    } else {
        CdfCurve::new(vec![], vec![], Interp::Step)
    };
    let mut gamma = vec![None; ys.len()];
    for (j, g) in gamma.iter_mut().enumerate().skip(start + 2) {
        *g = Some(local_from(&sampler, &ys, ys[j - 1], j, t, n, derive_seed(seed, 100 + j as u64))?);
    }
    let lambda = z_grid
        .iter()
        .filter(|&&z| z >= x_bar)
        .enumerate()
        .map(|(k, &z)| {
            let (from, _) = from_of(z);
            let s = derive_seed(seed, 10_000 + k as u64);
            let times: Vec<f64> = (0..n as u64)
                .into_par_iter()
                .filter_map(|i| {
                    let path = sampler.draw(from, t, s, i);
                    first_beyond(&sampler, &path, z)
                })
                .collect();
            (z, weighted_step(times, 1.0 / n as f64))
        })
        .collect();
    Ok(LocalPieces { ys, x_bar, t, start, first, gamma, lambda })
}

fn local_from(sampler: &Sampler<'_>, ys: &[f64], from: f64, j: usize, t: f64, n: usize, seed: u64) -> Result<CdfCurve> {
    let m = stopped_measure(sampler, ys, from, t, n, seed)?;
    Ok(m.vertical[j].clone())
}

/// Time-`t` kernel `z ↦ P(X_t ≤ z)` on the points of the `λ` table, built by
/// chaining the one-gap arrival laws and closing each gap with its `Λ_z`.
pub fn global_from_local(pieces: &LocalPieces, cells: usize) -> CdfCurve {
    let t = pieces.t;
    let grid = time_grid(t, cells);
    let ys = &pieces.ys;
    let last = ys.len() - 1;
    // arrivals[j]: arrival law at ys[j] for j > start.
    let mut arrivals: Vec<Option<CdfCurve>> = vec![None; ys.len()];
    if pieces.start < last {
        arrivals[pieces.start + 1] = Some(pieces.first.clone());
        for j in pieces.start + 2..=last {
            let prev = arrivals[j - 1].as_ref().expect("filled in order");
            let g = pieces.gamma[j].as_ref().expect("gamma for every later gap");
            arrivals[j] = Some(compose_step(prev, g, &grid));
        }
    }
    let mut xs = Vec::new();
    let mut vals = Vec::new();
    for (z, lam) in &pieces.lambda {
        let k = ys.partition_point(|&y| y <= *z);
        let left = k.saturating_sub(1);
        let g = if left <= pieces.start {
            1.0 - lam.eval(t)
        } else {
            let f = arrivals[left].as_ref().expect("arrival law at the gap's left midpoint");
            1.0 - stieltjes_at(lam, f, t, &grid)
        };
        xs.push(*z);
        vals.push(g.clamp(0.0, 1.0));
    }
    CdfCurve::new(xs, vals, Interp::Step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::library::bode;
    use crate::scenario::{FieldSpec, Wait};

    #[test]
    fn midpoint_examples() {
        assert_eq!(midpoints_of(&[-1.0, 0.0, 1.0]).unwrap(), vec![-0.5, 0.5]);
        assert!(midpoints_of(&[0.0]).is_err());
        let spec = SemigroupSpec { stops: vec![-1.0, 1.0], ..bode(0.0, 1.0, 0.0) };
        assert_eq!(midpoints(&spec).unwrap(), vec![-0.5, 0.5]);
    }

    #[test]
    fn constant_speed_gap_is_a_step() {
        let spec = SemigroupSpec::new(FieldSpec::constant(2.0));
        let sampler = Sampler::new(&spec);
        let ys = [0.0, 1.0];
        let g = local_gamma(&sampler, &ys, 1, 5.0, 50, 3).unwrap();
        assert_eq!(g.xs, vec![0.5]);
        assert_eq!(g.ys, vec![1.0]);
        let m = stopped_measure(&sampler, &ys, 0.5, 10.0, 20, 1).unwrap();
        assert_eq!(m.vertical[1].xs, vec![0.25]);
        assert!((m.total_mass() - 1.0).abs() < 1e-12);
        let early = stopped_measure(&sampler, &ys, 0.5, 0.1, 20, 1).unwrap();
        assert_eq!(early.terminal_mass(), 1.0);
        assert!(stopped_measure(&sampler, &ys, 2.0, 1.0, 5, 1).is_err());
    }

    #[test]
    fn compose_examples() {
        let grid = time_grid(4.0, 4000);
        let h = 4.0 / 4000.0;
        let out = compose_step(&CdfCurve::step_at(1.0), &CdfCurve::step_at(0.5), &grid);
        // Step near 1.5, within one cell.
        assert!(out.eval(1.5 - 1.5 * h) < 0.5 && out.eval(1.5 + 1.5 * h) > 0.5);
        let exp = |r: f64| CdfCurve::sample(move |x| 1.0 - (-r * x).exp(), 0.0, 8.0, 80_000);
        let id = compose_step(&CdfCurve::step_at(0.0), &exp(1.0), &grid);
        assert!((id.eval(1.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-6);
        let hypo = compose_step(&exp(1.0), &exp(2.0), &grid);
        let s: f64 = 1.3;
        let exact = 1.0 - 2.0 * (-s).exp() + (-2.0 * s).exp();
        assert!((hypo.eval(s) - exact).abs() < 1e-5, "{} vs {exact}", hypo.eval(s));
        assert!(hypo.is_monotone());
    }

    #[test]
    fn wait_then_travel_gap() {
        let mut spec = bode(1.0, 1.0, 0.0);
        spec.waits.push(Wait { x: 0.0, lambda: 2.0 });
        let sampler = Sampler::new(&spec);
        let ys = [-0.5, 0.5];
        let n = 20_000;
        let g = local_gamma(&sampler, &ys, 1, 3.0, n, 9).unwrap();
        // travel 1 plus Exp(2)
        for s in [1.2, 1.5, 2.0] {
            let exact = 1.0 - (-2.0 * (s - 1.0f64)).exp();
            assert!((g.eval(s) - exact).abs() < 0.02, "{s}");
        }
    }
}

#[cfg(test)]
mod chain_tests {
    use super::*;
    use crate::markov::empirical_kernel;
    use crate::scenario::library::three_gap;

    #[test]
    fn chain_matches_direct_sampling() {
        let spec = three_gap();
        let z: Vec<f64> = (0..=40).map(|i| -1.0 + 4.0 * i as f64 / 40.0).collect();
        let pieces = local_pieces(&spec, -1.0, 3.0, &z, 4000, 17).unwrap();
        let global = global_from_local(&pieces, 1000);
        let direct = empirical_kernel(&spec, -1.0, 3.0, 4000, 18).unwrap();
        let worst = z.iter().map(|&x| (global.eval(x) - direct.eval(x)).abs()).fold(0.0, f64::max);
        assert!(worst < 0.06, "{worst}");
    }
}
