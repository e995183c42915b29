use serde::Serialize;

use super::field::FieldSpec;
use crate::error::{invalid, Result};

/// The closed interval `F(x) = co{f(x), f(x+), f(x-)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraphInterval {
    pub lo: f64,
    pub hi: f64,
}

impl GraphInterval {
    /// Distance from the value `v` to the interval.
    pub fn gap_to(&self, v: f64) -> f64 {
        if v < self.lo {
            self.lo - v
        } else if v > self.hi {
            v - self.hi
        } else {
            0.0
        }
    }
}

/// `F(x)`: a vertical segment at jumps, a single value at continuity points.
pub fn multifunction_at(field: &FieldSpec, x: f64) -> GraphInterval {
    let (l, v, r) = field.limits_at(x);
    GraphInterval { lo: l.min(v).min(r), hi: l.max(v).max(r) }
}

/// Largest distance from the points `(x, candidate(x))`, `x` on a grid of
/// step `grid_step` in `[-window_n, window_n]`, to the graph of `F`.
///
/// The graph is discretized by vertical segments at resolution
/// `grid_step / 4` plus the exact segments at breakpoints, so the result is an
/// upper bound on the true distance, accurate to `O(grid_step)`.
pub fn graph_distance<C: Fn(f64) -> f64>(candidate: C, field: &FieldSpec, window_n: f64, grid_step: f64) -> Result<f64> {
    if !(grid_step > 0.0) {
        return Err(invalid("grid_step must be positive"));
    }
    if !(window_n > 0.0) {
        return Err(invalid("graph_distance needs a nonempty window"));
    }
    let n = (2.0 * window_n / grid_step).ceil() as usize;
    let fine = grid_step / 4.0;
    let mut worst: f64 = 0.0;
    for i in 0..=n {
        let x = (-window_n + grid_step * i as f64).min(window_n);
        let v = candidate(x);
        let mut best = multifunction_at(field, x).gap_to(v);
        if best == 0.0 {
            continue;
        }
        let dist_at = |y: f64, best: &mut f64| {
            let d = (x - y).hypot(multifunction_at(field, y).gap_to(v));
            if d < *best {
                *best = d;
            }
        };
        // Breakpoints inside the current search radius.
        let lo = field.breakpoints.partition_point(|&b| b < x - best);
        let hi = field.breakpoints.partition_point(|&b| b <= x + best);
        for &b in &field.breakpoints[lo..hi] {
            dist_at(b, &mut best);
        }
        let mut j = 1usize;
        while (j as f64) * fine < best {
            let off = j as f64 * fine;
            dist_at(x - off, &mut best);
            dist_at(x + off, &mut best);
            j += 1;
        }
        worst = worst.max(best);
    }
    Ok(worst)
}
