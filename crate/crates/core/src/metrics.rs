//! Distribution functions of transition kernels and the distances used to
//! compare them: Kolmogorov, L¹ of CDFs (Wasserstein-1 on a window), and the
//! bounded-Lipschitz dual norm.

use serde::Serialize;

/// A right-continuous distribution function that can list the points where
/// it jumps or changes slope.
pub trait Cdf {
    fn eval(&self, x: f64) -> f64;
    /// `F(x-)`.
    fn eval_left(&self, x: f64) -> f64;
    /// Points between which `F` is continuous and linear (or well resolved).
    fn knots(&self) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Interp {
    /// Right-continuous steps at the sample points.
    Step,
    /// Linear between sample points, constant outside.
    Linear,
}

/// A CDF given by sample points and values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfCurve {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub interp: Interp,
}

impl CdfCurve {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, interp: Interp) -> Self {
        assert_eq!(xs.len(), ys.len(), "CDF curve needs one value per point");
        CdfCurve { xs, ys, interp }
    }

    /// Tabulate `f` at `n + 1` equally spaced points of `[lo, hi]`.
    pub fn sample<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize) -> Self {
        let xs: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
        let ys = xs.iter().map(|&x| f(x)).collect();
        CdfCurve { xs, ys, interp: Interp::Linear }
    }

    /// Unit step at `x`.
    pub fn step_at(x: f64) -> Self {
        CdfCurve { xs: vec![x], ys: vec![1.0], interp: Interp::Step }
    }

    /// Empirical CDF of a sample.
    pub fn empirical(samples: &[f64]) -> Self {
        let k = TransitionKernelCdf::from_samples(samples);
        let mut acc = 0.0;
        let (xs, ys) = k
            .atoms
            .iter()
            .map(|&(x, m)| {
                acc += m;
                (x, acc)
            })
            .unzip();
        CdfCurve { xs, ys, interp: Interp::Step }
    }

    pub fn is_monotone(&self) -> bool {
        self.ys.windows(2).all(|w| w[1] >= w[0])
    }
}

impl Cdf for CdfCurve {
    fn eval(&self, x: f64) -> f64 {
        let k = self.xs.partition_point(|&p| p <= x);
        match self.interp {
            Interp::Step => {
                if k == 0 {
                    0.0
                } else {
                    self.ys[k - 1]
                }
            }
            Interp::Linear => {
                if self.xs.is_empty() {
                    0.0
                } else if k == 0 {
                    self.ys[0]
                } else if k == self.xs.len() {
                    self.ys[k - 1]
                } else {
                    let (x0, x1) = (self.xs[k - 1], self.xs[k]);
                    let w = (x - x0) / (x1 - x0);
                    self.ys[k - 1] + w * (self.ys[k] - self.ys[k - 1])
                }
            }
        }
    }

    fn eval_left(&self, x: f64) -> f64 {
        match self.interp {
            Interp::Step => {
                let k = self.xs.partition_point(|&p| p < x);
                if k == 0 {
                    0.0
                } else {
                    self.ys[k - 1]
                }
            }
            Interp::Linear => self.eval(x),
        }
    }

    fn knots(&self) -> Vec<f64> {
        self.xs.clone()
    }
}

/// Law of `X(t, x0, ·)`: finitely many atoms plus a continuous part stored as
/// a piecewise-linear cumulative mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionKernelCdf {
    /// `(location, mass)`, sorted by location.
    pub atoms: Vec<(f64, f64)>,
    /// `(x, continuous mass on (-∞, x])`, sorted by `x`.
    pub continuous: Vec<(f64, f64)>,
}

impl TransitionKernelCdf {
    pub fn unit_atom(x: f64) -> Self {
        TransitionKernelCdf { atoms: vec![(x, 1.0)], continuous: Vec::new() }
    }

    /// Empirical law of a sample: one atom per distinct value.
    pub fn from_samples(samples: &[f64]) -> Self {
        let mut v: Vec<f64> = samples.to_vec();
        v.sort_by(f64::total_cmp);
        let w = 1.0 / v.len() as f64;
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        let mut run = 0usize;
        for (i, &x) in v.iter().enumerate() {
            run += 1;
            if i + 1 == v.len() || v[i + 1] != x {
                atoms.push((x, run as f64 * w));
                run = 0;
            }
        }
        TransitionKernelCdf { atoms, continuous: Vec::new() }
    }

    /// Mixture `w·self + (1 - w)·other`.
    pub fn mix(&self, w: f64, other: &Self) -> Self {
        let mut atoms: Vec<(f64, f64)> =
            self.atoms.iter().map(|&(x, m)| (x, w * m)).chain(other.atoms.iter().map(|&(x, m)| (x, (1.0 - w) * m))).collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        atoms.retain(|a| a.1 > 0.0);
        let mut xs: Vec<f64> = self.continuous.iter().chain(&other.continuous).map(|p| p.0).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let continuous = xs.iter().map(|&x| (x, w * self.continuous_at(x) + (1.0 - w) * other.continuous_at(x))).collect();
        TransitionKernelCdf { atoms, continuous }
    }

    fn continuous_at(&self, x: f64) -> f64 {
        let c = &self.continuous;
        let k = c.partition_point(|p| p.0 <= x);
        if k == 0 {
            0.0
        } else if k == c.len() {
            c[k - 1].1
        } else {
            let (a, b) = (c[k - 1], c[k]);
            a.1 + (x - a.0) / (b.0 - a.0) * (b.1 - a.1)
        }
    }

    pub fn atom_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.atom_mass() + self.continuous.last().map_or(0.0, |p| p.1)
    }

    /// `x ↦ F(x)` rows on a grid, for CSV output.
    pub fn rows(&self, grid: &[f64]) -> Vec<(f64, f64)> {
        grid.iter().map(|&x| (x, self.eval(x))).collect()
    }
}

impl Cdf for TransitionKernelCdf {
    fn eval(&self, x: f64) -> f64 {
        let k = self.atoms.partition_point(|a| a.0 <= x);
        let a: f64 = self.atoms[..k].iter().map(|a| a.1).sum();
        (a + self.continuous_at(x)).min(1.0)
    }

    fn eval_left(&self, x: f64) -> f64 {
        let k = self.atoms.partition_point(|a| a.0 < x);
        let a: f64 = self.atoms[..k].iter().map(|a| a.1).sum();
        (a + self.continuous_at(x)).min(1.0)
    }

    fn knots(&self) -> Vec<f64> {
        let mut k: Vec<f64> = self.atoms.iter().map(|a| a.0).chain(self.continuous.iter().map(|p| p.0)).collect();
        k.sort_by(f64::total_cmp);
        k.dedup();
        k
    }
}

fn merged_knots(f1: &dyn Cdf, f2: &dyn Cdf) -> Vec<f64> {
    let mut k = f1.knots();
    k.extend(f2.knots());
    k.retain(|x| x.is_finite());
    k.sort_by(f64::total_cmp);
    k.dedup();
    k
}

/// `sup_x |F1(x) - F2(x)|`, exact for step and piecewise-linear curves.
pub fn kolmogorov(f1: &dyn Cdf, f2: &dyn Cdf) -> f64 {
    merged_knots(f1, f2)
        .into_iter()
        .map(|x| (f1.eval(x) - f2.eval(x)).abs().max((f1.eval_left(x) - f2.eval_left(x)).abs()))
        .fold(0.0, f64::max)
}

/// `∫_lo^hi |F1 - F2| dx`, trapezoid on the merged grid with exact treatment
/// of sign changes and jumps.
pub fn l1_cdf(f1: &dyn Cdf, f2: &dyn Cdf, window: (f64, f64)) -> f64 {
    let (lo, hi) = window;
    if !(hi > lo) {
        return 0.0;
    }
    let mut pts: Vec<f64> = merged_knots(f1, f2).into_iter().filter(|&x| x > lo && x < hi).collect();
    pts.insert(0, lo);
    pts.push(hi);
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let d0 = f1.eval(a) - f2.eval(a);
        let d1 = f1.eval_left(b) - f2.eval_left(b);
        let h = b - a;
        total += if d0 * d1 >= 0.0 {
            0.5 * h * (d0.abs() + d1.abs())
        } else {
            0.5 * h * (d0 * d0 + d1 * d1) / (d0.abs() + d1.abs())
        };
    }
    total
}

/// Bounded-Lipschitz dual distance: the L¹ distance of the CDFs capped at 2.
pub fn lipschitz_dual(f1: &dyn Cdf, f2: &dyn Cdf, window: (f64, f64)) -> f64 {
    l1_cdf(f1, f2, window).min(2.0)
}

/// Half-width of the two-sided DKW band at confidence `1 - alpha`.
pub fn dkw_radius(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_cdf(rate: f64) -> CdfCurve {
        CdfCurve::sample(|x| 1.0 - (-rate * x).exp(), 0.0, 20.0, 200_000)
    }

    #[test]
    fn identical_curves() {
        let f = exp_cdf(1.0);
        assert_eq!(kolmogorov(&f, &f), 0.0);
        assert_eq!(l1_cdf(&f, &f, (0.0, 5.0)), 0.0);
    }

    #[test]
    fn steps() {
        let (a, b) = (CdfCurve::step_at(0.0), CdfCurve::step_at(1.0));
        assert_eq!(kolmogorov(&a, &b), 1.0);
        let d = CdfCurve::step_at(0.7);
        assert!((l1_cdf(&a, &d, (-1.0, 2.0)) - 0.7).abs() < 1e-15);
        let far = CdfCurve::step_at(10.0);
        assert_eq!(lipschitz_dual(&a, &far, (-1.0, 11.0)), 2.0);
    }

    #[test]
    fn exponential_pair() {
        // sup at ln 2: 1/2 - 1/4
        let k = kolmogorov(&exp_cdf(1.0), &exp_cdf(2.0));
        assert!((k - 0.25).abs() < 1e-8, "{k}");
        // ∫ (e^-x - e^-2x) over [0, ∞) = 1/2
        let l = l1_cdf(&exp_cdf(1.0), &exp_cdf(2.0), (0.0, 20.0));
        assert!((l - 0.5).abs() < 1e-7, "{l}");
    }

    #[test]
    fn crossing_linear_pieces() {
        let a = CdfCurve::new(vec![0.0, 1.0], vec![0.0, 1.0], Interp::Linear);
        let b = CdfCurve::new(vec![0.0, 1.0], vec![0.5, 0.5], Interp::Linear);
        // |x - 1/2| on [0, 1]
        assert!((l1_cdf(&a, &b, (0.0, 1.0)) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn kernel_from_samples() {
        let k = TransitionKernelCdf::from_samples(&[1.0, 0.0, 1.0, 2.0]);
        assert_eq!(k.atoms, vec![(0.0, 0.25), (1.0, 0.5), (2.0, 0.25)]);
        assert_eq!(k.eval(1.0), 0.75);
        assert_eq!(k.eval_left(1.0), 0.25);
        assert!((k.total_mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dkw_at_1e5() {
        let r = dkw_radius(100_000, 0.01);
        assert!((r - 0.005146).abs() < 1e-5, "{r}");
    }
}
