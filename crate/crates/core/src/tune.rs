//! Gaussian-process Bayesian optimization over a box, used to pick loss
//! weights. Minimizes; callers tuning accuracy pass its negation.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Diagonal jitter added to every kernel matrix.
pub const JITTER: f64 = 1e-8;
/// EI candidates drawn per iteration.
pub const CANDIDATES: usize = 1024;
pub const DEFAULT_BUDGET: usize = 30;
pub const DEFAULT_UPPER: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TuneSpace {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub budget: usize,
    pub seed: u64,
}

impl TuneSpace {
    pub fn new(names: Vec<String>, lower: Vec<f64>, upper: Vec<f64>, budget: usize, seed: u64) -> Result<Self> {
        let s = TuneSpace {
            names,
            lower,
            upper,
            budget,
            seed,
        };
        s.check()?;
        Ok(s)
    }

    /// `[0, 10]` in every dimension with the default budget.
    pub fn weights(names: &[&str], seed: u64) -> Result<Self> {
        let d = names.len();
        Self::new(
            names.iter().map(|s| s.to_string()).collect(),
            vec![0.0; d],
            vec![DEFAULT_UPPER; d],
            DEFAULT_BUDGET.max(2 * d),
            seed,
        )
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn check(&self) -> Result<()> {
        let d = self.names.len();
        if d == 0 || self.lower.len() != d || self.upper.len() != d {
            return Err(Error::Config("tune space needs matching names and bounds".into()));
        }
        for i in 0..d {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!(
                    "bounds for `{}` must be finite with lower < upper, got [{lo}, {hi}]",
                    self.names[i]
                )));
            }
        }
        if self.budget < 2 * d {
            return Err(Error::Config(format!(
                "budget {} is below 2 x dimension ({})",
                self.budget,
                2 * d
            )));
        }
        Ok(())
    }

    fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, &x)| (self.lower[i] + x * (self.upper[i] - self.lower[i])).clamp(self.lower[i], self.upper[i]))
            .collect()
    }

    fn to_unit(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .enumerate()
            .map(|(i, &x)| (x - self.lower[i]) / (self.upper[i] - self.lower[i]))
            .collect()
    }
}

/// Squared-exponential kernel `σ² exp(-|a-b|² / 2ℓ²)` with observation noise `σₙ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub length_scale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.signal_var * (-d2 / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

#[derive(Debug, Clone)]
pub struct GpSurrogate {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub kernel: Kernel,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl GpSurrogate {
    /// Conditions a zero-mean GP on `(x, y)`.
    pub fn fit(x: Vec<Vec<f64>>, y: Vec<f64>, kernel: Kernel) -> Result<Self> {
        let n = x.len();
        if n == 0 || y.len() != n {
            return Err(Error::Numerical("GP needs at least one observation".into()));
        }
        let k = DMatrix::from_fn(n, n, |i, j| {
            kernel.eval(&x[i], &x[j]) + if i == j { kernel.noise_var + JITTER } else { 0.0 }
        });
        let chol = k
            .cholesky()
            .ok_or_else(|| Error::Numerical("kernel matrix is not positive definite".into()))?;
        let alpha = chol.solve(&DVector::from_column_slice(&y));
        if alpha.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("kernel solve produced non-finite values".into()));
        }
        Ok(GpSurrogate {
            x,
            y,
            kernel,
            chol,
            alpha,
        })
    }

    fn k_star(&self, p: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| self.kernel.eval(xi, p)))
    }

    /// Posterior mean and (clamped nonnegative) variance of the latent function at `p`.
    pub fn posterior(&self, p: &[f64]) -> (f64, f64) {
        let ks = self.k_star(p);
        let mean = ks.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&ks).unwrap_or(ks);
        let var = (self.kernel.signal_var - v.dot(&v)).max(0.0);
        (mean, var)
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.y.len() as f64;
        let y = DVector::from_column_slice(&self.y);
        let log_det: f64 = self.chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        -0.5 * y.dot(&self.alpha) - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

pub fn gp_posterior(g: &GpSurrogate, p: &[f64]) -> (f64, f64) {
    g.posterior(p)
}

/// Closed-form EI for a normal posterior: `E[max(best - f, 0)]` when minimizing,
/// `E[max(f - best, 0)]` otherwise.
pub fn expected_improvement_normal(mean: f64, var: f64, best: f64, minimize: bool) -> f64 {
    let gain = if minimize { best - mean } else { mean - best };
    let sd = var.max(0.0).sqrt();
    if sd <= 0.0 {
        return gain.max(0.0);
    }
    let z = gain / sd;
    let n = Normal::standard();
    (gain * n.cdf(z) + sd * n.pdf(z)).max(0.0)
}

/// EI under the GP posterior. Variance at the jitter level is treated as zero.
pub fn expected_improvement(g: &GpSurrogate, p: &[f64], best: f64, minimize: bool) -> f64 {
    let (m, v) = g.posterior(p);
    let v = if v < 2.0 * JITTER { 0.0 } else { v };
    expected_improvement_normal(m, v, best, minimize)
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let (mut f, mut r) = (1.0, 0.0);
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Halton points `start..start+n` in the unit cube, shifted modulo 1.
fn halton(start: u64, n: usize, shift: &[f64]) -> Vec<Vec<f64>> {
    (0..n as u64)
        .map(|k| {
            shift
                .iter()
                .enumerate()
                .map(|(j, s)| (radical_inverse(start + k, PRIMES[j % PRIMES.len()]) + s).fract())
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    #[default]
    Bayesian,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneRecord {
    pub iter: usize,
    pub point: Vec<f64>,
    pub objective: f64,
    pub incumbent: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub history: Vec<TuneRecord>,
}

impl TuneResult {
    /// `iter,<dim names>,objective,incumbent`
    pub fn write_log<W: Write>(&self, names: &[String], mut out: W) -> Result<()> {
        writeln!(out, "iter,{},objective,incumbent", names.join(","))?;
        for r in &self.history {
            let pts: Vec<String> = r.point.iter().map(|x| x.to_string()).collect();
            writeln!(out, "{},{},{},{}", r.iter, pts.join(","), r.objective, r.incumbent)?;
        }
        Ok(())
    }
}

fn length_grid() -> Vec<f64> {
    (0..10).map(|i| 0.1 * 100f64.powf(i as f64 / 9.0)).collect()
}

/// Fits the GP on standardized values, picking ℓ by marginal likelihood.
fn fit_surrogate(x: &[Vec<f64>], y: &[f64]) -> Result<GpSurrogate> {
    let n = y.len() as f64;
    let mu = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    let ys: Vec<f64> = y.iter().map(|v| (v - mu) / sd).collect();
    let mut best: Option<(f64, GpSurrogate)> = None;
    for l in length_grid() {
        let kernel = Kernel {
            length_scale: l,
            signal_var: 1.0,
            noise_var: 1e-6,
        };
        if let Ok(g) = GpSurrogate::fit(x.to_vec(), ys.clone(), kernel) {
            let lml = g.log_marginal_likelihood();
            if lml.is_finite() && best.as_ref().is_none_or(|(b, _)| lml > *b) {
                best = Some((lml, g));
            }
        }
    }
    best.map(|(_, g)| g)
        .ok_or_else(|| Error::Numerical("no length scale gave a usable GP".into()))
}

/// Minimizes `objective` over `space`. Objective errors and non-finite values
/// are recorded with a penalty (the worst value seen so far, 0 if none) and
/// tuning continues.
pub fn tune<F>(mut objective: F, space: &TuneSpace, strategy: Strategy) -> Result<TuneResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    space.check()?;
    let d = space.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(space.seed);
    let init_shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    let initial = halton(1, 2 * d, &init_shift);

    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut history = Vec::new();
    let mut best_value = f64::INFINITY;
    let mut best_point = Vec::new();
    let mut halton_next = 1 + 2 * d as u64;

    for iter in 0..space.budget {
        let u = if iter < initial.len() {
            initial[iter].clone()
        } else {
            match strategy {
                Strategy::Random => (0..d).map(|_| rng.random::<f64>()).collect(),
                Strategy::Bayesian => {
                    let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                    let pool = halton(halton_next, CANDIDATES, &shift);
                    halton_next += CANDIDATES as u64;
                    match fit_surrogate(&xs, &ys) {
                        Ok(g) => {
                            let incumbent = ys.iter().copied().fold(f64::INFINITY, f64::min);
                            let mu = ys.iter().sum::<f64>() / ys.len() as f64;
                            let sd = {
                                let s = (ys.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>()
                                    / ys.len() as f64)
                                    .sqrt();
                                if s > 0.0 { s } else { 1.0 }
                            };
                            let best_std = (incumbent - mu) / sd;
                            let mut pick = 0;
                            let mut pick_ei = f64::NEG_INFINITY;
                            for (k, c) in pool.iter().enumerate() {
                                let ei = expected_improvement(&g, c, best_std, true);
                                if ei > pick_ei {
                                    pick_ei = ei;
                                    pick = k;
                                }
                            }
                            pool[pick].clone()
                        }
                        Err(e) => {
                            log::warn!("surrogate fit failed ({e}); sampling at random");
                            pool[0].clone()
                        }
                    }
                }
            }
        };
        let point = space.from_unit(&u);
        let (value, failed) = match objective(&point) {
            Ok(v) if v.is_finite() => (v, false),
            outcome => {
                let penalty = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let penalty = if penalty.is_finite() { penalty } else { 0.0 };
                match outcome {
                    Err(e) => log::warn!("objective failed at {point:?}: {e}"),
                    Ok(v) => log::warn!("objective returned {v} at {point:?}"),
                }
                (penalty, true)
            }
        };
        if value < best_value {
            best_value = value;
            best_point = point.clone();
        }
        xs.push(space.to_unit(&point));
        ys.push(value);
        history.push(TuneRecord {
            iter,
            point,
            objective: value,
            incumbent: best_value,
            failed,
        });
    }
    Ok(TuneResult {
        best_point,
        best_value,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_first_points() {
        let pts = halton(1, 3, &[0.0, 0.0]);
        assert_eq!(pts[0], vec![0.5, 1.0 / 3.0]);
        assert_eq!(pts[1], vec![0.25, 2.0 / 3.0]);
        assert_eq!(pts[2], vec![0.75, 1.0 / 9.0]);
    }

    #[test]
    fn ei_known_value() {
        let ei = expected_improvement_normal(-1.0, 1.0, 0.0, true);
        assert!((ei - 1.083_315_6).abs() < 1e-6);
        assert_eq!(expected_improvement_normal(0.5, 0.0, 0.0, true), 0.0);
        assert_eq!(expected_improvement_normal(-0.5, 0.0, 0.0, true), 0.5);
    }

    #[test]
    fn budget_below_twice_dim_is_rejected() {
        let s = TuneSpace::new(vec!["a".into(), "b".into()], vec![0.0; 2], vec![1.0; 2], 3, 0);
        assert!(matches!(s, Err(Error::Config(_))));
    }
}
