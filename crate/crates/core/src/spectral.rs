//! Spectral norm and spectral radius estimates for dense matrices and
//! sparse operators.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SparsePattern;
use crate::rng::rng_from_seed;

/// Largest dimension for which `spectral_norm` uses a dense eigensolver.
pub const DENSE_NORM_LIMIT: usize = 64;
/// Largest order for which `spectral_radius` uses a dense Schur
/// decomposition.
pub const DENSE_RADIUS_LIMIT: usize = 512;

const POWER_SEED: u64 = 0x005e_ed0f_5bec;

/// A real matrix that can be applied to vectors.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `A x`
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    /// `Aᵀ x`
    fn apply_t(&self, x: &[f64]) -> Vec<f64>;
}

impl LinearOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }

    fn ncols(&self) -> usize {
        self.ncols()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (self * DVector::from_column_slice(x)).data.into()
    }

    fn apply_t(&self, x: &[f64]) -> Vec<f64> {
        (self.tr_mul(&DVector::from_column_slice(x))).data.into()
    }
}

impl LinearOperator for SparsePattern {
    fn nrows(&self) -> usize {
        self.rows()
    }

    fn ncols(&self) -> usize {
        self.cols()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.mul_vec(x)
    }

    fn apply_t(&self, x: &[f64]) -> Vec<f64> {
        self.tr_mul_vec(x)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn random_unit(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let nv = norm(&v);
        if nv > 0.0 {
            return v.into_iter().map(|x| x / nv).collect();
        }
    }
}

/// ‖A‖₂ by power iteration on AᵀA from a seeded random unit vector.
/// Stops once the Rayleigh quotient changes by less than `tol`
/// (relative) on two successive iterations.
pub fn power_norm<A: LinearOperator + ?Sized>(
    a: &A,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<f64> {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return Ok(0.0);
    }
    let mut v = random_unit(n, seed);
    let mut prev = f64::NAN;
    let mut calm = 0;
    for _ in 0..max_iter {
        let av = a.apply(&v);
        let lambda = av.iter().map(|x| x * x).sum::<f64>();
        let w = a.apply_t(&av);
        let nw = norm(&w);
        if lambda == 0.0 || nw == 0.0 {
            // v lies in the null space; for a nonzero A a random start
            // does so with probability zero, so A = 0 here
            return Ok(0.0);
        }
        if prev.is_finite() && (lambda - prev).abs() <= tol * lambda {
            calm += 1;
            if calm >= 2 {
                return Ok(lambda.sqrt());
            }
        } else {
            calm = 0;
        }
        prev = lambda;
        v = w.into_iter().map(|x| x / nw).collect();
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        last_estimate: prev.sqrt(),
        last_iterate: v,
    })
}

/// ‖A‖₂. Uses a dense symmetric eigensolver on the smaller Gram matrix
/// when min(rows, cols) ≤ 64, power iteration otherwise.
pub fn spectral_norm(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<f64> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return Ok(0.0);
    }
    if r.min(c) <= DENSE_NORM_LIMIT {
        let gram = if c <= r { a.tr_mul(a) } else { a * a.transpose() };
        let eig = SymmetricEigen::new(gram);
        let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        return Ok(top.sqrt());
    }
    power_norm(a, tol, max_iter, POWER_SEED)
}

/// ‖·‖₂ of a sparse binary matrix.
pub fn sparse_norm(z: &SparsePattern, tol: f64, max_iter: usize) -> Result<f64> {
    power_norm(z, tol, max_iter, POWER_SEED)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusEstimate {
    pub value: f64,
    /// False when the estimate came from power iteration, which can
    /// under-report when the leading eigenvalues form a complex pair.
    pub exact: bool,
}

/// ρ(A) for a square matrix: dense Schur decomposition up to order 512,
/// power iteration with eight random restarts above that.
pub fn spectral_radius(a: &DMatrix<f64>, tol: f64) -> Result<RadiusEstimate> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::InvalidInput(format!(
            "spectral radius needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    if n == 0 {
        return Ok(RadiusEstimate {
            value: 0.0,
            exact: true,
        });
    }
    if n <= DENSE_RADIUS_LIMIT {
        let schur = Schur::try_new(a.clone(), f64::EPSILON, 1000 * n.max(10))
            .ok_or_else(|| Error::Eigensolver("Schur iteration did not converge".into()))?;
        let value = schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        return Ok(RadiusEstimate { value, exact: true });
    }
    let value = (0..8)
        .map(|k| power_radius(a, tol, 20_000, POWER_SEED + k))
        .fold(0.0, f64::max);
    Ok(RadiusEstimate {
        value,
        exact: false,
    })
}

/// Growth-rate estimate of ‖Aᵏv‖^(1/k): geometric mean of the per-step
/// norm ratios over the second half of the run, stopping early once two
/// successive window estimates agree to `tol`.
fn power_radius(a: &DMatrix<f64>, tol: f64, max_iter: usize, seed: u64) -> f64 {
    let n = a.nrows();
    let mut v = DVector::from_vec(random_unit(n, seed));
    let mut logs: Vec<f64> = Vec::with_capacity(max_iter);
    let mut last = f64::NAN;
    for k in 0..max_iter {
        let w = a * &v;
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        logs.push(nw.ln());
        v = w / nw;
        if k >= 64 && k % 32 == 0 {
            let tail = &logs[logs.len() / 2..];
            let est = (tail.iter().sum::<f64>() / tail.len() as f64).exp();
            if (est - last).abs() <= tol * est {
                return est;
            }
            last = est;
        }
    }
    let tail = &logs[logs.len() / 2..];
    (tail.iter().sum::<f64>() / tail.len() as f64).exp()
}
