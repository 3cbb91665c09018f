use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Result};
use crate::model::{GridSpec, Image};
use crate::projector::ProjectionOperator;
use crate::sparse::{axpy, dot, norm2_sq, CsrMatrix};

use super::{IterRecord, ReconResult, Tracker};

/// A linear map from images on `grid` to data vectors.
pub trait SystemOperator: Sync {
    fn grid(&self) -> &GridSpec;
    fn nrows(&self) -> usize;
    fn forward_vec(&self, u: &[f64]) -> Vec<f64>;
    fn adjoint_vec(&self, s: &[f64]) -> Vec<f64>;
}

impl SystemOperator for ProjectionOperator {
    fn grid(&self) -> &GridSpec {
        ProjectionOperator::grid(self)
    }

    fn nrows(&self) -> usize {
        ProjectionOperator::nrows(self)
    }

    fn forward_vec(&self, u: &[f64]) -> Vec<f64> {
        ProjectionOperator::forward_vec(self, u)
    }

    fn adjoint_vec(&self, s: &[f64]) -> Vec<f64> {
        ProjectionOperator::adjoint_vec(self, s)
    }
}

/// Explicit matrix acting on images, mostly for small test systems.
#[derive(Debug, Clone)]
pub struct MatrixOperator {
    grid: GridSpec,
    matrix: CsrMatrix,
    transpose: CsrMatrix,
}

impl MatrixOperator {
    pub fn new(grid: GridSpec, matrix: CsrMatrix) -> Result<Self> {
        check_len(grid.len(), matrix.ncols())?;
        let transpose = matrix.transpose();
        Ok(MatrixOperator {
            grid,
            matrix,
            transpose,
        })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }
}

impl SystemOperator for MatrixOperator {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    fn forward_vec(&self, u: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(u)
    }

    fn adjoint_vec(&self, s: &[f64]) -> Vec<f64> {
        self.transpose.mul_vec(s)
    }
}

/// Outcome of a (preconditioned) conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Squared norm of the last update `||s_l - s_{l+1}||^2`.
    pub last_step_norm2: f64,
    /// Nonpositive curvature met along a search direction.
    pub breakdown: bool,
}

/// Solves `H s = rhs` from `s = 0` by CG, for at most `max_iter` steps or
/// until `||s_l - s_{l+1}||^2 <= rho`.
///
/// `precond` overwrites its argument with `M^{-1}` applied to it. `observer`
/// sees every iterate, starting with the zero vector.
pub fn pcg(
    apply_h: impl Fn(&[f64]) -> Vec<f64>,
    rhs: &[f64],
    precond: Option<&dyn Fn(&mut [f64])>,
    max_iter: usize,
    rho: f64,
    mut observer: impl FnMut(&[f64]),
) -> CgOutcome {
    let n = rhs.len();
    let mut s = vec![0.0; n];
    observer(&s);
    let mut r = rhs.to_vec();
    let mut z = r.clone();
    if let Some(m) = precond {
        m(&mut z);
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut out = CgOutcome {
        solution: Vec::new(),
        iterations: 0,
        last_step_norm2: 0.0,
        breakdown: false,
    };
    for _ in 0..max_iter {
        if rz == 0.0 {
            break;
        }
        let hp = apply_h(&p);
        let curv = dot(&p, &hp);
        if !(curv > 0.0) {
            out.breakdown = true;
            break;
        }
        let a = rz / curv;
        axpy(a, &p, &mut s);
        axpy(-a, &hp, &mut r);
        out.iterations += 1;
        out.last_step_norm2 = a * a * norm2_sq(&p);
        observer(&s);
        if out.last_step_norm2 <= rho {
            break;
        }
        z.copy_from_slice(&r);
        if let Some(m) = precond {
            m(&mut z);
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    out.solution = s;
    out
}

/// Largest eigenvalue of a symmetric positive semidefinite map by power
/// iteration from a seeded random start.
pub fn power_iteration(apply: impl Fn(&[f64]) -> Vec<f64>, n: usize, steps: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.5).collect();
    let mut lambda = 0.0;
    for _ in 0..steps {
        let nx = norm2_sq(&x).sqrt();
        if nx == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        let y = apply(&x);
        lambda = dot(&x, &y);
        x = y;
    }
    lambda.max(0.0)
}

/// Largest singular value of `A`, from `steps` power steps on `A* A`.
pub fn largest_singular_value<Op: SystemOperator + ?Sized>(op: &Op, steps: usize, seed: u64) -> f64 {
    let n = op.grid().len();
    power_iteration(|x| op.adjoint_vec(&op.forward_vec(x)), n, steps, seed).sqrt()
}

/// CGLS on `min ||A u - b||^2` from `u = 0`.
///
/// Stops and flags `breakdown` if a search direction has zero curvature
/// before `iters` steps.
pub fn cgls<Op: SystemOperator + ?Sized>(
    op: &Op,
    b: &[f64],
    iters: usize,
    truth: Option<&Image>,
) -> Result<ReconResult> {
    cgls_tracked(op, b, iters, &Tracker::new(op.grid(), truth, &[])?)
}

pub(crate) fn cgls_tracked<Op: SystemOperator + ?Sized>(
    op: &Op,
    b: &[f64],
    iters: usize,
    tracker: &Tracker,
) -> Result<ReconResult> {
    super::check_data(op, b)?;
    if iters == 0 {
        return Err(crate::Error::invalid("cgls needs at least one iteration"));
    }
    let n = op.grid().len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut s = op.adjoint_vec(&r);
    let mut p = s.clone();
    let mut gamma = norm2_sq(&s);
    let mut history = Vec::with_capacity(iters);
    let mut breakdown = false;
    for k in 1..=iters {
        if gamma == 0.0 {
            breakdown = true;
            break;
        }
        let q = op.forward_vec(&p);
        let delta = norm2_sq(&q);
        if !(delta > 0.0) {
            breakdown = true;
            break;
        }
        let a = gamma / delta;
        let step_norm2 = a * a * norm2_sq(&p);
        axpy(a, &p, &mut x);
        axpy(-a, &q, &mut r);
        s = op.adjoint_vec(&r);
        let gamma_next = norm2_sq(&s);
        let beta = gamma_next / gamma;
        gamma = gamma_next;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = si + beta * *pi;
        }
        let fidelity = 0.5 * norm2_sq(&r);
        history.push(IterRecord {
            iter: k,
            objective: fidelity,
            fidelity,
            penalty: 0.0,
            step_norm2,
            rmse: tracker.rmse(&x),
            region_rmse: tracker.region_rmse(&x),
        });
        super::check_finite(&x, k)?;
    }
    Ok(ReconResult {
        image: Image::new(*op.grid(), x)?,
        history,
        terminated_early: breakdown,
        breakdown,
    })
}
