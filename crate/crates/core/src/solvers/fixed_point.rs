use crate::error::{Error, Result};
use crate::model::Image;
use crate::regularizers::{
    build_gradient_matrix_with_scale, image_max, is_degenerate_scale, penalty_value_with_scale,
    PenaltyKind,
};
use crate::sparse::{axpy, norm2_sq, CsrMatrix};

use super::cg::{largest_singular_value, pcg, SystemOperator};
use super::precond::ShiftedCholesky;
use super::{check_data, check_finite, IterRecord, ReconResult, SolverConfig, Tracker, SIGMA_POWER_STEPS};

/// Rough intensity level read off the data: the largest `b_i / (A 1)_i`
/// over rays crossing a substantial part of the grid. Used as the penalty
/// scale while the iterate itself has none (e.g. the zero start).
pub fn intensity_scale_estimate<Op: SystemOperator + ?Sized>(op: &Op, b: &[f64]) -> f64 {
    let ones = vec![1.0; op.grid().len()];
    let len = op.forward_vec(&ones);
    let longest = len.iter().copied().fold(0.0f64, f64::max);
    let est = len
        .iter()
        .zip(b)
        .filter(|(l, _)| **l > 0.25 * longest)
        .map(|(l, v)| v / l)
        .fold(0.0f64, f64::max);
    if est > 0.0 && est.is_finite() {
        est
    } else {
        1.0
    }
}

fn residual<Op: SystemOperator + ?Sized>(op: &Op, u: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = op.forward_vec(u);
    axpy(-1.0, b, &mut r);
    r
}

/// Lagged-diffusivity fixed point for `0.5 ||Au - b||^2 + alpha R(u)`
/// from the zero image.
pub fn fixed_point_reconstruct<Op: SystemOperator + ?Sized>(
    op: &Op,
    b: &[f64],
    kind: &PenaltyKind,
    cfg: &SolverConfig,
    truth: Option<&Image>,
) -> Result<ReconResult> {
    fixed_point_reconstruct_from(op, b, kind, cfg, truth, None)
}

/// As [`fixed_point_reconstruct`], starting from `initial` when given.
///
/// Each outer iteration freezes `R` at the current iterate, takes at most
/// `inner_iters` CG steps on `(A*A + w R) s = -(A*(Au - b) + w R u)` and
/// stops once `||s||^2 <= rho`. `w` is `alpha`, or one for TV-l2 which
/// carries `alpha` inside `R`. With `alpha = 0` the penalty is dropped.
pub fn fixed_point_reconstruct_from<Op: SystemOperator + ?Sized>(
    op: &Op,
    b: &[f64],
    kind: &PenaltyKind,
    cfg: &SolverConfig,
    truth: Option<&Image>,
    initial: Option<&Image>,
) -> Result<ReconResult> {
    cfg.validate()?;
    check_data(op, b)?;
    let grid = *op.grid();
    let n = grid.len();
    let alpha = cfg.alpha;
    let kind = kind.with_alpha(alpha);
    kind.validate()?;
    let active = alpha > 0.0;
    let w = kind.outer_weight(alpha);
    let tracker = Tracker::new(&grid, truth, &[])?;

    let fallback = intensity_scale_estimate(op, b);
    let scale_of = |u: &[f64]| {
        let m = image_max(u);
        if is_degenerate_scale(m, u) {
            fallback
        } else {
            m
        }
    };

    let mut u = match initial {
        Some(img) if img.grid() != &grid => {
            return Err(Error::invalid("initial image grid differs from the operator grid"))
        }
        Some(img) => img.values().to_vec(),
        None => vec![0.0; n],
    };
    let mut r = residual(op, &u, b);
    let sigma2 = if cfg.precondition {
        let s = cfg
            .sigma
            .unwrap_or_else(|| largest_singular_value(op, SIGMA_POWER_STEPS, cfg.seed));
        s * s
    } else {
        0.0
    };
    let identity = CsrMatrix::identity(n);
    let mut chol = ShiftedCholesky::default();

    let mut history = Vec::with_capacity(cfg.outer_iters);
    let mut terminated_early = false;
    let mut breakdown = false;
    for nu in 1..=cfg.outer_iters {
        let rmat = if active {
            Some(build_gradient_matrix_with_scale(&kind, &grid, &u, scale_of(&u))?)
        } else {
            None
        };
        let mut g = op.adjoint_vec(&r);
        if let Some(rm) = &rmat {
            axpy(w, &rm.apply(&u), &mut g);
        }
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let apply_h = |p: &[f64]| {
            let mut hp = op.adjoint_vec(&op.forward_vec(p));
            if let Some(rm) = &rmat {
                axpy(w, &rm.apply(p), &mut hp);
            }
            hp
        };
        let outcome = if cfg.precondition {
            match &rmat {
                Some(rm) => chol.factor(rm.matrix(), w, sigma2)?,
                None => chol.factor(&identity, 0.0, sigma2)?,
            }
            let m = |x: &mut [f64]| chol.solve_in_place(x);
            pcg(apply_h, &rhs, Some(&m), cfg.inner_iters, cfg.rho, |_| {})
        } else {
            pcg(apply_h, &rhs, None, cfg.inner_iters, cfg.rho, |_| {})
        };
        breakdown |= outcome.breakdown;
        let s = outcome.solution;
        axpy(1.0, &s, &mut u);
        check_finite(&u, nu)?;
        r = residual(op, &u, b);

        let fidelity = 0.5 * norm2_sq(&r);
        let penalty = if active {
            penalty_value_with_scale(&kind, &grid, &u, scale_of(&u))?
        } else {
            0.0
        };
        let step_norm2 = norm2_sq(&s);
        history.push(IterRecord {
            iter: nu,
            objective: fidelity + alpha * penalty,
            fidelity,
            penalty,
            step_norm2,
            rmse: tracker.rmse(&u),
            region_rmse: Vec::new(),
        });
        if step_norm2 <= cfg.rho {
            terminated_early = true;
            break;
        }
    }
    Ok(ReconResult {
        image: Image::new(grid, u)?,
        history,
        terminated_early,
        breakdown,
    })
}
