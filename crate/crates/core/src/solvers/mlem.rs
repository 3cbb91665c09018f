use crate::error::{Error, Result};
use crate::model::{Image, RegionMask};
use crate::regularizers::{
    build_gradient_matrix_with_scale, image_max, is_degenerate_scale, penalty_value_with_scale,
    PenaltyKind, RegularizerMatrix,
};
use crate::sparse::dot;

use super::cg::{power_iteration, SystemOperator};
use super::{check_data, check_finite, IterRecord, ReconResult, SolverConfig, Tracker, TAU_POWER_STEPS};

/// One multiplicative update `u / (A*1) * A*(b / max(Au, floor))`, given
/// `au = A u` and the sensitivity `A*1`. Zero-sensitivity pixels map to 0.
pub fn mlem_step<Op: SystemOperator + ?Sized>(
    op: &Op,
    b: &[f64],
    u: &[f64],
    au: &[f64],
    sens: &[f64],
    floor: f64,
) -> Vec<f64> {
    let ratio: Vec<f64> = b.iter().zip(au).map(|(b, a)| b / a.max(floor)).collect();
    let back = op.adjoint_vec(&ratio);
    u.iter()
        .zip(&back)
        .zip(sens)
        .map(|((u, bk), s)| if *s > 0.0 { u * bk / s } else { 0.0 })
        .collect()
}

/// `0.5 ||f - f0||^2 + (w / 2) <R f, f>`
pub fn denoise_objective(f: &[f64], f0: &[f64], r: &RegularizerMatrix, weight: f64) -> f64 {
    let d: f64 = f.iter().zip(f0).map(|(a, b)| (a - b).powi(2)).sum();
    0.5 * d + 0.5 * weight * dot(&r.apply(f), f)
}

/// Gradient steps `f <- f - tau ((f - f0) + w R f)` from `f = f0`.
/// `observer` sees each new iterate.
pub fn denoise_steps(
    f0: &[f64],
    r: &RegularizerMatrix,
    weight: f64,
    tau: f64,
    steps: usize,
    mut observer: impl FnMut(&[f64]),
) -> Vec<f64> {
    let mut f = f0.to_vec();
    let mut rf = vec![0.0; f.len()];
    for _ in 0..steps {
        r.apply_into(&f, &mut rf);
        for ((fi, f0i), rfi) in f.iter_mut().zip(f0).zip(&rf) {
            *fi -= tau * ((*fi - f0i) + weight * rfi);
        }
        observer(&f);
    }
    f
}

fn poisson_nll(b: &[f64], au: &[f64], floor: f64) -> f64 {
    b.iter()
        .zip(au)
        .map(|(b, a)| if *b > 0.0 { a - b * a.max(floor).ln() } else { *a })
        .sum()
}

/// MLEM splitting for Poisson data: a multiplicative MLEM step followed by
/// `inner_iters` denoising steps with `R` rebuilt from the MLEM output,
/// clamped at zero. Starts from the all-ones image. With `alpha = 0` this is
/// plain MLEM.
///
/// `masks` are tracked as region errors against `truth`.
pub fn mlem_split_reconstruct<Op: SystemOperator + ?Sized>(
    op: &Op,
    b: &[f64],
    kind: &PenaltyKind,
    cfg: &SolverConfig,
    truth: Option<&Image>,
    masks: &[RegionMask],
) -> Result<ReconResult> {
    cfg.validate()?;
    check_data(op, b)?;
    if let Some(i) = b.iter().position(|v| *v < 0.0) {
        return Err(Error::invalid(format!("poisson data must be >= 0 (entry {i})")));
    }
    let grid = *op.grid();
    let n = grid.len();
    let alpha = cfg.alpha;
    let kind = kind.with_alpha(alpha);
    kind.validate()?;
    let active = alpha > 0.0;
    let w = kind.outer_weight(alpha);
    let tracker = Tracker::new(&grid, truth, masks)?;

    let sens = op.adjoint_vec(&vec![1.0; op.nrows()]);
    let mut u: Vec<f64> = sens.iter().map(|&s| if s > 0.0 { 1.0 } else { 0.0 }).collect();
    let mut au = op.forward_vec(&u);
    let floor = 1e-12 * au.iter().copied().fold(0.0f64, f64::max);
    let floor = if floor > 0.0 { floor } else { f64::MIN_POSITIVE };

    let mut history = Vec::with_capacity(cfg.outer_iters);
    for nu in 1..=cfg.outer_iters {
        let half = mlem_step(op, b, &u, &au, &sens, floor);
        let u_max = image_max(&half);
        let mut next = if active && !(kind.needs_scale() && is_degenerate_scale(u_max, &half)) {
            let rm = build_gradient_matrix_with_scale(&kind, &grid, &half, u_max)?;
            let tau = cfg.tau.unwrap_or_else(|| {
                let lmax = power_iteration(|x| rm.apply(x), n, TAU_POWER_STEPS, cfg.seed);
                1.0 / (1.0 + w * lmax)
            });
            denoise_steps(&half, &rm, w, tau, cfg.inner_iters, |_| {})
        } else {
            half
        };
        for (v, s) in next.iter_mut().zip(&sens) {
            if *v < 0.0 || *s <= 0.0 {
                *v = 0.0;
            }
        }
        check_finite(&next, nu)?;
        let step_norm2: f64 = next.iter().zip(&u).map(|(a, b)| (a - b).powi(2)).sum();
        u = next;
        au = op.forward_vec(&u);

        let fidelity = poisson_nll(b, &au, floor);
        let u_max = image_max(&u);
        let penalty = if active && !is_degenerate_scale(u_max, &u) {
            penalty_value_with_scale(&kind, &grid, &u, u_max)?
        } else {
            0.0
        };
        history.push(IterRecord {
            iter: nu,
            objective: fidelity + alpha * penalty,
            fidelity,
            penalty,
            step_norm2,
            rmse: tracker.rmse(&u),
            region_rmse: tracker.region_rmse(&u),
        });
    }
    Ok(ReconResult {
        image: Image::new(grid, u)?,
        history,
        terminated_early: false,
        breakdown: false,
    })
}
