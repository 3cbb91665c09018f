use crate::error::{check_len, Error, Result};
use crate::model::{GridSpec, Image};

use super::stencil::{central_diff, Axis};

/// Per-axis edge weights of the edge-preserving Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct ElWeights {
    pub wx: Vec<f64>,
    pub wy: Vec<f64>,
    /// Average-derivative scale constants `2 u_max / d`. Zero when the
    /// iterate carries no scale and every weight is one.
    pub ax: f64,
    pub ay: f64,
}

/// Below this `u_max` (relative to the largest magnitude) an image is
/// treated as carrying no intensity scale.
pub(crate) fn is_degenerate_scale(u_max: f64, u: &[f64]) -> bool {
    let mag = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    !(u_max > 0.0) || u_max <= 1e-30 * mag || !u_max.is_finite()
}

pub(crate) fn image_max(u: &[f64]) -> f64 {
    u.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `w = 1 / (1 + beta (du / a)^2)` per axis with `a = 2 u_max / d`.
///
/// `du` is the centered difference, so each weight sits on the same pixel
/// as the second difference it scales and an edge is discounted from both
/// sides.
pub fn compute_el_weights(u: &Image, beta: f64) -> Result<ElWeights> {
    let u_max = image_max(u.values());
    el_weights_with_scale(u.grid(), u.values(), beta, u_max)
}

/// As [`compute_el_weights`] but with an explicit intensity scale `u_max`.
pub fn el_weights_with_scale(
    grid: &GridSpec,
    u: &[f64],
    beta: f64,
    u_max: f64,
) -> Result<ElWeights> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta must be > 0, got {beta}")));
    }
    check_len(grid.len(), u.len())?;
    if is_degenerate_scale(u_max, u) {
        return Ok(ElWeights {
            wx: vec![1.0; grid.len()],
            wy: vec![1.0; grid.len()],
            ax: 0.0,
            ay: 0.0,
        });
    }
    let ax = 2.0 * u_max / grid.dx;
    let ay = 2.0 * u_max / grid.dy;
    let weight = |d: f64, a: f64| 1.0 / (1.0 + beta * (d / a).powi(2));
    let wx = central_diff(grid, Axis::X, u)
        .into_iter()
        .map(|d| weight(d, ax))
        .collect();
    let wy = central_diff(grid, Axis::Y, u)
        .into_iter()
        .map(|d| weight(d, ay))
        .collect();
    Ok(ElWeights { wx, wy, ax, ay })
}
