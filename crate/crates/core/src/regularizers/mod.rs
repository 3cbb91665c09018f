//! Penalties and their lagged-diffusivity gradient matrices.
//!
//! Each penalty `R(u)` is paired with a symmetric positive semidefinite matrix
//! `R(u)` built from the current iterate such that `R(u) u` is the penalty
//! gradient with the solution-dependent diagonals frozen:
//!
//! * Tikhonov: `I`
//! * TV: `Dx' Phi Dx + Dy' Phi Dy`, `Phi = 1 / sqrt(|grad u|^2 + eps^2)`
//! * TV-l2: `Dx' Psi Dx + Dy' Psi Dy + Lx' Ups Lx + Ly' Ups Ly` with
//!   `Psi = alpha / |grad u|_eps` and `Ups = 2 mu / (|grad u|^2 + gamma)^(3/2)`
//! * EL: `Lx' Wx^2 Lx + Ly' Wy^2 Ly`
//!
//! `eps = eps_rel * u_max` and `gamma = gamma_rel * u_max^2`, where `u_max` is
//! the largest value of the iterate. TV-l2 carries `alpha` inside its matrix,
//! so solvers apply it with unit outer weight.

mod stencil;
mod weights;

use crate::error::{check_len, Error, Result};
use crate::model::{GridSpec, Image};
use crate::sparse::{CsrMatrix, Pattern};

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use stencil::{first_diff, first_diff_row, push_weighted_gram, second_diff, second_diff_row, Axis};
pub use weights::{compute_el_weights, el_weights_with_scale, ElWeights};
pub(crate) use weights::{image_max, is_degenerate_scale};

pub const DEFAULT_EPS_REL: f64 = 1e-5;
pub const DEFAULT_GAMMA_REL: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyKind {
    Tikhonov,
    Tv {
        eps_rel: f64,
    },
    TvL2 {
        eps_rel: f64,
        gamma_rel: f64,
        mu: f64,
        alpha: Option<f64>,
    },
    El {
        beta: f64,
    },
}

impl PenaltyKind {
    pub fn tv() -> Self {
        PenaltyKind::Tv {
            eps_rel: DEFAULT_EPS_REL,
        }
    }

    pub fn tv_l2(mu: f64) -> Self {
        PenaltyKind::TvL2 {
            eps_rel: DEFAULT_EPS_REL,
            gamma_rel: DEFAULT_GAMMA_REL,
            mu,
            alpha: None,
        }
    }

    pub fn el(beta: f64) -> Self {
        PenaltyKind::El { beta }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PenaltyKind::Tikhonov => "tikhonov",
            PenaltyKind::Tv { .. } => "tv",
            PenaltyKind::TvL2 { .. } => "tvl2",
            PenaltyKind::El { .. } => "el",
        }
    }

    /// Fills in the embedded `alpha` of TV-l2; other kinds are unchanged.
    pub fn with_alpha(self, a: f64) -> Self {
        match self {
            PenaltyKind::TvL2 {
                eps_rel,
                gamma_rel,
                mu,
                ..
            } => PenaltyKind::TvL2 {
                eps_rel,
                gamma_rel,
                mu,
                alpha: Some(a),
            },
            other => other,
        }
    }

    /// Weight applied to the matrix by the solver: `alpha`, or one for TV-l2.
    pub fn outer_weight(&self, alpha: f64) -> f64 {
        match self {
            PenaltyKind::TvL2 { .. } => 1.0,
            _ => alpha,
        }
    }

    /// Whether building the matrix needs a positive intensity scale.
    pub fn needs_scale(&self) -> bool {
        matches!(self, PenaltyKind::Tv { .. } | PenaltyKind::TvL2 { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be > 0, got {v}")))
            }
        };
        match *self {
            PenaltyKind::Tikhonov => Ok(()),
            PenaltyKind::Tv { eps_rel } => pos("eps_rel", eps_rel),
            PenaltyKind::TvL2 {
                eps_rel,
                gamma_rel,
                mu,
                alpha,
            } => {
                pos("eps_rel", eps_rel)?;
                pos("gamma_rel", gamma_rel)?;
                if !(mu >= 0.0 && mu.is_finite()) {
                    return Err(Error::invalid(format!("mu must be >= 0, got {mu}")));
                }
                match alpha {
                    None => Err(Error::invalid("tv-l2 penalty needs alpha")),
                    Some(a) if !(a >= 0.0 && a.is_finite()) => {
                        Err(Error::invalid(format!("alpha must be >= 0, got {a}")))
                    }
                    Some(_) => Ok(()),
                }
            }
            PenaltyKind::El { beta } => pos("beta", beta),
        }
    }
}

/// Symmetric sparse gradient matrix of a penalty, frozen at one iterate.
#[derive(Debug, Clone)]
pub struct RegularizerMatrix {
    kind: PenaltyKind,
    matrix: CsrMatrix,
    u_max: f64,
}

impl RegularizerMatrix {
    pub fn kind(&self) -> &PenaltyKind {
        &self.kind
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Intensity scale the matrix was built with.
    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(v)
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        self.matrix.mul_vec_into(v, out)
    }
}

fn grad_sq(grid: &GridSpec, u: &[f64]) -> Vec<f64> {
    let gx = first_diff(grid, Axis::X, u);
    let gy = first_diff(grid, Axis::Y, u);
    gx.iter().zip(&gy).map(|(a, b)| a * a + b * b).collect()
}

fn scale_error(kind: &PenaltyKind) -> Error {
    Error::Numerical(format!(
        "{} penalty needs a positive intensity scale but the iterate has none",
        kind.name()
    ))
}

type PatternKey = (usize, usize, u64, u64, &'static str);

thread_local! {
    // the stencil layout depends only on grid and penalty family
    static PATTERNS: RefCell<HashMap<PatternKey, Rc<Pattern>>> = RefCell::new(HashMap::new());
}

const MAX_CACHED_PATTERNS: usize = 16;

fn assemble(kind: &PenaltyKind, grid: &GridSpec, triplets: &[(usize, usize, f64)]) -> Result<CsrMatrix> {
    let n = grid.len();
    let key = (grid.nx, grid.ny, grid.dx.to_bits(), grid.dy.to_bits(), kind.name());
    let cached = PATTERNS.with(|p| p.borrow().get(&key).cloned());
    let pattern = match cached {
        Some(p) if p.stream_len() == triplets.len() => p,
        _ => {
            let p = Rc::new(Pattern::new(n, n, triplets.iter().map(|&(r, c, _)| (r, c)))?);
            PATTERNS.with(|cache| {
                let mut cache = cache.borrow_mut();
                if cache.len() >= MAX_CACHED_PATTERNS {
                    cache.clear();
                }
                cache.insert(key, p.clone());
            });
            p
        }
    };
    pattern.assemble(triplets.iter().map(|t| t.2))
}

/// Gradient matrix at `u`, with the intensity scale taken from `u` itself.
pub fn build_gradient_matrix(kind: &PenaltyKind, u: &Image) -> Result<RegularizerMatrix> {
    build_gradient_matrix_with_scale(kind, u.grid(), u.values(), image_max(u.values()))
}

pub fn build_gradient_matrix_with_scale(
    kind: &PenaltyKind,
    grid: &GridSpec,
    u: &[f64],
    u_max: f64,
) -> Result<RegularizerMatrix> {
    kind.validate()?;
    check_len(grid.len(), u.len())?;
    if let Some(i) = u.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("iterate entry {i}")));
    }
    let n = grid.len();
    if kind.needs_scale() && is_degenerate_scale(u_max, u) {
        return Err(scale_error(kind));
    }
    let dx_row = |i| first_diff_row(grid, Axis::X, i);
    let dy_row = |i| first_diff_row(grid, Axis::Y, i);
    let lx_row = |i| second_diff_row(grid, Axis::X, i);
    let ly_row = |i| second_diff_row(grid, Axis::Y, i);
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    match *kind {
        PenaltyKind::Tikhonov => {
            return Ok(RegularizerMatrix {
                kind: *kind,
                matrix: CsrMatrix::identity(n),
                u_max,
            })
        }
        PenaltyKind::Tv { eps_rel } => {
            let eps2 = (eps_rel * u_max).powi(2);
            let phi: Vec<f64> = grad_sq(grid, u)
                .into_iter()
                .map(|g2| 1.0 / (g2 + eps2).sqrt())
                .collect();
            triplets.reserve(8 * n);
            push_weighted_gram(grid, &phi, dx_row, &mut triplets);
            push_weighted_gram(grid, &phi, dy_row, &mut triplets);
        }
        PenaltyKind::TvL2 {
            eps_rel,
            gamma_rel,
            mu,
            alpha,
        } => {
            let alpha = alpha.expect("validated");
            let eps2 = (eps_rel * u_max).powi(2);
            let gamma = gamma_rel * u_max * u_max;
            let g2 = grad_sq(grid, u);
            let psi: Vec<f64> = g2.iter().map(|&g| alpha / (g + eps2).sqrt()).collect();
            let ups: Vec<f64> = g2.iter().map(|&g| 2.0 * mu / (g + gamma).powf(1.5)).collect();
            triplets.reserve(26 * n);
            push_weighted_gram(grid, &psi, dx_row, &mut triplets);
            push_weighted_gram(grid, &psi, dy_row, &mut triplets);
            push_weighted_gram(grid, &ups, lx_row, &mut triplets);
            push_weighted_gram(grid, &ups, ly_row, &mut triplets);
        }
        PenaltyKind::El { beta } => {
            let w = el_weights_with_scale(grid, u, beta, u_max)?;
            let wx2: Vec<f64> = w.wx.iter().map(|v| v * v).collect();
            let wy2: Vec<f64> = w.wy.iter().map(|v| v * v).collect();
            triplets.reserve(18 * n);
            push_weighted_gram(grid, &wx2, lx_row, &mut triplets);
            push_weighted_gram(grid, &wy2, ly_row, &mut triplets);
        }
    }
    Ok(RegularizerMatrix {
        kind: *kind,
        matrix: assemble(kind, grid, &triplets)?,
        u_max,
    })
}

/// Penalty value at `u`, scale taken from `u`.
pub fn penalty_value(kind: &PenaltyKind, u: &Image) -> Result<f64> {
    penalty_value_with_scale(kind, u.grid(), u.values(), image_max(u.values()))
}

/// * Tikhonov: `||u||^2`
/// * TV: `sum sqrt(|grad u|^2 + eps^2)`
/// * TV-l2: TV term plus `(mu / alpha) sum (Lap u)^2 / (|grad u|^2 + gamma)^(3/2)`
/// * EL: `||wx uxx||^2 + ||wy uyy||^2` with weights from `u`
pub fn penalty_value_with_scale(
    kind: &PenaltyKind,
    grid: &GridSpec,
    u: &[f64],
    u_max: f64,
) -> Result<f64> {
    kind.validate()?;
    check_len(grid.len(), u.len())?;
    match *kind {
        PenaltyKind::Tikhonov => Ok(u.iter().map(|v| v * v).sum()),
        PenaltyKind::Tv { eps_rel } => {
            let eps2 = if is_degenerate_scale(u_max, u) {
                0.0
            } else {
                (eps_rel * u_max).powi(2)
            };
            Ok(grad_sq(grid, u).iter().map(|g| (g + eps2).sqrt()).sum())
        }
        PenaltyKind::TvL2 {
            eps_rel,
            gamma_rel,
            mu,
            alpha,
        } => {
            if is_degenerate_scale(u_max, u) {
                return Err(scale_error(kind));
            }
            let alpha = alpha.expect("validated");
            let eps2 = (eps_rel * u_max).powi(2);
            let gamma = gamma_rel * u_max * u_max;
            let g2 = grad_sq(grid, u);
            let tv: f64 = g2.iter().map(|g| (g + eps2).sqrt()).sum();
            if mu == 0.0 {
                return Ok(tv);
            }
            if alpha == 0.0 {
                return Err(Error::invalid("tv-l2 value needs alpha > 0 when mu > 0"));
            }
            let lxx = second_diff(grid, Axis::X, u);
            let lyy = second_diff(grid, Axis::Y, u);
            let curv: f64 = lxx
                .iter()
                .zip(&lyy)
                .zip(&g2)
                .map(|((a, b), g)| (a + b).powi(2) / (g + gamma).powf(1.5))
                .sum();
            Ok(tv + mu / alpha * curv)
        }
        PenaltyKind::El { beta } => {
            let w = el_weights_with_scale(grid, u, beta, u_max)?;
            let lxx = second_diff(grid, Axis::X, u);
            let lyy = second_diff(grid, Axis::Y, u);
            Ok(lxx
                .iter()
                .zip(&w.wx)
                .map(|(l, w)| (w * l).powi(2))
                .chain(lyy.iter().zip(&w.wy).map(|(l, w)| (w * l).powi(2)))
                .sum())
        }
    }
}
