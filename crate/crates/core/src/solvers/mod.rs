//! CGLS, the lagged-diffusivity fixed point for least squares, the MLEM
//! splitting scheme for Poisson data and the regularization-error bound check.

mod cg;
mod error_bound;
mod fixed_point;
mod mlem;
mod precond;

use std::fmt::Write as _;

use crate::error::{check_len, Error, Result};
use crate::metrics::{fmt_num, relative_l2};
use crate::model::{GridSpec, Image, RegionMask};

pub use cg::{cgls, largest_singular_value, pcg, power_iteration, CgOutcome, MatrixOperator, SystemOperator};
pub use error_bound::{verify_error_bound, ErrorBoundReport};
pub use fixed_point::{fixed_point_reconstruct, fixed_point_reconstruct_from, intensity_scale_estimate};
pub use mlem::{denoise_objective, denoise_steps, mlem_split_reconstruct, mlem_step};

pub const DEFAULT_RHO: f64 = 1e-4;
pub const SIGMA_POWER_STEPS: usize = 50;
pub const TAU_POWER_STEPS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub rho: f64,
    pub alpha: f64,
    /// Denoising step of the Poisson splitting; estimated from `R` if absent.
    pub tau: Option<f64>,
    pub precondition: bool,
    /// Preconditioner shift scale; largest singular value of `A` if absent.
    pub sigma: Option<f64>,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig::ct(0.0)
    }
}

impl SolverConfig {
    /// 80 outer / 5 inner iterations, preconditioned.
    pub fn ct(alpha: f64) -> Self {
        SolverConfig {
            outer_iters: 80,
            inner_iters: 5,
            rho: DEFAULT_RHO,
            alpha,
            tau: None,
            precondition: true,
            sigma: None,
            seed: 0,
        }
    }

    /// 130 outer / 5 inner iterations.
    pub fn et(alpha: f64) -> Self {
        SolverConfig {
            outer_iters: 130,
            ..SolverConfig::ct(alpha)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.outer_iters == 0 || self.inner_iters == 0 {
            return Err(Error::invalid("outer_iters and inner_iters must be >= 1"));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::invalid(format!("rho must be > 0, got {}", self.rho)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if let Some(t) = self.tau {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::invalid(format!("tau must be > 0, got {t}")));
            }
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("sigma must be > 0, got {s}")));
            }
        }
        Ok(())
    }
}

/// One outer iteration. `fidelity` is `0.5 ||Au - b||^2` for least squares
/// and the Poisson negative log-likelihood `sum(Au - b ln Au)` otherwise;
/// `objective = fidelity + alpha * penalty`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub fidelity: f64,
    pub penalty: f64,
    pub step_norm2: f64,
    pub rmse: Option<f64>,
    /// One entry per tracked region mask, in the order given.
    pub region_rmse: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ReconResult {
    pub image: Image,
    pub history: Vec<IterRecord>,
    pub terminated_early: bool,
    pub breakdown: bool,
}

impl ReconResult {
    pub fn rmse_curve(&self) -> Vec<f64> {
        self.history.iter().filter_map(|r| r.rmse).collect()
    }

    /// `iter,objective,fidelity,penalty,step_norm2,rmse`; rmse left empty
    /// when no ground truth was tracked.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("iter,objective,fidelity,penalty,step_norm2,rmse\n");
        for r in &self.history {
            let rmse = r.rmse.map(fmt_num).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.iter,
                fmt_num(r.objective),
                fmt_num(r.fidelity),
                fmt_num(r.penalty),
                fmt_num(r.step_norm2),
                rmse
            );
        }
        out
    }
}

/// Ground truth and regions followed along a run.
pub(crate) struct Tracker<'a> {
    truth: Option<&'a Image>,
    masks: &'a [RegionMask],
}

impl<'a> Tracker<'a> {
    pub(crate) fn new(grid: &GridSpec, truth: Option<&'a Image>, masks: &'a [RegionMask]) -> Result<Self> {
        if let Some(t) = truth {
            if t.grid() != grid {
                return Err(Error::invalid("ground truth grid differs from the operator grid"));
            }
            relative_l2(t.values(), t.values(), None)?;
        }
        for m in masks {
            if m.grid().len() != grid.len() {
                return Err(Error::invalid(format!("mask {} has the wrong size", m.label())));
            }
            if truth.is_none() {
                return Err(Error::invalid("region tracking needs a ground truth"));
            }
            relative_l2(truth.unwrap().values(), truth.unwrap().values(), Some(m.membership()))?;
        }
        Ok(Tracker { truth, masks })
    }

    pub(crate) fn rmse(&self, u: &[f64]) -> Option<f64> {
        self.truth
            .map(|t| relative_l2(u, t.values(), None).expect("checked on construction"))
    }

    pub(crate) fn region_rmse(&self, u: &[f64]) -> Vec<f64> {
        let Some(t) = self.truth else {
            return Vec::new();
        };
        self.masks
            .iter()
            .map(|m| relative_l2(u, t.values(), Some(m.membership())).expect("checked on construction"))
            .collect()
    }
}

pub(crate) fn check_data<Op: SystemOperator + ?Sized>(op: &Op, b: &[f64]) -> Result<()> {
    check_len(op.nrows(), b.len())?;
    if let Some(i) = b.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("data entry {i}")));
    }
    Ok(())
}

pub(crate) fn check_finite(u: &[f64], iter: usize) -> Result<()> {
    match u.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Numerical(format!(
            "non-finite iterate at outer iteration {iter} (pixel {i})"
        ))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests;
