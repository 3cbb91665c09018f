//! Method selection: maps a method name and data model to a solver run.

use crate::error::{Error, Result};
use crate::model::{Image, RegionMask};
use crate::regularizers::{PenaltyKind, DEFAULT_BETA, DEFAULT_EPS_REL, DEFAULT_GAMMA_REL};
use crate::solvers::{
    cgls, fixed_point_reconstruct, mlem_split_reconstruct, ReconResult, SolverConfig, SystemOperator,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Cgls,
    Mlem,
    Tikhonov,
    Tv,
    TvL2,
    El,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Cgls,
        Method::Mlem,
        Method::Tikhonov,
        Method::Tv,
        Method::TvL2,
        Method::El,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Cgls => "cgls",
            Method::Mlem => "mlem",
            Method::Tikhonov => "tikhonov",
            Method::Tv => "tv",
            Method::TvL2 => "tvl2",
            Method::El => "el",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }

    pub fn is_regularized(&self) -> bool {
        !matches!(self, Method::Cgls | Method::Mlem)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fidelity {
    Ls,
    Poisson,
}

impl Fidelity {
    pub fn name(&self) -> &'static str {
        match self {
            Fidelity::Ls => "ls",
            Fidelity::Poisson => "poisson",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ls" => Ok(Fidelity::Ls),
            "poisson" => Ok(Fidelity::Poisson),
            _ => Err(Error::invalid(format!("unknown fidelity {s:?}"))),
        }
    }
}

/// Penalty constants of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodParams {
    pub alpha: f64,
    pub mu: f64,
    pub beta: f64,
    pub eps_rel: f64,
    pub gamma_rel: f64,
}

impl Default for MethodParams {
    fn default() -> Self {
        MethodParams {
            alpha: 0.0,
            mu: 0.0,
            beta: DEFAULT_BETA,
            eps_rel: DEFAULT_EPS_REL,
            gamma_rel: DEFAULT_GAMMA_REL,
        }
    }
}

impl MethodParams {
    pub fn with_alpha(self, alpha: f64) -> Self {
        MethodParams { alpha, ..self }
    }
}

/// Penalty realized by `method`, or `None` for the unregularized solvers.
pub fn penalty_for(method: Method, p: &MethodParams) -> Option<PenaltyKind> {
    match method {
        Method::Cgls | Method::Mlem => None,
        Method::Tikhonov => Some(PenaltyKind::Tikhonov),
        Method::Tv => Some(PenaltyKind::Tv { eps_rel: p.eps_rel }),
        Method::TvL2 => Some(PenaltyKind::TvL2 {
            eps_rel: p.eps_rel,
            gamma_rel: p.gamma_rel,
            mu: p.mu,
            alpha: Some(p.alpha),
        }),
        Method::El => Some(PenaltyKind::El { beta: p.beta }),
    }
}

/// Rejects unsupported method/fidelity pairs and missing weights.
pub fn check_method(method: Method, fidelity: Fidelity, p: &MethodParams) -> Result<()> {
    match (method, fidelity) {
        (Method::Cgls, Fidelity::Poisson) => {
            return Err(Error::invalid("cgls solves least squares only; use mlem for poisson data"))
        }
        (Method::Mlem, Fidelity::Ls) => {
            return Err(Error::invalid("mlem needs poisson fidelity; use cgls for least squares"))
        }
        _ => {}
    }
    if method.is_regularized() && !(p.alpha > 0.0 && p.alpha.is_finite()) {
        return Err(Error::invalid(format!(
            "method {} needs alpha > 0, got {}",
            method.name(),
            p.alpha
        )));
    }
    if let Some(kind) = penalty_for(method, p) {
        kind.validate()?;
    }
    Ok(())
}

/// Runs one reconstruction. CGLS uses `cfg.outer_iters` as its iteration
/// count and `cfg.alpha` is replaced by `p.alpha`. Region masks are tracked
/// per iteration by the Poisson solver only.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct<Op: SystemOperator + ?Sized>(
    op: &Op,
    b: &[f64],
    method: Method,
    fidelity: Fidelity,
    p: &MethodParams,
    cfg: &SolverConfig,
    truth: Option<&Image>,
    masks: &[RegionMask],
) -> Result<ReconResult> {
    check_method(method, fidelity, p)?;
    let cfg = SolverConfig {
        alpha: if method.is_regularized() { p.alpha } else { 0.0 },
        ..cfg.clone()
    };
    let kind = penalty_for(method, p).unwrap_or(PenaltyKind::Tikhonov);
    match fidelity {
        Fidelity::Ls if method == Method::Cgls => cgls(op, b, cfg.outer_iters, truth),
        Fidelity::Ls => fixed_point_reconstruct(op, b, &kind, &cfg, truth),
        Fidelity::Poisson => mlem_split_reconstruct(op, b, &kind, &cfg, truth, masks),
    }
}
