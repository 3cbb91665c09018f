//! End-to-end comparison protocols: sweep each method's parameter on a
//! dataset, then report the best setting of each.

use crate::error::{Error, Result};
use crate::metrics::{log_grid, rmse, run_sweep, weight_scale, MethodReport, SweepObjective, SweepResult, SweepParam, SweepSpec};
use crate::model::{Image, RegionMask};
use crate::projector::{build_projector, ProjectionOperator};
use crate::recon::{penalty_for, reconstruct, Fidelity, Method, MethodParams};
use crate::regularizers::{PenaltyKind, DEFAULT_BETA};
use crate::simulate::{Dataset, Modality};
use crate::solvers::{cgls, mlem_split_reconstruct, ReconResult, SolverConfig};

/// Iterations of the unregularized run that supplies the reference iterate
/// for the weight heuristic.
const REFERENCE_ITERS: usize = 10;

/// Times a sweep is continued past a grid end that holds the minimum.
const MAX_EXTENSIONS: usize = 3;

/// Relative gain of an end point over its neighbour below which the sweep
/// is taken to have reached a plateau rather than an unbounded slope.
const EXTENSION_MIN_GAIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub methods: Vec<Method>,
    pub solver: SolverConfig,
    pub sweep_points: usize,
    pub sweep_decades: f64,
    pub beta: f64,
    /// Realizations averaged per sweep point (at most those in the dataset).
    pub sweep_realizations: usize,
    /// Grid continuations allowed when a minimum lands on a grid end.
    pub max_extensions: usize,
}

impl ProtocolConfig {
    /// CGLS, TV, TV-l2 and EL on least-squares data.
    pub fn ct() -> Self {
        ProtocolConfig {
            methods: vec![Method::Cgls, Method::Tv, Method::TvL2, Method::El],
            solver: SolverConfig::ct(0.0),
            sweep_points: 15,
            sweep_decades: 4.0,
            beta: DEFAULT_BETA,
            sweep_realizations: 1,
            max_extensions: MAX_EXTENSIONS,
        }
    }

    /// MLEM, TV, TV-l2 and EL on Poisson data.
    pub fn et() -> Self {
        ProtocolConfig {
            methods: vec![Method::Mlem, Method::Tv, Method::TvL2, Method::El],
            solver: SolverConfig::et(0.0),
            sweep_realizations: usize::MAX,
            ..ProtocolConfig::ct()
        }
    }
}

/// Best parameters and report rows of one protocol run.
#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub params: Vec<(Method, MethodParams)>,
    pub reports: Vec<MethodReport>,
}

impl ProtocolOutcome {
    pub fn report(&self, m: Method) -> Option<&MethodReport> {
        self.reports.iter().find(|r| r.method == m.name())
    }

    pub fn rmse(&self, m: Method) -> Option<f64> {
        self.report(m).map(|r| r.rmse)
    }

    /// Mean error of `m` in the region labelled `label`.
    pub fn region_rmse(&self, m: Method, label: &str) -> Option<f64> {
        self.report(m)?
            .region_rmse
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, v)| *v)
    }
}

pub fn fidelity_of(ds: &Dataset) -> Fidelity {
    match ds.modality {
        Modality::Transmission => Fidelity::Ls,
        Modality::Emission => Fidelity::Poisson,
    }
}

fn reference_iterate(op: &ProjectionOperator, b: &[f64], fidelity: Fidelity, cfg: &SolverConfig) -> Result<Image> {
    let res = match fidelity {
        Fidelity::Ls => cgls(op, b, REFERENCE_ITERS, None)?,
        Fidelity::Poisson => {
            let c = SolverConfig {
                outer_iters: REFERENCE_ITERS,
                alpha: 0.0,
                ..cfg.clone()
            };
            mlem_split_reconstruct(op, b, &PenaltyKind::Tikhonov, &c, None, &[])?
        }
    };
    Ok(res.image)
}

struct Context<'a> {
    op: ProjectionOperator,
    data: Vec<Vec<f64>>,
    truth: &'a Image,
    masks: &'a [RegionMask],
    fidelity: Fidelity,
    reference: Image,
    cfg: &'a ProtocolConfig,
}

impl Context<'_> {
    fn objective(&self) -> SweepObjective {
        if self.masks.is_empty() {
            SweepObjective::Global
        } else {
            SweepObjective::Regions
        }
    }

    /// Log grid around `center`; while the minimum sits on an end point and
    /// still clearly improves on its neighbour, the grid is continued past
    /// that end by about one decade.
    fn sweep(&self, method: Method, param: SweepParam, center: f64, fixed: MethodParams) -> Result<SweepResult> {
        let values = log_grid(center, self.cfg.sweep_decades, self.cfg.sweep_points)?;
        let ratio = values[1] / values[0];
        let per_decade = ((self.cfg.sweep_points - 1) as f64 / self.cfg.sweep_decades).round().max(1.0) as i32;
        let n = self.cfg.sweep_realizations.clamp(1, self.data.len());
        let run = |values: Vec<f64>| {
            let spec = SweepSpec {
                method,
                fidelity: self.fidelity,
                param,
                values,
                fixed,
                solver: self.cfg.solver.clone(),
                objective: self.objective(),
            };
            run_sweep(&spec, &self.op, &self.data[..n], self.truth, self.masks)
        };
        let mut result = run(values)?;
        for _ in 0..self.cfg.max_extensions {
            let Some(i) = result.argmin else { break };
            let last = result.values.len() - 1;
            let gain = |j: usize| match (result.score[i], result.score[j]) {
                (Some(a), Some(b)) => (b - a) / b,
                _ => f64::INFINITY,
            };
            let more: Vec<f64> = if last == 0 {
                break;
            } else if i == 0 && gain(1) > EXTENSION_MIN_GAIN {
                (1..=per_decade).rev().map(|k| result.values[0] / ratio.powi(k)).collect()
            } else if i == last && gain(last - 1) > EXTENSION_MIN_GAIN {
                (1..=per_decade).map(|k| result.values[last] * ratio.powi(k)).collect()
            } else {
                break;
            };
            result = result.merge(run(more)?)?;
        }
        Ok(result)
    }

    fn center(&self, kind: &PenaltyKind) -> Result<f64> {
        weight_scale(&self.op, &self.data[0], kind, &self.reference)
    }

    /// Runs `method` with fixed parameters on every realization and builds
    /// its report row.
    fn evaluate(&self, method: Method, p: &MethodParams, parameter: &str, value: f64, sweep: Option<SweepResult>) -> Result<MethodReport> {
        let mut first: Option<ReconResult> = None;
        let mut total = 0.0;
        let mut regions = vec![0.0; self.masks.len()];
        for (r, b) in self.data.iter().enumerate() {
            let res = reconstruct(&self.op, b, method, self.fidelity, p, &self.cfg.solver, Some(self.truth), &[])?;
            total += rmse(&res.image, self.truth, None)?;
            for (k, m) in self.masks.iter().enumerate() {
                regions[k] += rmse(&res.image, self.truth, Some(m))?;
            }
            if r == 0 {
                first = Some(res);
            }
        }
        let count = self.data.len() as f64;
        Ok(MethodReport {
            method: method.name().to_string(),
            parameter: parameter.to_string(),
            value,
            rmse: total / count,
            region_rmse: self
                .masks
                .iter()
                .zip(&regions)
                .map(|(m, v)| (m.label().to_string(), v / count))
                .collect(),
            sweep,
            result: first,
        })
    }
}

/// Centre of the protocol's log grid for sweeping `param` of `method` on
/// the first realization of `ds`. For `beta` this is `fixed.beta`.
pub fn sweep_center(ds: &Dataset, method: Method, param: SweepParam, fixed: &MethodParams, solver: &SolverConfig) -> Result<f64> {
    let kind = match param {
        SweepParam::Beta => return Ok(fixed.beta),
        SweepParam::Mu => PenaltyKind::tv_l2(1.0).with_alpha(0.0),
        SweepParam::Alpha => penalty_for(method, fixed)
            .ok_or_else(|| Error::invalid(format!("{} has no parameter to sweep", method.name())))?,
    };
    let b = ds
        .noisy
        .first()
        .ok_or_else(|| Error::invalid("dataset has no noisy realizations"))?
        .values();
    let op = build_projector(&ds.recon_spec)?;
    let reference = reference_iterate(&op, b, fidelity_of(ds), solver)?;
    weight_scale(&op, b, &kind, &reference)
}

/// Sweeps (or, with `preset`, reuses) each method's parameter on `ds` and
/// scores every realization at the chosen setting.
///
/// Sweep order: TV's `alpha`, then TV-l2's `mu` with TV's `alpha` frozen,
/// then EL's `alpha` with `beta` fixed. Grids are log-spaced around
/// `||A* b||_inf / ||R(u0) u0||_inf` with `u0` a short unregularized run.
pub fn run_protocol(ds: &Dataset, cfg: &ProtocolConfig, preset: Option<&[(Method, MethodParams)]>) -> Result<ProtocolOutcome> {
    if cfg.methods.is_empty() {
        return Err(Error::invalid("protocol needs at least one method"));
    }
    let fidelity = fidelity_of(ds);
    let op = build_projector(&ds.recon_spec)?;
    let data: Vec<Vec<f64>> = ds.noisy.iter().map(|s| s.values().to_vec()).collect();
    if data.is_empty() {
        return Err(Error::invalid("dataset has no noisy realizations"));
    }
    let reference = reference_iterate(&op, &data[0], fidelity, &cfg.solver)?;
    let ctx = Context {
        op,
        data,
        truth: &ds.ground_truth,
        masks: &ds.masks,
        fidelity,
        reference,
        cfg,
    };
    let base = MethodParams {
        beta: cfg.beta,
        ..MethodParams::default()
    };
    let preset_for = |m: Method| preset.and_then(|p| p.iter().find(|(k, _)| *k == m).map(|(_, v)| *v));

    let mut params: Vec<(Method, MethodParams)> = Vec::new();
    let mut reports = Vec::new();
    let mut tv_alpha: Option<f64> = None;
    let wants = |m: Method| cfg.methods.contains(&m);

    let needs_tv_alpha = wants(Method::Tv) || wants(Method::TvL2);
    let mut tv_sweep = None;
    if needs_tv_alpha {
        let alpha = match preset_for(Method::Tv) {
            Some(p) => p.alpha,
            None => {
                let kind = penalty_for(Method::Tv, &base).expect("regularized");
                let s = ctx.sweep(Method::Tv, SweepParam::Alpha, ctx.center(&kind)?, base)?;
                let a = s.best_value().ok_or_else(|| Error::Numerical("tv sweep failed at every point".into()))?;
                tv_sweep = Some(s);
                a
            }
        };
        tv_alpha = Some(alpha);
    }

    for &m in &cfg.methods {
        let (p, parameter, value, sweep) = match m {
            Method::Cgls | Method::Mlem => (base, "iterations", cfg.solver.outer_iters as f64, None),
            Method::Tv => {
                let p = base.with_alpha(tv_alpha.expect("set above"));
                (p, "alpha", p.alpha, tv_sweep.take())
            }
            Method::TvL2 => {
                let alpha = tv_alpha.expect("set above");
                match preset_for(m) {
                    Some(p) => (p, "mu", p.mu, None),
                    None => {
                        let fixed = base.with_alpha(alpha);
                        let curv = PenaltyKind::tv_l2(1.0).with_alpha(0.0);
                        let s = ctx.sweep(m, SweepParam::Mu, ctx.center(&curv)?, fixed)?;
                        let mu = s.best_value().ok_or_else(|| Error::Numerical("tvl2 sweep failed at every point".into()))?;
                        let p = MethodParams { mu, ..fixed };
                        (p, "mu", mu, Some(s))
                    }
                }
            }
            Method::El | Method::Tikhonov => match preset_for(m) {
                Some(p) => (p, "alpha", p.alpha, None),
                None => {
                    let kind = penalty_for(m, &base).expect("regularized");
                    let s = ctx.sweep(m, SweepParam::Alpha, ctx.center(&kind)?, base)?;
                    let alpha = s
                        .best_value()
                        .ok_or_else(|| Error::Numerical(format!("{} sweep failed at every point", m.name())))?;
                    (base.with_alpha(alpha), "alpha", alpha, Some(s))
                }
            },
        };
        reports.push(ctx.evaluate(m, &p, parameter, value, sweep)?);
        params.push((m, p));
    }
    Ok(ProtocolOutcome { params, reports })
}
