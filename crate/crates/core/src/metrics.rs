//! Relative errors, parameter sweeps and CSV/PGM report emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::save_pgm;
use crate::model::{Image, RegionMask};
use crate::recon::{penalty_for, reconstruct, Fidelity, Method, MethodParams};
use crate::regularizers::{build_gradient_matrix_with_scale, image_max, PenaltyKind};
use crate::solvers::{ReconResult, SolverConfig, SystemOperator};

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// `||u - t|| / ||t||` over the pixels selected by `mask`.
pub(crate) fn relative_l2(u: &[f64], t: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    crate::error::check_len(t.len(), u.len())?;
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let (mut num, mut den) = (0.0, 0.0);
    for i in (0..t.len()).filter(|&i| keep(i)) {
        num += (u[i] - t[i]).powi(2);
        den += t[i] * t[i];
    }
    if !(den > 0.0) {
        return Err(Error::invalid("relative error undefined: reference is zero on the selected pixels"));
    }
    Ok((num / den).sqrt())
}

/// Relative l2 error of `recon` against `truth`, optionally restricted to
/// a region.
pub fn rmse(recon: &Image, truth: &Image, mask: Option<&RegionMask>) -> Result<f64> {
    if recon.grid() != truth.grid() {
        return Err(Error::invalid("rmse needs images on the same grid"));
    }
    if let Some(m) = mask {
        crate::error::check_len(truth.grid().len(), m.membership().len())?;
    }
    relative_l2(recon.values(), truth.values(), mask.map(|m| m.membership()))
}

/// `points` log-spaced values spanning `decades` decades centered on `center`.
pub fn log_grid(center: f64, decades: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(center > 0.0 && center.is_finite()) || !(decades > 0.0) {
        return Err(Error::invalid("log grid needs >= 2 points, center > 0 and decades > 0"));
    }
    let lo = center.log10() - decades / 2.0;
    let step = decades / (points - 1) as f64;
    Ok((0..points).map(|k| 10f64.powf(lo + step * k as f64)).collect())
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// `||A* b||_inf / ||R(u) u||_inf` for the penalty `kind` frozen at the
/// reference iterate `u_ref`.
pub fn weight_scale<Op: SystemOperator + ?Sized>(
    op: &Op,
    b: &[f64],
    kind: &PenaltyKind,
    u_ref: &Image,
) -> Result<f64> {
    let rm = build_gradient_matrix_with_scale(kind, u_ref.grid(), u_ref.values(), image_max(u_ref.values()))?;
    let denom = inf_norm(&rm.apply(u_ref.values()));
    let num = inf_norm(&op.adjoint_vec(b));
    if !(denom > 0.0) || !(num > 0.0) {
        return Err(Error::Numerical("weight scale undefined for a flat reference iterate".into()));
    }
    Ok(num / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    Mu,
    Beta,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Mu => "mu",
            SweepParam::Beta => "beta",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "mu" => Ok(SweepParam::Mu),
            "beta" => Ok(SweepParam::Beta),
            _ => Err(Error::invalid(format!("unknown sweep parameter {s:?}"))),
        }
    }

    pub fn apply(&self, p: MethodParams, v: f64) -> MethodParams {
        match self {
            SweepParam::Alpha => MethodParams { alpha: v, ..p },
            SweepParam::Mu => MethodParams { mu: v, ..p },
            SweepParam::Beta => MethodParams { beta: v, ..p },
        }
    }
}

/// What the sweep minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepObjective {
    /// Mean whole-image error.
    Global,
    /// Average of the per-region mean errors.
    Regions,
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub method: Method,
    pub fidelity: Fidelity,
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub fixed: MethodParams,
    pub solver: SolverConfig,
    pub objective: SweepObjective,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("sweep needs at least one value"));
        }
        if self.values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("sweep values must be > 0"));
        }
        if self.param == SweepParam::Mu && self.method != Method::TvL2 {
            return Err(Error::invalid("mu is a tvl2 parameter"));
        }
        if self.param == SweepParam::Beta && self.method != Method::El {
            return Err(Error::invalid("beta is an el parameter"));
        }
        if penalty_for(self.method, &self.fixed).is_none() {
            return Err(Error::invalid(format!("{} has no parameter to sweep", self.method.name())));
        }
        Ok(())
    }
}

/// Errors of one run at one parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct RunScore {
    pub rmse: f64,
    pub region_rmse: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub method: Method,
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub region_labels: Vec<String>,
    /// `runs[v][r]`; `None` where the solver failed.
    pub runs: Vec<Vec<Option<RunScore>>>,
    pub mean_rmse: Vec<Option<f64>>,
    pub mean_region_rmse: Vec<Option<Vec<f64>>>,
    /// Minimized quantity per value.
    pub score: Vec<Option<f64>>,
    pub argmin: Option<usize>,
    /// First-realization run at the argmin.
    pub best_run: Option<ReconResult>,
}

impl SweepResult {
    pub fn best_value(&self) -> Option<f64> {
        self.argmin.map(|i| self.values[i])
    }

    pub fn best_score(&self) -> Option<f64> {
        self.argmin.and_then(|i| self.score[i])
    }

    /// Combines two sweeps of the same parameter over disjoint values into
    /// one ordered by value, and re-takes the argmin.
    pub fn merge(self, other: SweepResult) -> Result<SweepResult> {
        if self.method != other.method || self.param != other.param || self.region_labels != other.region_labels {
            return Err(Error::invalid("only sweeps of the same parameter can be merged"));
        }
        if self.values.iter().any(|v| other.values.contains(v)) {
            return Err(Error::invalid("merged sweeps must not share values"));
        }
        let (method, param, region_labels) = (self.method, self.param, self.region_labels.clone());
        let best_runs = [self.best_run.clone(), other.best_run.clone()];
        let bests = [self.best_value(), other.best_value()];
        let mut rows: Vec<_> = [self, other]
            .into_iter()
            .flat_map(|s| {
                s.values
                    .into_iter()
                    .zip(s.runs)
                    .zip(s.mean_rmse)
                    .zip(s.mean_region_rmse)
                    .zip(s.score)
                    .collect::<Vec<_>>()
            })
            .collect();
        rows.sort_by(|a, b| a.0 .0 .0 .0.total_cmp(&b.0 .0 .0 .0));
        let mut out = SweepResult {
            method,
            param,
            values: Vec::new(),
            region_labels,
            runs: Vec::new(),
            mean_rmse: Vec::new(),
            mean_region_rmse: Vec::new(),
            score: Vec::new(),
            argmin: None,
            best_run: None,
        };
        for ((((v, r), m), mr), sc) in rows {
            out.values.push(v);
            out.runs.push(r);
            out.mean_rmse.push(m);
            out.mean_region_rmse.push(mr);
            out.score.push(sc);
        }
        out.argmin = argmin_with_ties(&out.values, &out.score);
        let chosen = out.best_value();
        out.best_run = bests
            .iter()
            .zip(best_runs)
            .find(|(b, _)| chosen.is_some() && **b == chosen)
            .and_then(|(_, r)| r);
        Ok(out)
    }
}

/// Index of the smallest score; equal scores go to the smaller value.
pub fn argmin_with_ties(values: &[f64], score: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in score.iter().enumerate() {
        let Some(s) = *s else { continue };
        best = match best {
            None => Some(i),
            Some(j) => {
                let sj = score[j].expect("only scored indices kept");
                if s < sj || (s == sj && values[i] < values[j]) {
                    Some(i)
                } else {
                    Some(j)
                }
            }
        };
    }
    best
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Runs the solver at every value for every data realization and averages
/// the errors. A value where any realization fails is recorded as missing.
pub fn run_sweep<Op: SystemOperator + ?Sized>(
    spec: &SweepSpec,
    op: &Op,
    data: &[Vec<f64>],
    truth: &Image,
    masks: &[RegionMask],
) -> Result<SweepResult> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("sweep needs at least one data realization"));
    }
    if spec.objective == SweepObjective::Regions && masks.is_empty() {
        return Err(Error::invalid("region objective needs region masks"));
    }
    let nreal = data.len();
    let jobs: Vec<(usize, usize)> = (0..spec.values.len())
        .flat_map(|v| (0..nreal).map(move |r| (v, r)))
        .collect();
    let outcomes: Vec<Option<(RunScore, Option<ReconResult>)>> = jobs
        .par_iter()
        .map(|&(v, r)| {
            let p = spec.param.apply(spec.fixed, spec.values[v]);
            let res = reconstruct(op, &data[r], spec.method, spec.fidelity, &p, &spec.solver, Some(truth), &[]).ok()?;
            let score = RunScore {
                rmse: rmse(&res.image, truth, None).ok()?,
                region_rmse: masks
                    .iter()
                    .map(|m| rmse(&res.image, truth, Some(m)))
                    .collect::<Result<_>>()
                    .ok()?,
            };
            Some((score, (r == 0).then_some(res)))
        })
        .collect();

    let nv = spec.values.len();
    let mut runs = vec![Vec::with_capacity(nreal); nv];
    let mut first: Vec<Option<ReconResult>> = vec![None; nv];
    for (&(v, _), out) in jobs.iter().zip(outcomes) {
        match out {
            Some((score, res)) => {
                if res.is_some() {
                    first[v] = res;
                }
                runs[v].push(Some(score));
            }
            None => runs[v].push(None),
        }
    }
    let complete = |v: usize| runs[v].iter().all(Option::is_some);
    let mean_rmse: Vec<Option<f64>> = (0..nv)
        .map(|v| complete(v).then(|| mean(runs[v].iter().flatten().map(|s| s.rmse))))
        .collect();
    let mean_region_rmse: Vec<Option<Vec<f64>>> = (0..nv)
        .map(|v| {
            complete(v).then(|| {
                (0..masks.len())
                    .map(|k| mean(runs[v].iter().flatten().map(|s| s.region_rmse[k])))
                    .collect()
            })
        })
        .collect();
    let score: Vec<Option<f64>> = match spec.objective {
        SweepObjective::Global => mean_rmse.clone(),
        SweepObjective::Regions => mean_region_rmse
            .iter()
            .map(|m| m.as_ref().map(|r| mean(r.iter().copied())))
            .collect(),
    };
    let argmin = argmin_with_ties(&spec.values, &score);
    let best_run = argmin.and_then(|i| first[i].take());
    Ok(SweepResult {
        method: spec.method,
        param: spec.param,
        values: spec.values.clone(),
        region_labels: masks.iter().map(|m| m.label().to_string()).collect(),
        runs,
        mean_rmse,
        mean_region_rmse,
        score,
        argmin,
        best_run,
    })
}

/// One row of the method comparison.
#[derive(Debug, Clone)]
pub struct MethodReport {
    pub method: String,
    /// Name of the reported parameter (`alpha`, `mu`, `iterations`, ...).
    pub parameter: String,
    pub value: f64,
    pub rmse: f64,
    /// `(label, mean error)` per region.
    pub region_rmse: Vec<(String, f64)>,
    pub sweep: Option<SweepResult>,
    pub result: Option<ReconResult>,
}

fn opt_num(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

pub fn table_csv(entries: &[MethodReport]) -> String {
    let mut out = String::from("method,parameter,value,rmse\n");
    for e in entries {
        let _ = writeln!(out, "{},{},{},{}", e.method, e.parameter, fmt_num(e.value), fmt_num(e.rmse));
    }
    out
}

pub fn sweep_csv(s: &SweepResult) -> String {
    let mut out = format!("{},mean_rmse", s.param.name());
    for l in &s.region_labels {
        let _ = write!(out, ",mean_{l}");
    }
    out.push_str(",score\n");
    for (i, v) in s.values.iter().enumerate() {
        let _ = write!(out, "{},{}", fmt_num(*v), opt_num(s.mean_rmse[i]));
        for k in 0..s.region_labels.len() {
            let r = s.mean_region_rmse[i].as_ref().map(|r| r[k]);
            let _ = write!(out, ",{}", opt_num(r));
        }
        let _ = writeln!(out, ",{}", opt_num(s.score[i]));
    }
    out
}

/// `method,<label>...` with the mean region errors; `None` when no entry
/// carries region data.
pub fn region_csv(entries: &[MethodReport]) -> Option<String> {
    let labels: Vec<&str> = entries
        .iter()
        .find(|e| !e.region_rmse.is_empty())?
        .region_rmse
        .iter()
        .map(|(l, _)| l.as_str())
        .collect();
    let mut out = String::from("method");
    for l in &labels {
        let _ = write!(out, ",{l}");
    }
    out.push('\n');
    for e in entries.iter().filter(|e| !e.region_rmse.is_empty()) {
        out.push_str(&e.method);
        for (_, v) in &e.region_rmse {
            let _ = write!(out, ",{}", fmt_num(*v));
        }
        out.push('\n');
    }
    Some(out)
}

/// Writes `table.csv`, `convergence_<m>.csv`, `sweep_<m>.csv`,
/// `region_rmse.csv` and `<m>.pgm` into `out_dir`. Returns the written paths.
pub fn emit_report(entries: &[MethodReport], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if entries.is_empty() {
        return Err(Error::invalid("report needs at least one method"));
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, text)?;
        written.push(path);
        Ok(())
    };
    put("table.csv".into(), table_csv(entries))?;
    if let Some(text) = region_csv(entries) {
        put("region_rmse.csv".into(), text)?;
    }
    for e in entries {
        if let Some(res) = &e.result {
            put(format!("convergence_{}.csv", e.method), res.history_csv())?;
        }
        if let Some(s) = &e.sweep {
            put(format!("sweep_{}.csv", e.method), sweep_csv(s))?;
        }
    }
    for e in entries {
        if let Some(res) = &e.result {
            let path = out_dir.join(format!("{}.pgm", e.method));
            save_pgm(&path, &res.image)?;
            written.push(path);
        }
    }
    Ok(written)
}
