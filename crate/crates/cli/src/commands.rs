use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use elrecon::experiment::{fidelity_of, run_protocol, sweep_center, ProtocolConfig};
use elrecon::io::{save_image, save_mask, save_pgm};
use elrecon::kv::KvMap;
use elrecon::metrics::{emit_report, fmt_num, log_grid, rmse, run_sweep, sweep_csv, SweepObjective, SweepParam, SweepSpec};
use elrecon::recon::{check_method, reconstruct, Fidelity, Method, MethodParams};
use elrecon::simulate::{make_ct_dataset, make_et_dataset, CtSimSpec, Dataset, EtSimSpec, Modality};
use elrecon::solvers::SolverConfig;
use elrecon::verify::{run_all, VerifyOptions};
use elrecon::{build_projector, generate_ct_phantom, generate_et_phantom, GridSpec, PhantomDescriptor};

use crate::config::{Cmd, Settings};
use crate::error::{CliError, CliResult};

pub fn run(s: &Settings) -> CliResult<()> {
    let out = PathBuf::from(s.str("out"));
    fs::create_dir_all(&out)?;
    let extra = match s.cmd {
        Cmd::Phantom => phantom(s, &out)?,
        Cmd::Simulate => simulate(s, &out)?,
        Cmd::Reconstruct => reconstruct_cmd(s, &out)?,
        Cmd::Sweep => sweep(s, &out)?,
        Cmd::Report => report(s, &out)?,
        Cmd::Verify => return verify(s, &out),
    };
    write_provenance(s, &out, extra.as_ref())
}

/// Resolved settings, followed by anything a dataset recorded about itself.
fn write_provenance(s: &Settings, out: &Path, extra: Option<&KvMap>) -> CliResult<()> {
    let mut kv = s.to_kv().clone();
    if let Some(extra) = extra {
        for (k, v) in extra.iter() {
            if kv.get(k).is_none() {
                kv.set(k, v);
            }
        }
    }
    let text = format!("# elrecon {}\n{}", env!("CARGO_PKG_VERSION"), kv.to_text());
    fs::write(out.join("provenance.txt"), text)?;
    Ok(())
}

fn descriptor(s: &Settings) -> CliResult<PhantomDescriptor> {
    match s.str("phantom.descriptor") {
        "default" => Ok(PhantomDescriptor::default_ct()),
        path => Ok(PhantomDescriptor::parse(&fs::read_to_string(path)?)?),
    }
}

fn phantom(s: &Settings, out: &Path) -> CliResult<Option<KvMap>> {
    let grid = GridSpec::unit(s.get("phantom.n")?)?;
    match Modality::parse(s.str("phantom.kind"))? {
        Modality::Transmission => {
            let desc = descriptor(s)?;
            let img = generate_ct_phantom(&desc, &grid)?;
            save_image(&out.join("phantom.img"), &img)?;
            save_pgm(&out.join("phantom.pgm"), &img)?;
            fs::write(out.join("phantom_descriptor.txt"), desc.to_text())?;
        }
        Modality::Emission => {
            let ph = generate_et_phantom(&grid, s.get("seed")?)?;
            save_image(&out.join("phantom.img"), &ph.image)?;
            save_pgm(&out.join("phantom.pgm"), &ph.image)?;
            for m in [&ph.gaussian_regions, &ph.bone_region] {
                save_mask(&out.join(format!("mask_{}.msk", m.label())), m)?;
            }
        }
    }
    Ok(None)
}

fn simulate(s: &Settings, out: &Path) -> CliResult<Option<KvMap>> {
    let seed = s.get("seed")?;
    let ds = match Modality::parse(s.str("modality"))? {
        Modality::Transmission => make_ct_dataset(&CtSimSpec {
            phantom: descriptor(s)?,
            fine_n: s.get("ct.fine_n")?,
            recon_n: s.get("ct.recon_n")?,
            n_angles: s.get("ct.n_angles")?,
            i0: s.get("ct.i0")?,
            seed,
        })?,
        Modality::Emission => make_et_dataset(&EtSimSpec {
            n: s.get("et.n")?,
            n_angles: s.get("et.n_angles")?,
            counts: s.get("et.counts")?,
            psf_fwhm_bins: s.get("et.psf_fwhm_bins")?,
            realizations: s.get("et.realizations")?,
            seed,
        })?,
    };
    ds.write_dir(out)?;
    println!(
        "{} dataset: {}x{} grid, {} angles, {} realization(s), {} starved ray(s)",
        ds.modality.name(),
        ds.ground_truth.grid().nx,
        ds.ground_truth.grid().ny,
        ds.recon_spec.angles.len(),
        ds.noisy.len(),
        ds.starved_rays
    );
    // read back what the dataset recorded so provenance.txt carries both
    let recorded = KvMap::parse(&fs::read_to_string(out.join("provenance.txt"))?)?;
    Ok(Some(recorded))
}

fn load(s: &Settings) -> CliResult<Dataset> {
    Ok(Dataset::read_dir(Path::new(s.str("data")))?)
}

fn fidelity(s: &Settings, ds: &Dataset) -> CliResult<Fidelity> {
    match s.str("fidelity") {
        "auto" => Ok(fidelity_of(ds)),
        v => Ok(Fidelity::parse(v)?),
    }
}

fn solver(s: &Settings, ds: &Dataset) -> CliResult<SolverConfig> {
    let mut cfg = match ds.modality {
        Modality::Transmission => SolverConfig::ct(0.0),
        Modality::Emission => SolverConfig::et(0.0),
    };
    if let Some(n) = s.auto("outer_iters")? {
        cfg.outer_iters = n;
    }
    cfg.inner_iters = s.get("inner_iters")?;
    cfg.rho = s.get("rho")?;
    cfg.tau = s.auto("tau")?;
    cfg.precondition = s.get("precondition")?;
    cfg.sigma = s.auto("sigma")?;
    cfg.seed = s.get("seed")?;
    cfg.validate()?;
    Ok(cfg)
}

fn params(s: &Settings) -> CliResult<MethodParams> {
    Ok(MethodParams {
        alpha: s.get("alpha")?,
        mu: s.get("mu")?,
        beta: s.get("beta")?,
        eps_rel: s.get("eps_rel")?,
        gamma_rel: s.get("gamma_rel")?,
    })
}

/// Checks method, fidelity and weights before any file is read.
fn precheck(s: &Settings, method: Method, p: &MethodParams) -> CliResult<()> {
    let fid = match s.str("fidelity") {
        "auto" if method == Method::Mlem => Fidelity::Poisson,
        "auto" => Fidelity::Ls,
        v => Fidelity::parse(v)?,
    };
    Ok(check_method(method, fid, p)?)
}

fn reconstruct_cmd(s: &Settings, out: &Path) -> CliResult<Option<KvMap>> {
    let method = Method::parse(s.str("method"))?;
    let p = params(s)?;
    precheck(s, method, &p)?;
    let ds = load(s)?;
    let fid = fidelity(s, &ds)?;
    let cfg = solver(s, &ds)?;
    let r: usize = s.get("realization")?;
    let b = ds.noisy.get(r).ok_or_else(|| {
        CliError::config(format!("realization {r} out of range, dataset has {}", ds.noisy.len()))
    })?;
    let op = build_projector(&ds.recon_spec)?;
    let res = reconstruct(&op, b.values(), method, fid, &p, &cfg, Some(&ds.ground_truth), &ds.masks)?;
    save_image(&out.join("recon.img"), &res.image)?;
    save_pgm(&out.join("recon.pgm"), &res.image)?;
    fs::write(out.join("convergence.csv"), res.history_csv())?;
    let mut metrics = format!("metric,value\nrmse,{}\n", fmt_num(rmse(&res.image, &ds.ground_truth, None)?));
    for m in &ds.masks {
        let _ = writeln!(metrics, "rmse_{},{}", m.label(), fmt_num(rmse(&res.image, &ds.ground_truth, Some(m))?));
    }
    let _ = writeln!(metrics, "iterations,{}", res.history.len());
    let _ = writeln!(metrics, "terminated_early,{}", res.terminated_early);
    fs::write(out.join("metrics.csv"), &metrics)?;
    print!("{metrics}");
    Ok(None)
}

fn sweep_realizations(s: &Settings, ds: &Dataset) -> CliResult<usize> {
    let n = match s.auto::<usize>("sweep.realizations")? {
        Some(n) => n,
        None => match ds.modality {
            Modality::Transmission => ProtocolConfig::ct().sweep_realizations,
            Modality::Emission => ProtocolConfig::et().sweep_realizations,
        },
    };
    if n == 0 {
        return Err(CliError::config("sweep.realizations must be >= 1"));
    }
    Ok(n.min(ds.noisy.len()))
}

fn sweep(s: &Settings, out: &Path) -> CliResult<Option<KvMap>> {
    let method = Method::parse(s.str("method"))?;
    let param = SweepParam::parse(s.str("sweep.param"))?;
    let fixed = params(s)?;
    if method.is_regularized() && param != SweepParam::Alpha {
        precheck(s, method, &fixed)?;
    }
    let ds = load(s)?;
    let cfg = solver(s, &ds)?;
    let values = match s.list::<f64>("sweep.values")? {
        Some(v) => v,
        None => {
            let center = match s.auto("sweep.center")? {
                Some(c) => c,
                None => sweep_center(&ds, method, param, &fixed, &cfg)?,
            };
            log_grid(center, s.get("sweep.decades")?, s.get("sweep.points")?)?
        }
    };
    let n = sweep_realizations(s, &ds)?;
    let data: Vec<Vec<f64>> = ds.noisy[..n].iter().map(|b| b.values().to_vec()).collect();
    let spec = SweepSpec {
        method,
        fidelity: fidelity(s, &ds)?,
        param,
        values,
        fixed,
        solver: cfg,
        objective: if ds.masks.is_empty() {
            SweepObjective::Global
        } else {
            SweepObjective::Regions
        },
    };
    let op = build_projector(&ds.recon_spec)?;
    let res = run_sweep(&spec, &op, &data, &ds.ground_truth, &ds.masks)?;
    fs::write(out.join(format!("sweep_{}.csv", method.name())), sweep_csv(&res))?;
    if let Some(best) = &res.best_run {
        save_pgm(&out.join(format!("{}.pgm", method.name())), &best.image)?;
        fs::write(out.join(format!("convergence_{}.csv", method.name())), best.history_csv())?;
    }
    match (res.best_value(), res.best_score()) {
        (Some(v), Some(score)) => println!("best {}={} score={}", param.name(), fmt_num(v), fmt_num(score)),
        _ => return Err(elrecon::Error::Numerical("every sweep point failed".into()).into()),
    }
    Ok(None)
}

fn report(s: &Settings, out: &Path) -> CliResult<Option<KvMap>> {
    let ds = load(s)?;
    let mut cfg = match ds.modality {
        Modality::Transmission => ProtocolConfig::ct(),
        Modality::Emission => ProtocolConfig::et(),
    };
    if let Some(methods) = s.list::<String>("report.methods")? {
        cfg.methods = methods.iter().map(|m| Method::parse(m)).collect::<elrecon::Result<_>>()?;
    }
    cfg.solver = solver(s, &ds)?;
    cfg.sweep_points = s.get("sweep.points")?;
    cfg.sweep_decades = s.get("sweep.decades")?;
    cfg.sweep_realizations = sweep_realizations(s, &ds)?;
    cfg.max_extensions = s.get("report.max_extensions")?;
    cfg.beta = s.get("beta")?;
    let outcome = run_protocol(&ds, &cfg, None)?;
    emit_report(&outcome.reports, out)?;
    print!("{}", elrecon::metrics::table_csv(&outcome.reports));
    Ok(None)
}

fn verify(s: &Settings, out: &Path) -> CliResult<()> {
    let opts = VerifyOptions {
        seed: s.get("seed")?,
        adjoint_n: s.get("verify.adjoint_n")?,
        adjoint_angles: s.get("verify.adjoint_angles")?,
        adjoint_pairs: s.get("verify.adjoint_pairs")?,
        gradient_n: s.get("verify.gradient_n")?,
        probes: s.get("verify.probes")?,
        mlem_n: s.get("verify.mlem_n")?,
        trials: s.get("verify.trials")?,
        n: s.get("verify.n")?,
        corrupt_transpose: s.get("verify.corrupt_transpose")?,
    };
    let reports = run_all(&opts)?;
    let mut text = String::new();
    for r in &reports {
        let _ = writeln!(text, "{r}");
    }
    print!("{text}");
    fs::write(out.join("verify.txt"), &text)?;
    write_provenance(s, out, None)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::VerifyFailed(failed.join(",")))
    }
}
