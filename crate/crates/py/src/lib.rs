//! Python bindings. Images and sinograms cross the boundary as flat
//! row-major lists of floats.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use elrecon::experiment::{fidelity_of, run_protocol as core_protocol, ProtocolConfig};
use elrecon::metrics::rmse as core_rmse;
use elrecon::recon::{reconstruct as core_reconstruct, Fidelity, Method, MethodParams};
use elrecon::regularizers::PenaltyKind;
use elrecon::simulate::{make_ct_dataset, make_et_dataset, CtSimSpec, EtSimSpec, Modality};
use elrecon::solvers::SolverConfig;
use elrecon::verify::{run_all, VerifyOptions};
use elrecon::{build_projector, compute_el_weights, penalty_value as core_penalty, uniform_angles, Kernel, ProjectorSpec};

fn py_err(e: elrecon::Error) -> PyErr {
    match e {
        elrecon::Error::Io(_) | elrecon::Error::Format(_) => PyIOError::new_err(e.to_string()),
        e if e.is_config() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for elrecon::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Image on a regular grid over `[0, nx*dx] x [0, ny*dy]`.
#[pyclass(module = "elrecon", from_py_object)]
#[derive(Clone)]
pub struct Image {
    inner: elrecon::Image,
}

#[pymethods]
impl Image {
    /// Unit-square grid unless `dx`/`dy` are given.
    #[new]
    #[pyo3(signature = (nx, ny, values, dx=None, dy=None))]
    fn new(nx: usize, ny: usize, values: Vec<f64>, dx: Option<f64>, dy: Option<f64>) -> PyResult<Self> {
        let grid = elrecon::GridSpec::new(nx, ny, dx.unwrap_or(1.0), dy.unwrap_or(1.0)).py()?;
        Ok(Image {
            inner: elrecon::Image::new(grid, values).py()?,
        })
    }

    #[getter]
    fn nx(&self) -> usize {
        self.inner.grid().nx
    }

    #[getter]
    fn ny(&self) -> usize {
        self.inner.grid().ny
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    fn max(&self) -> f64 {
        self.inner.max()
    }

    fn __len__(&self) -> usize {
        self.inner.values().len()
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.nx(), self.ny())
    }
}

/// Parallel-beam projector on an `n x n` unit-square grid.
#[pyclass(module = "elrecon")]
pub struct Projector {
    inner: elrecon::ProjectionOperator,
}

#[pymethods]
impl Projector {
    #[new]
    #[pyo3(signature = (n, n_angles, kernel="linear", psf_fwhm_bins=None))]
    fn new(n: usize, n_angles: usize, kernel: &str, psf_fwhm_bins: Option<f64>) -> PyResult<Self> {
        let grid = elrecon::GridSpec::unit(n).py()?;
        let mut spec = ProjectorSpec::parallel(grid, uniform_angles(n_angles), Kernel::parse(kernel).py()?);
        if let Some(f) = psf_fwhm_bins {
            spec = spec.with_psf(f);
        }
        Ok(Projector {
            inner: build_projector(&spec).py()?,
        })
    }

    #[getter]
    fn nbins(&self) -> usize {
        self.inner.spec().nbins
    }

    #[getter]
    fn n_angles(&self) -> usize {
        self.inner.spec().angles.len()
    }

    fn forward(&self, image: &Image) -> PyResult<Vec<f64>> {
        if image.inner.grid() != &self.inner.spec().grid {
            return Err(PyValueError::new_err("image grid differs from the projector grid"));
        }
        Ok(self.inner.forward_vec(image.inner.values()))
    }

    fn adjoint(&self, sinogram: Vec<f64>) -> PyResult<Image> {
        let spec = self.inner.spec();
        if sinogram.len() != spec.nbins * spec.angles.len() {
            return Err(PyValueError::new_err(format!(
                "sinogram needs {} values",
                spec.nbins * spec.angles.len()
            )));
        }
        Ok(Image {
            inner: elrecon::Image::new(spec.grid, self.inner.adjoint_vec(&sinogram)).py()?,
        })
    }
}

/// Simulated measurements with ground truth and region masks.
#[pyclass(module = "elrecon")]
pub struct Dataset {
    inner: elrecon::simulate::Dataset,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    #[pyo3(signature = (fine_n=500, recon_n=250, n_angles=90, i0=3e5, seed=0))]
    fn simulate_ct(fine_n: usize, recon_n: usize, n_angles: usize, i0: f64, seed: u64) -> PyResult<Self> {
        let spec = CtSimSpec {
            fine_n,
            recon_n,
            n_angles,
            i0,
            seed,
            ..CtSimSpec::default()
        };
        Ok(Dataset {
            inner: make_ct_dataset(&spec).py()?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (n=400, n_angles=300, counts=1e7, psf_fwhm_bins=3.0, realizations=20, seed=0))]
    fn simulate_et(
        n: usize,
        n_angles: usize,
        counts: f64,
        psf_fwhm_bins: f64,
        realizations: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let spec = EtSimSpec {
            n,
            n_angles,
            counts,
            psf_fwhm_bins,
            realizations,
            seed,
        };
        Ok(Dataset {
            inner: make_et_dataset(&spec).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Dataset {
            inner: elrecon::simulate::Dataset::read_dir(&path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_dir(&path).py()
    }

    #[getter]
    fn modality(&self) -> &'static str {
        self.inner.modality.name()
    }

    #[getter]
    fn realizations(&self) -> usize {
        self.inner.noisy.len()
    }

    #[getter]
    fn ground_truth(&self) -> Image {
        Image {
            inner: self.inner.ground_truth.clone(),
        }
    }

    #[getter]
    fn mask_labels(&self) -> Vec<String> {
        self.inner.masks.iter().map(|m| m.label().to_string()).collect()
    }

    fn noisy(&self, r: usize) -> PyResult<Vec<f64>> {
        self.inner
            .noisy
            .get(r)
            .map(|s| s.values().to_vec())
            .ok_or_else(|| PyValueError::new_err(format!("no realization {r}")))
    }
}

/// Result of one reconstruction.
#[pyclass(module = "elrecon", get_all)]
pub struct Reconstruction {
    image: Image,
    /// Error against the ground truth after each iteration.
    rmse: Vec<f64>,
    objective: Vec<f64>,
    terminated_early: bool,
}

#[pyfunction]
#[pyo3(signature = (
    dataset, method, alpha=0.0, mu=0.0, beta=0.03, fidelity=None, realization=0,
    outer_iters=None, inner_iters=5, seed=0
))]
#[allow(clippy::too_many_arguments)]
fn reconstruct(
    py: Python<'_>,
    dataset: &Dataset,
    method: &str,
    alpha: f64,
    mu: f64,
    beta: f64,
    fidelity: Option<&str>,
    realization: usize,
    outer_iters: Option<usize>,
    inner_iters: usize,
    seed: u64,
) -> PyResult<Reconstruction> {
    let ds = &dataset.inner;
    let method = Method::parse(method).py()?;
    let fidelity = match fidelity {
        Some(f) => Fidelity::parse(f).py()?,
        None => fidelity_of(ds),
    };
    let mut cfg = match ds.modality {
        Modality::Transmission => SolverConfig::ct(0.0),
        Modality::Emission => SolverConfig::et(0.0),
    };
    if let Some(n) = outer_iters {
        cfg.outer_iters = n;
    }
    cfg.inner_iters = inner_iters;
    cfg.seed = seed;
    let p = MethodParams {
        alpha,
        mu,
        beta,
        ..MethodParams::default()
    };
    let b = ds
        .noisy
        .get(realization)
        .ok_or_else(|| PyValueError::new_err(format!("no realization {realization}")))?;
    let res = py
        .detach(|| {
            let op = build_projector(&ds.recon_spec)?;
            core_reconstruct(&op, b.values(), method, fidelity, &p, &cfg, Some(&ds.ground_truth), &[])
        })
        .py()?;
    Ok(Reconstruction {
        rmse: res.rmse_curve(),
        objective: res.history.iter().map(|r| r.objective).collect(),
        terminated_early: res.terminated_early,
        image: Image { inner: res.image },
    })
}

/// Sweeps every method of the modality's protocol and returns
/// `(method, parameter, value, rmse)` rows.
#[pyfunction]
#[pyo3(signature = (dataset, outer_iters=None, sweep_points=15, sweep_decades=4.0))]
fn run_protocol(
    py: Python<'_>,
    dataset: &Dataset,
    outer_iters: Option<usize>,
    sweep_points: usize,
    sweep_decades: f64,
) -> PyResult<Vec<(String, String, f64, f64)>> {
    let ds = &dataset.inner;
    let mut cfg = match ds.modality {
        Modality::Transmission => ProtocolConfig::ct(),
        Modality::Emission => ProtocolConfig::et(),
    };
    if let Some(n) = outer_iters {
        cfg.solver.outer_iters = n;
    }
    cfg.sweep_points = sweep_points;
    cfg.sweep_decades = sweep_decades;
    let out = py.detach(|| core_protocol(ds, &cfg, None)).py()?;
    Ok(out
        .reports
        .into_iter()
        .map(|r| (r.method, r.parameter, r.value, r.rmse))
        .collect())
}

/// Edge weights `(wx, wy)` of the edge-preserving Laplacian at `image`.
#[pyfunction]
#[pyo3(signature = (image, beta=0.03))]
fn el_weights(image: &Image, beta: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let w = compute_el_weights(&image.inner, beta).py()?;
    Ok((w.wx, w.wy))
}

/// Penalty value of `kind` (`tikhonov`, `tv`, `tvl2` or `el`) at `image`.
#[pyfunction]
#[pyo3(signature = (image, kind, beta=0.03, mu=0.0))]
fn penalty_value(image: &Image, kind: &str, beta: f64, mu: f64) -> PyResult<f64> {
    let kind = match kind {
        "tikhonov" => PenaltyKind::Tikhonov,
        "tv" => PenaltyKind::tv(),
        "tvl2" => PenaltyKind::tv_l2(mu),
        "el" => PenaltyKind::El { beta },
        other => return Err(PyValueError::new_err(format!("unknown penalty {other:?}"))),
    };
    core_penalty(&kind, &image.inner).py()
}

#[pyfunction]
fn rmse(recon: &Image, truth: &Image) -> PyResult<f64> {
    core_rmse(&recon.inner, &truth.inner, None).py()
}

/// Runs the correctness suites; returns `(name, passed, detail)` per suite.
#[pyfunction]
#[pyo3(signature = (trials=100, n=16, seed=0))]
fn verify(py: Python<'_>, trials: usize, n: usize, seed: u64) -> PyResult<Vec<(String, bool, String)>> {
    let opts = VerifyOptions {
        trials,
        n,
        seed,
        ..VerifyOptions::default()
    };
    let reports = py.detach(|| run_all(&opts)).py()?;
    Ok(reports
        .into_iter()
        .map(|r| (r.name.to_string(), r.passed, r.detail))
        .collect())
}

#[pyfunction]
fn ct_phantom(n: usize) -> PyResult<Image> {
    let grid = elrecon::GridSpec::unit(n).py()?;
    let desc = elrecon::PhantomDescriptor::default_ct();
    Ok(Image {
        inner: elrecon::generate_ct_phantom(&desc, &grid).py()?,
    })
}

#[pyfunction]
#[pyo3(signature = (n, seed=0))]
fn et_phantom(n: usize, seed: u64) -> PyResult<Image> {
    let grid = elrecon::GridSpec::unit(n).py()?;
    Ok(Image {
        inner: elrecon::generate_et_phantom(&grid, seed).py()?.image,
    })
}

#[pymodule]
#[pyo3(name = "elrecon")]
fn elrecon_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Image>()?;
    m.add_class::<Projector>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<Reconstruction>()?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(run_protocol, m)?)?;
    m.add_function(wrap_pyfunction!(el_weights, m)?)?;
    m.add_function(wrap_pyfunction!(penalty_value, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(ct_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(et_phantom, m)?)?;
    Ok(())
}
