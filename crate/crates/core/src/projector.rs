//! Parallel-beam system matrix.
//!
//! Geometry: the rotation center is the middle of the image rectangle. For
//! view angle `theta` a point `(x, y)` lands on detector coordinate
//! `s = (x - cx) cos(theta) + (y - cy) sin(theta)`, and bin `k` is centered at
//! `(k - (nbins - 1) / 2) * bin_pitch`.
//!
//! Two kernels are provided. The strip kernel stores the exact area of each
//! pixel inside the strip of width `bin_pitch`; the linear kernel samples the
//! ray through the bin center once per pixel row (or column) and splits the
//! path length between the two nearest pixel centers (Joseph's method).

use std::f64::consts::LN_2;

use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::model::{validate_angles, GridSpec, Image, Sinogram};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    Strip,
    Linear,
}

impl Kernel {
    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Strip => "strip",
            Kernel::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "strip" => Ok(Kernel::Strip),
            "linear" => Ok(Kernel::Linear),
            other => Err(Error::invalid(format!("unknown kernel {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorSpec {
    pub grid: GridSpec,
    pub angles: Vec<f64>,
    pub nbins: usize,
    pub bin_pitch: f64,
    pub kernel: Kernel,
    pub psf_fwhm_bins: Option<f64>,
}

/// Detector whose span covers the grid diagonal with bins one pixel wide.
pub fn default_detector(grid: &GridSpec) -> (usize, f64) {
    let pitch = grid.h();
    let nbins = (grid.diagonal() / pitch - 1e-9).ceil().max(1.0) as usize;
    (nbins, pitch)
}

impl ProjectorSpec {
    pub fn parallel(grid: GridSpec, angles: Vec<f64>, kernel: Kernel) -> Self {
        let (nbins, bin_pitch) = default_detector(&grid);
        ProjectorSpec {
            grid,
            angles,
            nbins,
            bin_pitch,
            kernel,
            psf_fwhm_bins: None,
        }
    }

    pub fn with_psf(mut self, fwhm_bins: f64) -> Self {
        self.psf_fwhm_bins = Some(fwhm_bins);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        validate_angles(&self.angles)?;
        if self.nbins == 0 {
            return Err(Error::invalid("detector needs at least one bin"));
        }
        if !(self.bin_pitch > 0.0 && self.bin_pitch.is_finite()) {
            return Err(Error::invalid(format!(
                "bin pitch must be positive, got {}",
                self.bin_pitch
            )));
        }
        if let Some(f) = self.psf_fwhm_bins {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::invalid(format!("psf fwhm must be positive, got {f}")));
            }
        }
        if self.grid.len() > u32::MAX as usize {
            return Err(Error::invalid("grid too large for u32 column indices"));
        }
        Ok(())
    }

    pub fn nrows(&self) -> usize {
        self.angles.len() * self.nbins
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        (k as f64 - (self.nbins as f64 - 1.0) / 2.0) * self.bin_pitch
    }

    /// Rows of one view, built exactly as the full matrix stores them.
    pub(crate) fn view_rows(&self, view: usize) -> Vec<Vec<(u32, f64)>> {
        match self.kernel {
            Kernel::Strip => self.strip_rows(self.angles[view]),
            Kernel::Linear => self.joseph_rows(self.angles[view]),
        }
    }

    fn strip_rows(&self, theta: f64) -> Vec<Vec<(u32, f64)>> {
        let g = &self.grid;
        let (hx, hy) = (g.hx(), g.hy());
        let (cos, sin) = (theta.cos(), theta.sin());
        let (cx, cy) = (g.dx / 2.0, g.dy / 2.0);
        let footprint = PixelFootprint::new(hx * cos.abs(), hy * sin.abs());
        let area = hx * hy;
        let p = self.bin_pitch;
        let first_edge = self.bin_center(0) - p / 2.0;
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); self.nbins];
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let (px, py) = g.center(ix, iy);
                let c = (px - cx) * cos + (py - cy) * sin;
                let lo = c - footprint.width() / 2.0;
                let hi = c + footprint.width() / 2.0;
                let k0 = ((lo - first_edge) / p).floor().max(0.0) as usize;
                let k1 = (((hi - first_edge) / p).floor() as isize).min(self.nbins as isize - 1);
                if k1 < 0 {
                    continue;
                }
                let col = g.index(ix, iy) as u32;
                for k in k0..=k1 as usize {
                    let e0 = first_edge + k as f64 * p;
                    let frac = footprint.cdf(e0 + p - lo) - footprint.cdf(e0 - lo);
                    let w = area * frac;
                    if w > 0.0 {
                        rows[k].push((col, w));
                    }
                }
            }
        }
        rows
    }

    fn joseph_rows(&self, theta: f64) -> Vec<Vec<(u32, f64)>> {
        let g = &self.grid;
        let (hx, hy) = (g.hx(), g.hy());
        let (cos, sin) = (theta.cos(), theta.sin());
        let (cx, cy) = (g.dx / 2.0, g.dy / 2.0);
        let mut rows = Vec::with_capacity(self.nbins);
        for k in 0..self.nbins {
            let s = self.bin_center(k);
            let mut row: Vec<(u32, f64)> = Vec::new();
            if cos.abs() >= sin.abs() {
                // ray runs mostly along y: one sample per pixel row
                let step = hy / cos.abs();
                for iy in 0..g.ny {
                    let y = (iy as f64 + 0.5) * hy;
                    let x = cx + (s - (y - cy) * sin) / cos;
                    interp_push(&mut row, x / hx - 0.5, g.nx, step, |i| g.index(i, iy));
                }
            } else {
                let step = hx / sin.abs();
                for ix in 0..g.nx {
                    let x = (ix as f64 + 0.5) * hx;
                    let y = cy + (s - (x - cx) * cos) / sin;
                    interp_push(&mut row, y / hy - 0.5, g.ny, step, |i| g.index(ix, i));
                }
                row.sort_by_key(|e| e.0);
            }
            rows.push(row);
        }
        rows
    }
}

/// Linear interpolation between the pixel centers bracketing continuous
/// index `f`; pixels outside `[0, n)` receive nothing.
fn interp_push(
    row: &mut Vec<(u32, f64)>,
    f: f64,
    n: usize,
    step: f64,
    index: impl Fn(usize) -> usize,
) {
    if !(f > -1.0 && f < n as f64) {
        return;
    }
    let i0 = f.floor();
    let t = f - i0;
    let i0 = i0 as isize;
    if i0 >= 0 && (1.0 - t) > 0.0 {
        row.push((index(i0 as usize) as u32, step * (1.0 - t)));
    }
    if i0 + 1 < n as isize && t > 0.0 {
        row.push((index((i0 + 1) as usize) as u32, step * t));
    }
}

/// Distribution of the projection of a uniform `hx x hy` pixel onto the
/// detector: the sum of two uniforms of widths `hx|cos|` and `hy|sin|`.
#[derive(Debug, Clone, Copy)]
struct PixelFootprint {
    lo: f64,
    hi: f64,
}

impl PixelFootprint {
    fn new(a: f64, b: f64) -> Self {
        PixelFootprint {
            lo: a.min(b),
            hi: a.max(b),
        }
    }

    fn width(&self) -> f64 {
        self.lo + self.hi
    }

    /// Fraction of the pixel area with projection offset `<= t`, with `t`
    /// measured from the lower end of the footprint.
    fn cdf(&self, t: f64) -> f64 {
        let (lo, hi) = (self.lo, self.hi);
        if t <= 0.0 {
            return 0.0;
        }
        if t >= lo + hi {
            return 1.0;
        }
        if lo <= 1e-12 * hi {
            return t / hi;
        }
        if t < lo {
            t * t / (2.0 * lo * hi)
        } else if t <= hi {
            (2.0 * t - lo) / (2.0 * hi)
        } else {
            let r = lo + hi - t;
            1.0 - r * r / (2.0 * lo * hi)
        }
    }
}

/// Discrete Gaussian with `sigma = fwhm / (2 sqrt(2 ln 2))`, truncated at
/// `+-4 sigma` and normalized to unit sum. Index `r` holds offset `r - radius`.
pub fn psf_kernel(fwhm_bins: f64) -> Vec<f64> {
    let sigma = fwhm_bins / (2.0 * (2.0 * LN_2).sqrt());
    let radius = (4.0 * sigma).floor() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|j| (-(j as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Half-sample symmetric reflection into `[0, n)`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Convolves each detector row with `kernel` under reflective boundaries.
/// The resulting operator is symmetric.
fn convolve_views(values: &[f64], nbins: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; values.len()];
    out.par_chunks_mut(nbins)
        .zip(values.par_chunks(nbins))
        .for_each(|(dst, src)| {
            for (i, d) in dst.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, &w) in kernel.iter().enumerate() {
                    let idx = reflect(i as isize + j as isize - radius, nbins);
                    acc += w * src[idx];
                }
                *d = acc;
            }
        });
    out
}

pub fn apply_psf(s: &Sinogram, fwhm_bins: f64) -> Result<Sinogram> {
    if !(fwhm_bins > 0.0 && fwhm_bins.is_finite()) {
        return Err(Error::invalid(format!("psf fwhm must be positive, got {fwhm_bins}")));
    }
    let out = convolve_views(s.values(), s.nbins(), &psf_kernel(fwhm_bins));
    s.with_values(out)
}

/// Assembled system matrix `A` with its transpose and optional detector blur.
#[derive(Debug, Clone)]
pub struct ProjectionOperator {
    spec: ProjectorSpec,
    matrix: CsrMatrix,
    transpose: CsrMatrix,
    psf: Option<Vec<f64>>,
}

pub fn build_projector(spec: &ProjectorSpec) -> Result<ProjectionOperator> {
    spec.validate()?;
    let views: Vec<Vec<Vec<(u32, f64)>>> = (0..spec.angles.len())
        .into_par_iter()
        .map(|v| spec.view_rows(v))
        .collect();
    let rows: Vec<Vec<(u32, f64)>> = views.into_iter().flatten().collect();
    let matrix = CsrMatrix::from_rows(spec.grid.len(), rows);
    let transpose = matrix.transpose();
    Ok(ProjectionOperator {
        spec: spec.clone(),
        psf: spec.psf_fwhm_bins.map(psf_kernel),
        matrix,
        transpose,
    })
}

/// Computes `A u` view by view without holding the whole matrix. The result
/// is bitwise equal to `build_projector(spec)?.forward_vec(u)`.
pub fn forward_streaming(spec: &ProjectorSpec, u: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    check_len(spec.grid.len(), u.len())?;
    let views: Vec<Vec<f64>> = (0..spec.angles.len())
        .into_par_iter()
        .map(|v| {
            spec.view_rows(v)
                .iter()
                .map(|row| row.iter().map(|&(c, w)| w * u[c as usize]).sum())
                .collect()
        })
        .collect();
    let out: Vec<f64> = views.into_iter().flatten().collect();
    Ok(match spec.psf_fwhm_bins {
        Some(f) => convolve_views(&out, spec.nbins, &psf_kernel(f)),
        None => out,
    })
}

impl ProjectionOperator {
    pub fn spec(&self) -> &ProjectorSpec {
        &self.spec
    }

    pub fn grid(&self) -> &GridSpec {
        &self.spec.grid
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn forward_vec(&self, u: &[f64]) -> Vec<f64> {
        let raw = self.matrix.mul_vec(u);
        match &self.psf {
            Some(k) => convolve_views(&raw, self.spec.nbins, k),
            None => raw,
        }
    }

    pub fn adjoint_vec(&self, s: &[f64]) -> Vec<f64> {
        match &self.psf {
            Some(k) => self
                .transpose
                .mul_vec(&convolve_views(s, self.spec.nbins, k)),
            None => self.transpose.mul_vec(s),
        }
    }

    pub fn forward(&self, u: &Image) -> Result<Sinogram> {
        if u.grid() != self.grid() {
            return Err(Error::ShapeMismatch {
                expected: self.ncols(),
                found: u.values().len(),
            });
        }
        Sinogram::new(
            self.spec.angles.clone(),
            self.spec.nbins,
            self.forward_vec(u.values()),
        )
    }

    pub fn adjoint(&self, s: &Sinogram) -> Result<Image> {
        check_len(self.nrows(), s.values().len())?;
        if s.nbins() != self.spec.nbins {
            return Err(Error::ShapeMismatch {
                expected: self.spec.nbins,
                found: s.nbins(),
            });
        }
        Image::new(self.spec.grid, self.adjoint_vec(s.values()))
    }

    /// Sinogram with this operator's geometry.
    pub fn sinogram(&self, values: Vec<f64>) -> Result<Sinogram> {
        Sinogram::new(self.spec.angles.clone(), self.spec.nbins, values)
    }

    /// Test hook: breaks the transpose so adjoint checks must fail.
    #[doc(hidden)]
    pub fn with_corrupted_transpose(mut self) -> Self {
        let nrows = self.transpose.nrows();
        let mut rows = Vec::with_capacity(nrows);
        for r in 0..nrows {
            let (cols, w) = self.transpose.row(r);
            let mut ws: Vec<f64> = w.to_vec();
            ws.reverse();
            rows.push(cols.iter().copied().zip(ws).collect());
        }
        // shift by one row as well, in case a row is a palindrome
        rows.rotate_left(1);
        self.transpose = CsrMatrix::from_rows(self.transpose.ncols(), rows);
        self
    }
}
