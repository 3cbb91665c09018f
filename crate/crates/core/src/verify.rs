//! Self-check suites: projector adjointness, penalty gradients against
//! finite differences, the MLEM fixed point and the regularization-error
//! bound.
//!
//! The gradient checks evaluate the frozen functionals with their own
//! difference loops, independent of the matrix assembly.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{uniform_angles, GridSpec, Image};
use crate::projector::{build_projector, Kernel, ProjectorSpec};
use crate::regularizers::{build_gradient_matrix, PenaltyKind};
use crate::solvers::{mlem_step, verify_error_bound};

pub const ADJOINT_TOL: f64 = 1e-10;
pub const GRADIENT_TOL: f64 = 1e-5;
pub const MLEM_FIXED_POINT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error measure of the suite.
    pub worst: f64,
    pub detail: String,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub adjoint_n: usize,
    pub adjoint_angles: usize,
    pub adjoint_pairs: usize,
    pub gradient_n: usize,
    pub probes: usize,
    pub mlem_n: usize,
    pub trials: usize,
    pub n: usize,
    /// Test hook: swap in a broken transpose to exercise the adjoint suite.
    pub corrupt_transpose: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            adjoint_n: 64,
            adjoint_angles: 30,
            adjoint_pairs: 100,
            gradient_n: 32,
            probes: 20,
            mlem_n: 32,
            trials: 100,
            n: 16,
            corrupt_transpose: false,
        }
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `|<Au, v> - <u, A*v>| / (||Au|| ||v||)` over random pairs, both kernels,
/// with and without detector blur.
pub fn adjoint_suite(opts: &VerifyOptions) -> Result<SuiteReport> {
    let grid = GridSpec::unit(opts.adjoint_n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = 0.0f64;
    let mut negative = false;
    for kernel in [Kernel::Strip, Kernel::Linear] {
        for psf in [None, Some(3.0)] {
            let mut spec = ProjectorSpec::parallel(grid, uniform_angles(opts.adjoint_angles), kernel);
            spec.psf_fwhm_bins = psf;
            let mut op = build_projector(&spec)?;
            if opts.corrupt_transpose {
                op = op.with_corrupted_transpose();
            }
            for _ in 0..opts.adjoint_pairs {
                let u = random_vec(&mut rng, grid.len());
                let v = random_vec(&mut rng, op.nrows());
                let au = op.forward_vec(&u);
                let atv = op.adjoint_vec(&v);
                let denom = dot(&au, &au).sqrt() * dot(&v, &v).sqrt();
                worst = worst.max((dot(&au, &v) - dot(&u, &atv)).abs() / denom);
            }
            let ones_img = op.forward_vec(&vec![1.0; grid.len()]);
            let ones_sino = op.adjoint_vec(&vec![1.0; op.nrows()]);
            negative |= ones_img.iter().chain(&ones_sino).any(|v| *v < 0.0);
        }
    }
    let passed = worst <= ADJOINT_TOL && !negative;
    Ok(SuiteReport {
        name: "adjoint",
        passed,
        worst,
        detail: format!(
            "{} pairs x 4 operators on {}x{}/{} angles, worst relative mismatch {worst:.3e} (tol {ADJOINT_TOL:.0e}){}",
            opts.adjoint_pairs,
            opts.adjoint_n,
            opts.adjoint_n,
            opts.adjoint_angles,
            if negative { ", negative output on nonnegative input" } else { "" }
        ),
    })
}

/// Independent difference operators on a square grid of pitch `h`.
struct Stencils {
    n: usize,
    h: f64,
}

impl Stencils {
    fn at(&self, v: &[f64], ix: usize, iy: usize) -> f64 {
        v[iy * self.n + ix]
    }

    fn dx(&self, v: &[f64], ix: usize, iy: usize) -> f64 {
        if ix + 1 < self.n {
            (self.at(v, ix + 1, iy) - self.at(v, ix, iy)) / self.h
        } else {
            0.0
        }
    }

    fn dy(&self, v: &[f64], ix: usize, iy: usize) -> f64 {
        if iy + 1 < self.n {
            (self.at(v, ix, iy + 1) - self.at(v, ix, iy)) / self.h
        } else {
            0.0
        }
    }

    /// Centered first differences, replicated boundary.
    fn cx(&self, v: &[f64], ix: usize, iy: usize) -> f64 {
        let l = self.at(v, ix.saturating_sub(1), iy);
        let r = self.at(v, (ix + 1).min(self.n - 1), iy);
        (r - l) / (2.0 * self.h)
    }

    fn cy(&self, v: &[f64], ix: usize, iy: usize) -> f64 {
        let d = self.at(v, ix, iy.saturating_sub(1));
        let u = self.at(v, ix, (iy + 1).min(self.n - 1));
        (u - d) / (2.0 * self.h)
    }

    fn lxx(&self, v: &[f64], ix: usize, iy: usize) -> f64 {
        let l = self.at(v, ix.saturating_sub(1), iy);
        let r = self.at(v, (ix + 1).min(self.n - 1), iy);
        (l - 2.0 * self.at(v, ix, iy) + r) / (self.h * self.h)
    }

    fn lyy(&self, v: &[f64], ix: usize, iy: usize) -> f64 {
        let d = self.at(v, ix, iy.saturating_sub(1));
        let u = self.at(v, ix, (iy + 1).min(self.n - 1));
        (d - 2.0 * self.at(v, ix, iy) + u) / (self.h * self.h)
    }
}

/// Frozen diagonals: first-difference weight and per-axis second-difference
/// weights, evaluated at the reference image.
struct Frozen {
    first: Vec<f64>,
    second_x: Vec<f64>,
    second_y: Vec<f64>,
}

fn frozen_weights(kind: &PenaltyKind, st: &Stencils, u: &[f64]) -> Frozen {
    let n2 = st.n * st.n;
    let u_max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut f = Frozen {
        first: vec![0.0; n2],
        second_x: vec![0.0; n2],
        second_y: vec![0.0; n2],
    };
    for iy in 0..st.n {
        for ix in 0..st.n {
            let i = iy * st.n + ix;
            let g2 = st.dx(u, ix, iy).powi(2) + st.dy(u, ix, iy).powi(2);
            match *kind {
                PenaltyKind::Tikhonov => {}
                PenaltyKind::Tv { eps_rel } => {
                    f.first[i] = 1.0 / (g2 + (eps_rel * u_max).powi(2)).sqrt();
                }
                PenaltyKind::TvL2 {
                    eps_rel,
                    gamma_rel,
                    mu,
                    alpha,
                } => {
                    let alpha = alpha.unwrap_or(0.0);
                    f.first[i] = alpha / (g2 + (eps_rel * u_max).powi(2)).sqrt();
                    let ups = 2.0 * mu / (g2 + gamma_rel * u_max * u_max).powf(1.5);
                    f.second_x[i] = ups;
                    f.second_y[i] = ups;
                }
                PenaltyKind::El { beta } => {
                    let a = 2.0 * u_max / (st.n as f64 * st.h);
                    let wx = 1.0 / (1.0 + beta * (st.cx(u, ix, iy) / a).powi(2));
                    let wy = 1.0 / (1.0 + beta * (st.cy(u, ix, iy) / a).powi(2));
                    f.second_x[i] = wx * wx;
                    f.second_y[i] = wy * wy;
                }
            }
        }
    }
    f
}

/// `0.5 * (sum first |grad v|^2 + sum sx (Lxx v)^2 + sum sy (Lyy v)^2)`,
/// or `0.5 ||v||^2` for Tikhonov.
fn frozen_functional(kind: &PenaltyKind, st: &Stencils, fz: &Frozen, v: &[f64]) -> f64 {
    if matches!(kind, PenaltyKind::Tikhonov) {
        return 0.5 * dot(v, v);
    }
    let mut acc = 0.0;
    for iy in 0..st.n {
        for ix in 0..st.n {
            let i = iy * st.n + ix;
            if fz.first[i] != 0.0 {
                acc += fz.first[i] * (st.dx(v, ix, iy).powi(2) + st.dy(v, ix, iy).powi(2));
            }
            if fz.second_x[i] != 0.0 || fz.second_y[i] != 0.0 {
                acc += fz.second_x[i] * st.lxx(v, ix, iy).powi(2) + fz.second_y[i] * st.lyy(v, ix, iy).powi(2);
            }
        }
    }
    0.5 * acc
}

/// Smooth positive test image with some texture.
fn probe_image(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let bumps: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.2..0.8),
                rng.random_range(0.2..0.8),
                rng.random_range(0.05..0.2),
                rng.random_range(0.3..1.0),
            )
        })
        .collect();
    (0..n * n)
        .map(|i| {
            let x = ((i % n) as f64 + 0.5) / n as f64;
            let y = ((i / n) as f64 + 0.5) / n as f64;
            let smooth: f64 = bumps
                .iter()
                .map(|(cx, cy, s, a)| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp())
                .sum();
            0.2 + smooth + rng.random_range(0.0..0.05)
        })
        .collect()
}

/// The penalties exercised by the gradient suite.
pub fn gradient_kinds() -> Vec<PenaltyKind> {
    vec![
        PenaltyKind::Tikhonov,
        PenaltyKind::tv(),
        PenaltyKind::tv_l2(0.5).with_alpha(2.0),
        PenaltyKind::el(0.03),
    ]
}

/// Worst relative error of `R(u) u` against central differences of the
/// frozen functional at random probe pixels, per penalty.
pub fn gradient_errors(n: usize, probes: usize, seed: u64) -> Result<Vec<(PenaltyKind, f64)>> {
    let grid = GridSpec::unit(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = probe_image(n, &mut rng);
    let img = Image::new(grid, u.clone())?;
    let st = Stencils { n, h: grid.hx() };
    let u_max = img.max();
    let delta = 1e-6 * u_max;
    let mut out = Vec::new();
    for kind in gradient_kinds() {
        let rm = build_gradient_matrix(&kind, &img)?;
        let g = rm.apply(&u);
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let fz = frozen_weights(&kind, &st, &u);
        let mut worst = 0.0f64;
        for _ in 0..probes {
            let j = rng.random_range(0..grid.len());
            let mut up = u.clone();
            up[j] += delta;
            let mut dn = u.clone();
            dn[j] -= delta;
            let fd = (frozen_functional(&kind, &st, &fz, &up) - frozen_functional(&kind, &st, &fz, &dn)) / (2.0 * delta);
            worst = worst.max((fd - g[j]).abs() / g[j].abs().max(1e-3 * scale));
        }
        out.push((kind, worst));
    }
    Ok(out)
}

pub fn gradient_suite(opts: &VerifyOptions) -> Result<SuiteReport> {
    let errs = gradient_errors(opts.gradient_n, opts.probes, opts.seed)?;
    let worst = errs.iter().map(|e| e.1).fold(0.0f64, f64::max);
    let detail = errs
        .iter()
        .map(|(k, e)| format!("{} {e:.2e}", k.name()))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(SuiteReport {
        name: "gradient",
        passed: worst <= GRADIENT_TOL,
        worst,
        detail: format!(
            "{} probes on {}x{}: {detail} (tol {GRADIENT_TOL:.0e})",
            opts.probes, opts.gradient_n, opts.gradient_n
        ),
    })
}

/// One MLEM update from the true image on consistent data.
pub fn mlem_fixed_point_suite(opts: &VerifyOptions) -> Result<SuiteReport> {
    let grid = GridSpec::unit(opts.mlem_n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let truth = probe_image(opts.mlem_n, &mut rng);
    let spec = ProjectorSpec::parallel(grid, uniform_angles(opts.mlem_n), Kernel::Linear).with_psf(3.0);
    let op = build_projector(&spec)?;
    let b = op.forward_vec(&truth);
    let sens = op.adjoint_vec(&vec![1.0; op.nrows()]);
    let next = mlem_step(&op, &b, &truth, &b, &sens, f64::MIN_POSITIVE);
    let num: f64 = next.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum();
    let moved = (num / dot(&truth, &truth)).sqrt();
    Ok(SuiteReport {
        name: "mlem-fixed-point",
        passed: moved <= MLEM_FIXED_POINT_TOL,
        worst: moved,
        detail: format!("relative move {moved:.3e} (tol {MLEM_FIXED_POINT_TOL:.0e})"),
    })
}

pub fn error_bound_suite(opts: &VerifyOptions) -> Result<SuiteReport> {
    let rep = verify_error_bound(opts.trials, opts.n, opts.seed)?;
    Ok(SuiteReport {
        name: "error-bound",
        passed: rep.passed(),
        worst: rep.max_slack,
        detail: format!(
            "{} trials at n={} x {} weights: {} violations, max slack {:.3e}, max ratio {:.6}",
            rep.trials,
            rep.n,
            rep.alphas.len(),
            rep.violations,
            rep.max_slack,
            rep.max_ratio
        ),
    })
}

pub fn run_all(opts: &VerifyOptions) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        adjoint_suite(opts)?,
        gradient_suite(opts)?,
        mlem_fixed_point_suite(opts)?,
        error_bound_suite(opts)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> VerifyOptions {
        VerifyOptions {
            adjoint_n: 16,
            adjoint_angles: 8,
            adjoint_pairs: 5,
            gradient_n: 12,
            probes: 10,
            mlem_n: 12,
            trials: 10,
            n: 8,
            ..VerifyOptions::default()
        }
    }

    #[test]
    fn all_suites_pass_on_small_problems() {
        for r in run_all(&quick()).unwrap() {
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn broken_transpose_fails_the_adjoint_suite() {
        let opts = VerifyOptions {
            corrupt_transpose: true,
            ..quick()
        };
        let r = adjoint_suite(&opts).unwrap();
        assert!(!r.passed);
        assert!(r.to_string().starts_with("FAIL adjoint"));
    }

    #[test]
    fn finite_differences_see_a_wrong_matrix() {
        // the oracle must disagree with a doubled gradient
        let n = 10;
        let grid = GridSpec::unit(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = probe_image(n, &mut rng);
        let st = Stencils { n, h: grid.hx() };
        let kind = PenaltyKind::el(0.03);
        let fz = frozen_weights(&kind, &st, &u);
        let g = build_gradient_matrix(&kind, &Image::new(grid, u.clone()).unwrap()).unwrap().apply(&u);
        let j = 55;
        let d = 1e-6;
        let mut up = u.clone();
        up[j] += d;
        let mut dn = u.clone();
        dn[j] -= d;
        let fd = (frozen_functional(&kind, &st, &fz, &up) - frozen_functional(&kind, &st, &fz, &dn)) / (2.0 * d);
        assert!((fd - g[j]).abs() < 1e-5 * g[j].abs().max(1.0));
        assert!((fd - 2.0 * g[j]).abs() > 1e-3 * g[j].abs());
    }
}
