use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};

pub const ERROR_BOUND_ALPHAS: [f64; 3] = [1e-3, 1e-1, 1.0];
const ABS_TOL: f64 = 1e-10;

/// Outcome of the regularization-error bound trials
/// `||R h_a|| <= a ||R M^{-1} N u||`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBoundReport {
    pub trials: usize,
    pub n: usize,
    pub alphas: Vec<f64>,
    pub checks: usize,
    pub violations: usize,
    /// Largest `lhs - rhs`; negative when every check holds strictly.
    pub max_slack: f64,
    /// Largest `lhs / rhs` over checks with `rhs > 0`.
    pub max_ratio: f64,
    /// Draws discarded because `M` was numerically singular.
    pub regenerated: usize,
}

impl ErrorBoundReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

struct Trial {
    a: DMatrix<f64>,
    r: DMatrix<f64>,
    b: DVector<f64>,
}

fn draw(rng: &mut ChaCha8Rng, n: usize) -> Trial {
    let q1 = gaussian(rng, n, n).qr().q();
    let q2 = gaussian(rng, n, n).qr().q();
    let sv = Uniform::new_inclusive(0.1, 1.0).expect("valid range");
    let s = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| sv.sample(rng)));
    let a = &q1 * s * q2.transpose();
    let e = gaussian(rng, n, n);
    let r = DMatrix::identity(n, n) + e.transpose() * e * (0.1 / n as f64);
    let b = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    Trial { a, r, b }
}

/// Runs `trials` random dense problems of size `n` at the default weights.
pub fn verify_error_bound(trials: usize, n: usize, seed: u64) -> Result<ErrorBoundReport> {
    verify_error_bound_with(trials, n, &ERROR_BOUND_ALPHAS, seed)
}

/// Each trial draws `A` with singular values in `[0.1, 1]`, `R = I + E` with
/// a small SPD `E`, and a Gaussian `b`; then compares `h = u_a - u` against
/// the bound at every weight in `alphas`.
pub fn verify_error_bound_with(
    trials: usize,
    n: usize,
    alphas: &[f64],
    seed: u64,
) -> Result<ErrorBoundReport> {
    if trials == 0 || n == 0 || n > 64 {
        return Err(Error::invalid(format!(
            "error-bound check needs trials >= 1 and 1 <= n <= 64, got {trials} and {n}"
        )));
    }
    if alphas.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
        return Err(Error::invalid("error-bound weights must be finite and >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ErrorBoundReport {
        trials,
        n,
        alphas: alphas.to_vec(),
        checks: 0,
        violations: 0,
        max_slack: f64::NEG_INFINITY,
        max_ratio: 0.0,
        regenerated: 0,
    };
    let mut done = 0;
    while done < trials {
        let Trial { a, r, b } = draw(&mut rng, n);
        let m = a.transpose() * &a;
        let nn = r.transpose() * &r;
        let atb = a.transpose() * &b;
        let Some(m_chol) = m.clone().cholesky() else {
            report.regenerated += 1;
            continue;
        };
        let u = m_chol.solve(&atb);
        let bound_dir = &r * m_chol.solve(&(&nn * &u));
        for &alpha in alphas {
            let Some(chol) = (&m + &nn * alpha).cholesky() else {
                return Err(Error::Numerical("regularized normal matrix not positive definite".into()));
            };
            let h = chol.solve(&atb) - &u;
            let lhs = (&r * h).norm();
            let rhs = alpha * bound_dir.norm();
            report.checks += 1;
            report.max_slack = report.max_slack.max(lhs - rhs);
            if rhs > 0.0 {
                report.max_ratio = report.max_ratio.max(lhs / rhs);
            }
            if lhs > rhs + ABS_TOL {
                report.violations += 1;
            }
        }
        done += 1;
    }
    Ok(report)
}
