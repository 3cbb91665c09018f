use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{uniform_angles, GridSpec};
use crate::projector::{build_projector, Kernel, ProjectionOperator, ProjectorSpec};
use crate::regularizers::{build_gradient_matrix, PenaltyKind};
use crate::sparse::{dot, CsrMatrix};

fn dense(m: &CsrMatrix) -> DMatrix<f64> {
    let d = m.to_dense();
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| d[r][c])
}

fn small_projector(n: usize, angles: usize) -> ProjectionOperator {
    let g = GridSpec::unit(n).unwrap();
    build_projector(&ProjectorSpec::parallel(g, uniform_angles(angles), Kernel::Linear)).unwrap()
}

fn blob(grid: &GridSpec) -> Vec<f64> {
    (0..grid.len())
        .map(|i| {
            let (x, y) = grid.center(i % grid.nx, i / grid.nx);
            1.0 + (-((x - 0.4).powi(2) + (y - 0.55).powi(2)) / 0.05).exp()
        })
        .collect()
}

#[test]
fn cgls_on_identity_is_exact_after_one_step() {
    let g = GridSpec::unit(3).unwrap();
    let op = MatrixOperator::new(g, CsrMatrix::identity(9)).unwrap();
    let b: Vec<f64> = (0..9).map(|i| i as f64 * 0.7 - 2.0).collect();
    let res = cgls(&op, &b, 1, None).unwrap();
    for (u, b) in res.image.values().iter().zip(&b) {
        assert!((u - b).abs() < 1e-14);
    }
}

#[test]
fn cgls_matches_dense_solve_on_a_square_system() {
    let g = GridSpec::new(4, 2, 1.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut t = Vec::new();
    for r in 0..8 {
        for c in 0..8 {
            let v: f64 = rng.random_range(-1.0..1.0);
            t.push((r, c, if r == c { v + 4.0 } else { v }));
        }
    }
    let m = CsrMatrix::from_triplets(8, 8, t).unwrap();
    let b: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = dense(&m).lu().solve(&DVector::from_vec(b.clone())).unwrap();
    let res = cgls(&MatrixOperator::new(g, m).unwrap(), &b, 8, None).unwrap();
    for (u, e) in res.image.values().iter().zip(x.iter()) {
        assert!((u - e).abs() < 1e-8, "{u} vs {e}");
    }
}

#[test]
fn cgls_residual_is_nonincreasing() {
    let op = small_projector(12, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b: Vec<f64> = (0..op.nrows()).map(|_| rng.random_range(0.0..1.0)).collect();
    let res = cgls(&op, &b, 30, None).unwrap();
    for w in res.history.windows(2) {
        assert!(w[1].fidelity <= w[0].fidelity * (1.0 + 1e-12));
    }
}

#[test]
fn inner_cg_decreases_the_frozen_quadratic() {
    let op = small_projector(16, 12);
    let grid = *op.grid();
    let truth = blob(&grid);
    let b = op.forward_vec(&truth);
    let u0: Vec<f64> = truth.iter().map(|v| 0.8 * v).collect();
    for kind in [PenaltyKind::Tikhonov, PenaltyKind::tv(), PenaltyKind::tv_l2(1e-6).with_alpha(1e-3), PenaltyKind::el(0.03)] {
        let alpha = 1e-3;
        let w = kind.outer_weight(alpha);
        let rm = build_gradient_matrix(&kind, &Image::new(grid, u0.clone()).unwrap()).unwrap();
        let psi = |u: &[f64]| {
            let mut r = op.forward_vec(u);
            crate::sparse::axpy(-1.0, &b, &mut r);
            0.5 * dot(&r, &r) + 0.5 * w * dot(&rm.apply(u), u)
        };
        let mut g = op.adjoint_vec(&{
            let mut r = op.forward_vec(&u0);
            crate::sparse::axpy(-1.0, &b, &mut r);
            r
        });
        crate::sparse::axpy(w, &rm.apply(&u0), &mut g);
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut values = Vec::new();
        pcg(
            |p| {
                let mut hp = op.adjoint_vec(&op.forward_vec(p));
                crate::sparse::axpy(w, &rm.apply(p), &mut hp);
                hp
            },
            &rhs,
            None,
            20,
            1e-30,
            |s| {
                let u: Vec<f64> = u0.iter().zip(s).map(|(a, b)| a + b).collect();
                values.push(psi(&u));
            },
        );
        assert!(values.len() > 2);
        for v in values.windows(2) {
            assert!(v[1] <= v[0] + 1e-12 * v[0].abs(), "{} rose: {v:?}", kind.name());
        }
    }
}

#[test]
fn preconditioning_keeps_the_step_and_cuts_iterations() {
    let op = small_projector(12, 16);
    let grid = *op.grid();
    let u = Image::new(grid, blob(&grid)).unwrap();
    let rm = build_gradient_matrix(&PenaltyKind::el(0.03), &u).unwrap();
    // weight far above h^4 so the penalty dominates the spectrum
    let w = 1e-2;
    let rhs: Vec<f64> = (0..grid.len()).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
    let h = |p: &[f64]| {
        let mut hp = op.adjoint_vec(&op.forward_vec(p));
        crate::sparse::axpy(w, &rm.apply(p), &mut hp);
        hp
    };
    let sigma = largest_singular_value(&op, 50, 1);
    let mut chol = precond::ShiftedCholesky::default();
    chol.factor(rm.matrix(), w, sigma * sigma).unwrap();
    let m = |x: &mut [f64]| chol.solve_in_place(x);
    let plain = pcg(h, &rhs, None, 5000, 1e-30, |_| {});
    let pre = pcg(h, &rhs, Some(&m), 5000, 1e-30, |_| {});
    let scale = plain.solution.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for (a, b) in plain.solution.iter().zip(&pre.solution) {
        assert!((a - b).abs() <= 1e-8 * scale);
    }
    assert!(pre.iterations < plain.iterations, "{} vs {}", pre.iterations, plain.iterations);
}

#[test]
fn tiny_tikhonov_weight_recovers_the_phantom() {
    let op = small_projector(16, 48);
    let grid = *op.grid();
    let truth = blob(&grid);
    let b = op.forward_vec(&truth);
    let a = dense(op.matrix());
    let ata = a.transpose() * &a;
    let alpha = 1e-12 * ata.norm();
    let reg = &ata + DMatrix::identity(grid.len(), grid.len()) * alpha;
    let oracle = reg.cholesky().unwrap().solve(&(a.transpose() * DVector::from_vec(b.clone())));
    let cfg = SolverConfig {
        outer_iters: 3,
        inner_iters: 2000,
        rho: 1e-30,
        ..SolverConfig::ct(alpha)
    };
    let res = fixed_point_reconstruct(&op, &b, &PenaltyKind::Tikhonov, &cfg, None).unwrap();
    let tn = DVector::from_vec(truth.clone()).norm();
    let diff = |v: &[f64]| v.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / tn;
    assert!(diff(oracle.as_slice()) < 1e-4);
    assert!(diff(res.image.values()) < 1e-4, "{}", diff(res.image.values()));
}

#[test]
fn zero_weight_is_plain_least_squares() {
    let op = small_projector(8, 8);
    let b = op.forward_vec(&blob(op.grid()));
    let res = fixed_point_reconstruct(&op, &b, &PenaltyKind::el(0.03), &SolverConfig::ct(0.0), None).unwrap();
    assert!(res.history.iter().all(|r| r.penalty == 0.0));
}

#[test]
fn fixed_point_is_bitwise_deterministic() {
    let op = small_projector(16, 10);
    let truth = Image::new(*op.grid(), blob(op.grid())).unwrap();
    let b = op.forward_vec(truth.values());
    let cfg = SolverConfig {
        outer_iters: 6,
        precondition: true,
        ..SolverConfig::ct(1e-6)
    };
    let run = || fixed_point_reconstruct(&op, &b, &PenaltyKind::el(0.03), &cfg, Some(&truth)).unwrap();
    let (a, c) = (run(), run());
    assert_eq!(a.image, c.image);
    assert_eq!(a.history, c.history);
    assert!(a.history.iter().all(|r| r.rmse.is_some() && r.step_norm2 >= 0.0));
}

#[test]
fn history_csv_layout() {
    let op = small_projector(8, 6);
    let b = op.forward_vec(&blob(op.grid()));
    let res = cgls(&op, &b, 3, None).unwrap();
    let csv = res.history_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iter,objective,fidelity,penalty,step_norm2,rmse");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].ends_with(','));
}

#[test]
fn rejects_bad_configs() {
    let op = small_projector(8, 6);
    let b = vec![0.0; op.nrows()];
    let bad = SolverConfig {
        inner_iters: 0,
        ..SolverConfig::ct(1.0)
    };
    assert!(fixed_point_reconstruct(&op, &b, &PenaltyKind::Tikhonov, &bad, None).is_err());
    assert!(fixed_point_reconstruct(&op, &b[1..], &PenaltyKind::Tikhonov, &SolverConfig::ct(1.0), None).is_err());
    let mut neg = b.clone();
    neg[0] = -1.0;
    assert!(mlem_split_reconstruct(&op, &neg, &PenaltyKind::Tikhonov, &SolverConfig::et(0.0), None, &[]).is_err());
}

#[test]
fn consistent_data_is_an_mlem_fixed_point() {
    let op = small_projector(16, 20);
    let truth = blob(op.grid());
    let b = op.forward_vec(&truth);
    let sens = op.adjoint_vec(&vec![1.0; op.nrows()]);
    let next = mlem_step(&op, &b, &truth, &b, &sens, 1e-300);
    let num: f64 = next.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = truth.iter().map(|v| v * v).sum();
    assert!((num / den).sqrt() <= 1e-10);
}

#[test]
fn mlem_conserves_expected_counts() {
    let op = small_projector(16, 20);
    let truth = blob(op.grid());
    // positive wherever a ray meets the grid, so the floor never engages
    let b: Vec<f64> = op
        .forward_vec(&truth)
        .iter()
        .map(|v| if *v > 0.0 { v * 1.3 + 0.01 } else { 0.0 })
        .collect();
    let sens = op.adjoint_vec(&vec![1.0; op.nrows()]);
    assert!(sens.iter().all(|s| *s > 0.0));
    let mut u = vec![1.0; truth.len()];
    for _ in 0..5 {
        let au = op.forward_vec(&u);
        u = mlem_step(&op, &b, &u, &au, &sens, 1e-300);
        let total: f64 = op.forward_vec(&u).iter().sum();
        let expect: f64 = b.iter().sum();
        assert!(((total - expect) / expect).abs() <= 1e-8);
    }
}

#[test]
fn denoising_steps_descend() {
    let g = GridSpec::unit(32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let f0: Vec<f64> = blob(&g).iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
    // R = I is left out: its first step lands on the minimizer
    for kind in [PenaltyKind::el(0.03), PenaltyKind::tv(), PenaltyKind::tv_l2(1e-4).with_alpha(1.0)] {
        let rm = build_gradient_matrix(&kind, &Image::new(g, f0.clone()).unwrap()).unwrap();
        let lmax = power_iteration(|x| rm.apply(x), g.len(), TAU_POWER_STEPS, 0);
        // penalty and proximity terms of comparable size
        let alpha = 0.3 / lmax;
        let tau = 1.0 / (1.0 + alpha * lmax);
        let mut vals = vec![denoise_objective(&f0, &f0, &rm, alpha)];
        denoise_steps(&f0, &rm, alpha, tau, 5, |f| vals.push(denoise_objective(f, &f0, &rm, alpha)));
        for v in vals.windows(2) {
            assert!(v[1] < v[0], "{}: {v:?}", kind.name());
        }
    }
}

#[test]
fn mlem_split_stays_nonnegative_and_tracks_regions() {
    let op = small_projector(16, 20);
    let grid = *op.grid();
    let truth = Image::new(grid, blob(&grid)).unwrap();
    let b: Vec<f64> = op.forward_vec(truth.values()).iter().map(|v| (v * 50.0).round()).collect();
    let mask = RegionMask::new(grid, (0..grid.len()).map(|i| i % 3 == 0).collect(), "GR").unwrap();
    let cfg = SolverConfig {
        outer_iters: 20,
        ..SolverConfig::et(1e-7)
    };
    let res = mlem_split_reconstruct(&op, &b, &PenaltyKind::el(0.03), &cfg, Some(&truth.scaled(50.0)), &[mask]).unwrap();
    assert_eq!(res.history.len(), 20);
    assert!(res.image.values().iter().all(|v| *v >= 0.0));
    assert!(res.history.iter().all(|r| r.region_rmse.len() == 1));
}

#[test]
fn error_bound_holds() {
    let rep = verify_error_bound(100, 16, 7).unwrap();
    assert_eq!(rep.checks, 300);
    assert!(rep.passed(), "{rep:?}");
    assert!(rep.max_ratio <= 1.0 + 1e-9);
    let zero = error_bound::verify_error_bound_with(5, 8, &[0.0], 1).unwrap();
    assert!(zero.passed());
    assert!(zero.max_slack.abs() < 1e-10);
    let doubled = error_bound::verify_error_bound_with(20, 16, &[2e-3, 2e-1, 2.0], 7).unwrap();
    assert!(doubled.passed());
    assert!(verify_error_bound(1, 65, 0).is_err());
}
