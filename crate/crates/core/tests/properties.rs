//! Randomized checks of the library's invariants through its public API.

use elrecon::io::{read_csr, read_image, read_mask, read_sinogram, write_csr, write_image, write_mask, write_sinogram};
use elrecon::kv::KvMap;
use elrecon::metrics::{argmin_with_ties, log_grid, rmse};
use elrecon::regularizers::build_gradient_matrix_with_scale;
use elrecon::simulate::poisson_sample;
use elrecon::solvers::{cgls, fixed_point_reconstruct, mlem_step, SolverConfig};
use elrecon::{
    build_gradient_matrix, build_projector, compute_el_weights, generate_ct_phantom, uniform_angles, GridSpec, Image,
    Kernel, PenaltyKind, PhantomDescriptor, Primitive, ProjectorSpec, RegionMask, Sinogram,
};
use proptest::prelude::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn kinds() -> Vec<PenaltyKind> {
    vec![
        PenaltyKind::Tikhonov,
        PenaltyKind::tv(),
        PenaltyKind::tv_l2(1e-3).with_alpha(1e-2),
        PenaltyKind::el(0.03),
    ]
}

/// Square grid and matching random values.
fn image(max_n: usize) -> impl Strategy<Value = Image> {
    (2..=max_n).prop_flat_map(|n| {
        prop::collection::vec(-2.0..2.0f64, n * n).prop_map(move |v| Image::new(GridSpec::unit(n).unwrap(), v).unwrap())
    })
}

fn primitive() -> impl Strategy<Value = Primitive> {
    let unit = 0.0..1.0f64;
    prop_oneof![
        (unit.clone(), unit.clone(), 0.01..0.3f64, 0.0..2.0f64).prop_map(|(cx, cy, sigma, amplitude)| {
            Primitive::Gaussian { cx, cy, sigma, amplitude }
        }),
        (unit.clone(), unit.clone(), 0.01..0.5f64, 0.0..2.0f64).prop_map(|(cx, cy, radius, amplitude)| {
            Primitive::Paraboloid { cx, cy, radius, amplitude }
        }),
        (unit.clone(), unit, 0.0..0.6f64, 0.0..0.6f64, 0.0..2.0f64).prop_map(|(x0, y0, wx, wy, amplitude)| {
            Primitive::Rectangle { x0, y0, wx, wy, amplitude }
        }),
    ]
}

fn projector_spec() -> impl Strategy<Value = ProjectorSpec> {
    (
        2..12usize,
        1..8usize,
        prop::bool::ANY,
        prop::option::of(0.5..3.0f64),
    )
        .prop_map(|(n, angles, strip, psf)| {
            let kernel = if strip { Kernel::Strip } else { Kernel::Linear };
            let spec = ProjectorSpec::parallel(GridSpec::unit(n).unwrap(), uniform_angles(angles), kernel);
            match psf {
                Some(f) => spec.with_psf(f),
                None => spec,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn grids_enforce_size_and_pitch(nx in 0..6usize, ny in 0..6usize, dx in -1.0..3.0f64, dy in -1.0..3.0f64) {
        let ok = nx >= 2 && ny >= 2 && dx > 0.0 && dy > 0.0;
        match GridSpec::new(nx, ny, dx, dy) {
            Ok(g) => {
                prop_assert!(ok);
                prop_assert_eq!(g.hx(), dx / nx as f64);
                prop_assert_eq!(g.hy(), dy / ny as f64);
            }
            Err(_) => prop_assert!(!ok),
        }
    }

    #[test]
    fn images_and_sinograms_reject_bad_values(n in 2..6usize, bad in prop::sample::select(vec![f64::NAN, f64::INFINITY]), at in 0..4usize) {
        let g = GridSpec::unit(n).unwrap();
        let mut v = vec![1.0; g.len()];
        prop_assert!(Image::new(g, v[1..].to_vec()).is_err());
        v[at] = bad;
        prop_assert!(Image::new(g, v.clone()).is_err());
        prop_assert!(Sinogram::new(uniform_angles(2), n * n / 2, v[..(n * n / 2) * 2].to_vec()).is_err() || at >= (n * n / 2) * 2);
    }

    #[test]
    fn phantoms_are_pure_nonnegative_and_additive(prims in prop::collection::vec(primitive(), 0..5), n in 2..24usize) {
        let g = GridSpec::unit(n).unwrap();
        let desc = PhantomDescriptor::new(prims.clone()).unwrap();
        let a = generate_ct_phantom(&desc, &g).unwrap();
        let b = generate_ct_phantom(&desc, &g).unwrap();
        prop_assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert!(a.values().iter().all(|v| *v >= 0.0));
        let sum: Vec<f64> = prims
            .iter()
            .map(|p| generate_ct_phantom(&PhantomDescriptor::new(vec![*p]).unwrap(), &g).unwrap())
            .fold(vec![0.0; g.len()], |acc, img| acc.iter().zip(img.values()).map(|(x, y)| x + y).collect());
        for (x, y) in a.values().iter().zip(&sum) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
        prop_assert_eq!(PhantomDescriptor::parse(&desc.to_text()).unwrap(), desc);
    }

    #[test]
    fn negative_amplitudes_are_rejected(p in primitive()) {
        let neg = match p {
            Primitive::Gaussian { cx, cy, sigma, amplitude } => Primitive::Gaussian { cx, cy, sigma, amplitude: -amplitude - 1e-3 },
            Primitive::Paraboloid { cx, cy, radius, amplitude } => Primitive::Paraboloid { cx, cy, radius, amplitude: -amplitude - 1e-3 },
            Primitive::Rectangle { x0, y0, wx, wy, amplitude } => Primitive::Rectangle { x0, y0, wx, wy, amplitude: -amplitude - 1e-3 },
        };
        prop_assert!(PhantomDescriptor::new(vec![neg]).is_err());
    }

    #[test]
    fn projectors_are_adjoint_and_nonnegative(spec in projector_spec(), seed in 0..1000u64) {
        let op = build_projector(&spec).unwrap();
        let m = op.matrix();
        prop_assert!(m.weights().iter().all(|w| *w >= 0.0));
        prop_assert!(m.indices().iter().all(|c| (*c as usize) < m.ncols()));
        prop_assert!(m.offsets().windows(2).all(|w| w[0] <= w[1]));
        let n = spec.grid.len();
        let rows = spec.nrows();
        let wave = |k: usize, s: u64| ((k as f64 + 1.0) * (s as f64 + 0.37)).sin();
        let u: Vec<f64> = (0..n).map(|k| wave(k, seed)).collect();
        let v: Vec<f64> = (0..rows).map(|k| wave(k, seed + 7)).collect();
        let au = op.forward_vec(&u);
        let atv = op.adjoint_vec(&v);
        let scale = norm(&au) * norm(&v) + 1e-300;
        prop_assert!((dot(&au, &v) - dot(&u, &atv)).abs() <= 1e-10 * scale);
        let pos_u: Vec<f64> = u.iter().map(|x| x.abs()).collect();
        let pos_v: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        prop_assert!(op.forward_vec(&pos_u).iter().all(|x| *x >= 0.0));
        prop_assert!(op.adjoint_vec(&pos_v).iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn regularizers_are_symmetric_psd_and_kill_constants(u in image(10), c in -3.0..3.0f64, seed in 0..100u64) {
        let g = *u.grid();
        let v: Vec<f64> = (0..g.len()).map(|k| ((k as u64 * 31 + seed) as f64).cos()).collect();
        for kind in kinds() {
            let r = build_gradient_matrix(&kind, &u).unwrap();
            let (ru, rv) = (r.apply(u.values()), r.apply(&v));
            let scale = norm(&ru) * norm(&v) + norm(&rv) * norm(u.values()) + 1e-300;
            prop_assert!((dot(&ru, &v) - dot(u.values(), &rv)).abs() <= 1e-10 * scale, "{}", kind.name());
            let rvv = dot(&rv, &v);
            prop_assert!(rvv >= -1e-10 * norm(&rv) * norm(&v), "{}", kind.name());
            if !matches!(kind, PenaltyKind::Tikhonov) {
                let flat = r.apply(&vec![c; g.len()]);
                let big = r.matrix().weights().iter().fold(0.0f64, |m, w| m.max(w.abs()));
                prop_assert!(norm(&flat) <= 1e-10 * big * (1.0 + c.abs()) * g.len() as f64, "{}", kind.name());
            }
        }
    }

    #[test]
    fn el_weights_ignore_intensity_scale(u in image(10), c in 0.01..100.0f64) {
        let w = compute_el_weights(&u, 0.03).unwrap();
        prop_assert!(w.wx.iter().chain(&w.wy).all(|x| *x > 0.0 && *x <= 1.0));
        let cu = u.scaled(c);
        let wc = compute_el_weights(&cu, 0.03).unwrap();
        if u.max() > 0.0 {
            for (a, b) in w.wx.iter().chain(&w.wy).zip(wc.wx.iter().chain(&wc.wy)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            let r = build_gradient_matrix(&PenaltyKind::el(0.03), &u).unwrap();
            let rc = build_gradient_matrix(&PenaltyKind::el(0.03), &cu).unwrap();
            for (a, b) in r.matrix().weights().iter().zip(rc.matrix().weights()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn el_weights_are_one_where_the_image_is_flat(n in 3..10usize, rows in prop::collection::vec(0.0..3.0f64, 3..10)) {
        // constant along x: every x weight is exactly one
        let g = GridSpec::unit(n).unwrap();
        let v: Vec<f64> = (0..g.len()).map(|i| rows[(i / n) % rows.len()] + 1.0).collect();
        let w = compute_el_weights(&Image::new(g, v).unwrap(), 0.03).unwrap();
        prop_assert!(w.wx.iter().all(|x| *x == 1.0));
    }

    #[test]
    fn solvers_are_deterministic_and_bounded(u in image(8), outer in 1..6usize, alpha in 1e-6..1e-2f64) {
        let g = *u.grid();
        let op = build_projector(&ProjectorSpec::parallel(g, uniform_angles(6), Kernel::Linear)).unwrap();
        let truth = Image::new(g, u.values().iter().map(|x| x.abs()).collect()).unwrap();
        let b = op.forward_vec(truth.values());
        let cfg = SolverConfig { outer_iters: outer, ..SolverConfig::ct(alpha) };
        for kind in kinds() {
            let first = fixed_point_reconstruct(&op, &b, &kind, &cfg, Some(&truth)).unwrap();
            let again = fixed_point_reconstruct(&op, &b, &kind, &cfg, Some(&truth)).unwrap();
            prop_assert!(first.image.values().iter().zip(again.image.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
            prop_assert!(first.history.len() <= outer);
            prop_assert!(first.history.iter().all(|r| r.step_norm2 >= 0.0));
        }
        let c = cgls(&op, &b, outer, None).unwrap();
        prop_assert!(c.history.len() <= outer);
    }

    #[test]
    fn mlem_preserves_counts(u in image(10), seed in 0..50u64) {
        let g = *u.grid();
        let op = build_projector(&ProjectorSpec::parallel(g, uniform_angles(7), Kernel::Linear)).unwrap();
        let x: Vec<f64> = u.values().iter().map(|v| v.abs() + 0.5).collect();
        let ax = op.forward_vec(&x);
        let b = poisson_sample(&ax.iter().map(|v| 40.0 * v).collect::<Vec<_>>(), seed).unwrap();
        let sens = op.adjoint_vec(&vec![1.0; ax.len()]);
        prop_assume!(sens.iter().all(|s| *s > 0.0));
        // only rays the image can reach carry information about it
        let b: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| if *a > 0.0 { *b } else { 0.0 }).collect();
        let next = mlem_step(&op, &b, &x, &ax, &sens, 1e-300);
        let total: f64 = op.forward_vec(&next).iter().sum();
        let expect: f64 = b.iter().sum();
        prop_assume!(expect > 0.0);
        prop_assert!(((total - expect) / expect).abs() <= 1e-8);
    }

    #[test]
    fn noise_is_reproducible(lambda in prop::collection::vec(0.0..1e4f64, 1..64), seed in any::<u64>()) {
        let a = poisson_sample(&lambda, seed).unwrap();
        prop_assert_eq!(&a, &poisson_sample(&lambda, seed).unwrap());
        prop_assert!(a.iter().all(|v| *v >= 0.0 && v.fract() == 0.0));
    }

    #[test]
    fn rmse_identities(u in image(8), c in 0.01..100.0f64) {
        let g = *u.grid();
        let t = Image::new(g, u.values().iter().rev().copied().collect()).unwrap();
        let full = RegionMask::full(g, "all").unwrap();
        prop_assert_eq!(rmse(&u, &t, Some(&full)).unwrap(), rmse(&u, &t, None).unwrap());
        let (a, b) = (rmse(&u, &t, None).unwrap(), rmse(&u.scaled(c), &t.scaled(c), None).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
    }

    #[test]
    fn argmin_is_the_smallest_recorded_score(scores in prop::collection::vec(prop::option::of(0u8..5), 1..12)) {
        let values: Vec<f64> = (0..scores.len()).map(|i| (i + 1) as f64).collect();
        let score: Vec<Option<f64>> = scores.iter().map(|s| s.map(f64::from)).collect();
        match argmin_with_ties(&values, &score) {
            None => prop_assert!(score.iter().all(Option::is_none)),
            Some(i) => {
                let best = score[i].unwrap();
                prop_assert!(score.iter().flatten().all(|s| *s >= best));
                // ties go to the smallest parameter value
                prop_assert!(score[..i].iter().flatten().all(|s| *s > best));
            }
        }
    }

    #[test]
    fn log_grids_are_geometric_around_the_centre(center in 1e-12..1e6f64, decades in 0.5..6.0f64, points in 2..20usize) {
        let v = log_grid(center, decades, points).unwrap();
        prop_assert_eq!(v.len(), points);
        let ratio = v[1] / v[0];
        prop_assert!(v.windows(2).all(|w| (w[1] / w[0] / ratio - 1.0).abs() < 1e-9));
        prop_assert!(((v[0] * v[points - 1]).sqrt() / center - 1.0).abs() < 1e-9);
        prop_assert!(((v[points - 1] / v[0]).log10() - decades).abs() < 1e-9);
    }

    #[test]
    fn files_round_trip_bit_exactly(u in image(9), nbins in 1..6usize, labels in "[A-Z]{1,4}") {
        let g = *u.grid();
        let back = read_image(&write_image(&u)).unwrap();
        prop_assert!(back.values().iter().zip(u.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let s = Sinogram::new(uniform_angles(3), nbins, (0..3 * nbins).map(|k| (k as f64).sqrt() - 1.3).collect()).unwrap();
        let sb = read_sinogram(&write_sinogram(&s)).unwrap();
        prop_assert_eq!(sb.angles(), s.angles());
        prop_assert!(sb.values().iter().zip(s.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let m = RegionMask::new(g, u.values().iter().map(|v| *v > 0.0).collect(), labels.clone()).unwrap();
        let mb = read_mask(&write_mask(&m), Some(&g)).unwrap();
        prop_assert_eq!(mb.membership(), m.membership());
        prop_assert_eq!(mb.label(), labels.as_str());
        let r = build_gradient_matrix_with_scale(&PenaltyKind::el(0.03), &g, u.values(), 2.0).unwrap();
        let rb = read_csr(&write_csr(r.matrix())).unwrap();
        prop_assert_eq!(rb.offsets(), r.matrix().offsets());
        prop_assert_eq!(rb.indices(), r.matrix().indices());
        prop_assert!(rb.weights().iter().zip(r.matrix().weights()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn kv_text_round_trips(pairs in prop::collection::btree_map("[a-z][a-z0-9_.]{0,8}", "[A-Za-z0-9.,+-]{0,10}", 0..8)) {
        let mut m = KvMap::new();
        for (k, v) in &pairs {
            m.set(k.as_str(), v);
        }
        prop_assert_eq!(KvMap::parse(&m.to_text()).unwrap(), m);
    }
}
