use jumpset_core::energies::biestim_upper;
use jumpset_core::grid::inner;
use jumpset_core::io::{read_csv, read_pgm, write_csv, write_pgm, PgmFormat};
use jumpset_core::linalg::pair_norm_sup;
use jumpset_core::solvers::prox_fidelity;
use jumpset_core::*;
use proptest::prelude::*;

fn grid(max_side: usize) -> impl Strategy<Value = GridImage> {
    (2..=max_side, 2..=max_side, 0.01f64..1.0).prop_flat_map(|(w, ht, h)| {
        prop::collection::vec(-10.0f64..10.0, w * ht).prop_map(move |v| GridImage::new(w, ht, h, v).unwrap())
    })
}

fn grid_pair(max_side: usize) -> impl Strategy<Value = (GridImage, GridImage)> {
    grid(max_side).prop_flat_map(|u| {
        let (ht, w) = u.dims();
        let h = u.spacing();
        (
            Just(u),
            prop::collection::vec(-10.0f64..10.0, w * ht).prop_map(move |v| GridImage::new(w, ht, h, v).unwrap()),
        )
    })
}

fn near_identity() -> impl Strategy<Value = Mat2> {
    (1e-6f64..0.5, prop::array::uniform4(-1.0f64..1.0))
        .prop_map(|(eps, e)| Mat2::identity() + Mat2::new(e[0], e[1], e[2], e[3]) * eps)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_and_divergence_are_adjoint(u in grid(12), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (ht, w) = u.dims();
        let mut draw = || (0..w * ht).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let p = VectorField::new(w, ht, u.spacing(), draw(), draw()).unwrap();
        let lhs = grad_forward(&u).dot(&p);
        let rhs = -inner(&u, &div_backward(&p));
        let scale = inner(&u, &u).sqrt() * p.dot(&p).sqrt() / u.spacing();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn total_variation_is_a_seminorm((u, v) in grid_pair(10), c in -5.0f64..5.0, shift in -5.0f64..5.0) {
        let tv = total_variation(&u);
        prop_assert!(tv >= 0.0);
        prop_assert!((total_variation(&u.scaled(c)) - c.abs() * tv).abs() <= 1e-12 * (1.0 + c.abs() * tv));
        prop_assert!((total_variation(&u.map(|x| x + shift)) - tv).abs() <= 1e-9 * (1.0 + tv));
        let sum = u.with_values(u.values().iter().zip(v.values()).map(|(a, b)| a + b).collect());
        prop_assert!(total_variation(&sum) <= tv + total_variation(&v) + 1e-9);
    }

    #[test]
    fn coarea_for_separated_rectangles(
        n in 16usize..40,
        c1 in 0.1f64..3.0,
        c2 in 0.1f64..3.0,
        a in (1usize..5, 1usize..5, 2usize..5, 2usize..5),
        gap in 3usize..6,
    ) {
        // Two axis-aligned blocks whose boundaries are several cells apart.
        let (i0, j0, hi, wj) = a;
        let i1 = i0 + hi + gap;
        prop_assume!(i1 + hi + 1 < n && j0 + wj + 1 < n);
        let h = 1.0 / n as f64;
        let block = |top: usize| {
            Mask::new(n, n, (0..n * n).map(|k| {
                let (i, j) = (k / n, k % n);
                i >= top && i < top + hi && j >= j0 && j < j0 + wj
            }).collect()).unwrap()
        };
        let (m1, m2) = (block(i0), block(i1));
        let u = GridImage::new(n, n, h, (0..n * n).map(|k| {
            c1 * m1.cells()[k] as u8 as f64 + c2 * m2.cells()[k] as u8 as f64
        }).collect()).unwrap();
        let sum = c1 * perimeter(&m1, h).unwrap() + c2 * perimeter(&m2, h).unwrap();
        prop_assert!((total_variation(&u) - sum).abs() <= 1e-12 * sum);
    }

    #[test]
    fn pair_norm_bounded_by_gram_estimate(w1 in near_identity(), w2 in near_identity()) {
        prop_assert!(pair_norm_sup(&w1, &w2) <= biestim_upper(&w1, &w2) + 1e-12);
    }

    #[test]
    fn shift_is_invertible_with_positive_jacobian(
        rho in -0.9f64..0.9,
        a in -0.99f64..0.99,
        tau in -4.0f64..4.0,
        circle in any::<bool>(),
    ) {
        let g = if circle {
            LipschitzGraph::circle(Point::new(0.6, 0.8), Point::new(0.45, 0.3), 0.3, 0.2).unwrap()
        } else {
            LipschitzGraph::flat(Point::new(0.0, 1.0), 0.5, 0.5, 0.3).unwrap()
        };
        let (lo, hi) = g.domain();
        let a0 = 0.5 * (lo + hi);
        let r = 0.1;
        let t = ShiftTransform::new(g.clone(), a0, r, rho, Bump::Standard).unwrap();
        let aa = a0 + a * 1.2 * r;
        let x = g.from_frame(aa, g.height(aa.clamp(lo, hi)) + tau * r);
        let y = t.apply(x);
        prop_assert!((t.inverse(y) - x).norm() <= 1e-12);
        prop_assert!(t.jacobian_det(x) > 0.0);
        if (aa - a0).abs() >= r || tau.abs() >= 3.0 {
            prop_assert_eq!(y, x);
        }
    }

    #[test]
    fn prox_fidelity_minimises(p in 1.0f64..3.0, tau in 1e-3f64..2.0, f in -2.0f64..2.0, v in -2.0f64..2.0, d in -0.1f64..0.1) {
        let fid = FidelitySpec::power(p, 1.0).unwrap();
        let obj = |u: f64| tau * (u - f).abs().powf(p) + 0.5 * (u - v).powi(2);
        let u = prox_fidelity(&fid, tau, f, v);
        prop_assert!(obj(u) <= obj(u + d) + 1e-10);
    }

    #[test]
    fn pgm_round_trip_within_quantisation(u in grid(9), binary in any::<bool>(), wide in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.pgm");
        let maxval = if wide { 65535 } else { 255 };
        let fmt = if binary { PgmFormat::Binary } else { PgmFormat::Ascii };
        write_pgm(&path, &u, fmt, maxval, false).unwrap();
        let back = read_pgm(&path).unwrap();
        prop_assert_eq!(back.dims(), u.dims());
        let step = (u.max() - u.min()) / maxval as f64;
        for (a, b) in back.values().iter().zip(u.values()) {
            prop_assert!((a - b).abs() <= 0.5 * step + 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn csv_round_trip(rows in prop::collection::vec(prop::array::uniform3(-1e300f64..1e300), 0..20)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows: Vec<Vec<f64>> = rows.into_iter().map(|r| r.to_vec()).collect();
        write_csv(&path, &["a", "b", "c"], &rows, false).unwrap();
        let (_, back) = read_csv(&path).unwrap();
        prop_assert_eq!(back, rows);
    }

    #[test]
    fn jump_detection_is_equivariant(
        n in 8usize..24,
        cut in 2usize..6,
        c in -3.0f64..3.0,
        s in 0.5f64..4.0,
    ) {
        let h = 1.0 / n as f64;
        let u = GridImage::from_fn(n, n, h, |x| if x.x * n as f64 > cut as f64 && x.y > 0.3 { 1.0 } else { 0.0 }).unwrap();
        let theta = 0.25;
        let ju = detect_jumps(&u, 3, theta).unwrap();
        let rotated = detect_jumps(&u.rotate90(), 3, theta).unwrap();
        let shifted = detect_jumps(&u.map(|v| v + c), 3, theta).unwrap();
        let scaled = detect_jumps(&u.scaled(s), 3, theta * s).unwrap();
        prop_assert_eq!(rotated.len(), ju.len());
        prop_assert_eq!(shifted.len(), ju.len());
        prop_assert_eq!(&scaled.samples.iter().map(|j| j.key).collect::<Vec<_>>(), &ju.samples.iter().map(|j| j.key).collect::<Vec<_>>());
        prop_assert_eq!(containment_excess(&ju, &ju, 0).unwrap(), 0.0);
        prop_assert_eq!(containment_excess(&shifted, &ju, 0).unwrap(), 0.0);
    }

    #[test]
    fn phantoms_repeat_per_seed(seed in any::<u64>(), sigma in 0.0f64..0.3) {
        let spec = PhantomSpec {
            kind: PhantomKind::Disk { radius: 0.3 },
            size: 16,
            noise: Noise::Gaussian { sigma },
            seed,
        };
        prop_assert_eq!(generate_phantom(&spec).unwrap(), generate_phantom(&spec).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn solver_never_increases_the_objective(
        values in prop::collection::vec(0.0f64..1.0, 64),
        p in prop::sample::select(vec![1.0, 1.5, 2.0]),
        alpha in 0.01f64..0.2,
    ) {
        let f = GridImage::new(8, 8, 1.0 / 8.0, values).unwrap();
        let fid = FidelitySpec::power(p, 1.0).unwrap();
        let reg = RegulariserSpec::tv(alpha).unwrap();
        let res = solve_denoise(&f, &fid, &reg, &SolverConfig { max_iterations: 2000, ..Default::default() }).unwrap();
        let e_u = objective_value(&res.solution, &f, &fid, &reg).unwrap();
        let e_f = objective_value(&f, &f, &fid, &reg).unwrap();
        prop_assert!(e_u <= e_f + 1e-12);
        prop_assert!(res.solution.min() >= f.min() && res.solution.max() <= f.max());
    }
}
