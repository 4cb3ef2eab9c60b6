use mintime::catalog;
use mintime::io::num;
use mintime::linalg::{expint, expm, rank};
use mintime::pmp::{bang_bang_from_costate, endpoint, hamiltonian, integrate_trajectory, verify_compham};
use mintime::probe::{classify, eval_grid_with, Thresholds};
use mintime::reach::{mintime_bisection, normal_cone_at, support};
use mintime::singular::{project_to_z, singular_point, stratify_slice, z_basis};
use mintime::switching::find_zeros;
use mintime::system::{check_normality, load_system};
use mintime::{Direction, LinearSystem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn sys(name: &str) -> LinearSystem {
    catalog::linear(name).unwrap()
}

fn any_linear() -> impl Strategy<Value = LinearSystem> {
    prop::sample::select(catalog::LINEAR.to_vec()).prop_map(sys)
}

fn unit(dim: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim)
        .prop_filter("nonzero", |v| v.iter().map(|a| a * a).sum::<f64>() > 1e-4)
        .prop_map(|v| DVector::from_vec(v).normalize())
}

fn with_costate() -> impl Strategy<Value = (LinearSystem, DVector<f64>)> {
    any_linear().prop_flat_map(|s| {
        let n = s.n();
        (Just(s), unit(n))
    })
}

fn matrix(n: usize, bound: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| {
        let m = DMatrix::from_vec(n, n, v);
        let norm = m.norm();
        if norm > bound {
            m * (bound / norm)
        } else {
            m
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exponential_semigroup(m in (2usize..5).prop_flat_map(|n| matrix(n, 2.0)), s in -5.0f64..5.0, t in -5.0f64..5.0) {
        let lhs = expm(&m, s).unwrap() * expm(&m, t).unwrap();
        let rhs = expm(&m, s + t).unwrap();
        prop_assert!((&lhs - &rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
        let id = expm(&m, t).unwrap() * expm(&m, -t).unwrap();
        prop_assert!((id - DMatrix::identity(m.nrows(), m.nrows())).norm() <= 1e-10 * (1.0 + expm(&m, t).unwrap().norm().powi(2)));
    }

    #[test]
    fn exponential_integral_derivative(m in (2usize..4).prop_flat_map(|n| matrix(n, 2.0)), t in 0.1f64..3.0) {
        let n = m.nrows();
        let b = DVector::from_fn(n, |i, _| 1.0 / (i + 1) as f64);
        let h = 1e-4;
        let fd = (expint(&m, &b, 0.0, t + h, -1.0).unwrap() - expint(&m, &b, 0.0, t - h, -1.0).unwrap()) / (2.0 * h);
        let exact = expm(&m, -t).unwrap() * &b;
        prop_assert!((fd - &exact).norm() <= 1e-6 * (1.0 + exact.norm()));
    }

    #[test]
    fn rank_ignores_positive_column_scaling(s0 in 0.01f64..100.0, s1 in 0.01f64..100.0) {
        let base = sys("double-integrator-2input");
        let b = base.b() * DMatrix::from_diagonal(&DVector::from_vec(vec![s0, s1]));
        let scaled = LinearSystem::new("scaled", base.a().clone(), b).unwrap();
        prop_assert_eq!(scaled.k(), base.k());
        prop_assert_eq!(check_normality(&scaled).ranks, check_normality(&base).ranks);
        prop_assert_eq!(rank(scaled.b(), 1e-10), base.k());
    }

    #[test]
    fn system_documents_round_trip(s in any_linear()) {
        let back = load_system(&s.to_document()).unwrap();
        prop_assert_eq!(back.a(), s.a());
        prop_assert_eq!(back.b(), s.b());
    }

    #[test]
    fn switching_zeros_are_antisymmetric((s, z) in with_costate(), tau in 0.1f64..4.0) {
        for i in 0..s.m() {
            let p = find_zeros(&s, &z, i, tau, Direction::Forward).unwrap();
            let q = find_zeros(&s, &(-&z), i, tau, Direction::Forward).unwrap();
            prop_assert_eq!(p.zeros.len(), q.zeros.len());
            for (a, b) in p.zeros.iter().zip(&q.zeros) {
                prop_assert!((a.t - b.t).abs() <= 1e-12 * (1.0 + a.t));
                prop_assert_eq!(a.multiplicity, b.multiplicity);
            }
            prop_assert_eq!(p.initial_sign, -q.initial_sign);
        }
    }

    #[test]
    fn zero_count_per_window_is_bounded((s, z) in with_costate(), start in 0.0f64..3.0) {
        let w = s.tau_bar();
        for i in 0..s.m() {
            let p = find_zeros(&s, &z, i, start + w, Direction::Forward).unwrap();
            let count: usize = p.zeros.iter().filter(|q| q.t >= start).map(|q| q.multiplicity).sum();
            prop_assert!(count <= s.n() - 1, "{count} zeros in a window of {w}");
            prop_assert!(p.zeros.windows(2).all(|q| q[0].t < q[1].t));
        }
    }

    #[test]
    fn support_is_monotone_and_homogeneous((s, z) in with_costate(), t in 0.05f64..3.0, dt in 0.0f64..1.0, c in 0.1f64..10.0) {
        let a = support(&s, &z, t).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!(a <= support(&s, &z, t + dt).unwrap() + 1e-12);
        let scaled = support(&s, &(&z * c), t).unwrap();
        prop_assert!((scaled - c * a).abs() <= 1e-12 * c * a.max(1e-300) + 1e-15);
    }

    #[test]
    fn endpoint_supports_and_flips((s, z) in with_costate(), r in 0.05f64..3.0) {
        let e = endpoint(&s, &z, r).unwrap();
        prop_assert!((z.dot(&e) - support(&s, &z, r).unwrap()).abs() <= 1e-9);
        let f = endpoint(&s, &(-&z), r).unwrap();
        prop_assert_eq!(f, -e);
    }

    #[test]
    fn compham_identity((s, z) in with_costate(), r in 0.0f64..3.0) {
        prop_assert!(verify_compham(&s, &z, r).unwrap() <= 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn endpoints_have_minimum_time_r((s, z) in with_costate(), r in 0.05f64..3.0) {
        let e = endpoint(&s, &z, r).unwrap();
        let t = mintime_bisection(&s, &e, 1e-10).unwrap().t;
        prop_assert!((t - r).abs() <= 1e-5, "T = {t}, r = {r}");
    }

    #[test]
    fn minimum_time_is_even(s in any_linear(), x in prop::collection::vec(-1.0f64..1.0, 3)) {
        let x = DVector::from_column_slice(&x[..s.n()]);
        let a = mintime_bisection(&s, &x, 1e-9).unwrap().t;
        let b = mintime_bisection(&s, &(-&x), 1e-9).unwrap().t;
        prop_assert!((a - b).abs() <= 1e-7 * a.max(1.0));
    }

    #[test]
    fn normal_cone_hamiltonian_is_nonpositive((s, z) in with_costate(), r in 0.1f64..2.0) {
        let x = endpoint(&s, &z, r).unwrap();
        for zeta in normal_cone_at(&s, &x, r, 1e-7).unwrap() {
            let h = hamiltonian(&s, &x, &zeta).value;
            prop_assert!(h <= 1e-8, "h = {h:e} at {zeta:?}, x = {x:?}, r = {r}");
        }
    }

    #[test]
    fn hamiltonian_constant_along_synthesis((s, z) in with_costate(), r in 0.1f64..3.0) {
        let x = endpoint(&s, &z, r).unwrap();
        let c = bang_bang_from_costate(&s, &z, r).unwrap();
        let traj = integrate_trajectory(&s, &c, &x, Direction::Forward, Some(&z), 33).unwrap();
        let h0 = traj.samples[0].h;
        prop_assert!(traj.samples.iter().all(|p| (p.h - h0).abs() <= 1e-8));
        prop_assert!(DVector::from_vec(traj.last().x.clone()).norm() <= 1e-8 * (1.0 + x.norm()));
    }

    #[test]
    fn dynamic_programming_along_synthesis((s, z) in with_costate(), r in 0.2f64..2.0) {
        let x = endpoint(&s, &z, r).unwrap();
        let c = bang_bang_from_costate(&s, &z, r).unwrap();
        let traj = integrate_trajectory(&s, &c, &x, Direction::Forward, Some(&z), 11).unwrap();
        for p in &traj.samples[1..traj.samples.len() - 1] {
            let t = mintime_bisection(&s, &DVector::from_vec(p.x.clone()), 1e-10).unwrap().t;
            prop_assert!((t - (r - p.t)).abs() <= 1e-5, "at s = {}: {t} vs {}", p.t, r - p.t);
        }
    }
}

fn z_costate() -> impl Strategy<Value = (LinearSystem, DVector<f64>)> {
    prop::sample::select(vec!["double-integrator", "triple-integrator", "harmonic"]).prop_map(sys).prop_flat_map(|s| {
        let q = z_basis(&s).unwrap();
        let d = q.ncols();
        (Just(s), unit(d).prop_map(move |c| &q * c))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn singular_parametrization_matches_endpoint((s, z) in z_costate(), r in 0.05f64..3.0) {
        let z = project_to_z(&s, &z).unwrap();
        let p = singular_point(&s, &z, r).unwrap();
        let zp = (expm(&s.a().transpose(), r).unwrap() * &z).normalize();
        let e = endpoint(&s, &zp, r).unwrap();
        prop_assert!((p.x_vec() - e).norm() <= 1e-9 * (1.0 + p.x_vec().norm()));
    }

    #[test]
    fn singular_points_are_centrally_symmetric((s, z) in z_costate(), r in 0.05f64..3.0) {
        let a = singular_point(&s, &z, r).unwrap();
        let b = singular_point(&s, &(-&z), r).unwrap();
        prop_assert_eq!(b.x_vec(), -a.x_vec());
    }

    #[test]
    fn numbers_serialize_exactly(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(num(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
    }

    #[test]
    fn probe_labels_respect_symmetry_and_translation(shift in 0usize..4) {
        // T of the double integrator in closed form, probed on a box symmetric
        // about the origin and on the same box moved by whole cells
        let t = |x: &[f64]| {
            let (x1, x2) = (x[0], x[1]);
            let v = if x1 + x2 * x2.abs() / 2.0 > 0.0 {
                x2 + 2.0 * (x1 + x2 * x2 / 2.0).sqrt()
            } else {
                -x2 + 2.0 * (-x1 + x2 * x2 / 2.0).max(0.0).sqrt()
            };
            Ok(v)
        };
        let th = Thresholds::default();
        let h = 0.04;
        let f = eval_grid_with(&[-1.0, -1.0], &[1.0, 1.0], &[51, 51], "closed", 0.0, t).unwrap();
        let rep = classify(&f, &th).unwrap();
        let n = f.len();
        for k in 0..n {
            prop_assert_eq!(rep.labels[k], rep.labels[n - 1 - k]);
        }
        let d = shift as f64 * h;
        let g = eval_grid_with(&[-1.0 + d, -1.0], &[1.0 + d, 1.0], &[51, 51], "closed", 0.0, t).unwrap();
        let moved = classify(&g, &th).unwrap();
        // nodes far enough from both boxes' edges see identical stencils
        let margin = 9 + shift;
        for i in margin..51 - margin {
            for j in 9..42 {
                let a = rep.labels[f.index_of(&[i + shift, j])];
                let b = moved.labels[g.index_of(&[i, j])];
                prop_assert_eq!(a, b, "node {} {}", i, j);
            }
        }
    }
}

#[test]
fn slice_points_have_minimum_time_tau() {
    let s = sys("triple-integrator");
    let strata = stratify_slice(&s, 0.5, 64).unwrap();
    let mut labels: Vec<usize> = strata.iter().map(|st| st.label).collect();
    let before = labels.len();
    labels.dedup();
    assert_eq!(labels.len(), before, "strata labels must be distinct");
    let all: Vec<_> = strata.iter().flat_map(|st| st.points.iter()).collect();
    for (k, p) in all.iter().enumerate() {
        assert!(all[k + 1..].iter().all(|q| q.x != p.x), "a point sits in two strata");
    }
    for p in all.iter().step_by(4) {
        let t = mintime_bisection(&s, &p.x_vec(), 1e-10).unwrap().t;
        assert!((t - 0.5).abs() <= 1e-5, "{t}");
    }
}

#[test]
fn planar_hamiltonian_is_constant_on_switching_extremals() {
    let s = catalog::planar("planar-pendulum").unwrap();
    for k in 0..6 {
        let a = 0.3 + k as f64;
        let arc = mintime::planar::extremal_arc(&s, [0.0, 0.0], [a.cos(), a.sin()], 0.3).unwrap();
        let h0 = arc.h[0];
        assert!(arc.h.iter().all(|h| (h - h0).abs() <= 1e-6), "seed angle {a}");
        assert!(arc.min_lambda_norm() >= 1e-3);
    }
}
