//! Property-based invariants of projections, weights, the QP solver and the
//! oracle risks.

use nalgebra::{DMatrix, DVector};
use nestavg::covariance::CovarianceSpec;
use nestavg::qp::QpProblem;
use nestavg::weights::tail_sums;
use nestavg::{NestedDesign, RiskProfile, WeightSet, WeightVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn design(seed: u64, n: usize, sizes: &[usize]) -> NestedDesign {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p: usize = sizes.iter().sum();
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let nu = sizes
        .iter()
        .scan(0, |acc, s| {
            *acc += s;
            Some(*acc)
        })
        .collect();
    NestedDesign::build(x, nu).unwrap()
}

fn vector(seed: u64, n: usize) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn sizes() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..4, 1..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projections_are_idempotent_and_nested(seed in any::<u64>(), n in 25usize..60, s in sizes()) {
        let d = design(seed, n, &s);
        let v = vector(seed, n);
        for k in 1..=d.groups() {
            let p = d.project(k, &v).unwrap();
            let pp = d.project(k, &p).unwrap();
            prop_assert!((&p - &pp).amax() < 1e-10 * v.amax().max(1.0));
            for j in 1..=k {
                // P_j P_k = P_j
                let a = d.project(j, &p).unwrap();
                let b = d.project(j, &v).unwrap();
                prop_assert!((a - b).amax() < 1e-10 * v.amax().max(1.0));
            }
        }
    }

    #[test]
    fn basis_is_orthonormal_and_increments_partition(seed in any::<u64>(), n in 25usize..60, s in sizes()) {
        let d = design(seed, n, &s);
        let q = d.basis();
        let gram = q.tr_mul(q);
        prop_assert!((gram - DMatrix::identity(d.p(), d.p())).amax() < 1e-10);
        let v = vector(seed, n);
        let inc = d.quad_form_increments(&v).unwrap();
        let total: f64 = inc.iter().sum();
        let full = d.project(d.groups(), &v).unwrap().norm_squared();
        prop_assert!((total - full).abs() < 1e-9 * full.max(1.0));
        prop_assert!(inc.iter().all(|&b| b >= -1e-12));
    }

    #[test]
    fn reordering_columns_within_a_group_keeps_the_projection(seed in any::<u64>(), n in 25usize..60, s in sizes()) {
        let d = design(seed, n, &s);
        let x = d.x().clone();
        let mut y = x.clone();
        let mut start = 0;
        for (g, &end) in d.boundaries().iter().enumerate() {
            let _ = g;
            // reverse the columns of each group
            for (i, j) in (start..end).zip((start..end).rev()) {
                y.set_column(i, &x.column(j));
            }
            start = end;
        }
        let e = NestedDesign::build(y, d.boundaries().to_vec()).unwrap();
        let v = vector(seed, n);
        for k in 1..=d.groups() {
            let a = d.project(k, &v).unwrap();
            let b = e.project(k, &v).unwrap();
            prop_assert!((a - b).amax() < 1e-9 * v.amax().max(1.0));
        }
    }

    #[test]
    fn tail_sums_are_nonincreasing_on_the_simplex(raw in prop::collection::vec(0.0f64..1.0, 1..8)) {
        let s: f64 = raw.iter().sum();
        prop_assume!(s > 1e-6);
        let w: Vec<f64> = raw.iter().map(|x| x / s).collect();
        let g = tail_sums(&w);
        prop_assert!((g[0] - 1.0).abs() < 1e-12);
        prop_assert!(g.windows(2).all(|p| p[1] <= p[0] + 1e-15));
        prop_assert!(WeightVector::new(w, WeightSet::Simplex).is_ok());
    }

    #[test]
    fn qp_solution_is_feasible_and_no_worse_than_vertices(seed in any::<u64>(), m in 1usize..7, boxed in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(m + 2, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let h = a.tr_mul(&a) * 2.0;
        let g = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let set = if boxed { WeightSet::Box } else { WeightSet::Simplex };
        let q = QpProblem::new(h, g, set).unwrap();
        let sol = q.solve().unwrap();
        let w = sol.weights.as_slice();
        prop_assert!(w.iter().all(|&x| (-1e-12..=1.0 + 1e-12).contains(&x)));
        if !boxed {
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let scale = q.objective(&vec![0.0; m]).abs().max(1.0);
        for k in 0..m {
            let mut e = vec![0.0; m];
            e[k] = 1.0;
            prop_assert!(sol.objective <= q.objective(&e) + 1e-8 * scale);
        }
        if boxed {
            prop_assert!(sol.objective <= q.objective(&vec![0.0; m]) + 1e-8 * scale);
        }
    }

    #[test]
    fn oracle_sandwich_holds_without_monotonicity(seed in any::<u64>(), m in 1usize..6, grid in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 100;
        let bias: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..20.0)).collect();
        let var: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..5.0)).collect();
        let p = RiskProfile::from_increments(n, bias, var, rng.random_range(0.0..3.0), m).unwrap();
        let r_ms = p.risk_ms_star();
        let tol = 1e-8 * r_ms.max(1.0);
        let bx = p.oracle_box().unwrap().risk;
        let simplex = p.oracle_simplex().unwrap().risk;
        let g = p.oracle_grid(grid).unwrap().risk;
        prop_assert!(bx <= simplex + tol);
        prop_assert!(simplex <= g + tol);
        prop_assert!(g <= r_ms + tol);
        // the averaging risk at any simplex point is an upper bound
        let w = WeightVector::new(vec![1.0 / m as f64; m], WeightSet::Simplex).unwrap();
        prop_assert!(simplex <= p.risk_ma(&w).unwrap() + tol);
    }

    #[test]
    fn selection_risk_is_the_point_mass_averaging_risk(seed in any::<u64>(), n in 25usize..60, s in sizes(), rho in -0.8f64..0.8) {
        let d = design(seed, n, &s);
        let mu = vector(seed.wrapping_add(1), n);
        let cov = CovarianceSpec::ar1(rho, 1.3);
        let p = RiskProfile::new(&d, &cov, &mu, d.groups()).unwrap();
        for k in 1..=d.groups() {
            let a = p.risk_at(k).unwrap();
            let b = p.risk_ma(&WeightVector::point_mass(d.groups(), k)).unwrap();
            prop_assert!((a - b).abs() < 1e-10 * a.max(1.0));
        }
    }
}
