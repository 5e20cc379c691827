use ducsim_solver::{
    solve_miqp, solve_qp_bounds, MiqpProblem, QpBuilder, QpSettings, QpStatus, SolverError,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Toy commitment model: `nb` units with on/off binaries `u`, outputs `p`
/// with `pmin·u ≤ p ≤ pmax·u`, a shared demand and quadratic costs.
fn toy_uc(seed: u64) -> MiqpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = rng.random_range(1..=12);
    let mut b = QpBuilder::new();
    let mut us = Vec::new();
    let mut ps = Vec::new();
    let mut cap = 0.0;
    for _ in 0..nb {
        let u = b.add_var(0.0, 1.0);
        let p = b.add_var(0.0, f64::INFINITY);
        let pmax: f64 = rng.random_range(1.0..5.0);
        let pmin = pmax * rng.random_range(0.1..0.5);
        cap += pmax;
        b.add_le(&[(p, 1.0), (u, -pmax)], 0.0);
        b.add_ge(&[(p, 1.0), (u, -pmin)], 0.0);
        b.add_linear(u, rng.random_range(0.5..4.0));
        b.add_linear(p, rng.random_range(0.5..3.0));
        b.add_quadratic(p, p, rng.random_range(0.01..0.5));
        b.add_quadratic(u, u, 1e-9);
        us.push(u);
        ps.push(p);
    }
    let demand = cap * rng.random_range(0.2..0.9);
    b.add_eq(&ps.iter().map(|&p| (p, 1.0)).collect::<Vec<_>>(), demand);
    MiqpProblem::new(b.build().unwrap(), us).unwrap()
}

/// Exhaustive oracle: fix every binary pattern and solve the QP.
fn enumerate(p: &MiqpProblem) -> Option<f64> {
    let k = p.binary_vars.len();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << k) {
        let mut lo = p.base.lo.clone();
        let mut hi = p.base.hi.clone();
        for (bit, &v) in p.binary_vars.iter().enumerate() {
            let val = ((mask >> bit) & 1) as f64;
            lo[v] = val;
            hi[v] = val;
        }
        let s = solve_qp_bounds(&p.base, &lo, &hi, &QpSettings::default());
        if s.status == QpStatus::Optimal {
            best = Some(best.map_or(s.objective, |b: f64| b.min(s.objective)));
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matches_enumeration(seed in any::<u64>()) {
        let p = toy_uc(seed);
        let oracle = enumerate(&p);
        match (solve_miqp(&p, 1e-3, 100_000), oracle) {
            (Ok(s), Some(opt)) => {
                prop_assert!((s.objective - opt).abs() <= 1e-3 * opt.abs() + 1e-6,
                    "bb {} vs enumeration {}", s.objective, opt);
                for &v in &p.binary_vars {
                    prop_assert!(s.x[v] == 0.0 || s.x[v] == 1.0);
                }
                prop_assert!(s.lower_bound <= s.objective + 1e-6);
                prop_assert!(s.gap <= 1e-3);
            }
            (Err(SolverError::Infeasible(_)), None) => {}
            (r, o) => prop_assert!(false, "solver {:?} vs oracle {:?}", r.map(|s| s.objective), o),
        }
    }

    #[test]
    fn lower_bound_is_monotone(seed in any::<u64>()) {
        let p = toy_uc(seed);
        if let Ok(s) = solve_miqp(&p, 1e-3, 100_000) {
            for w in s.trace.windows(2) {
                prop_assert!(w[1].lower_bound >= w[0].lower_bound);
            }
        }
    }

    #[test]
    fn branch_trace_is_deterministic(seed in any::<u64>()) {
        let p = toy_uc(seed);
        let a = solve_miqp(&p, 1e-3, 100_000);
        let b = solve_miqp(&p, 1e-3, 100_000);
        prop_assert_eq!(a, b);
    }
}

#[test]
fn node_limit_keeps_incumbent() {
    let p = toy_uc(11);
    if let Ok(s) = solve_miqp(&p, 0.0, 1) {
        assert!(s.lower_bound <= s.objective + 1e-6);
    }
}
