use ducsim_core::case::TransmissionLine;
use ducsim_core::consensus::{
    neighbor_flow_estimate, production_target, production_target_fixed, update_eta, update_flow, update_phase,
};
use proptest::collection::vec;
use proptest::prelude::*;

fn val() -> impl Strategy<Value = f64> {
    -100.0..100.0_f64
}

fn rho() -> impl Strategy<Value = f64> {
    0.01..1000.0_f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn agreement_is_a_fixed_point(theta in val(), r in rho()) {
        let (l, tb) = update_phase(theta, 0.0, theta, 0.0, r);
        prop_assert_eq!(l, 0.0);
        prop_assert!((tb - theta).abs() <= 1e-9);
        let (p, fb) = update_flow(theta, 0.0, theta, 0.0, r);
        prop_assert_eq!(p, 0.0);
        prop_assert!((fb - theta).abs() <= 1e-9);
    }

    #[test]
    fn equal_duals_give_the_midpoint(theta in val(), tilde in val(), lambda in val(), r in rho()) {
        let (_, tb) = update_phase(theta, lambda, tilde, lambda, r);
        let mid = 0.5 * (theta + tilde);
        prop_assert!((tb - mid).abs() <= 1e-9 * (1.0 + mid.abs()), "{tb} vs {mid}");
    }

    #[test]
    fn dual_swap_is_antisymmetric(theta in val(), tilde in val(), l1 in val(), l2 in val(), r in rho()) {
        // both ends of one edge computing with each other's values
        let (a, _) = update_phase(theta, l1, tilde, l2, r);
        let (b, _) = update_phase(tilde, l2, theta, l1, r);
        prop_assert!((a + b + l1 + l2).abs() <= 1e-9 * (1.0 + l1.abs() + l2.abs()));
    }

    #[test]
    fn flow_estimate_is_antisymmetric(u in val(), v in val(), g in 0.1..50.0_f64) {
        let line = TransmissionLine { from_bus: 0, to_bus: 1, susceptance: g, f_max: 1.0 };
        prop_assert_eq!(neighbor_flow_estimate(u, v, &line), -neighbor_flow_estimate(v, u, &line));
    }

    #[test]
    fn multipliers_partition_the_imbalance(
        rows in vec((vec(0.0..200.0_f64, 4), vec(0.0..50.0_f64, 4), vec(0.0..5.0_f64, 4)), 1..8),
    ) {
        // rows: per region (production, owned demand, s)
        let t_len = 4;
        let mut sum_psi = vec![0.0; t_len];
        let mut sum_s = vec![0.0; t_len];
        for (y, d, s) in &rows {
            for t in 0..t_len {
                sum_psi[t] += d[t] - y[t];
                sum_s[t] += s[t];
            }
        }
        let mut mu_tot = vec![0.0; t_len];
        let mut p_tot = vec![0.0; t_len];
        for (y, _, s) in &rows {
            let (mu, p_bar) = production_target(y, s, &sum_psi, &sum_s);
            for t in 0..t_len {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&mu[t]));
                mu_tot[t] += mu[t];
                p_tot[t] += p_bar[t];
            }
        }
        for t in 0..t_len {
            let demand: f64 = rows.iter().map(|(_, d, _)| d[t]).sum();
            if sum_s[t] > 1e-9 {
                prop_assert!((mu_tot[t] - 1.0).abs() <= 1e-9);
                prop_assert!((p_tot[t] - demand).abs() <= 1e-9 * (1.0 + demand), "{} vs {demand}", p_tot[t]);
            }
        }
    }

    #[test]
    fn uniform_weights_also_meet_demand(rows in vec((vec(0.0..200.0_f64, 3), vec(0.0..50.0_f64, 3)), 1..8)) {
        let n = rows.len();
        let mut sum_psi = vec![0.0; 3];
        for (y, d) in &rows {
            for t in 0..3 {
                sum_psi[t] += d[t] - y[t];
            }
        }
        for t in 0..3 {
            let total: f64 = rows.iter().map(|(y, _)| production_target_fixed(y, 1.0 / n as f64, &sum_psi)[t]).sum();
            let demand: f64 = rows.iter().map(|(_, d)| d[t]).sum();
            prop_assert!((total - demand).abs() <= 1e-9 * (1.0 + demand));
        }
    }

    #[test]
    fn eta_accumulates_linearly(eta in vec(val(), 5), p in vec(val(), 5), pb in vec(val(), 5), r in rho(), steps in 1usize..6) {
        let mut e = eta.clone();
        for _ in 0..steps {
            e = update_eta(&e, r, &p, &pb);
        }
        for t in 0..5 {
            let want = eta[t] + steps as f64 * r * (p[t] - pb[t]);
            prop_assert!((e[t] - want).abs() <= 1e-9 * (1.0 + want.abs()));
        }
    }
}
