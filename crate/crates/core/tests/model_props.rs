use std::collections::{BTreeMap, BTreeSet};

use ducsim_core::case::{classify_all, region_graph, RegionId};
use ducsim_core::consensus::ConsensusState;
use ducsim_core::controller::{ControllerState, RegionReport};
use ducsim_core::io::{gen_synthetic, RunConfig};
use ducsim_core::subproblem::{build_convex, expected_counts, solve_local, SolveOptions};
use ducsim_core::fixtures;
use proptest::prelude::*;

fn synthetic() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (2usize..20, 1usize..5, 1usize..4, any::<u64>()).prop_map(|(b, r, t, s)| (b, r.min(b), t, s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn views_partition_the_buses((buses, regions, horizon, seed) in synthetic()) {
        let (case, part) = gen_synthetic(buses, regions, horizon, seed).unwrap();
        let views = classify_all(&case, &part).unwrap();
        let mut seen = BTreeSet::new();
        for v in &views {
            for b in v.internal.iter().chain(&v.boundary) {
                prop_assert!(seen.insert(*b), "bus {b} owned twice");
            }
            for b in &v.foreign {
                prop_assert!(!v.internal.contains(b) && !v.boundary.contains(b));
            }
        }
        prop_assert_eq!(seen, case.buses.iter().copied().collect::<BTreeSet<_>>());
    }

    #[test]
    fn views_are_symmetric((buses, regions, horizon, seed) in synthetic()) {
        let (case, part) = gen_synthetic(buses, regions, horizon, seed).unwrap();
        let views = classify_all(&case, &part).unwrap();
        for v in &views {
            for (&b, &owner) in &v.foreign_owner {
                prop_assert!(views[owner].boundary.contains(&b));
                prop_assert!(v.neighbors.contains(&owner));
            }
            for &b in &v.boundary {
                let crosses = case.lines.iter().any(|l| l.touches(b) && part.owner[&l.other(b)] != v.region);
                prop_assert!(crosses);
            }
        }
        for (id, line) in case.lines.iter().enumerate() {
            let holders: Vec<RegionId> = views.iter().filter(|v| v.tie_lines.contains(&id)).map(|v| v.region).collect();
            let (a, b) = (part.owner[&line.from_bus], part.owner[&line.to_bus]);
            if a == b {
                prop_assert!(holders.is_empty());
            } else {
                prop_assert_eq!(holders, { let mut h = vec![a, b]; h.sort(); h });
            }
        }
    }

    #[test]
    fn classification_is_pure((buses, regions, horizon, seed) in synthetic()) {
        let (case, part) = gen_synthetic(buses, regions, horizon, seed).unwrap();
        prop_assert_eq!(classify_all(&case, &part).unwrap(), classify_all(&case, &part).unwrap());
    }

    #[test]
    fn model_sizes_follow_the_formula((buses, regions, horizon, seed) in synthetic()) {
        let (case, part) = gen_synthetic(buses, regions, horizon, seed).unwrap();
        let cfg = RunConfig::default();
        for v in classify_all(&case, &part).unwrap() {
            let sub = build_convex(&v, &ConsensusState::new(&v), &cfg).unwrap();
            let (n, me, mi) = expected_counts(&v);
            prop_assert_eq!((sub.qp.n, sub.qp.b.len(), sub.qp.h.len()), (n, me, mi));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn larger_rho_never_lowers_the_optimum(
        bar in proptest::collection::vec(-1.0..1.0_f64, 3),
        lam in proptest::collection::vec(-5.0..5.0_f64, 3),
        rho in 0.1..50.0_f64,
        factor in 1.0..10.0_f64,
    ) {
        let (case, part) = fixtures::fixture_b();
        let views = classify_all(&case, &part).unwrap();
        let v = &views[1];
        let mut c = ConsensusState::new(v);
        for ch in c.phase.iter_mut() {
            ch.theta_bar = bar.clone();
            ch.lambda = lam.clone();
        }
        let solve = |rho_theta: f64| {
            let cfg = RunConfig { rho_theta, ..RunConfig::default() };
            let sub = build_convex(v, &c, &cfg).unwrap();
            solve_local(&sub, v, &SolveOptions::from(&cfg), None).unwrap().obj_augmented
        };
        let (lo, hi) = (solve(rho), solve(rho * factor));
        prop_assert!(hi >= lo - 1e-5 * (1.0 + lo.abs()), "{hi} < {lo}");
    }
}

#[derive(Debug, Clone)]
enum Step {
    Report(RegionId, Vec<f64>, Vec<f64>, bool, bool),
}

fn graph_and_steps() -> impl Strategy<Value = (BTreeMap<RegionId, Vec<RegionId>>, Vec<Step>)> {
    (2usize..7)
        .prop_flat_map(|n| {
            let edges = proptest::collection::vec((0..n, 0..n), 1..12);
            let steps = proptest::collection::vec(
                (
                    0..n,
                    proptest::collection::vec(-50.0..50.0_f64, 2),
                    proptest::collection::vec(0.0..3.0_f64, 2),
                    any::<bool>(),
                    any::<bool>(),
                ),
                1..60,
            );
            (Just(n), edges, steps)
        })
        .prop_map(|(n, edges, steps)| {
            let mut g: BTreeMap<RegionId, BTreeSet<RegionId>> = (0..n).map(|r| (r, BTreeSet::new())).collect();
            for (a, b) in edges {
                if a != b {
                    g.get_mut(&a).unwrap().insert(b);
                    g.get_mut(&b).unwrap().insert(a);
                }
            }
            let g = g.into_iter().map(|(r, s)| (r, s.into_iter().collect())).collect();
            let steps = steps.into_iter().map(|(r, p, s, x, k)| Step::Report(r, p, s, x, k)).collect();
            (g, steps)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn controller_keeps_exact_sums_and_valid_matches((graph, steps) in graph_and_steps()) {
        let n = graph.len();
        let mut ctl = ControllerState::new(n, 2);
        let mut shadow_psi = vec![vec![0.0; 2]; n];
        let mut shadow_s = vec![vec![0.0; 2]; n];
        for Step::Report(r, psi, s, xi, kappa) in steps {
            let report = RegionReport { region: r, psi: psi.clone(), s: s.clone(), xi, kappa };
            let was_pending = ctl.pending.contains(&r);
            let out = ctl.on_report(&report, &graph);
            if was_pending {
                prop_assert!(out.is_err());
                continue;
            }
            let replies = out.unwrap();
            shadow_psi[r] = psi;
            shadow_s[r] = s;
            for (to, reply) in &replies {
                for t in 0..2 {
                    let want: f64 = shadow_psi.iter().map(|v| v[t]).sum();
                    prop_assert!((reply.sum_psi[t] - want).abs() <= 1e-9);
                    let want: f64 = shadow_s.iter().map(|v| v[t]).sum();
                    prop_assert!((reply.sum_s[t] - want).abs() <= 1e-9);
                }
                if let Some(p) = reply.partner {
                    prop_assert!(graph[to].contains(&p));
                }
            }
            // no two pending regions are neighbours
            for &a in &ctl.pending {
                for &b in &ctl.pending {
                    prop_assert!(!graph[&a].contains(&b));
                }
            }
            if ctl.check_gc() {
                prop_assert!(ctl.xi.iter().all(|&x| x) && ctl.kappa.iter().all(|&k| k));
            }
        }
    }
}

#[test]
fn fixture_graphs_are_connected() {
    for (case, part) in [fixtures::fixture_a(), fixtures::fixture_b(), fixtures::fixture_c()] {
        let views = classify_all(&case, &part).unwrap();
        let g = region_graph(&views);
        let mut seen = BTreeSet::from([0]);
        let mut stack = vec![0];
        while let Some(r) = stack.pop() {
            for &n in &g[&r] {
                if seen.insert(n) {
                    stack.push(n);
                }
            }
        }
        assert_eq!(seen.len(), part.region_count);
    }
}
