//! Small reference cases shared by tests, examples and the CLI.

use std::collections::BTreeMap;

use crate::case::{Generator, Partition, PowerCase, TransmissionLine};
use crate::io::gen_synthetic;

fn unit(id: usize, bus: usize, d: f64) -> Generator {
    Generator {
        id,
        bus,
        p_min: 1.0,
        p_max: 10.0,
        cost_dispatch: d,
        cost_commit: 1.0,
        cost_startup: 1.0,
        cost_shutdown: 1.0,
        min_up: 1,
        min_down: 1,
        ramp: 10.0,
    }
}

/// Two buses, one line, one generator per bus, two periods, one region per
/// bus. The optimum commits only the cheap unit at bus 0 and costs 13.
pub fn fixture_a() -> (PowerCase, Partition) {
    let case = PowerCase {
        buses: vec![0, 1],
        generators: vec![unit(0, 0, 1.0), unit(1, 1, 2.0)],
        lines: vec![TransmissionLine {
            from_bus: 0,
            to_bus: 1,
            susceptance: 10.0,
            f_max: 5.0,
        }],
        demand: BTreeMap::from([(0, vec![2.0, 2.0]), (1, vec![3.0, 3.0])]),
        horizon: 2,
    };
    let part = Partition {
        region_count: 2,
        owner: BTreeMap::from([(0, 0), (1, 1)]),
    };
    (case, part)
}

/// `fixture_a` with the line limit lowered, so both units must run.
pub fn fixture_a_with_limit(f_max: f64) -> (PowerCase, Partition) {
    let (mut case, part) = fixture_a();
    case.lines[0].f_max = f_max;
    (case, part)
}

/// Four-bus ring split into two regions of two buses, three periods.
/// The cheap unit sits in region 0; region 1 holds two dearer units with
/// longer minimum up/down times, and the ring limits make imports partial.
pub fn fixture_b() -> (PowerCase, Partition) {
    let line = |from_bus, to_bus| TransmissionLine {
        from_bus,
        to_bus,
        susceptance: 10.0,
        f_max: 4.0,
    };
    let case = PowerCase {
        buses: vec![0, 1, 2, 3],
        generators: vec![
            Generator {
                id: 0,
                bus: 0,
                p_min: 2.0,
                p_max: 12.0,
                cost_dispatch: 1.0,
                cost_commit: 2.0,
                cost_startup: 3.0,
                cost_shutdown: 1.0,
                min_up: 2,
                min_down: 1,
                ramp: 6.0,
            },
            Generator {
                id: 1,
                bus: 2,
                p_min: 1.0,
                p_max: 6.0,
                cost_dispatch: 3.0,
                cost_commit: 1.0,
                cost_startup: 1.0,
                cost_shutdown: 1.0,
                min_up: 1,
                min_down: 1,
                ramp: 6.0,
            },
            Generator {
                id: 2,
                bus: 3,
                p_min: 1.0,
                p_max: 5.0,
                cost_dispatch: 2.5,
                cost_commit: 1.0,
                cost_startup: 1.0,
                cost_shutdown: 1.0,
                min_up: 2,
                min_down: 2,
                ramp: 5.0,
            },
        ],
        lines: vec![line(0, 1), line(1, 2), line(2, 3), line(0, 3)],
        demand: BTreeMap::from([
            (0, vec![3.0, 4.0, 3.0]),
            (1, vec![2.0, 3.0, 2.0]),
            (2, vec![3.0, 3.0, 4.0]),
            (3, vec![2.0, 2.0, 3.0]),
        ]),
        horizon: 3,
    };
    let part = Partition {
        region_count: 2,
        owner: BTreeMap::from([(0, 0), (1, 0), (2, 1), (3, 1)]),
    };
    (case, part)
}

/// Synthetic 14-bus, 3-region, 24-period case from seed 7.
pub fn fixture_c() -> (PowerCase, Partition) {
    gen_synthetic(14, 3, 24, 7).expect("valid generator arguments")
}
