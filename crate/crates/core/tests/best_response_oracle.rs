use mfg_reflect::best_response::{
    exploitability, policy_gap, solve_best_response, solve_best_response_on, Lattice, PolicyEntries, PolicyTable,
};
use mfg_reflect::dynamics::static_initial_flow;
use mfg_reflect::{parse_scenario, ScenarioSpec};

const DETERMINISTIC: &str = r#"
[dynamics]
horizon = 0.3
beta2 = 1.0
control_min = -1.0
control_max = 1.0
control_points = 3

[costs]
q_u = 0.5
q_x = 1.0
x_bar = -0.5
g_x = 2.0
c0 = 0.3

[boundary]
family = "constant"
a0 = 0.0

[initial]
law = "constant"
x0 = 0.5

[numerics]
steps = 3
variance_floor = 0.0
"#;

/// Cheapest of all `3^3` open-loop control sequences from `x0`.
fn enumerate(x0: f64) -> f64 {
    let us = [-1.0, 0.0, 1.0];
    let dt = 0.1;
    let mut best = f64::INFINITY;
    for code in 0..27 {
        let mut c = code;
        let mut x: f64 = x0;
        let mut cost = 0.0;
        for _ in 0..3 {
            let u = us[c % 3];
            c /= 3;
            cost += (0.5 * u * u + (x + 0.5) * (x + 0.5)) * dt;
            let y = x + u * dt;
            if y < 0.0 {
                cost += 0.3 * -y;
                x = 0.0;
            } else {
                x = y;
            }
        }
        best = best.min(cost + 2.0 * x * x);
    }
    best
}

#[test]
fn lattice_dp_equals_exhaustive_enumeration() {
    let spec = parse_scenario(DETERMINISTIC).unwrap();
    let flow = static_initial_flow(&spec, 4, 0).unwrap();
    let lattice = Lattice::new(&spec, 0.0, 1.0, 11).unwrap();
    let (_, values) = solve_best_response_on(&spec, &flow, &lattice).unwrap();
    // Starts that cannot leave the top of the lattice within three steps.
    for i in 0..=7 {
        let x0 = lattice.x_node(i);
        let v = values.node_value(0, 0, i);
        let e = enumerate(x0);
        assert!((v - e).abs() <= 1e-9, "start {x0}: dp {v} vs enumeration {e}");
    }
}

fn lq() -> ScenarioSpec {
    let p = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/lq.toml");
    ScenarioSpec::from_file(&p).unwrap()
}

#[test]
fn best_response_has_no_gap_against_itself() {
    let spec = lq();
    let flow = static_initial_flow(&spec, 400, 1).unwrap();
    let (br, _) = solve_best_response(&spec, &flow).unwrap();
    let ex = exploitability(&spec, &br, &flow, 200, 2).unwrap();
    assert_eq!(ex.gap, 0.0);
    assert_eq!(ex.policy_cost, ex.best_response_cost);
}

#[test]
fn perturbed_policy_is_exploitable() {
    let spec = lq();
    let flow = static_initial_flow(&spec, 400, 1).unwrap();
    let (br, _) = solve_best_response(&spec, &flow).unwrap();
    let m = br.controls.len();
    let PolicyEntries::Strict(e) = &br.entries else { panic!("strict table") };
    let shifted = PolicyTable {
        entries: PolicyEntries::Strict(e.iter().map(|&j| (j as usize + 12).min(m - 1) as u16).collect()),
        ..br.clone()
    };
    let ex = policy_gap(&spec, &shifted, &br, &flow, 2000, 3).unwrap();
    assert!(ex.gap > 3.0 * ex.se, "{ex:?}");
}

#[test]
fn zero_costs_leave_nothing_to_exploit() {
    let mut spec = lq();
    spec.costs = Default::default();
    let flow = static_initial_flow(&spec, 200, 1).unwrap();
    let (br, values) = solve_best_response(&spec, &flow).unwrap();
    assert!(values.slice(0).iter().all(|&v| v == 0.0));
    let lattice = br.lattice.clone();
    let other = PolicyTable::constant(spec.grid(), lattice, spec.control_grid().unwrap(), 7).unwrap();
    let ex = policy_gap(&spec, &other, &br, &flow, 200, 4).unwrap();
    assert_eq!(ex.gap, 0.0);
}
