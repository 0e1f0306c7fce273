use mfg_reflect::dynamics::{ConstantControl, ParticleInputs};
use mfg_reflect::mfe_solver::{solve_mfe, MfeOptions};
use mfg_reflect::nplayer::*;
use mfg_reflect::{parse_scenario, Path, ScenarioSpec};

fn fixture(name: &str) -> ScenarioSpec {
    let p = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    ScenarioSpec::from_file(&p).unwrap()
}

fn coupled() -> ScenarioSpec {
    let mut s = fixture("lq.toml");
    s.dynamics.beta3 = 0.3;
    s.dynamics.s1 = 0.1;
    s.dynamics.s2 = 0.01;
    s.dynamics.k2 = 0.5;
    s.dynamics.v1 = 0.2;
    s.numerics.steps = 20;
    s.validate().unwrap();
    s
}

#[test]
fn players_are_exchangeable() {
    let spec = coupled();
    let policy = |k: usize, x: f64, _a: f64| if x > 0.6 { 10 } else { 60 + k % 7 };
    let inputs = player_inputs(&spec, 12, 5);
    let perm: Vec<usize> = vec![7, 3, 11, 0, 5, 9, 1, 2, 10, 4, 8, 6];
    let shuffled: Vec<ParticleInputs> = perm.iter().map(|&i| inputs[i].clone()).collect();
    let controls = vec![PlayerControl::Feedback(&policy); 12];
    let a = simulate_system(&spec, &controls, &inputs).unwrap();
    let b = simulate_system(&spec, &controls, &shuffled).unwrap();
    assert_eq!(a.step_stats, b.step_stats);
    for (slot, &i) in perm.iter().enumerate() {
        assert_eq!(b.trajectories[slot], a.trajectories[i]);
        assert_eq!(b.costs[slot], a.costs[i]);
    }
}

#[test]
fn same_seed_gives_the_same_game() {
    let spec = coupled();
    let a = simulate_nplayer(&spec, &ConstantControl(40), 10, 3).unwrap();
    let b = simulate_nplayer(&spec, &ConstantControl(40), 10, 3).unwrap();
    assert_eq!(a, b);
}

/// Two players, `K = 2`, no noise: the recursion worked out by hand.
#[test]
fn two_body_recursion() {
    let spec = parse_scenario(
        r#"
[dynamics]
horizon = 1.0
beta1 = -0.5
beta2 = 1.0
k1 = 1.0
gamma1 = 0.5
gamma2 = 1.0
control_min = -1.0
control_max = 1.0
control_points = 3

[costs]
q_u = 1.0

[boundary]
family = "constant"
a0 = 0.0

[initial]
law = "constant"
x0 = 0.5

[numerics]
steps = 2
variance_floor = 0.0
"#,
    )
    .unwrap();
    let grid = spec.grid();
    let inp = |x0: f64| ParticleInputs {
        dw: vec![0.0, 0.0],
        boundary: Path::constant(grid, 0.0).unwrap(),
        init: x0,
        clamped: false,
    };
    let (s0, s1) = ([0usize, 0], [2usize, 1]);
    let out = simulate_system(
        &spec,
        &[PlayerControl::OpenLoop(&s0), PlayerControl::OpenLoop(&s1)],
        &[inp(0.4), inp(1.0)],
    )
    .unwrap();
    // step 0: mean x 0.7, mean u 0, interaction 0.35
    //   player 0: b = -0.2 - 1 + 0.35 = -0.85, Y = 0.4 - 0.425 = -0.025, pushed to 0
    //   player 1: b = -0.5 + 1 + 0.35 = 0.85, Y = X = 1.425
    // step 1: mean x 0.7125, mean u -0.5, interaction -0.14375
    //   player 0: b = -1.14375, Y = -0.596875, X = 0, R = 0.596875
    //   player 1: b = -0.85625, Y = X = 0.996875
    let close = |got: &[f64], want: &[f64]| {
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{got:?} vs {want:?}");
        }
    };
    let p0 = &out.trajectories[0];
    let p1 = &out.trajectories[1];
    close(p0.y.values(), &[0.4, -0.025, -0.596875]);
    close(p0.x.values(), &[0.4, 0.0, 0.0]);
    close(p0.r.values(), &[0.0, 0.025, 0.596875]);
    close(p1.y.values(), &[1.0, 1.425, 0.996875]);
    close(p1.x.values(), p1.y.values());
    close(p1.r.values(), &[0.0, 0.0, 0.0]);
    // costs: Σ u² dt = 1 for player 0 and 0.5 for player 1
    close(&out.costs, &[1.0, 0.5]);
}

#[test]
fn zero_costs_have_no_gap() {
    let mut spec = coupled();
    spec.costs = Default::default();
    let mut devs = constant_deviations(&spec, 5).unwrap();
    devs.push(Deviation::constant("same", 40));
    let r = nash_gap(&spec, &ConstantControl(40), 6, 1, &devs, 3, 2).unwrap();
    assert!(r.deviations.iter().all(|d| d.mean == 0.0));
    assert_eq!(r.gap, 0.0);
}

#[test]
fn without_interaction_players_are_their_own_copies() {
    let spec = fixture("zero_coupling.toml");
    let mfe = solve_mfe(
        &spec,
        &MfeOptions {
            particles: 300,
            max_iters: 5,
            tol: 0.1,
            theta: 0.5,
            seed: 4,
        },
    )
    .unwrap();
    let opts = StudyOptions {
        n_list: vec![8, 32],
        seeds: 2,
        players_per_seed: Some(4),
        ..StudyOptions::default()
    };
    let rows = convergence_study(&spec, &mfe, &opts).unwrap();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(r.w2_pathspace, 0.0);
        assert_eq!(r.w2_nodeflow, 0.0);
        assert!(r.max_gap <= 3.0 * r.gap_se + 1e-12, "{r:?}");
    }
    assert_eq!(rows, convergence_study(&spec, &mfe, &opts).unwrap());
    let too_big = StudyOptions { n_list: vec![301], ..opts };
    assert!(convergence_study(&spec, &mfe, &too_big).is_err());
}
