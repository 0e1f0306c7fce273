use mfg_reflect::paths::{ControlGrid, ControlPath, Path, RelaxedControlPath, TimeGrid};
use mfg_reflect::transport::*;
use proptest::prelude::*;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_force(c: &[f64], n: usize) -> f64 {
    permutations(n)
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| c[i * n + j]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

fn cost_and_n() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (1usize..=7).prop_flat_map(|n| (prop::collection::vec(-5.0f64..5.0, n * n), Just(n)))
}

fn tied_costs() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (1usize..=7).prop_flat_map(|n| {
        (
            prop::collection::vec((0i32..4).prop_map(|v| v as f64), n * n),
            Just(n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn assignment_matches_enumeration((c, n) in cost_and_n()) {
        let a = solve_assignment(&c, n).unwrap();
        let mut seen = a.row_to_col.clone();
        seen.sort();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        prop_assert!((a.cost - brute_force(&c, n)).abs() < 1e-9);
    }

    #[test]
    fn assignment_matches_enumeration_with_ties((c, n) in tied_costs()) {
        let a = solve_assignment(&c, n).unwrap();
        prop_assert_eq!(a.cost, brute_force(&c, n));
    }

    #[test]
    fn sorting_equals_assignment(
        (xs, ys) in (1usize..=64).prop_flat_map(|n| (
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
        ))
    ) {
        let mu = EmpiricalMeasure::new(xs).unwrap();
        let nu = EmpiricalMeasure::new(ys).unwrap();
        let a = w2_1d(&mu, &nu).unwrap();
        let b = w2_assignment(&mu, &nu, &Euclidean, DEFAULT_ASSIGNMENT_CAP).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn w2_assignment_is_a_metric(
        (p, q, r) in (1usize..=8).prop_flat_map(|n| {
            let m = || prop::collection::vec((-3.0f64..3.0, -1.0f64..1.0), n);
            (m(), m(), m())
        })
    ) {
        let mk = |v: Vec<(f64, f64)>| EmpiricalMeasure::new(v.into_iter().map(|(x, u)| StateControl { x, u }).collect()).unwrap();
        let (p, q, r) = (mk(p), mk(q), mk(r));
        let d = |a: &EmpiricalMeasure<StateControl>, b: &EmpiricalMeasure<StateControl>| w2_assignment(a, b, &Euclidean, 64).unwrap();
        prop_assert!(d(&p, &p).abs() < 1e-9);
        prop_assert!((d(&p, &q) - d(&q, &p)).abs() < 1e-9);
        prop_assert!(d(&p, &r) <= d(&p, &q) + d(&q, &r) + 1e-9);
    }

    #[test]
    fn flattening_preserves_state_marginal(
        atoms in prop::collection::vec((-2.0f64..2.0, 0usize..4, 0usize..4), 1..10)
    ) {
        let cg = ControlGrid::uniform(-1.0, 1.0, 4).unwrap();
        let xi: Vec<StateWeights> = atoms.iter().map(|&(x, i, j)| {
            let mut w = vec![0.0; 4];
            w[i] += 0.5;
            w[j] += 0.5;
            StateWeights { x, weights: w }
        }).collect();
        let n = xi.len() as f64;
        let flat = flatten_relaxed(&EmpiricalMeasure::new(xi.clone()).unwrap(), &cg).unwrap();
        let total: f64 = flat.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for a in &xi {
            let mass: f64 = flat.atoms().iter().zip(flat.weights())
                .filter(|(b, _)| b.x == a.x).map(|(_, w)| w).sum();
            let expect = xi.iter().filter(|b| b.x == a.x).count() as f64 / n;
            prop_assert!((mass - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn marginal_flow_tracks_crossing_paths() {
    let g = TimeGrid::new(1.0, 2).unwrap();
    let cg = ControlGrid::uniform(-1.0, 1.0, 3).unwrap();
    let up = Path::new(g, vec![0.0, 1.0, 2.0]).unwrap();
    let down = Path::new(g, vec![2.0, 1.0, 0.0]).unwrap();
    let c1 = ControlPath::new(g, &cg, vec![2, 0]).unwrap();
    let c2 = ControlPath::new(g, &cg, vec![0, 1]).unwrap();
    let f = flow_from_paths(&[&up, &down], &[&c1, &c2]).unwrap();
    assert_eq!(
        f.node(2).atoms(),
        &[StateControl { x: 2.0, u: -1.0 }, StateControl { x: 0.0, u: 0.0 }]
    );
    assert_eq!(f.stats(1).mean_x, 1.0);
}

#[test]
fn round_trip_of_dirac_embedding() {
    let g = TimeGrid::new(1.0, 3).unwrap();
    let cg = ControlGrid::uniform(-1.0, 1.0, 3).unwrap();
    let x = Path::new(g, vec![0.0, 0.5, 0.25, 1.0]).unwrap();
    let a = ControlPath::new(g, &cg, vec![0, 2, 1]).unwrap();
    let e = embed_strict(std::slice::from_ref(&x), std::slice::from_ref(&a), &cg).unwrap();
    assert_eq!(e.len(), 1);
    assert_eq!(e.atoms()[0].control, RelaxedControlPath::from_strict(&a, &cg));
    let strict = flow_from_paths(&[&x], &[&a]).unwrap();
    let relaxed = relaxed_flow_from_paths(&[&x], &[&e.atoms()[0].control], &cg).unwrap();
    for k in 0..g.num_nodes() {
        let flat = flatten_relaxed(relaxed.node(k), &cg).unwrap();
        assert_eq!(flat.atoms(), strict.node(k).atoms());
    }
}
