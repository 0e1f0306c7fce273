//! LQ reference fixture: the fixed point does not depend on the seed beyond
//! Monte Carlo noise. Slow in debug builds.

use mfg_reflect::mfe_solver::{consistency_residual, solve_mfe, MfeOptions};
use mfg_reflect::ScenarioSpec;

#[test]
fn lq_flows_agree_across_seeds() {
    let p = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/lq.toml");
    let spec = ScenarioSpec::from_file(&p).unwrap();
    let solve = |seed| {
        solve_mfe(
            &spec,
            &MfeOptions {
                seed,
                ..MfeOptions::default()
            },
        )
        .unwrap()
    };
    let (a, b) = (solve(11), solve(12));
    assert!(a.converged && b.converged);
    let r = consistency_residual(&a.flow, &b.flow, spec.numerics.assignment_cap).unwrap();
    assert!(r <= 2.0 * 0.05, "cross-seed residual {r}");
}
