//! Fixed-point iteration on the joint law of state and control.
//!
//! Each iteration solves the best response to the current flow, simulates a
//! fresh pool under it against that flow, and mixes the new trajectories into
//! the previous pool (particle retention plays the role of damping).

use serde::{Deserialize, Serialize};

use crate::best_response::{policy_gap, solve_best_response, Exploitability, PolicyTable};
use crate::dynamics::{
    derive_seed, evaluate_cost, mean_and_se, simulate_pool, static_initial_flow, JointLawEmpirical,
};
use crate::error::{invalid, Error, Result};
use crate::scenario::ScenarioSpec;
use crate::transport::{
    solve_assignment, w2_sorted, EmpiricalMeasure, MeasureFlow, StateControl,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfeOptions {
    pub particles: usize,
    pub max_iters: usize,
    /// Stop once the node-wise residual drops to this value (absolute, in `W₂` units).
    pub tol: f64,
    /// Fraction of each pool replaced by fresh trajectories, in `(0, 1]`.
    pub theta: f64,
    pub seed: u64,
}

impl Default for MfeOptions {
    fn default() -> Self {
        MfeOptions {
            particles: 2000,
            max_iters: 50,
            tol: 0.05,
            theta: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfeSolution {
    /// Best response to the final flow.
    pub policy: PolicyTable,
    /// The last iterate `ψ^{m+1}`, which generated the newest pool members.
    pub iterate_policy: PolicyTable,
    pub pool: JointLawEmpirical,
    pub flow: MeasureFlow,
    pub residual_history: Vec<f64>,
    /// Gap of `iterate_policy` against the best response to the final flow.
    pub exploitability: Exploitability,
    /// `max(1, |mean equilibrium cost|)`.
    pub cost_scale: f64,
    pub iterations: usize,
    pub converged: bool,
    pub options: MfeOptions,
}

/// Runs the damped fixed-point iteration. Non-convergence is reported through
/// `converged = false`, never as an error.
///
/// The returned policy is one further best response, to the final flow; the
/// reported exploitability is that of the last iterate against it.
pub fn solve_mfe(spec: &ScenarioSpec, opts: &MfeOptions) -> Result<MfeSolution> {
    if opts.particles == 0 || opts.max_iters == 0 {
        return Err(invalid("particles and max_iters must be positive"));
    }
    if !(opts.theta > 0.0 && opts.theta <= 1.0) {
        return Err(invalid(format!("damping theta must lie in (0, 1], got {}", opts.theta)));
    }
    if !(opts.tol >= 0.0) {
        return Err(invalid("tolerance must be nonnegative"));
    }
    let m = opts.particles;
    let cap = spec.numerics.assignment_cap;
    if m > cap {
        return Err(Error::ResourceLimit {
            what: "pool size",
            requested: m,
            cap,
        });
    }
    let n_new = ((opts.theta * m as f64).ceil() as usize).clamp(1, m);
    let n_old = m - n_new;

    let mut flow = static_initial_flow(spec, m, derive_seed(opts.seed, 0))?;
    let mut pool: Option<JointLawEmpirical> = None;
    let mut policy = None;
    let mut history = Vec::new();
    let mut converged = false;
    for it in 0..opts.max_iters {
        let (psi, _) = solve_best_response(spec, &flow)?;
        let fresh = simulate_pool(spec, &psi, &flow, m, derive_seed(opts.seed, it as u64 + 1))?;
        let mixed = match &pool {
            Some(old) if n_old > 0 => fresh.mixed(n_new, old, n_old)?,
            _ => fresh,
        };
        let next = mixed.strict_flow()?;
        let r = consistency_residual(&flow, &next, cap)?;
        history.push(r);
        flow = next;
        pool = Some(mixed);
        policy = Some(psi);
        if r <= opts.tol {
            converged = true;
            break;
        }
    }
    let iterate = policy.expect("at least one iteration");
    let pool = pool.expect("at least one iteration");
    let (policy, _) = solve_best_response(spec, &flow)?;
    let ex = policy_gap(spec, &iterate, &policy, &flow, m, derive_seed(opts.seed, u64::MAX))?;
    let costs: Vec<f64> = pool
        .trajectories()
        .iter()
        .map(|t| evaluate_cost(spec, t, &flow))
        .collect::<Result<_>>()?;
    let cost_scale = mean_and_se(&costs).0.abs().max(1.0);
    Ok(MfeSolution {
        policy,
        iterate_policy: iterate,
        pool,
        flow,
        iterations: history.len(),
        residual_history: history,
        exploitability: ex,
        cost_scale,
        converged,
        options: opts.clone(),
    })
}

fn node_bounds(a: &[StateControl], b: &[StateControl]) -> (f64, f64) {
    let n = a.len() as f64;
    let wx = w2_sorted(a.iter().map(|p| p.x).collect(), b.iter().map(|p| p.x).collect());
    let wu = w2_sorted(a.iter().map(|p| p.u).collect(), b.iter().map(|p| p.u).collect());
    let lower = (wx * wx + wu * wu).sqrt();
    let sorted = |v: &[StateControl], by_u: bool| {
        let mut s = v.to_vec();
        if by_u {
            s.sort_by(|p, q| p.u.total_cmp(&q.u).then(p.x.total_cmp(&q.x)));
        } else {
            s.sort_by(|p, q| p.x.total_cmp(&q.x).then(p.u.total_cmp(&q.u)));
        }
        s
    };
    let coupling_cost = |by_u: bool| {
        let (sa, sb) = (sorted(a, by_u), sorted(b, by_u));
        let c: f64 = sa
            .iter()
            .zip(&sb)
            .map(|(p, q)| (p.x - q.x) * (p.x - q.x) + (p.u - q.u) * (p.u - q.u))
            .sum();
        (c / n).sqrt()
    };
    let upper = coupling_cost(false).min(coupling_cost(true));
    (lower, upper.max(lower))
}

fn node_exact(a: &EmpiricalMeasure<StateControl>, b: &EmpiricalMeasure<StateControl>) -> Result<f64> {
    let n = a.len();
    let mut c = Vec::with_capacity(n * n);
    for p in a.atoms() {
        for q in b.atoms() {
            let (dx, du) = (p.x - q.x, p.u - q.u);
            c.push(dx * dx + du * du);
        }
    }
    Ok((solve_assignment(&c, n)?.cost.max(0.0) / n as f64).sqrt())
}

/// `max_k W₂,ℝ×U(flow_in_k, flow_out_k)`.
///
/// Exact: each node is bracketed by the marginal lower bound and a sorted
/// coupling, and only nodes whose upper bound can still beat the running
/// maximum get a full assignment.
pub fn consistency_residual(flow_in: &MeasureFlow, flow_out: &MeasureFlow, cap: usize) -> Result<f64> {
    if flow_in.grid() != flow_out.grid() {
        return Err(invalid("flows live on different grids"));
    }
    let n = flow_in.atom_count();
    if flow_out.atom_count() != n {
        return Err(invalid(format!(
            "flows have different atom counts: {} vs {}",
            n,
            flow_out.atom_count()
        )));
    }
    if n > cap {
        return Err(Error::ResourceLimit {
            what: "assignment size",
            requested: n,
            cap,
        });
    }
    let bounds: Vec<(f64, f64)> = flow_in
        .nodes()
        .iter()
        .zip(flow_out.nodes())
        .map(|(a, b)| node_bounds(a.atoms(), b.atoms()))
        .collect();
    let mut order: Vec<usize> = (0..bounds.len()).collect();
    order.sort_by(|&i, &j| bounds[j].1.total_cmp(&bounds[i].1).then(i.cmp(&j)));
    let mut best = 0.0_f64;
    for k in order {
        let (lo, hi) = bounds[k];
        if hi <= best {
            break;
        }
        let exact = if hi - lo <= 1e-15 * hi.max(1.0) {
            hi
        } else {
            node_exact(flow_in.node(k), flow_out.node(k))?
        };
        best = best.max(exact);
    }
    Ok(best)
}

/// Iterations use salts `0..=max_iters` and the final evaluation `u64::MAX`.
const CERTIFY_SALT: u64 = u64::MAX - 1;

/// Desk-scale optimality and consistency check of a solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointCertificate {
    /// Residual between the solution flow and a fresh pool under `sol.policy`.
    pub fresh_residual: f64,
    /// Twice the residual between the pool and one bootstrap resample of it.
    pub bootstrap_allowance: f64,
    pub exploitability: Exploitability,
    pub exploitability_threshold: f64,
    pub consistent: bool,
    pub optimal: bool,
}

/// Streams derive from `seed` through a salt the iteration never uses, so
/// passing the solver's own seed still gives pools independent of the solve.
pub fn certify(spec: &ScenarioSpec, sol: &MfeSolution, seed: u64) -> Result<FixedPointCertificate> {
    let seed = derive_seed(seed, CERTIFY_SALT);
    let m = sol.pool.len();
    let cap = spec.numerics.assignment_cap;
    let fresh = simulate_pool(spec, &sol.policy, &sol.flow, m, derive_seed(seed, 1))?;
    let fresh_residual = consistency_residual(&sol.flow, &fresh.strict_flow()?, cap)?;
    let mut noise = crate::dynamics::NoiseStream::new(derive_seed(seed, 2), 0, crate::dynamics::Purpose::Initial);
    let picks: Vec<_> = (0..m)
        .map(|_| {
            let i = ((noise.uniform() * m as f64) as usize).min(m - 1);
            sol.pool.trajectories()[i].clone()
        })
        .collect();
    let boot = JointLawEmpirical::new(sol.pool.controls().clone(), picks)?;
    let bootstrap_allowance = 2.0 * consistency_residual(&sol.flow, &boot.strict_flow()?, cap)?;
    let (br, _) = solve_best_response(spec, &sol.flow)?;
    let ex = policy_gap(spec, &sol.iterate_policy, &br, &sol.flow, m, derive_seed(seed, 3))?;
    let threshold = sol.options.tol * sol.cost_scale + 3.0 * ex.se;
    Ok(FixedPointCertificate {
        fresh_residual,
        bootstrap_allowance,
        exploitability: ex,
        exploitability_threshold: threshold,
        consistent: fresh_residual <= sol.options.tol + bootstrap_allowance,
        optimal: ex.gap <= threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::TimeGrid;

    fn flow(points: &[Vec<(f64, f64)>]) -> MeasureFlow {
        let grid = TimeGrid::new(1.0, points.len() - 1).unwrap();
        let nodes = points
            .iter()
            .map(|v| EmpiricalMeasure::new(v.iter().map(|&(x, u)| StateControl { x, u }).collect()).unwrap())
            .collect();
        MeasureFlow::new(grid, nodes).unwrap()
    }

    #[test]
    fn identical_flows_have_zero_residual() {
        let f = flow(&[vec![(0.0, 1.0), (2.0, -1.0)], vec![(1.0, 0.0), (0.5, 0.5)]]);
        assert_eq!(consistency_residual(&f, &f, 16).unwrap(), 0.0);
    }

    #[test]
    fn unit_shift_at_one_node() {
        let a = flow(&[vec![(0.0, 1.0), (2.0, -1.0)], vec![(1.0, 0.0), (0.5, 0.5)]]);
        let b = flow(&[vec![(0.0, 1.0), (2.0, -1.0)], vec![(2.0, 0.0), (1.5, 0.5)]]);
        assert!((consistency_residual(&a, &b, 16).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mismatched_flows_are_rejected() {
        let a = flow(&[vec![(0.0, 1.0)], vec![(1.0, 0.0)]]);
        let b = flow(&[vec![(0.0, 1.0), (1.0, 1.0)], vec![(1.0, 0.0), (1.0, 0.0)]]);
        assert!(consistency_residual(&a, &b, 16).is_err());
        let c = flow(&[vec![(0.0, 1.0)], vec![(1.0, 0.0)], vec![(1.0, 0.0)]]);
        assert!(consistency_residual(&a, &c, 16).is_err());
    }
}
