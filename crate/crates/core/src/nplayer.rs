//! The finite game: `N` players coupled through the empirical law of their
//! current states and controls, unilateral-deviation gaps and the
//! large-population convergence study.
//!
//! Player `i` draws its noise from the streams `(seed, i)`, the same streams
//! particle `i` of a pool with that seed would use. All players advance in
//! lockstep; the node statistics at step `k` are those of the `N` current
//! pairs `(X_k^j, u_k^j)`.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::best_response::{solve_finite_population_response, Lattice, PolicyTable};
use crate::dynamics::{
    brownian_path, check_inputs, derive_seed, draw_inputs, euler_step, evaluate_cost, mean_and_se,
    simulate_particle_with, NoiseStream, ParticleInputs, ParticleTrajectory, Purpose, StatsFlow,
    StrictPolicy, TrajectoryControl,
};
use crate::error::{invalid, Error, Result};
use crate::mfe_solver::{consistency_residual, MfeSolution};
use crate::paths::{ControlPath, Path};
use crate::scenario::ScenarioSpec;
use crate::skorokhod::StepReflector;
use crate::transport::{
    flow_from_paths, w2_assignment, EmpiricalMeasure, MeasureFlow, NodeStats, PathTupleMetric,
    StateControl,
};

/// How one player chooses controls inside the system.
#[derive(Clone, Copy)]
pub enum PlayerControl<'a> {
    Feedback(&'a dyn StrictPolicy),
    /// A fixed sequence of `K` control indices.
    OpenLoop(&'a [usize]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NPlayerOutcome {
    pub trajectories: Vec<ParticleTrajectory>,
    /// Statistics the players actually saw at each node.
    pub step_stats: Vec<NodeStats>,
    /// Empirical flow of the realised `(X, u)` pairs.
    pub flow: MeasureFlow,
    /// Each player's cost against the realised flow.
    pub costs: Vec<f64>,
}

impl NPlayerOutcome {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn control_indices(&self, i: usize) -> &[usize] {
        self.trajectories[i]
            .strict_control()
            .expect("n-player controls are strict")
            .indices()
    }
}

/// The noise a stored trajectory consumed: increments of `W`, the boundary
/// path and `Y_0`.
pub fn inputs_from_trajectory(t: &ParticleTrajectory) -> ParticleInputs {
    let w = t.w.values();
    ParticleInputs {
        dw: w.windows(2).map(|p| p[1] - p[0]).collect(),
        boundary: t.a.clone(),
        init: t.y.value(0),
        clamped: false,
    }
}

/// Noise of players `0..n` under `seed`.
pub fn player_inputs(spec: &ScenarioSpec, n: usize, seed: u64) -> Vec<ParticleInputs> {
    let grid = spec.grid();
    (0..n as u64)
        .into_par_iter()
        .map(|i| draw_inputs(spec, &grid, seed, i))
        .collect()
}

/// Simulates the coupled system for explicit per-player controls and inputs.
pub fn simulate_system(
    spec: &ScenarioSpec,
    controls: &[PlayerControl<'_>],
    inputs: &[ParticleInputs],
) -> Result<NPlayerOutcome> {
    let n = controls.len();
    if n < 2 {
        return Err(invalid(format!("the game needs at least two players, got {n}")));
    }
    if inputs.len() != n {
        return Err(invalid(format!("{} players but {} input sets", n, inputs.len())));
    }
    let grid = spec.grid();
    let cg = spec.control_grid()?;
    let dummy = StatsFlow {
        grid,
        stats: Vec::new(),
    };
    for inp in inputs {
        check_inputs(&grid, &dummy, inp)?;
    }
    for c in controls {
        if let PlayerControl::OpenLoop(seq) = c {
            if seq.len() != grid.steps() {
                return Err(invalid("open-loop control sequence has the wrong length"));
            }
        }
    }
    let kk = grid.steps();
    let dt = grid.dt();
    let mut reflectors = vec![StepReflector::default(); n];
    let mut ys = vec![Vec::with_capacity(kk + 1); n];
    let mut xs = vec![Vec::with_capacity(kk + 1); n];
    let mut rs = vec![Vec::with_capacity(kk + 1); n];
    let mut idx = vec![Vec::with_capacity(kk); n];
    for i in 0..n {
        let (x0, r0) = reflectors[i].push(inputs[i].init, inputs[i].boundary.value(0));
        ys[i].push(inputs[i].init);
        xs[i].push(x0);
        rs[i].push(r0);
    }
    let mut step_stats = Vec::with_capacity(kk + 1);
    let mut atoms = vec![StateControl { x: 0.0, u: 0.0 }; n];
    for k in 0..kk {
        for i in 0..n {
            let x = xs[i][k];
            let j = match controls[i] {
                PlayerControl::Feedback(p) => p.control_index(k, x, inputs[i].boundary.value(k)),
                PlayerControl::OpenLoop(seq) => seq[k],
            };
            if j >= cg.len() {
                return Err(invalid(format!("player {i} chose control index {j} out of range")));
            }
            idx[i].push(j);
            atoms[i] = StateControl { x, u: cg.point(j) };
        }
        let s = NodeStats::of_strict(&atoms);
        for i in 0..n {
            let (x, u) = (atoms[i].x, atoms[i].u);
            let (yn, xn, rn) = euler_step(
                ys[i][k],
                spec.drift(x, &s, u),
                spec.variance(x, &s, u),
                dt,
                inputs[i].dw[k],
                inputs[i].boundary.value(k + 1),
                &mut reflectors[i],
            );
            ys[i].push(yn);
            xs[i].push(xn);
            rs[i].push(rn);
        }
        step_stats.push(s);
    }
    for i in 0..n {
        atoms[i].x = xs[i][kk];
    }
    step_stats.push(NodeStats::of_strict(&atoms));

    let mut trajectories = Vec::with_capacity(n);
    for (i, (((y, x), r), c)) in ys.into_iter().zip(xs).zip(rs).zip(idx).enumerate() {
        trajectories.push(ParticleTrajectory {
            y: Path::from_parts_unchecked(grid, y),
            x: Path::from_parts_unchecked(grid, x),
            r: Path::from_parts_unchecked(grid, r),
            control: TrajectoryControl::Strict(ControlPath::new(grid, &cg, c)?),
            w: brownian_path(grid, &inputs[i].dw),
            a: inputs[i].boundary.clone(),
        });
    }
    let xs: Vec<&Path> = trajectories.iter().map(|t| &t.x).collect();
    let cs: Vec<&ControlPath> = trajectories
        .iter()
        .map(|t| t.strict_control().expect("strict"))
        .collect();
    let flow = flow_from_paths(&xs, &cs)?;
    let costs = trajectories
        .iter()
        .map(|t| evaluate_cost(spec, t, &flow))
        .collect::<Result<_>>()?;
    Ok(NPlayerOutcome {
        trajectories,
        step_stats,
        flow,
        costs,
    })
}

/// All `n` players use `policy`, with noise from the streams of `seed`.
pub fn simulate_nplayer<P: StrictPolicy>(
    spec: &ScenarioSpec,
    policy: &P,
    n: usize,
    seed: u64,
) -> Result<NPlayerOutcome> {
    let inputs = player_inputs(spec, n, seed);
    let controls = vec![PlayerControl::Feedback(policy); n];
    simulate_system(spec, &controls, &inputs)
}

// ---------------------------------------------------------------------------
// deviations

#[derive(Debug, Clone, PartialEq)]
pub enum DeviationPolicy {
    Table(PolicyTable),
    Constant(usize),
}

impl StrictPolicy for DeviationPolicy {
    fn control_index(&self, k: usize, x: f64, a: f64) -> usize {
        match self {
            DeviationPolicy::Table(t) => t.control_index(k, x, a),
            DeviationPolicy::Constant(j) => *j,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deviation {
    pub label: String,
    pub policy: DeviationPolicy,
}

impl Deviation {
    pub fn table(label: impl Into<String>, t: PolicyTable) -> Self {
        Deviation {
            label: label.into(),
            policy: DeviationPolicy::Table(t),
        }
    }

    pub fn constant(label: impl Into<String>, j: usize) -> Self {
        Deviation {
            label: label.into(),
            policy: DeviationPolicy::Constant(j),
        }
    }
}

/// `count` constant controls spread evenly over the control grid.
pub fn constant_deviations(spec: &ScenarioSpec, count: usize) -> Result<Vec<Deviation>> {
    let cg = spec.control_grid()?;
    let m = cg.len();
    let mut picks: Vec<usize> = (0..count)
        .map(|c| if count == 1 { m / 2 } else { (c * (m - 1) + (count - 1) / 2) / (count - 1) })
        .collect();
    picks.dedup();
    Ok(picks
        .into_iter()
        .map(|j| Deviation::constant(format!("constant u={}", (cg.point(j) * 1e9).round() / 1e9), j))
        .collect())
}

/// Candidate deviations against an equilibrium `flow` in an `n`-player
/// game: the best response to `flow`, `constants` constant controls and,
/// optionally, the finite-population best response with own weight `1/n`.
pub fn deviation_set(
    spec: &ScenarioSpec,
    flow: &MeasureFlow,
    n: usize,
    constants: usize,
    finite_population: bool,
) -> Result<Vec<Deviation>> {
    let lattice = Lattice::auto(spec, flow)?;
    let (br, _) = crate::best_response::solve_best_response_on(spec, flow, &lattice)?;
    let mut devs = vec![Deviation::table("best response to equilibrium flow", br)];
    devs.extend(constant_deviations(spec, constants)?);
    if finite_population {
        let (t, _) = solve_finite_population_response(spec, flow, &lattice, n)?;
        devs.push(Deviation::table(format!("finite-population best response N={n}"), t));
    }
    Ok(devs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationGap {
    pub label: String,
    /// Mean of `J(shared) − J(deviation)` over replications.
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub n: usize,
    pub player: usize,
    pub reps: usize,
    pub deviations: Vec<DeviationGap>,
    /// Largest mean gain over the candidate deviations.
    pub gap: f64,
    pub se: f64,
}

/// Per-replication gains `J^i(shared) − J^i(β)` for every player in `players`
/// and every deviation, on one set of inputs. Player `i` switches to `β`
/// while the others replay their baseline controls and all states are
/// recomputed.
pub fn deviation_gains(
    spec: &ScenarioSpec,
    shared: &dyn StrictPolicy,
    inputs: &[ParticleInputs],
    players: &[usize],
    deviations: &[Deviation],
) -> Result<(NPlayerOutcome, Vec<Vec<f64>>)> {
    let n = inputs.len();
    if let Some(&p) = players.iter().find(|&&p| p >= n) {
        return Err(invalid(format!("player {p} out of range for {n} players")));
    }
    let baseline = simulate_system(spec, &vec![PlayerControl::Feedback(shared); n], inputs)?;
    let jobs: Vec<(usize, usize)> = players
        .iter()
        .flat_map(|&p| (0..deviations.len()).map(move |d| (p, d)))
        .collect();
    let gains: Vec<f64> = jobs
        .par_iter()
        .map(|&(p, d)| {
            let controls: Vec<PlayerControl<'_>> = (0..n)
                .map(|j| {
                    if j == p {
                        PlayerControl::Feedback(&deviations[d].policy)
                    } else {
                        PlayerControl::OpenLoop(baseline.control_indices(j))
                    }
                })
                .collect();
            let dev = simulate_system(spec, &controls, inputs)?;
            Ok(baseline.costs[p] - dev.costs[p])
        })
        .collect::<Result<_>>()?;
    let table = gains.chunks(deviations.len().max(1)).map(|c| c.to_vec()).collect();
    Ok((baseline, table))
}

/// Estimated deviation gap of `player`, averaged over `reps` replications
/// with seeds derived from `seed`.
pub fn nash_gap(
    spec: &ScenarioSpec,
    shared: &dyn StrictPolicy,
    n: usize,
    player: usize,
    deviations: &[Deviation],
    reps: usize,
    seed: u64,
) -> Result<GapReport> {
    if deviations.is_empty() || reps == 0 {
        return Err(invalid("need at least one deviation and one replication"));
    }
    let mut per_dev = vec![Vec::with_capacity(reps); deviations.len()];
    for rep in 0..reps {
        let inputs = player_inputs(spec, n, derive_seed(seed, rep as u64));
        let (_, g) = deviation_gains(spec, shared, &inputs, &[player], deviations)?;
        for (d, v) in g[0].iter().enumerate() {
            per_dev[d].push(*v);
        }
    }
    let gaps: Vec<DeviationGap> = deviations
        .iter()
        .zip(&per_dev)
        .map(|(d, v)| {
            let (mean, se) = mean_and_se(v);
            DeviationGap {
                label: d.label.clone(),
                mean,
                se,
            }
        })
        .collect();
    let best = gaps
        .iter()
        .enumerate()
        .fold(0, |b, (i, g)| if g.mean > gaps[b].mean { i } else { b });
    Ok(GapReport {
        n,
        player,
        reps,
        gap: gaps[best].mean,
        se: gaps[best].se,
        deviations: gaps,
    })
}

// ---------------------------------------------------------------------------
// convergence study

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub n_list: Vec<usize>,
    pub seeds: usize,
    /// Players whose deviations are evaluated per seed; `None` means all `N`.
    pub players_per_seed: Option<usize>,
    pub constant_deviations: usize,
    /// Add the best response that accounts for the player's own weight `1/N`.
    pub finite_population_deviation: bool,
    pub seed: u64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            n_list: vec![8, 32, 128, 256],
            seeds: 10,
            players_per_seed: None,
            constant_deviations: 5,
            finite_population_deviation: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub n: usize,
    pub seed: u64,
    /// Path-space `W₂` between the players' tuples and their copies.
    pub w2_pathspace: f64,
    /// `max_k W₂,ℝ×U` between the players' flow and the copies' flow.
    pub w2_nodeflow: f64,
    /// Largest mean gain over the candidate deviations, pooled over the
    /// sampled players.
    pub max_gap: f64,
    /// Standard error of that mean across the sampled players.
    pub gap_se: f64,
}

fn tuples(ts: &[ParticleTrajectory]) -> Result<EmpiricalMeasure<crate::transport::PathTuple>> {
    EmpiricalMeasure::new(ts.iter().map(|t| t.path_tuple()).collect())
}

/// Seed-replicated comparison of the `N`-player game under the equilibrium
/// policy with the mean-field limit.
///
/// Each seed draws a random size-`N` subsample of `mfe.pool`. The players
/// and `N` McKean–Vlasov copies (equilibrium policy against the frozen
/// equilibrium flow) both reuse the Brownian increments, boundary paths and
/// initial states of the subsampled trajectories, and the statistics compare
/// players with copies.
pub fn convergence_study(
    spec: &ScenarioSpec,
    mfe: &MfeSolution,
    opts: &StudyOptions,
) -> Result<Vec<StudyRow>> {
    if opts.n_list.is_empty() || opts.seeds == 0 || opts.players_per_seed == Some(0) {
        return Err(invalid("study needs population sizes, seeds and sampled players"));
    }
    let cap = spec.numerics.assignment_cap;
    let m = mfe.pool.len();
    if let Some(&n) = opts.n_list.iter().find(|&&n| n > cap) {
        return Err(Error::ResourceLimit {
            what: "population size (subsample the study)",
            requested: n,
            cap,
        });
    }
    if let Some(&n) = opts.n_list.iter().find(|&&n| n > m || n < 2) {
        return Err(invalid(format!("population size {n} must lie in 2..={m} (pool size)")));
    }
    let cg = spec.control_grid()?;
    let metric = PathTupleMetric { dt: spec.grid().dt() };

    let mut rows = Vec::new();
    for &n in &opts.n_list {
        let devs = deviation_set(spec, &mfe.flow, n, opts.constant_deviations, opts.finite_population_deviation)?;
        let pp = opts.players_per_seed.unwrap_or(n).min(n);
        let players: Vec<usize> = (0..pp).map(|p| p * n / pp).collect();
        for rep in 0..opts.seeds {
            let seed = derive_seed(opts.seed, rep as u64);
            let mut rng = NoiseStream::new(seed, 0, Purpose::Initial);
            let picks: Vec<&ParticleTrajectory> = sample(rng.rng(), m, n)
                .into_iter()
                .map(|i| &mfe.pool.trajectories()[i])
                .collect();
            let inputs: Vec<ParticleInputs> = picks.iter().map(|t| inputs_from_trajectory(t)).collect();
            let (baseline, gains) = deviation_gains(spec, &mfe.policy, &inputs, &players, &devs)?;
            let copies: Vec<ParticleTrajectory> = inputs
                .par_iter()
                .map(|inp| simulate_particle_with(spec, &mfe.policy, &mfe.flow, &cg, inp))
                .collect::<Result<_>>()?;
            let w2_pathspace = w2_assignment(&tuples(&baseline.trajectories)?, &tuples(&copies)?, &metric, cap)?;
            let copy_flow = {
                let xs: Vec<&Path> = copies.iter().map(|t| &t.x).collect();
                let cs: Vec<&ControlPath> = copies.iter().map(|t| t.strict_control().expect("strict")).collect();
                flow_from_paths(&xs, &cs)?
            };
            let w2_nodeflow = consistency_residual(&baseline.flow, &copy_flow, cap)?;
            let mut best = (f64::NEG_INFINITY, 0.0);
            for d in 0..devs.len() {
                let col: Vec<f64> = gains.iter().map(|g| g[d]).collect();
                let (mean, se) = mean_and_se(&col);
                if mean > best.0 {
                    best = (mean, se);
                }
            }
            rows.push(StudyRow {
                n,
                seed,
                w2_pathspace,
                w2_nodeflow,
                max_gap: best.0,
                gap_se: best.1,
            });
        }
    }
    Ok(rows)
}

/// Seed-mean of each statistic per population size, in `n_list` order.
pub fn study_means(rows: &[StudyRow]) -> Vec<(usize, StudyRow)> {
    let mut ns: Vec<usize> = Vec::new();
    for r in rows {
        if !ns.contains(&r.n) {
            ns.push(r.n);
        }
    }
    ns.into_iter()
        .map(|n| {
            let sel: Vec<&StudyRow> = rows.iter().filter(|r| r.n == n).collect();
            let avg = |f: fn(&StudyRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / sel.len() as f64;
            (
                n,
                StudyRow {
                    n,
                    seed: 0,
                    w2_pathspace: avg(|r| r.w2_pathspace),
                    w2_nodeflow: avg(|r| r.w2_nodeflow),
                    max_gap: avg(|r| r.max_gap),
                    gap_se: avg(|r| r.gap_se),
                },
            )
        })
        .collect()
}

/// Decreasing with at most one adjacent inversion, and last below half the first.
pub fn trend_holds(values: &[f64]) -> bool {
    if values.len() < 2 {
        return false;
    }
    let inversions = values.windows(2).filter(|w| w[1] >= w[0]).count();
    inversions <= 1 && values[values.len() - 1] < 0.5 * values[0]
}
