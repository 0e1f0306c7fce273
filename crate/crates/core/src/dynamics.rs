//! Reflected Euler–Maruyama particle engine against a frozen measure flow, and
//! the cost functional.
//!
//! Coefficients are evaluated at the reflected state `X_k` and the flow's node
//! statistics; the free path `Y` collects the increments and `X = Γ(A, Y)` is
//! built one node at a time with [`StepReflector`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::paths::{ControlGrid, ControlPath, Path, RelaxedControlPath, TimeGrid};
use crate::scenario::{sample_boundary, sample_initial, ScenarioSpec};
use crate::skorokhod::StepReflector;
use crate::transport::{
    flow_from_paths, relaxed_flow_from_paths, MeasureFlow, NodeStats, PathTuple, RelaxedFlow,
};

// ---------------------------------------------------------------------------
// noise

/// What a stream is used for; distinct purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Brownian = 0,
    Boundary = 1,
    Initial = 2,
}

/// Deterministic normal draws for one `(seed, particle, purpose)` triple.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, particle: u64, purpose: Purpose) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((particle << 8) | purpose as u64);
        Self { rng }
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// `K` Brownian increments of variance `dt`.
    pub fn increments(&mut self, steps: usize, dt: f64) -> Vec<f64> {
        let sq = dt.sqrt();
        (0..steps).map(|_| sq * self.standard_normal()).collect()
    }
}

/// The randomness a single particle consumes: `ΔW`, the boundary path and `η`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleInputs {
    pub dw: Vec<f64>,
    pub boundary: Path,
    pub init: f64,
    /// The truncated-normal initial draw was clamped to the boundary.
    pub clamped: bool,
}

/// Draws the inputs of particle `index` from the streams of `seed`.
pub fn draw_inputs(spec: &ScenarioSpec, grid: &TimeGrid, seed: u64, index: u64) -> ParticleInputs {
    let dw = NoiseStream::new(seed, index, Purpose::Brownian).increments(grid.steps(), grid.dt());
    let boundary = sample_boundary(spec, grid, &mut NoiseStream::new(seed, index, Purpose::Boundary));
    let (init, clamped) = sample_initial(
        spec,
        boundary.value(0),
        &mut NoiseStream::new(seed, index, Purpose::Initial),
    );
    ParticleInputs {
        dw,
        boundary,
        init,
        clamped,
    }
}

/// SplitMix64 step; derives independent seeds from one root.
pub fn derive_seed(root: u64, salt: u64) -> u64 {
    let mut z = root ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// policies and flows

/// Markovian strict feedback `ψ(t_k, x, a)` returning a control-grid index.
pub trait StrictPolicy: Sync {
    fn control_index(&self, k: usize, x: f64, a: f64) -> usize;
}

/// Markovian relaxed feedback returning a weight vector over the control grid.
pub trait RelaxedPolicy: Sync {
    fn control_weights(&self, k: usize, x: f64, a: f64) -> Vec<f64>;
}

/// The same control index at every step and state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstantControl(pub usize);

impl StrictPolicy for ConstantControl {
    fn control_index(&self, _k: usize, _x: f64, _a: f64) -> usize {
        self.0
    }
}

/// The same weight vector at every step and state.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantMixture(pub Vec<f64>);

impl RelaxedPolicy for ConstantMixture {
    fn control_weights(&self, _k: usize, _x: f64, _a: f64) -> Vec<f64> {
        self.0.clone()
    }
}

impl<F: Fn(usize, f64, f64) -> usize + Sync> StrictPolicy for F {
    fn control_index(&self, k: usize, x: f64, a: f64) -> usize {
        self(k, x, a)
    }
}

/// Anything that supplies per-node statistics of a measure flow.
pub trait FlowView: Sync {
    fn grid(&self) -> &TimeGrid;
    fn node_stats(&self) -> &[NodeStats];
}

impl FlowView for MeasureFlow {
    fn grid(&self) -> &TimeGrid {
        MeasureFlow::grid(self)
    }
    fn node_stats(&self) -> &[NodeStats] {
        self.all_stats()
    }
}

impl FlowView for RelaxedFlow {
    fn grid(&self) -> &TimeGrid {
        RelaxedFlow::grid(self)
    }
    fn node_stats(&self) -> &[NodeStats] {
        self.all_stats()
    }
}

/// Per-node statistics detached from any atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsFlow {
    pub grid: TimeGrid,
    pub stats: Vec<NodeStats>,
}

impl FlowView for StatsFlow {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    fn node_stats(&self) -> &[NodeStats] {
        &self.stats
    }
}

// ---------------------------------------------------------------------------
// trajectories

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryControl {
    Strict(ControlPath),
    Relaxed(RelaxedControlPath),
}

/// One simulated particle.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleTrajectory {
    pub y: Path,
    pub x: Path,
    pub r: Path,
    pub control: TrajectoryControl,
    pub w: Path,
    pub a: Path,
}

impl ParticleTrajectory {
    pub fn grid(&self) -> &TimeGrid {
        self.x.grid()
    }

    pub fn strict_control(&self) -> Option<&ControlPath> {
        match &self.control {
            TrajectoryControl::Strict(c) => Some(c),
            TrajectoryControl::Relaxed(_) => None,
        }
    }

    /// Per-step control values; relaxed controls report their mean.
    pub fn control_values(&self) -> Vec<f64> {
        match &self.control {
            TrajectoryControl::Strict(c) => c.values().to_vec(),
            TrajectoryControl::Relaxed(c) => (0..c.weights().len()).map(|k| c.mean_at(k)).collect(),
        }
    }

    /// The canonical tuple `(Y, control, W, A)`.
    pub fn path_tuple(&self) -> PathTuple {
        PathTuple {
            y: self.y.values().to_vec(),
            control: self.control_values(),
            w: self.w.values().to_vec(),
            a: self.a.values().to_vec(),
        }
    }

    /// `X >= A − 1e−12`, `R_0 = 0`, `R` nondecreasing and `X = Y + R`.
    pub fn check_feasible(&self) -> std::result::Result<(), String> {
        let (x, y, r, a) = (self.x.values(), self.y.values(), self.r.values(), self.a.values());
        if r[0] != 0.0 {
            return Err("R_0 != 0".into());
        }
        for k in 0..x.len() {
            if x[k] < a[k] - crate::skorokhod::COMPLEMENTARITY_TOL {
                return Err(format!("X below A at node {k}"));
            }
            if x[k] != y[k] + r[k] {
                return Err(format!("X != Y + R at node {k}"));
            }
            if k > 0 && r[k] < r[k - 1] {
                return Err(format!("R decreases at node {k}"));
            }
        }
        Ok(())
    }
}

pub(crate) fn brownian_path(grid: TimeGrid, dw: &[f64]) -> Path {
    let mut w = Vec::with_capacity(dw.len() + 1);
    let mut acc = 0.0;
    w.push(0.0);
    for d in dw {
        acc += d;
        w.push(acc);
    }
    Path::from_parts_unchecked(grid, w)
}

pub(crate) fn check_inputs(grid: &TimeGrid, flow: &dyn FlowView, inputs: &ParticleInputs) -> Result<()> {
    grid.ensure_same(flow.grid())?;
    grid.ensure_same(inputs.boundary.grid())?;
    if inputs.dw.len() != grid.steps() {
        return Err(invalid("increment count differs from the grid's step count"));
    }
    if inputs.init < inputs.boundary.value(0) {
        return Err(crate::error::Error::DomainViolation(format!(
            "initial state {} below A_0 = {}",
            inputs.init,
            inputs.boundary.value(0)
        )));
    }
    Ok(())
}

/// One reflected Euler step: returns `(Y_{k+1}, X_{k+1}, R_{k+1})`.
#[inline]
pub(crate) fn euler_step(
    y: f64,
    drift: f64,
    variance: f64,
    dt: f64,
    dw: f64,
    a_next: f64,
    reflector: &mut StepReflector,
) -> (f64, f64, f64) {
    let y_next = y + drift * dt + variance.sqrt() * dw;
    let (x_next, r_next) = reflector.push(y_next, a_next);
    (y_next, x_next, r_next)
}

/// Strict-control particle against explicit inputs.
pub fn simulate_particle_with<P: StrictPolicy + ?Sized>(
    spec: &ScenarioSpec,
    policy: &P,
    flow: &dyn FlowView,
    controls: &ControlGrid,
    inputs: &ParticleInputs,
) -> Result<ParticleTrajectory> {
    let grid = *flow.grid();
    check_inputs(&grid, flow, inputs)?;
    let stats = flow.node_stats();
    let a = inputs.boundary.values();
    let n = grid.num_nodes();
    let dt = grid.dt();
    let (mut ys, mut xs, mut rs) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut idx = Vec::with_capacity(grid.steps());
    let mut reflector = StepReflector::default();
    let (mut x, r0) = reflector.push(inputs.init, a[0]);
    let mut y = inputs.init;
    ys.push(y);
    xs.push(x);
    rs.push(r0);
    for k in 0..grid.steps() {
        let j = policy.control_index(k, x, a[k]);
        if j >= controls.len() {
            return Err(invalid(format!("policy returned control index {j} out of range")));
        }
        let u = controls.point(j);
        let s = &stats[k];
        let (yn, xn, rn) = euler_step(
            y,
            spec.drift(x, s, u),
            spec.variance(x, s, u),
            dt,
            inputs.dw[k],
            a[k + 1],
            &mut reflector,
        );
        y = yn;
        x = xn;
        idx.push(j);
        ys.push(yn);
        xs.push(xn);
        rs.push(rn);
    }
    Ok(ParticleTrajectory {
        y: Path::from_parts_unchecked(grid, ys),
        x: Path::from_parts_unchecked(grid, xs),
        r: Path::from_parts_unchecked(grid, rs),
        control: TrajectoryControl::Strict(ControlPath::new(grid, controls, idx)?),
        w: brownian_path(grid, &inputs.dw),
        a: inputs.boundary.clone(),
    })
}

/// Relaxed-control particle: drift `Σ λ_j b(u_j)`, variance `Σ λ_j σ²(u_j)`.
pub fn simulate_relaxed_particle_with<P: RelaxedPolicy + ?Sized>(
    spec: &ScenarioSpec,
    policy: &P,
    flow: &dyn FlowView,
    controls: &ControlGrid,
    inputs: &ParticleInputs,
) -> Result<ParticleTrajectory> {
    let grid = *flow.grid();
    check_inputs(&grid, flow, inputs)?;
    let stats = flow.node_stats();
    let a = inputs.boundary.values();
    let n = grid.num_nodes();
    let dt = grid.dt();
    let (mut ys, mut xs, mut rs) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut rows = Vec::with_capacity(grid.steps());
    let mut reflector = StepReflector::default();
    let (mut x, r0) = reflector.push(inputs.init, a[0]);
    let mut y = inputs.init;
    ys.push(y);
    xs.push(x);
    rs.push(r0);
    for k in 0..grid.steps() {
        let w = policy.control_weights(k, x, a[k]);
        crate::paths::check_weights(&w, controls.len())?;
        let s = &stats[k];
        let (mut drift, mut var) = (0.0, 0.0);
        for (j, &lj) in w.iter().enumerate() {
            if lj > 0.0 {
                let u = controls.point(j);
                drift += lj * spec.drift(x, s, u);
                var += lj * spec.variance(x, s, u);
            }
        }
        let (yn, xn, rn) = euler_step(y, drift, var, dt, inputs.dw[k], a[k + 1], &mut reflector);
        y = yn;
        x = xn;
        rows.push(w);
        ys.push(yn);
        xs.push(xn);
        rs.push(rn);
    }
    Ok(ParticleTrajectory {
        y: Path::from_parts_unchecked(grid, ys),
        x: Path::from_parts_unchecked(grid, xs),
        r: Path::from_parts_unchecked(grid, rs),
        control: TrajectoryControl::Relaxed(RelaxedControlPath::new(grid, controls, rows)?),
        w: brownian_path(grid, &inputs.dw),
        a: inputs.boundary.clone(),
    })
}

/// Particle `index` of the pool seeded by `seed`.
pub fn simulate_particle<P: StrictPolicy + ?Sized>(
    spec: &ScenarioSpec,
    policy: &P,
    flow: &dyn FlowView,
    seed: u64,
    index: u64,
) -> Result<ParticleTrajectory> {
    let controls = spec.control_grid()?;
    let inputs = draw_inputs(spec, flow.grid(), seed, index);
    simulate_particle_with(spec, policy, flow, &controls, &inputs)
}

pub fn simulate_relaxed_particle<P: RelaxedPolicy + ?Sized>(
    spec: &ScenarioSpec,
    policy: &P,
    flow: &dyn FlowView,
    seed: u64,
    index: u64,
) -> Result<ParticleTrajectory> {
    let controls = spec.control_grid()?;
    let inputs = draw_inputs(spec, flow.grid(), seed, index);
    simulate_relaxed_particle_with(spec, policy, flow, &controls, &inputs)
}

// ---------------------------------------------------------------------------
// pools

/// Equally weighted sample of trajectories on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLawEmpirical {
    grid: TimeGrid,
    controls: ControlGrid,
    trajectories: Vec<ParticleTrajectory>,
    /// Initial draws clamped to the boundary after exhausting the retries.
    pub clamped: usize,
}

impl JointLawEmpirical {
    pub fn new(controls: ControlGrid, trajectories: Vec<ParticleTrajectory>) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| invalid("pool needs at least one trajectory"))?;
        let grid = *first.grid();
        for t in &trajectories {
            grid.ensure_same(t.grid())?;
        }
        Ok(Self {
            grid,
            controls,
            trajectories,
            clamped: 0,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn controls(&self) -> &ControlGrid {
        &self.controls
    }

    pub fn trajectories(&self) -> &[ParticleTrajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Node measures `{(X_k, u_k)}`; relaxed members contribute their mean control.
    pub fn strict_flow(&self) -> Result<MeasureFlow> {
        let strict: Option<Vec<&ControlPath>> =
            self.trajectories.iter().map(|t| t.strict_control()).collect();
        let xs: Vec<&Path> = self.trajectories.iter().map(|t| &t.x).collect();
        match strict {
            Some(c) => flow_from_paths(&xs, &c),
            None => Err(invalid("pool holds relaxed controls; use relaxed_flow")),
        }
    }

    /// Node measures `{(X_k, λ_k)}`; strict members enter as Dirac weights.
    pub fn relaxed_flow(&self) -> Result<RelaxedFlow> {
        let relaxed: Vec<RelaxedControlPath> = self
            .trajectories
            .iter()
            .map(|t| match &t.control {
                TrajectoryControl::Strict(c) => RelaxedControlPath::from_strict(c, &self.controls),
                TrajectoryControl::Relaxed(c) => c.clone(),
            })
            .collect();
        let xs: Vec<&Path> = self.trajectories.iter().map(|t| &t.x).collect();
        let cs: Vec<&RelaxedControlPath> = relaxed.iter().collect();
        relaxed_flow_from_paths(&xs, &cs, &self.controls)
    }

    /// Keeps `self[..n_self]` followed by `other[..n_other]`.
    pub fn mixed(&self, n_self: usize, other: &JointLawEmpirical, n_other: usize) -> Result<Self> {
        if n_self > self.len() || n_other > other.len() || n_self + n_other == 0 {
            return Err(invalid("mixing counts exceed pool sizes"));
        }
        let mut t = self.trajectories[..n_self].to_vec();
        t.extend_from_slice(&other.trajectories[..n_other]);
        JointLawEmpirical::new(self.controls.clone(), t)
    }
}

/// `M` particles with streams `(seed, 0..M)`, simulated in parallel and
/// merged in index order.
pub fn simulate_pool<P: StrictPolicy + ?Sized>(
    spec: &ScenarioSpec,
    policy: &P,
    flow: &dyn FlowView,
    m: usize,
    seed: u64,
) -> Result<JointLawEmpirical> {
    if m == 0 {
        return Err(invalid("pool size must be at least 1"));
    }
    let controls = spec.control_grid()?;
    let grid = *flow.grid();
    let results: Vec<(ParticleTrajectory, bool)> = (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let inputs = draw_inputs(spec, &grid, seed, i);
            simulate_particle_with(spec, policy, flow, &controls, &inputs).map(|t| (t, inputs.clamped))
        })
        .collect::<Result<_>>()?;
    let clamped = results.iter().filter(|r| r.1).count();
    let mut pool = JointLawEmpirical::new(controls, results.into_iter().map(|r| r.0).collect())?;
    pool.clamped = clamped;
    Ok(pool)
}

pub fn simulate_relaxed_pool<P: RelaxedPolicy + ?Sized>(
    spec: &ScenarioSpec,
    policy: &P,
    flow: &dyn FlowView,
    m: usize,
    seed: u64,
) -> Result<JointLawEmpirical> {
    if m == 0 {
        return Err(invalid("pool size must be at least 1"));
    }
    let controls = spec.control_grid()?;
    let grid = *flow.grid();
    let results: Vec<ParticleTrajectory> = (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let inputs = draw_inputs(spec, &grid, seed, i);
            simulate_relaxed_particle_with(spec, policy, flow, &controls, &inputs)
        })
        .collect::<Result<_>>()?;
    JointLawEmpirical::new(controls, results)
}

/// Flow in which every initial draw is frozen in time with the control
/// closest to zero; the starting point of the fixed-point iteration.
pub fn static_initial_flow(spec: &ScenarioSpec, m: usize, seed: u64) -> Result<MeasureFlow> {
    let grid = spec.grid();
    let controls = spec.control_grid()?;
    let j0 = controls.nearest_index(0.0);
    let xs: Vec<Path> = (0..m as u64)
        .map(|i| {
            let inp = draw_inputs(spec, &grid, seed, i);
            Path::from_parts_unchecked(grid, vec![inp.init; grid.num_nodes()])
        })
        .collect();
    let c = ControlPath::new(grid, &controls, vec![j0; grid.steps()])?;
    let xr: Vec<&Path> = xs.iter().collect();
    let cr: Vec<&ControlPath> = vec![&c; m];
    flow_from_paths(&xr, &cr)
}

// ---------------------------------------------------------------------------
// costs and diagnostics

/// `Σ f(t_k, X_k, ρ_k, u_k)Δt + Σ c(t_k, X_{k+1})(R_{k+1} − R_k) + g(X_K, μ_K)`.
///
/// The reflection cost is charged at the post-step state, which is where the
/// pushing happens (`ΔR > 0` only when `X_{k+1} = A_{k+1}`). Relaxed controls
/// average the running cost over their weights.
pub fn evaluate_cost(
    spec: &ScenarioSpec,
    traj: &ParticleTrajectory,
    flow: &dyn FlowView,
) -> Result<f64> {
    let grid = *traj.grid();
    grid.ensure_same(flow.grid())?;
    let stats = flow.node_stats();
    let x = traj.x.values();
    let r = traj.r.values();
    let dt = grid.dt();
    let mut running = 0.0;
    match &traj.control {
        TrajectoryControl::Strict(c) => {
            for (k, &u) in c.values().iter().enumerate() {
                running += spec.running_cost(x[k], &stats[k], u) * dt;
            }
        }
        TrajectoryControl::Relaxed(c) => {
            for (k, row) in c.weights().iter().enumerate() {
                let mut f = 0.0;
                for (j, &lj) in row.iter().enumerate() {
                    if lj > 0.0 {
                        f += lj * spec.running_cost(x[k], &stats[k], c.points()[j]);
                    }
                }
                running += f * dt;
            }
        }
    }
    let mut reflection = 0.0;
    for k in 0..grid.steps() {
        let dr = r[k + 1] - r[k];
        if dr != 0.0 {
            reflection += spec.reflection_cost(x[k + 1]) * dr;
        }
    }
    let terminal = spec.terminal(x[grid.steps()], stats[grid.steps()].mean_x);
    Ok(running + reflection + terminal)
}

/// Pool average of `(max_k |Y_k|)^p`.
pub fn moment_diagnostic(pool: &JointLawEmpirical, p: f64) -> Result<f64> {
    if !(p > 2.0) {
        return Err(invalid(format!("moment order must exceed 2, got {p}")));
    }
    let vals: Vec<f64> = pool
        .trajectories()
        .iter()
        .map(|t| t.y.sup_abs().powf(p))
        .collect();
    Ok(crate::transport::order_free_sum(vals) / pool.len() as f64)
}

/// Mean and standard error of a sample.
pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
