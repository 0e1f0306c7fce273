//! Empirical Wasserstein-2 distances and the measure maps between strict and
//! relaxed laws.
//!
//! All measures are equally weighted; `W₂` between two of them with the same
//! atom count is an assignment problem solved exactly by [`solve_assignment`].

pub mod assignment;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::paths::{
    check_weights, control_l2_values, sup_distance_values, ControlGrid, ControlPath, Path,
    RelaxedControlPath, TimeGrid,
};
pub use assignment::{solve_assignment, Assignment};

/// Largest exact assignment attempted unless the caller raises the cap.
pub const DEFAULT_ASSIGNMENT_CAP: usize = 1024;

/// Largest common denominator tried when expanding weighted atoms to equal weights.
pub const MAX_WEIGHT_RESOLUTION: usize = 64;

const RATIONAL_TOL: f64 = 1e-9;

/// Sum that is independent of the order of its inputs, bit for bit.
pub(crate) fn order_free_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

// ---------------------------------------------------------------------------
// atoms

/// A point of a ground space that can be checked for finiteness.
pub trait Atom {
    fn validate(&self) -> Result<()>;
}

impl Atom for f64 {
    fn validate(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(invalid("non-finite atom"))
        }
    }
}

/// Point of `ℝ × U`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateControl {
    pub x: f64,
    pub u: f64,
}

impl Atom for StateControl {
    fn validate(&self) -> Result<()> {
        if self.x.is_finite() && self.u.is_finite() {
            Ok(())
        } else {
            Err(invalid("non-finite (x, u) atom"))
        }
    }
}

/// Point of `ℝ × 𝒫(U)`: a state and a weight vector over the control grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateWeights {
    pub x: f64,
    pub weights: Vec<f64>,
}

impl Atom for StateWeights {
    fn validate(&self) -> Result<()> {
        if !self.x.is_finite() {
            return Err(invalid("non-finite state in (x, λ) atom"));
        }
        check_weights(&self.weights, self.weights.len())
    }
}

/// Element of the canonical path space: `(Y, control, W, A)` on one grid.
///
/// `control` holds the `K` per-step control values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathTuple {
    pub y: Vec<f64>,
    pub control: Vec<f64>,
    pub w: Vec<f64>,
    pub a: Vec<f64>,
}

impl Atom for PathTuple {
    fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if n < 2 || self.w.len() != n || self.a.len() != n || self.control.len() + 1 != n {
            return Err(invalid("path tuple components have inconsistent lengths"));
        }
        let all = self.y.iter().chain(&self.control).chain(&self.w).chain(&self.a);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite value in path tuple"));
        }
        Ok(())
    }
}

/// Element of `𝒞 × ℬ`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrictPathPair {
    pub x: Path,
    pub control: ControlPath,
}

impl Atom for StrictPathPair {
    fn validate(&self) -> Result<()> {
        self.x.grid().ensure_same(self.control.grid())
    }
}

/// Element of `𝒞 × 𝒬`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedPathPair {
    pub x: Path,
    pub control: RelaxedControlPath,
}

impl Atom for RelaxedPathPair {
    fn validate(&self) -> Result<()> {
        self.x.grid().ensure_same(self.control.grid())
    }
}

// ---------------------------------------------------------------------------
// measures

/// Equally weighted empirical measure.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure<P> {
    atoms: Vec<P>,
}

impl<P: Atom> EmpiricalMeasure<P> {
    pub fn new(atoms: Vec<P>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(invalid("empirical measure needs at least one atom"));
        }
        for a in &atoms {
            a.validate()?;
        }
        Ok(Self { atoms })
    }
}

impl<P> EmpiricalMeasure<P> {
    pub(crate) fn from_atoms_unchecked(atoms: Vec<P>) -> Self {
        Self { atoms }
    }

    pub fn atoms(&self) -> &[P] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// Empirical measure with rational weights, produced by flattening.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMeasure<P> {
    atoms: Vec<P>,
    weights: Vec<f64>,
}

impl<P: Clone> WeightedMeasure<P> {
    pub fn atoms(&self) -> &[P] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Equal-weight copy with `D` atoms, where `D <= max_resolution` is the
    /// smallest resolution making every weight a multiple of `1/D`.
    pub fn to_equal_weights(&self, max_resolution: usize) -> Result<EmpiricalMeasure<P>> {
        let d = common_resolution(&[&self.weights], max_resolution)?;
        self.expand(d)
    }

    fn expand(&self, d: usize) -> Result<EmpiricalMeasure<P>> {
        let mut out = Vec::new();
        for (a, &w) in self.atoms.iter().zip(&self.weights) {
            let copies = (w * d as f64).round() as usize;
            out.extend(std::iter::repeat_n(a.clone(), copies));
        }
        if out.is_empty() {
            return Err(invalid("weighted measure has no mass"));
        }
        Ok(EmpiricalMeasure { atoms: out })
    }
}

/// Smallest `D <= max` such that every weight times `D` is an integer.
fn common_resolution(groups: &[&[f64]], max: usize) -> Result<usize> {
    'outer: for d in 1..=max {
        for g in groups {
            for &w in g.iter() {
                let s = w * d as f64;
                if (s - s.round()).abs() > RATIONAL_TOL {
                    continue 'outer;
                }
            }
        }
        return Ok(d);
    }
    Err(invalid(format!(
        "weights are not multiples of 1/D for any D <= {max}"
    )))
}

// ---------------------------------------------------------------------------
// node statistics and flows

/// First and second moments of a node measure on `ℝ × U`; the shipped
/// coefficient families read the measure only through these.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NodeStats {
    pub mean_x: f64,
    pub mean_u: f64,
    pub m2_x: f64,
    pub m2_u: f64,
}

impl NodeStats {
    /// Moments from per-atom `(x, E[u], E[u²])`; invariant under atom permutations.
    pub fn from_moments(x: &[f64], eu: &[f64], eu2: &[f64]) -> Self {
        let n = x.len() as f64;
        NodeStats {
            mean_x: order_free_sum(x.to_vec()) / n,
            mean_u: order_free_sum(eu.to_vec()) / n,
            m2_x: order_free_sum(x.iter().map(|v| v * v).collect()) / n,
            m2_u: order_free_sum(eu2.to_vec()) / n,
        }
    }

    pub fn of_strict(atoms: &[StateControl]) -> Self {
        let x: Vec<f64> = atoms.iter().map(|a| a.x).collect();
        let u: Vec<f64> = atoms.iter().map(|a| a.u).collect();
        let u2: Vec<f64> = u.iter().map(|v| v * v).collect();
        Self::from_moments(&x, &u, &u2)
    }

    pub fn of_relaxed(atoms: &[StateWeights], points: &[f64]) -> Self {
        let x: Vec<f64> = atoms.iter().map(|a| a.x).collect();
        let eu: Vec<f64> = atoms
            .iter()
            .map(|a| a.weights.iter().zip(points).map(|(w, u)| w * u).sum())
            .collect();
        let eu2: Vec<f64> = atoms
            .iter()
            .map(|a| a.weights.iter().zip(points).map(|(w, u)| w * u * u).sum())
            .collect();
        Self::from_moments(&x, &eu, &eu2)
    }
}

/// Strict measure flow: one `ℝ × U` empirical measure per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFlow {
    grid: TimeGrid,
    nodes: Vec<EmpiricalMeasure<StateControl>>,
    stats: Vec<NodeStats>,
}

impl MeasureFlow {
    pub fn new(grid: TimeGrid, nodes: Vec<EmpiricalMeasure<StateControl>>) -> Result<Self> {
        if nodes.len() != grid.num_nodes() {
            return Err(invalid(format!(
                "flow has {} node measures, grid has {} nodes",
                nodes.len(),
                grid.num_nodes()
            )));
        }
        let n = nodes[0].len();
        if nodes.iter().any(|m| m.len() != n) {
            return Err(invalid("flow node measures have different atom counts"));
        }
        let stats = nodes.iter().map(|m| NodeStats::of_strict(m.atoms())).collect();
        Ok(Self { grid, nodes, stats })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn node(&self, k: usize) -> &EmpiricalMeasure<StateControl> {
        &self.nodes[k]
    }

    pub fn nodes(&self) -> &[EmpiricalMeasure<StateControl>] {
        &self.nodes
    }

    pub fn stats(&self, k: usize) -> &NodeStats {
        &self.stats[k]
    }

    pub fn all_stats(&self) -> &[NodeStats] {
        &self.stats
    }

    pub fn atom_count(&self) -> usize {
        self.nodes[0].len()
    }

    /// State values at node `k`.
    pub fn states(&self, k: usize) -> Vec<f64> {
        self.nodes[k].atoms().iter().map(|a| a.x).collect()
    }
}

/// Relaxed measure flow: one `ℝ × 𝒫(U)` empirical measure per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedFlow {
    grid: TimeGrid,
    controls: ControlGrid,
    nodes: Vec<EmpiricalMeasure<StateWeights>>,
    stats: Vec<NodeStats>,
}

impl RelaxedFlow {
    pub fn new(
        grid: TimeGrid,
        controls: ControlGrid,
        nodes: Vec<EmpiricalMeasure<StateWeights>>,
    ) -> Result<Self> {
        if nodes.len() != grid.num_nodes() {
            return Err(invalid("relaxed flow needs one measure per grid node"));
        }
        let n = nodes[0].len();
        if nodes.iter().any(|m| m.len() != n) {
            return Err(invalid("flow node measures have different atom counts"));
        }
        for m in &nodes {
            if m.atoms().iter().any(|a| a.weights.len() != controls.len()) {
                return Err(invalid("weight vector length differs from control grid"));
            }
        }
        let stats = nodes
            .iter()
            .map(|m| NodeStats::of_relaxed(m.atoms(), controls.points()))
            .collect();
        Ok(Self {
            grid,
            controls,
            nodes,
            stats,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn controls(&self) -> &ControlGrid {
        &self.controls
    }

    pub fn node(&self, k: usize) -> &EmpiricalMeasure<StateWeights> {
        &self.nodes[k]
    }

    pub fn stats(&self, k: usize) -> &NodeStats {
        &self.stats[k]
    }

    pub fn all_stats(&self) -> &[NodeStats] {
        &self.stats
    }
}

// ---------------------------------------------------------------------------
// ground metrics

/// A registered ground distance on the atom type `P`.
pub trait GroundMetric<P>: Sync {
    fn distance(&self, a: &P, b: &P) -> Result<f64>;
}

/// Absolute difference on `ℝ` and the Euclidean metric on `ℝ × U`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Euclidean;

impl GroundMetric<f64> for Euclidean {
    fn distance(&self, a: &f64, b: &f64) -> Result<f64> {
        Ok((a - b).abs())
    }
}

impl GroundMetric<StateControl> for Euclidean {
    fn distance(&self, a: &StateControl, b: &StateControl) -> Result<f64> {
        Ok((a.x - b.x).hypot(a.u - b.u))
    }
}

/// `|x₁ − x₂| + W₂,U(λ₁, λ₂)` on `ℝ × 𝒫(U)` with weights over fixed grid points.
#[derive(Debug, Clone)]
pub struct StateMeasureMetric {
    points: Vec<f64>,
}

impl StateMeasureMetric {
    pub fn new(controls: &ControlGrid) -> Self {
        Self {
            points: controls.points().to_vec(),
        }
    }
}

impl GroundMetric<StateWeights> for StateMeasureMetric {
    fn distance(&self, a: &StateWeights, b: &StateWeights) -> Result<f64> {
        Ok((a.x - b.x).abs() + w2_weights_1d(&self.points, &a.weights, &b.weights)?)
    }
}

/// `d_Ω`: sup-norm on `Y`, `L²` on strict controls, sup-norm on `W` and `A`.
#[derive(Debug, Clone, Copy)]
pub struct PathTupleMetric {
    pub dt: f64,
}

impl GroundMetric<PathTuple> for PathTupleMetric {
    fn distance(&self, a: &PathTuple, b: &PathTuple) -> Result<f64> {
        if a.y.len() != b.y.len() || a.control.len() != b.control.len() {
            return Err(invalid("path tuples live on different grids"));
        }
        Ok(sup_distance_values(&a.y, &b.y)
            + control_l2_values(&a.control, &b.control, self.dt)
            + sup_distance_values(&a.w, &b.w)
            + sup_distance_values(&a.a, &b.a))
    }
}

/// Product metric on `𝒞 × ℬ`.
#[derive(Debug, Clone, Copy, Default)]
pub struct StrictPathMetric;

impl GroundMetric<StrictPathPair> for StrictPathMetric {
    fn distance(&self, a: &StrictPathPair, b: &StrictPathPair) -> Result<f64> {
        crate::paths::path_product_distance(&a.x, &a.control, &b.x, &b.control)
    }
}

/// How the occupation measure `q(dt, du) = Λ_t(du) dt` is scaled before transport.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccupationNormalization {
    /// Divide by `T`, comparing probability measures on `[0,T] × U`.
    Probability,
    /// Keep total mass `T`.
    Mass,
}

/// Product metric on `𝒞 × 𝒬`: sup-norm plus `d_Q`.
#[derive(Debug, Clone, Copy)]
pub struct RelaxedPathMetric {
    pub normalization: OccupationNormalization,
}

impl GroundMetric<RelaxedPathPair> for RelaxedPathMetric {
    fn distance(&self, a: &RelaxedPathPair, b: &RelaxedPathPair) -> Result<f64> {
        a.x.grid().ensure_same(b.x.grid())?;
        Ok(sup_distance_values(a.x.values(), b.x.values())
            + relaxed_control_distance(&a.control, &b.control, self.normalization)?)
    }
}

// ---------------------------------------------------------------------------
// distances

fn same_size<P>(mu: &EmpiricalMeasure<P>, nu: &EmpiricalMeasure<P>) -> Result<usize> {
    if mu.len() != nu.len() {
        return Err(invalid(format!(
            "atom counts differ: {} vs {}",
            mu.len(),
            nu.len()
        )));
    }
    Ok(mu.len())
}

/// `W₂` on `ℝ` by sorting both atom lists.
pub fn w2_1d(mu: &EmpiricalMeasure<f64>, nu: &EmpiricalMeasure<f64>) -> Result<f64> {
    same_size(mu, nu)?;
    Ok(w2_sorted(mu.atoms().to_vec(), nu.atoms().to_vec()))
}

pub(crate) fn w2_sorted(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let n = a.len() as f64;
    let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    (s / n).sqrt()
}

/// `W₂` between two probability vectors on the same one-dimensional support,
/// by the monotone (quantile) coupling.
pub fn w2_weights_1d(points: &[f64], p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != points.len() || q.len() != points.len() {
        return Err(invalid("weight vectors do not match the support"));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| points[i].total_cmp(&points[j]));
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (p[order[0]], q[order[0]]);
    let mut cost = 0.0;
    let n = order.len();
    while i < n && j < n {
        let m = ra.min(rb);
        let d = points[order[i]] - points[order[j]];
        cost += m * d * d;
        ra -= m;
        rb -= m;
        if ra <= 0.0 {
            i += 1;
            if i < n {
                ra = p[order[i]];
            }
        }
        if rb <= 0.0 {
            j += 1;
            if j < n {
                rb = q[order[j]];
            }
        }
    }
    Ok(cost.max(0.0).sqrt())
}

/// Squared-distance cost matrix between the atoms of `mu` and `nu`, built in parallel over rows.
pub fn cost_matrix<P: Sync, M: GroundMetric<P>>(mu: &[P], nu: &[P], metric: &M) -> Result<Vec<f64>> {
    let rows: Vec<Vec<f64>> = mu
        .par_iter()
        .map(|a| {
            nu.iter()
                .map(|b| metric.distance(a, b).map(|d| d * d))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(rows.concat())
}

/// Exact `W₂` between equal-size empirical measures under `metric`.
pub fn w2_assignment<P: Sync, M: GroundMetric<P>>(
    mu: &EmpiricalMeasure<P>,
    nu: &EmpiricalMeasure<P>,
    metric: &M,
    cap: usize,
) -> Result<f64> {
    let n = same_size(mu, nu)?;
    if n > cap {
        return Err(Error::ResourceLimit {
            what: "assignment size",
            requested: n,
            cap,
        });
    }
    let c = cost_matrix(mu.atoms(), nu.atoms(), metric)?;
    let a = solve_assignment(&c, n)?;
    Ok((a.cost.max(0.0) / n as f64).sqrt())
}

/// Exact `W₂` between rational-weight measures, both expanded to their
/// common resolution `D <= max_resolution`.
pub fn w2_weighted<P: Clone + Sync, M: GroundMetric<P>>(
    mu: &WeightedMeasure<P>,
    nu: &WeightedMeasure<P>,
    metric: &M,
    max_resolution: usize,
    cap: usize,
) -> Result<f64> {
    let d = common_resolution(&[&mu.weights, &nu.weights], max_resolution)?;
    w2_assignment(&mu.expand(d)?, &nu.expand(d)?, metric, cap)
}

/// `d_Q` between two relaxed controls: `W₂` of their occupation measures on
/// `[0,T] × U` with ground metric `|t₁ − t₂| + |u₁ − u₂|`.
///
/// Step `k` contributes mass `λ_kj · Δt` at `(t_k + Δt/2, u_j)`. Weights must be
/// multiples of `1/D` for some `D <= MAX_WEIGHT_RESOLUTION`.
pub fn relaxed_control_distance(
    a: &RelaxedControlPath,
    b: &RelaxedControlPath,
    normalization: OccupationNormalization,
) -> Result<f64> {
    a.grid().ensure_same(b.grid())?;
    if a.points() != b.points() {
        return Err(invalid("relaxed controls use different control grids"));
    }
    let grid = *a.grid();
    let rows: Vec<&[f64]> = a
        .weights()
        .iter()
        .chain(b.weights())
        .map(|r| r.as_slice())
        .collect();
    let d = common_resolution(&rows, MAX_WEIGHT_RESOLUTION)?;
    let support = |p: &RelaxedControlPath| -> Vec<(f64, f64)> {
        let dt = grid.dt();
        let mut out = Vec::new();
        for (k, row) in p.weights().iter().enumerate() {
            let tau = grid.node(k) + 0.5 * dt;
            for (j, &w) in row.iter().enumerate() {
                let copies = (w * d as f64).round() as usize;
                out.extend(std::iter::repeat_n((tau, p.points()[j]), copies));
            }
        }
        out
    };
    let sa = support(a);
    let sb = support(b);
    let n = sa.len();
    if n != sb.len() {
        return Err(invalid("relaxed control rows do not have unit mass"));
    }
    let mut c = Vec::with_capacity(n * n);
    for p in &sa {
        for q in &sb {
            let dist = (p.0 - q.0).abs() + (p.1 - q.1).abs();
            c.push(dist * dist);
        }
    }
    let cost = solve_assignment(&c, n)?.cost.max(0.0) / n as f64;
    let w = cost.sqrt();
    Ok(match normalization {
        OccupationNormalization::Probability => w,
        OccupationNormalization::Mass => w * grid.horizon().sqrt(),
    })
}

// ---------------------------------------------------------------------------
// measure maps

/// The flattening map `𝒫`: `(x, λ)` becomes the weighted atoms `(x, u_j)` with
/// weight `λ_j / N`; zero weights are dropped.
pub fn flatten_relaxed(
    xi: &EmpiricalMeasure<StateWeights>,
    cg: &ControlGrid,
) -> Result<WeightedMeasure<StateControl>> {
    let n = xi.len() as f64;
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    for a in xi.atoms() {
        if a.weights.len() != cg.len() {
            return Err(invalid("weight vector length differs from control grid"));
        }
        check_weights(&a.weights, cg.len())?;
        for (j, &w) in a.weights.iter().enumerate() {
            if w > 0.0 {
                atoms.push(StateControl {
                    x: a.x,
                    u: cg.point(j),
                });
                weights.push(w / n);
            }
        }
    }
    Ok(WeightedMeasure { atoms, weights })
}

/// The embedding `ℛ`: every strict control becomes its Dirac relaxed control.
pub fn embed_strict(
    x_paths: &[Path],
    a_paths: &[ControlPath],
    cg: &ControlGrid,
) -> Result<EmpiricalMeasure<RelaxedPathPair>> {
    if x_paths.len() != a_paths.len() {
        return Err(invalid("state and control path counts differ"));
    }
    let atoms = x_paths
        .iter()
        .zip(a_paths)
        .map(|(x, a)| {
            x.grid().ensure_same(a.grid())?;
            Ok(RelaxedPathPair {
                x: x.clone(),
                control: RelaxedControlPath::from_strict(a, cg),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EmpiricalMeasure::new(atoms)
}

/// Node-`k` measures `{(X_k^i, u_k^i)}` of a set of strict (state, control) paths;
/// node `K` repeats the last step's control.
pub fn flow_from_paths(x_paths: &[&Path], controls: &[&ControlPath]) -> Result<MeasureFlow> {
    if x_paths.is_empty() || x_paths.len() != controls.len() {
        return Err(invalid("flow needs equally many nonempty state and control paths"));
    }
    let grid = *x_paths[0].grid();
    for (x, a) in x_paths.iter().zip(controls) {
        grid.ensure_same(x.grid())?;
        grid.ensure_same(a.grid())?;
    }
    let nodes = (0..grid.num_nodes())
        .map(|k| {
            EmpiricalMeasure::from_atoms_unchecked(
                x_paths
                    .iter()
                    .zip(controls)
                    .map(|(x, a)| StateControl {
                        x: x.value(k),
                        u: a.at_node(k),
                    })
                    .collect(),
            )
        })
        .collect();
    MeasureFlow::new(grid, nodes)
}

/// Node measures `{(X_k^i, λ_k^i)}` of relaxed (state, control) paths.
pub fn relaxed_flow_from_paths(
    x_paths: &[&Path],
    controls: &[&RelaxedControlPath],
    cg: &ControlGrid,
) -> Result<RelaxedFlow> {
    if x_paths.is_empty() || x_paths.len() != controls.len() {
        return Err(invalid("flow needs equally many nonempty state and control paths"));
    }
    let grid = *x_paths[0].grid();
    let nodes = (0..grid.num_nodes())
        .map(|k| {
            EmpiricalMeasure::from_atoms_unchecked(
                x_paths
                    .iter()
                    .zip(controls)
                    .map(|(x, a)| StateWeights {
                        x: x.value(k),
                        weights: a.row_at_node(k).to_vec(),
                    })
                    .collect(),
            )
        })
        .collect();
    RelaxedFlow::new(grid, cg.clone(), nodes)
}

/// The induced measure flow of a simulated pool.
pub fn marginal_flow(pool: &crate::dynamics::JointLawEmpirical) -> Result<MeasureFlow> {
    pool.strict_flow()
}
