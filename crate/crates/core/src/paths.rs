//! Time grids, gridded paths and piecewise-constant controls, together with the
//! path metrics used downstream: the sup-norm on state paths, the L² metric on
//! controls, and their sum on state/control pairs.
//!
//! All cross-path operations require identical grids. Nothing is resampled
//! implicitly; [`ControlPath::refine`] is the only embedding offered.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Uniform grid `t_k = k T / K`, `k = 0..=K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(invalid("grid needs at least one step"));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn num_nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        debug_assert!(k <= self.steps);
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.node(k)).collect()
    }

    /// Grid with `factor` times as many steps over the same horizon.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(invalid("refinement factor must be at least 1"));
        }
        Self::new(self.horizon, self.steps * factor)
    }

    pub(crate) fn ensure_same(&self, other: &TimeGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(invalid(format!(
                "grid mismatch: (T={}, K={}) vs (T={}, K={})",
                self.horizon, self.steps, other.horizon, other.steps
            )))
        }
    }
}

/// `make_grid` in operation form.
pub fn make_grid(horizon: f64, steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(horizon, steps)
}

/// A real-valued trajectory sampled at every grid node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl Path {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_nodes() {
            return Err(invalid(format!(
                "path has {} values, grid has {} nodes",
                values.len(),
                grid.num_nodes()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite path value at node {k}")));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TimeGrid, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.num_nodes()])
    }

    /// Evaluates `f(t_k)` at every node.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.nodes().into_iter().map(f).collect())
    }

    pub(crate) fn from_parts_unchecked(grid: TimeGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.num_nodes());
        Self { grid, values }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Finite control set `U ⊂ ℝ` inside the box `[lo, hi]`. Controls are scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlGrid {
    points: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl ControlGrid {
    pub fn new(points: Vec<f64>, lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(invalid(format!("control bounds need lo < hi, got [{lo}, {hi}]")));
        }
        if points.is_empty() {
            return Err(invalid("control grid is empty"));
        }
        for &p in &points {
            if !(p.is_finite() && lo <= p && p <= hi) {
                return Err(invalid(format!("control point {p} outside [{lo}, {hi}]")));
            }
        }
        let mut sorted = points.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("duplicate control points"));
        }
        Ok(Self { points, lo, hi })
    }

    /// `n` equally spaced points covering `[lo, hi]` (both ends included).
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        let points = match n {
            0 => Vec::new(),
            1 => vec![0.5 * (lo + hi)],
            _ => (0..n)
                .map(|j| {
                    if j + 1 == n {
                        hi
                    } else {
                        lo + (hi - lo) * j as f64 / (n - 1) as f64
                    }
                })
                .collect(),
        };
        Self::new(points, lo, hi)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, j: usize) -> f64 {
        self.points[j]
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn contains(&self, u: f64) -> bool {
        self.lo <= u && u <= self.hi
    }

    /// Index of the grid point closest to `u`; ties go to the smaller index.
    pub fn nearest_index(&self, u: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, &p) in self.points.iter().enumerate() {
            let d = (p - u).abs();
            if d < best_d {
                best = j;
                best_d = d;
            }
        }
        best
    }
}

/// Piecewise-constant strict control: `indices[k]` is held on `[t_k, t_{k+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPath {
    grid: TimeGrid,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl ControlPath {
    pub fn new(grid: TimeGrid, controls: &ControlGrid, indices: Vec<usize>) -> Result<Self> {
        if indices.len() != grid.steps() {
            return Err(invalid(format!(
                "control path has {} entries, grid has {} steps",
                indices.len(),
                grid.steps()
            )));
        }
        if let Some(&j) = indices.iter().find(|&&j| j >= controls.len()) {
            return Err(invalid(format!(
                "control index {j} out of range for {} points",
                controls.len()
            )));
        }
        let values = indices.iter().map(|&j| controls.point(j)).collect();
        Ok(Self {
            grid,
            indices,
            values,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Control values `u_k`, one per step.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Control value in force at node `k`; the last node repeats the last step.
    pub fn at_node(&self, k: usize) -> f64 {
        self.values[k.min(self.values.len() - 1)]
    }

    /// Piecewise-constant embedding into a grid `factor` times finer.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.refined(factor)?;
        let indices = self
            .indices
            .iter()
            .flat_map(|&j| std::iter::repeat_n(j, factor))
            .collect();
        let values = self
            .values
            .iter()
            .flat_map(|&u| std::iter::repeat_n(u, factor))
            .collect();
        Ok(Self {
            grid,
            indices,
            values,
        })
    }
}

/// Relaxed control: one probability vector over the control grid per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedControlPath {
    grid: TimeGrid,
    points: Vec<f64>,
    weights: Vec<Vec<f64>>,
}

pub(crate) const WEIGHT_SUM_TOL: f64 = 1e-12;

pub(crate) fn check_weights(w: &[f64], m: usize) -> Result<()> {
    if w.len() != m {
        return Err(invalid(format!("weight row has {} entries, expected {m}", w.len())));
    }
    if w.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
        return Err(invalid("weights must be finite and nonnegative"));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > WEIGHT_SUM_TOL * m.max(1) as f64 {
        return Err(invalid(format!("weights sum to {s}, expected 1")));
    }
    Ok(())
}

impl RelaxedControlPath {
    pub fn new(grid: TimeGrid, controls: &ControlGrid, weights: Vec<Vec<f64>>) -> Result<Self> {
        if weights.len() != grid.steps() {
            return Err(invalid(format!(
                "relaxed path has {} rows, grid has {} steps",
                weights.len(),
                grid.steps()
            )));
        }
        for row in &weights {
            check_weights(row, controls.len())?;
        }
        Ok(Self {
            grid,
            points: controls.points().to_vec(),
            weights,
        })
    }

    /// Dirac embedding of a strict control.
    pub fn from_strict(path: &ControlPath, controls: &ControlGrid) -> Self {
        let m = controls.len();
        let weights = path
            .indices()
            .iter()
            .map(|&j| {
                let mut row = vec![0.0; m];
                row[j] = 1.0;
                row
            })
            .collect();
        Self {
            grid: *path.grid(),
            points: controls.points().to_vec(),
            weights,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn row_at_node(&self, k: usize) -> &[f64] {
        &self.weights[k.min(self.weights.len() - 1)]
    }

    /// Mean control `Σ_j λ_j u_j` at step `k`.
    pub fn mean_at(&self, k: usize) -> f64 {
        self.weights[k]
            .iter()
            .zip(&self.points)
            .map(|(w, u)| w * u)
            .sum()
    }
}

/// `max_k |p_k - q_k|`.
pub fn sup_distance(p: &Path, q: &Path) -> Result<f64> {
    p.grid.ensure_same(&q.grid)?;
    Ok(sup_distance_values(&p.values, &q.values))
}

pub(crate) fn sup_distance_values(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
}

/// Exact L² distance `(Σ_k |u_k(a) - u_k(b)|² Δt)^{1/2}` of piecewise-constant controls.
pub fn control_l2_distance(a: &ControlPath, b: &ControlPath) -> Result<f64> {
    a.grid.ensure_same(&b.grid)?;
    Ok(control_l2_values(&a.values, &b.values, a.grid.dt()))
}

pub(crate) fn control_l2_values(a: &[f64], b: &[f64], dt: f64) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (s * dt).sqrt()
}

/// Product metric on `C × B`: sup-norm on the state plus L² on the control.
pub fn path_product_distance(
    x1: &Path,
    a1: &ControlPath,
    x2: &Path,
    a2: &ControlPath,
) -> Result<f64> {
    x1.grid.ensure_same(a1.grid())?;
    x2.grid.ensure_same(a2.grid())?;
    Ok(sup_distance(x1, x2)? + control_l2_distance(a1, a2)?)
}
