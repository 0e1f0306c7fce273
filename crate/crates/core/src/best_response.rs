//! Best response against a frozen flow by backward dynamic programming on a
//! `(t, x, b)` lattice, where `b` is the boundary driver (one node for
//! deterministic boundary families).
//!
//! Expectations use Gauss–Hermite quadrature over `ΔW` (and `ΔB`), off-lattice
//! values are bilinear with clamped extrapolation, and the transition is the
//! reflected one-step map `X′ = max(x + bΔt + σΔW, A′)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    evaluate_cost, mean_and_se, simulate_pool, FlowView, RelaxedPolicy, StrictPolicy,
};
use crate::error::{invalid, Error, Result};
use crate::paths::{ControlGrid, TimeGrid};
use crate::scenario::{BoundaryFamily, ScenarioSpec};
use crate::transport::{MeasureFlow, NodeStats};

// ---------------------------------------------------------------------------
// quadrature

/// Gauss–Hermite rule for `E[h(Z)]`, `Z ~ N(0, 1)`: nodes and weights summing to 1.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(invalid("quadrature needs at least one node"));
    }
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    let sq2 = std::f64::consts::SQRT_2;
    let spi = std::f64::consts::PI.sqrt();
    let nodes = x.iter().map(|v| v * sq2).collect();
    let weights: Vec<f64> = w.iter().map(|v| v / spi).collect();
    let total: f64 = weights.iter().sum();
    Ok((nodes, weights.iter().map(|v| v / total).collect()))
}

// ---------------------------------------------------------------------------
// lattice

/// Uniform `x`-nodes times uniform boundary-driver nodes, with the boundary law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub x_lo: f64,
    pub x_hi: f64,
    pub nx: usize,
    pub b_lo: f64,
    pub b_hi: f64,
    pub nb: usize,
    pub family: BoundaryFamily,
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Lattice {
    pub fn new(spec: &ScenarioSpec, x_lo: f64, x_hi: f64, nx: usize) -> Result<Self> {
        if !(x_lo.is_finite() && x_hi.is_finite()) || x_hi - x_lo <= 1e-12 || nx < 2 {
            return Err(Error::Config(format!(
                "degenerate lattice: x range [{x_lo}, {x_hi}] with {nx} nodes"
            )));
        }
        let bd = &spec.boundary;
        let (b_lo, b_hi, nb) = if spec.has_random_boundary() {
            let na = spec.numerics.lattice_a_nodes.max(1);
            let r = spec.numerics.margin_sigmas.max(1.0) * spec.dynamics.horizon.sqrt();
            if na == 1 {
                (0.0, 0.0, 1)
            } else {
                (-r, r, na)
            }
        } else {
            (0.0, 0.0, 1)
        };
        Ok(Lattice {
            x_lo,
            x_hi,
            nx,
            b_lo,
            b_hi,
            nb,
            family: bd.family,
            a0: bd.a0,
            a1: bd.a1,
            a2: bd.a2,
        })
    }

    /// Range from the flow's pooled state quantiles, widened by
    /// `margin_sigmas · σ · √T` and cut at the lowest boundary value; explicit
    /// `lattice_x_min` / `lattice_x_max` override either end.
    pub fn auto(spec: &ScenarioSpec, flow: &MeasureFlow) -> Result<Self> {
        let n = &spec.numerics;
        let mut xs: Vec<f64> = flow
            .nodes()
            .iter()
            .flat_map(|m| m.atoms().iter().map(|a| a.x))
            .collect();
        xs.sort_by(f64::total_cmp);
        let q = |p: f64| xs[((p * (xs.len() - 1) as f64).round() as usize).min(xs.len() - 1)];
        let (qlo, qhi) = (q(n.quantile_lo), q(n.quantile_hi));
        let controls = spec.control_grid()?;
        let mut sigma: f64 = 0.0;
        for s in flow.all_stats() {
            for &x in &[qlo, qhi] {
                for &u in controls.points() {
                    sigma = sigma.max(spec.variance(x, s, u).sqrt());
                }
            }
        }
        let margin = n.margin_sigmas * sigma * spec.dynamics.horizon.sqrt();
        let probe = Lattice::new(spec, 0.0, 1.0, 2)?;
        let grid = *flow.grid();
        let a_min = (0..grid.num_nodes())
            .flat_map(|k| (0..probe.nb).map(move |l| (k, l)))
            .map(|(k, l)| probe.boundary(grid.node(k), probe.b_node(l)))
            .fold(f64::INFINITY, f64::min);
        let lo = n.lattice_x_min.unwrap_or((qlo - margin).max(a_min));
        let hi = n.lattice_x_max.unwrap_or(qhi + margin);
        Lattice::new(spec, lo, hi, n.lattice_x_nodes)
    }

    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.nx - 1) as f64
    }

    pub fn x_node(&self, i: usize) -> f64 {
        if i + 1 == self.nx {
            self.x_hi
        } else {
            self.x_lo + i as f64 * self.dx()
        }
    }

    fn db(&self) -> f64 {
        if self.nb > 1 {
            (self.b_hi - self.b_lo) / (self.nb - 1) as f64
        } else {
            0.0
        }
    }

    pub fn b_node(&self, l: usize) -> f64 {
        if self.nb == 1 {
            0.0
        } else if l + 1 == self.nb {
            self.b_hi
        } else {
            self.b_lo + l as f64 * self.db()
        }
    }

    pub fn boundary(&self, t: f64, b: f64) -> f64 {
        match self.family {
            BoundaryFamily::Constant => self.a0,
            BoundaryFamily::Linear => self.a0 + self.a1 * t,
            BoundaryFamily::Brownian => self.a0 + self.a1 * t + self.a2 * b,
        }
    }

    /// Driver value that produces boundary `a` at time `t`.
    pub fn driver_from_boundary(&self, t: f64, a: f64) -> f64 {
        if self.nb == 1 || self.a2 == 0.0 {
            0.0
        } else {
            (a - self.a0 - self.a1 * t) / self.a2
        }
    }
    /// Number of lattice nodes per time step.

    pub fn len(&self) -> usize {
        self.nx * self.nb
    }

    fn locate(lo: f64, h: f64, n: usize, v: f64) -> (usize, f64) {
        if n == 1 || h == 0.0 {
            return (0, 0.0);
        }
        let p = (v - lo) / h;
        if p <= 0.0 {
            return (0, 0.0);
        }
        let top = (n - 1) as f64;
        if p >= top {
            return (n - 2, 1.0);
        }
        let i = p.floor() as usize;
        (i.min(n - 2), p - i as f64)
    }

    fn nearest(lo: f64, h: f64, n: usize, v: f64) -> usize {
        if n == 1 || h == 0.0 {
            return 0;
        }
        let p = ((v - lo) / h).round();
        if p <= 0.0 {
            0
        } else {
            (p as usize).min(n - 1)
        }
    }

    /// Bilinear interpolation of one time slice, clamped at the edges.
    fn interpolate(&self, slice: &[f64], x: f64, b: f64) -> f64 {
        let (i, fx) = Self::locate(self.x_lo, self.dx(), self.nx, x);
        if self.nb == 1 {
            let v0 = slice[i];
            return if fx == 0.0 { v0 } else { (1.0 - fx) * v0 + fx * slice[i + 1] };
        }
        let (l, fb) = Self::locate(self.b_lo, self.db(), self.nb, b);
        let at = |l: usize, i: usize| slice[l * self.nx + i];
        let row = |l: usize| {
            if fx == 0.0 {
                at(l, i)
            } else {
                (1.0 - fx) * at(l, i) + fx * at(l, i + 1)
            }
        };
        if fb == 0.0 {
            row(l)
        } else {
            (1.0 - fb) * row(l) + fb * row(l + 1)
        }
    }

    fn nearest_node(&self, x: f64, b: f64) -> usize {
        let i = Self::nearest(self.x_lo, self.dx(), self.nx, x);
        let l = Self::nearest(self.b_lo, self.db(), self.nb, b);
        l * self.nx + i
    }
}

// ---------------------------------------------------------------------------
// tables

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyEntries {
    /// Control-grid index per `(k, b-node, x-node)`.
    Strict(Vec<u16>),
    /// Weight vector per `(k, b-node, x-node)`, flattened.
    Relaxed(Vec<f64>),
}

/// Markovian feedback `ψ(t_k, x, a)` on a lattice; queries use the nearest
/// node after clamping `x` up to the boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub grid: TimeGrid,
    pub lattice: Lattice,
    pub controls: ControlGrid,
    pub entries: PolicyEntries,
}

impl PolicyTable {
    /// The same control index everywhere.
    pub fn constant(grid: TimeGrid, lattice: Lattice, controls: ControlGrid, j: usize) -> Result<Self> {
        if j >= controls.len() {
            return Err(invalid("control index out of range"));
        }
        let n = grid.steps() * lattice.len();
        Ok(Self {
            grid,
            lattice,
            controls,
            entries: PolicyEntries::Strict(vec![j as u16; n]),
        })
    }

    fn node(&self, k: usize, x: f64, a: f64) -> usize {
        let t = self.grid.node(k);
        let b = self.lattice.driver_from_boundary(t, a);
        k.min(self.grid.steps() - 1) * self.lattice.len() + self.lattice.nearest_node(x.max(a), b)
    }

    pub fn is_strict(&self) -> bool {
        matches!(self.entries, PolicyEntries::Strict(_))
    }

    /// Index stored at lattice node `(k, l, i)` of a strict table.
    pub fn entry(&self, k: usize, l: usize, i: usize) -> Option<usize> {
        match &self.entries {
            PolicyEntries::Strict(v) => {
                Some(v[k * self.lattice.len() + l * self.lattice.nx + i] as usize)
            }
            PolicyEntries::Relaxed(_) => None,
        }
    }

    /// One-hot relaxed copy.
    pub fn to_relaxed(&self) -> PolicyTable {
        let m = self.controls.len();
        let entries = match &self.entries {
            PolicyEntries::Strict(v) => {
                let mut w = vec![0.0; v.len() * m];
                for (n, &j) in v.iter().enumerate() {
                    w[n * m + j as usize] = 1.0;
                }
                PolicyEntries::Relaxed(w)
            }
            PolicyEntries::Relaxed(w) => PolicyEntries::Relaxed(w.clone()),
        };
        PolicyTable {
            entries,
            ..self.clone()
        }
    }

    /// Node-wise mixture `θ·self + (1 − θ)·other` of two tables on one lattice.
    pub fn mix(&self, other: &PolicyTable, theta: f64) -> Result<PolicyTable> {
        if self.lattice != other.lattice || self.grid != other.grid || self.controls != other.controls {
            return Err(invalid("mixed policies must share grid, lattice and controls"));
        }
        let (PolicyEntries::Relaxed(a), PolicyEntries::Relaxed(b)) =
            (self.to_relaxed().entries, other.to_relaxed().entries)
        else {
            unreachable!()
        };
        let w = a.iter().zip(&b).map(|(x, y)| theta * x + (1.0 - theta) * y).collect();
        Ok(PolicyTable {
            entries: PolicyEntries::Relaxed(w),
            ..self.clone()
        })
    }
}

impl StrictPolicy for PolicyTable {
    fn control_index(&self, k: usize, x: f64, a: f64) -> usize {
        let n = self.node(k, x, a);
        match &self.entries {
            PolicyEntries::Strict(v) => v[n] as usize,
            PolicyEntries::Relaxed(w) => {
                let m = self.controls.len();
                let row = &w[n * m..(n + 1) * m];
                let mut best = 0;
                for j in 1..m {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            }
        }
    }
}

impl RelaxedPolicy for PolicyTable {
    fn control_weights(&self, k: usize, x: f64, a: f64) -> Vec<f64> {
        let n = self.node(k, x, a);
        let m = self.controls.len();
        match &self.entries {
            PolicyEntries::Strict(v) => {
                let mut row = vec![0.0; m];
                row[v[n] as usize] = 1.0;
                row
            }
            PolicyEntries::Relaxed(w) => w[n * m..(n + 1) * m].to_vec(),
        }
    }
}

/// Continuation values `v_k` on the lattice, `k = 0..=K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub grid: TimeGrid,
    pub lattice: Lattice,
    pub values: Vec<f64>,
}

impl ValueTable {
    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.lattice.len();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn node_value(&self, k: usize, l: usize, i: usize) -> f64 {
        self.slice(k)[l * self.lattice.nx + i]
    }

    /// Interpolated `v_k(x, a)` with `x` clamped up to `a`.
    pub fn value_at(&self, k: usize, x: f64, a: f64) -> f64 {
        let b = self.lattice.driver_from_boundary(self.grid.node(k), a);
        self.lattice.interpolate(self.slice(k), x.max(a), b)
    }
}

// ---------------------------------------------------------------------------
// solver

/// Backward DP with the lattice sized from the flow.
pub fn solve_best_response(spec: &ScenarioSpec, flow: &MeasureFlow) -> Result<(PolicyTable, ValueTable)> {
    let lattice = Lattice::auto(spec, flow)?;
    solve_best_response_on(spec, flow, &lattice)
}

/// Backward DP on a given lattice.
pub fn solve_best_response_on(
    spec: &ScenarioSpec,
    flow: &dyn FlowView,
    lattice: &Lattice,
) -> Result<(PolicyTable, ValueTable)> {
    solve_dp(spec, flow, lattice, 0.0)
}

/// Best response of one player among `n_players` whose own state and control
/// carry weight `1/N` in the interaction, the others being summarised by
/// `flow`.
pub fn solve_finite_population_response(
    spec: &ScenarioSpec,
    flow: &dyn FlowView,
    lattice: &Lattice,
    n_players: usize,
) -> Result<(PolicyTable, ValueTable)> {
    if n_players == 0 {
        return Err(invalid("player count must be positive"));
    }
    solve_dp(spec, flow, lattice, 1.0 / n_players as f64)
}

#[inline]
fn with_own(s: &NodeStats, own: f64, x: f64, u: f64) -> NodeStats {
    let rest = 1.0 - own;
    NodeStats {
        mean_x: rest * s.mean_x + own * x,
        mean_u: rest * s.mean_u + own * u,
        m2_x: rest * s.m2_x + own * x * x,
        m2_u: rest * s.m2_u + own * u * u,
    }
}

fn solve_dp(
    spec: &ScenarioSpec,
    flow: &dyn FlowView,
    lattice: &Lattice,
    own: f64,
) -> Result<(PolicyTable, ValueTable)> {
    let grid = *flow.grid();
    if grid != spec.grid() {
        return Err(invalid("flow grid differs from the scenario grid"));
    }
    let controls = spec.control_grid()?;
    if controls.len() > u16::MAX as usize {
        return Err(invalid("control grid too large for a policy table"));
    }
    let stats = flow.node_stats();
    let (zw, ww) = gauss_hermite(spec.numerics.quadrature_nodes)?;
    let (zb, wb) = if lattice.nb > 1 {
        gauss_hermite(spec.numerics.quadrature_nodes)?
    } else {
        (vec![0.0], vec![1.0])
    };
    let dt = grid.dt();
    let sq = dt.sqrt();
    let n = lattice.len();
    let kk = grid.steps();

    let mut values = vec![0.0; (kk + 1) * n];
    let mean_t = stats[kk].mean_x;
    for l in 0..lattice.nb {
        let a = lattice.boundary(grid.node(kk), lattice.b_node(l));
        for i in 0..lattice.nx {
            let x = lattice.x_node(i).max(a);
            let m = if own == 0.0 { mean_t } else { (1.0 - own) * mean_t + own * x };
            values[kk * n + l * lattice.nx + i] = spec.terminal(x, m);
        }
    }
    let mut policy = vec![0u16; kk * n];

    for k in (0..kk).rev() {
        let (head, tail) = values.split_at_mut((k + 1) * n);
        let next = &tail[..n];
        let cur = &mut head[k * n..];
        let s: &NodeStats = &stats[k];
        let t = grid.node(k);
        let t1 = grid.node(k + 1);
        let out: Vec<(f64, u16)> = (0..n)
            .into_par_iter()
            .map(|node| {
                let l = node / lattice.nx;
                let i = node % lattice.nx;
                let b = lattice.b_node(l);
                let a = lattice.boundary(t, b);
                let x = lattice.x_node(i).max(a);
                let mut best = f64::INFINITY;
                let mut arg = 0usize;
                for (j, &u) in controls.points().iter().enumerate() {
                    let mixed;
                    let s = if own == 0.0 {
                        s
                    } else {
                        mixed = with_own(s, own, x, u);
                        &mixed
                    };
                    let mean = x + spec.drift(x, s, u) * dt;
                    let sd = spec.variance(x, s, u).sqrt() * sq;
                    let mut ev = 0.0;
                    for (&zb_r, &wb_r) in zb.iter().zip(&wb) {
                        let bn = b + sq * zb_r;
                        let an = lattice.boundary(t1, bn);
                        let mut inner = 0.0;
                        if sd == 0.0 {
                            inner = transition_value(spec, lattice, next, mean, an, bn);
                        } else {
                            for (&zq, &wq) in zw.iter().zip(&ww) {
                                inner += wq * transition_value(spec, lattice, next, mean + sd * zq, an, bn);
                            }
                        }
                        ev += if lattice.nb > 1 { wb_r * inner } else { inner };
                    }
                    let q = spec.running_cost(x, s, u) * dt + ev;
                    if q < best {
                        best = q;
                        arg = j;
                    }
                }
                (best, arg as u16)
            })
            .collect();
        for (node, (v, j)) in out.into_iter().enumerate() {
            cur[node] = v;
            policy[k * n + node] = j;
        }
    }

    Ok((
        PolicyTable {
            grid,
            lattice: lattice.clone(),
            controls,
            entries: PolicyEntries::Strict(policy),
        },
        ValueTable {
            grid,
            lattice: lattice.clone(),
            values,
        },
    ))
}

#[inline]
fn transition_value(spec: &ScenarioSpec, lattice: &Lattice, next: &[f64], y: f64, a: f64, b: f64) -> f64 {
    let xn = y.max(a);
    let dr = xn - y;
    let refl = if dr > 0.0 { spec.reflection_cost(xn) * dr } else { 0.0 };
    refl + lattice.interpolate(next, xn, b)
}

// ---------------------------------------------------------------------------
// exploitability

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exploitability {
    /// Mean cost of the policy minus mean cost of the best response.
    pub gap: f64,
    pub se: f64,
    pub policy_cost: f64,
    pub best_response_cost: f64,
}

/// Cost gap between `policy` and the best response to `flow`, with common
/// random numbers across the two pools.
pub fn exploitability(
    spec: &ScenarioSpec,
    policy: &PolicyTable,
    flow: &MeasureFlow,
    m: usize,
    seed: u64,
) -> Result<Exploitability> {
    let (br, _) = solve_best_response(spec, flow)?;
    policy_gap(spec, policy, &br, flow, m, seed)
}

/// Paired cost difference between two policies simulated on the same streams.
pub fn policy_gap<P: StrictPolicy + ?Sized, Q: StrictPolicy + ?Sized>(
    spec: &ScenarioSpec,
    policy: &P,
    reference: &Q,
    flow: &dyn FlowView,
    m: usize,
    seed: u64,
) -> Result<Exploitability> {
    let a = simulate_pool(spec, policy, flow, m, seed)?;
    let b = simulate_pool(spec, reference, flow, m, seed)?;
    let ca: Vec<f64> = a
        .trajectories()
        .par_iter()
        .map(|t| evaluate_cost(spec, t, flow))
        .collect::<Result<_>>()?;
    let cb: Vec<f64> = b
        .trajectories()
        .par_iter()
        .map(|t| evaluate_cost(spec, t, flow))
        .collect::<Result<_>>()?;
    let d: Vec<f64> = ca.iter().zip(&cb).map(|(x, y)| x - y).collect();
    let (gap, se) = mean_and_se(&d);
    Ok(Exploitability {
        gap,
        se,
        policy_cost: mean_and_se(&ca).0,
        best_response_cost: mean_and_se(&cb).0,
    })
}
