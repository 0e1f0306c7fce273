//! Scenario model: parametric coefficient families with separated mean-field
//! interaction, boundary and initial laws, and config parsing.
//!
//! Every interaction term is affine or quadratic in the other agents' `(x′, u′)`,
//! so a node measure enters only through [`NodeStats`].

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::NoiseStream;
use crate::error::{invalid, Error, Result};
use crate::paths::{ControlGrid, Path, TimeGrid};
use crate::transport::{EmpiricalMeasure, NodeStats, StateControl, DEFAULT_ASSIGNMENT_CAP};

/// Rejection attempts for truncated-normal initial draws before clamping.
pub const INITIAL_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dynamics {
    pub horizon: f64,
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
    #[serde(default)]
    pub k3: f64,
    #[serde(default)]
    pub beta0: f64,
    #[serde(default)]
    pub beta1: f64,
    #[serde(default)]
    pub beta2: f64,
    #[serde(default)]
    pub beta3: f64,
    #[serde(default)]
    pub gamma1: f64,
    #[serde(default)]
    pub gamma2: f64,
    #[serde(default)]
    pub s0: f64,
    #[serde(default)]
    pub s1: f64,
    #[serde(default)]
    pub s2: f64,
    /// Own-control term in the diffusion: `σ₁² = (s0 + s1·x)² + s2 + s3·u²`.
    #[serde(default)]
    pub s3: f64,
    #[serde(default)]
    pub v1: f64,
    #[serde(default)]
    pub v2: f64,
    pub control_min: f64,
    pub control_max: f64,
    #[serde(default = "default_control_points")]
    pub control_points: usize,
}

fn default_control_points() -> usize {
    21
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Costs {
    #[serde(default)]
    pub q_u: f64,
    #[serde(default)]
    pub q_x: f64,
    #[serde(default)]
    pub x_bar: f64,
    #[serde(default)]
    pub q_xx: f64,
    #[serde(default)]
    pub q_uu: f64,
    #[serde(default)]
    pub g_x: f64,
    #[serde(default)]
    pub g_m: f64,
    #[serde(default)]
    pub c0: f64,
    #[serde(default)]
    pub c1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryFamily {
    /// `A_t = a0`
    Constant,
    /// `A_t = a0 + a1·t`
    Linear,
    /// `A_t = a0 + a1·t + a2·B_t` with `B` independent of the state noise.
    Brownian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Boundary {
    pub family: BoundaryFamily,
    #[serde(default)]
    pub a0: f64,
    #[serde(default)]
    pub a1: f64,
    #[serde(default)]
    pub a2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialLaw {
    Constant,
    TruncatedNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Initial {
    pub law: InitialLaw,
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    #[serde(default = "d_steps")]
    pub steps: usize,
    /// `σ_min`; the total variance must stay at or above `σ_min²`.
    #[serde(default = "d_floor")]
    pub variance_floor: f64,
    #[serde(default = "d_moment")]
    pub moment_order: f64,
    #[serde(default = "d_quad")]
    pub quadrature_nodes: usize,
    #[serde(default = "d_xnodes")]
    pub lattice_x_nodes: usize,
    #[serde(default = "d_anodes")]
    pub lattice_a_nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice_x_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice_x_max: Option<f64>,
    #[serde(default = "d_qlo")]
    pub quantile_lo: f64,
    #[serde(default = "d_qhi")]
    pub quantile_hi: f64,
    #[serde(default = "d_margin")]
    pub margin_sigmas: f64,
    #[serde(default = "d_cap")]
    pub assignment_cap: usize,
}

fn d_steps() -> usize {
    50
}
fn d_floor() -> f64 {
    1e-6
}
fn d_moment() -> f64 {
    4.0
}
fn d_quad() -> usize {
    5
}
fn d_xnodes() -> usize {
    101
}
fn d_anodes() -> usize {
    9
}
fn d_qlo() -> f64 {
    0.005
}
fn d_qhi() -> f64 {
    0.995
}
fn d_margin() -> f64 {
    3.0
}
fn d_cap() -> usize {
    DEFAULT_ASSIGNMENT_CAP
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            steps: d_steps(),
            variance_floor: d_floor(),
            moment_order: d_moment(),
            quadrature_nodes: d_quad(),
            lattice_x_nodes: d_xnodes(),
            lattice_a_nodes: d_anodes(),
            lattice_x_min: None,
            lattice_x_max: None,
            quantile_lo: d_qlo(),
            quantile_hi: d_qhi(),
            margin_sigmas: d_margin(),
            assignment_cap: d_cap(),
        }
    }
}

/// A fully validated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub dynamics: Dynamics,
    #[serde(default)]
    pub costs: Costs,
    pub boundary: Boundary,
    pub initial: Initial,
    #[serde(default)]
    pub numerics: Numerics,
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec> {
    let spec: ScenarioSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

impl ScenarioSpec {
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        parse_scenario(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes to toml")
    }

    /// Hard invariants: finiteness, variance floor, `η >= A_0`, grid shapes.
    pub fn validate(&self) -> Result<()> {
        let d = &self.dynamics;
        let c = &self.costs;
        let n = &self.numerics;
        let reals = [
            d.horizon, d.k1, d.k2, d.k3, d.beta0, d.beta1, d.beta2, d.beta3, d.gamma1, d.gamma2,
            d.s0, d.s1, d.s2, d.s3, d.v1, d.v2, d.control_min, d.control_max, c.q_u, c.q_x, c.x_bar,
            c.q_xx, c.q_uu, c.g_x, c.g_m, c.c0, c.c1, self.boundary.a0, self.boundary.a1,
            self.boundary.a2, self.initial.x0, self.initial.mean, self.initial.sd,
            n.variance_floor, n.moment_order, n.quantile_lo, n.quantile_hi, n.margin_sigmas,
        ];
        if reals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("all parameters must be finite".into()));
        }
        if !(d.horizon > 0.0) {
            return Err(Error::Validation(format!("horizon must be positive, got {}", d.horizon)));
        }
        if n.steps == 0 {
            return Err(Error::Validation("steps must be at least 1".into()));
        }
        if !(d.control_min < d.control_max) {
            return Err(Error::Validation(format!(
                "control bounds need control_min < control_max, got [{}, {}]",
                d.control_min, d.control_max
            )));
        }
        if d.control_points == 0 {
            return Err(Error::Validation("control_points must be at least 1".into()));
        }
        if d.s2 < 0.0 {
            return Err(Error::Validation(format!("variance floor: s2 = {} is negative", d.s2)));
        }
        if n.variance_floor < 0.0 {
            return Err(Error::Validation(format!(
                "variance floor: variance_floor = {} is negative",
                n.variance_floor
            )));
        }
        if d.s3 < 0.0 || d.k2 < 0.0 || d.v1 < 0.0 || d.v2 < 0.0 {
            return Err(Error::Validation(
                "variance floor: s3, k2, v1 and v2 must be nonnegative".into(),
            ));
        }
        let lb = self.variance_lower_bound();
        let floor2 = n.variance_floor * n.variance_floor;
        if lb < floor2 {
            return Err(Error::Validation(format!(
                "variance floor: guaranteed variance {lb} is below variance_floor² = {floor2}"
            )));
        }
        match self.initial.law {
            InitialLaw::Constant => {
                if self.initial.x0 < self.boundary.a0 {
                    return Err(Error::Validation(format!(
                        "initial state x0 = {} is below the boundary a0 = {}",
                        self.initial.x0, self.boundary.a0
                    )));
                }
            }
            InitialLaw::TruncatedNormal => {
                if !(self.initial.sd > 0.0) {
                    return Err(Error::Validation("truncated normal needs sd > 0".into()));
                }
            }
        }
        if !(n.moment_order > 2.0) {
            return Err(Error::Validation("moment_order must exceed 2".into()));
        }
        if n.quadrature_nodes == 0 || n.lattice_x_nodes < 2 || n.lattice_a_nodes == 0 {
            return Err(Error::Validation(
                "quadrature_nodes >= 1, lattice_x_nodes >= 2, lattice_a_nodes >= 1 required".into(),
            ));
        }
        if !(0.0 <= n.quantile_lo && n.quantile_lo < n.quantile_hi && n.quantile_hi <= 1.0) {
            return Err(Error::Validation("need 0 <= quantile_lo < quantile_hi <= 1".into()));
        }
        if n.margin_sigmas < 0.0 {
            return Err(Error::Validation("margin_sigmas must be nonnegative".into()));
        }
        if let (Some(lo), Some(hi)) = (n.lattice_x_min, n.lattice_x_max) {
            if !(lo < hi) {
                return Err(Error::Validation("lattice_x_min must be below lattice_x_max".into()));
            }
        }
        self.control_grid()
            .map_err(|e| Error::Validation(format!("control grid: {e}")))?;
        Ok(())
    }

    /// A lower bound on `σ² = σ₁² + k₂·∫σ₃² dρ` over all states, controls and measures.
    pub fn variance_lower_bound(&self) -> f64 {
        let d = &self.dynamics;
        let base = if d.s1 == 0.0 { d.s0 * d.s0 } else { 0.0 };
        base + d.s2
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid::new(self.dynamics.horizon, self.numerics.steps).expect("validated grid")
    }

    pub fn control_grid(&self) -> Result<ControlGrid> {
        let d = &self.dynamics;
        ControlGrid::uniform(d.control_min, d.control_max, d.control_points)
    }

    pub fn has_random_boundary(&self) -> bool {
        self.boundary.family == BoundaryFamily::Brownian && self.boundary.a2 != 0.0
    }

    /// True when no coefficient reads the measure flow.
    pub fn is_flow_independent(&self) -> bool {
        let d = &self.dynamics;
        let c = &self.costs;
        let drift = d.beta3 == 0.0 && (d.k1 == 0.0 || (d.gamma1 == 0.0 && d.gamma2 == 0.0));
        let var = d.k2 == 0.0 || (d.v1 == 0.0 && d.v2 == 0.0);
        let run = d.k3 == 0.0 || (c.q_xx == 0.0 && c.q_uu == 0.0);
        let term = c.g_x == 0.0 || c.g_m == 0.0;
        drift && var && run && term
    }

    // -- coefficient kernels, no argument checks --------------------------------

    #[inline]
    pub(crate) fn drift(&self, x: f64, s: &NodeStats, u: f64) -> f64 {
        let d = &self.dynamics;
        d.beta0 + d.beta1 * x + d.beta2 * u + d.beta3 * s.mean_x + d.k1 * self.drift_interaction(s)
    }

    #[inline]
    pub(crate) fn drift_interaction(&self, s: &NodeStats) -> f64 {
        let d = &self.dynamics;
        d.gamma1 * s.mean_x + d.gamma2 * s.mean_u
    }

    #[inline]
    pub(crate) fn variance(&self, x: f64, s: &NodeStats, u: f64) -> f64 {
        let d = &self.dynamics;
        let a = d.s0 + d.s1 * x;
        a * a + d.s2 + d.s3 * u * u + d.k2 * (d.v1 * s.m2_x + d.v2 * s.m2_u)
    }

    #[inline]
    pub(crate) fn running_cost(&self, x: f64, s: &NodeStats, u: f64) -> f64 {
        let c = &self.costs;
        let dx = x - c.x_bar;
        c.q_u * u * u + c.q_x * dx * dx + self.dynamics.k3 * self.running_interaction(x, s, u)
    }

    /// `∫ f₃ dρ = q_xx·E(x − x′)² + q_uu·E(u − u′)²`.
    #[inline]
    pub(crate) fn running_interaction(&self, x: f64, s: &NodeStats, u: f64) -> f64 {
        let c = &self.costs;
        c.q_xx * (x * x - 2.0 * x * s.mean_x + s.m2_x) + c.q_uu * (u * u - 2.0 * u * s.mean_u + s.m2_u)
    }

    #[inline]
    pub(crate) fn terminal(&self, x: f64, mean_x: f64) -> f64 {
        let c = &self.costs;
        let d = x - c.g_m * mean_x;
        c.g_x * d * d
    }

    #[inline]
    pub(crate) fn reflection_cost(&self, x: f64) -> f64 {
        self.costs.c0 + self.costs.c1 * x.abs()
    }

    pub fn boundary_at(&self, t: f64, b: f64) -> f64 {
        let bd = &self.boundary;
        match bd.family {
            BoundaryFamily::Constant => bd.a0,
            BoundaryFamily::Linear => bd.a0 + bd.a1 * t,
            BoundaryFamily::Brownian => bd.a0 + bd.a1 * t + bd.a2 * b,
        }
    }

    fn check_u(&self, u: f64) -> Result<()> {
        let d = &self.dynamics;
        if u.is_finite() && d.control_min <= u && u <= d.control_max {
            Ok(())
        } else {
            Err(invalid(format!(
                "control {u} outside U = [{}, {}]",
                d.control_min, d.control_max
            )))
        }
    }
}

/// `b(t, x, ρ_t, u) = b₁ + k₁·∫b₃ dρ_t`.
pub fn eval_drift(
    spec: &ScenarioSpec,
    _t: f64,
    x: f64,
    rho_t: &EmpiricalMeasure<StateControl>,
    u: f64,
) -> Result<f64> {
    spec.check_u(u)?;
    Ok(spec.drift(x, &NodeStats::of_strict(rho_t.atoms()), u))
}

/// `σ²(t, x, ρ_t, u) = σ₁² + k₂·∫σ₃² dρ_t`.
pub fn eval_variance(
    spec: &ScenarioSpec,
    _t: f64,
    x: f64,
    rho_t: &EmpiricalMeasure<StateControl>,
    u: f64,
) -> Result<f64> {
    spec.check_u(u)?;
    Ok(spec.variance(x, &NodeStats::of_strict(rho_t.atoms()), u))
}

/// `f(t, x, ρ_t, u) = f₁ + k₃·∫f₃ dρ_t`.
pub fn eval_running_cost(
    spec: &ScenarioSpec,
    _t: f64,
    x: f64,
    rho_t: &EmpiricalMeasure<StateControl>,
    u: f64,
) -> Result<f64> {
    spec.check_u(u)?;
    Ok(spec.running_cost(x, &NodeStats::of_strict(rho_t.atoms()), u))
}

/// `g(x, μ_T) = g_x·(x − g_m·mean(μ_T))²`.
pub fn eval_terminal_cost(spec: &ScenarioSpec, x: f64, mu_t: &[f64]) -> f64 {
    let mean = crate::transport::order_free_sum(mu_t.to_vec()) / mu_t.len() as f64;
    spec.terminal(x, mean)
}

/// `c(t, x) = c0 + c1·|x|`.
pub fn eval_reflection_cost(spec: &ScenarioSpec, _t: f64, x: f64) -> f64 {
    spec.reflection_cost(x)
}

/// One boundary path from the declared family. Deterministic families draw nothing.
pub fn sample_boundary(spec: &ScenarioSpec, grid: &TimeGrid, noise: &mut NoiseStream) -> Path {
    let sq = grid.dt().sqrt();
    let mut b = 0.0;
    let mut values = Vec::with_capacity(grid.num_nodes());
    values.push(spec.boundary_at(0.0, 0.0));
    let random = spec.boundary.family == BoundaryFamily::Brownian;
    for k in 1..grid.num_nodes() {
        if random {
            b += sq * noise.standard_normal();
        }
        values.push(spec.boundary_at(grid.node(k), b));
    }
    Path::from_parts_unchecked(*grid, values)
}

/// Initial state and whether the truncated-normal draw had to be clamped.
pub fn sample_initial(spec: &ScenarioSpec, a0: f64, noise: &mut NoiseStream) -> (f64, bool) {
    let init = &spec.initial;
    match init.law {
        InitialLaw::Constant => (init.x0, false),
        InitialLaw::TruncatedNormal => {
            for _ in 0..INITIAL_RETRIES {
                let z: f64 = StandardNormal.sample(noise.rng());
                let x = init.mean + init.sd * z;
                if x >= a0 {
                    return (x, false);
                }
            }
            (a0, true)
        }
    }
}

/// Informational constants derived from the parameters, plus notes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Lipschitz constant in `x` of drift plus diffusion coefficient: `|β1| + |s1|`.
    pub lipschitz_x: f64,
    pub drift_lipschitz_x: f64,
    pub diffusion_lipschitz_x: f64,
    /// Lipschitz constant of the drift in the measure, with respect to `W₁` on `ℝ × U`.
    pub drift_lipschitz_measure: f64,
    /// `|b| <= drift_growth[0] + drift_growth[1]·|x| + drift_growth[2]·M₁(ρ)` on `U`.
    pub drift_growth: [f64; 3],
    /// `σ² <= variance_growth[0] + variance_growth[1]·|x|² + variance_growth[2]·M₂(ρ)`.
    pub variance_growth: [f64; 3],
    /// `|f| <= running_growth[0] + running_growth[1]·|x|² + running_growth[2]·M₂(ρ)`.
    pub running_growth: [f64; 3],
    /// `|c(t, x)| <= reflection_growth[0] + reflection_growth[1]·|x|`.
    pub reflection_growth: [f64; 2],
    pub variance_lower_bound: f64,
    pub notes: Vec<String>,
}

/// Checks the hard invariants and derives growth and Lipschitz constants.
pub fn validate_assumptions(spec: &ScenarioSpec) -> Result<AssumptionReport> {
    spec.validate()?;
    let d = &spec.dynamics;
    let c = &spec.costs;
    let ubar = d.control_min.abs().max(d.control_max.abs());
    let drift_lipschitz_x = d.beta1.abs();
    let diffusion_lipschitz_x = d.s1.abs();
    let mut notes = vec![
        "interaction drift b3 is affine, so it is Lipschitz in (x', u') rather than bounded by \
         squared increments; the squared-increment condition is not checked"
            .to_string(),
    ];
    if c.c0 < 0.0 || c.c1 < 0.0 {
        notes.push("reflection cost can be negative".to_string());
    }
    if spec.variance_lower_bound() == 0.0 {
        notes.push("diffusion may degenerate (zero variance floor)".to_string());
    }
    Ok(AssumptionReport {
        lipschitz_x: drift_lipschitz_x + diffusion_lipschitz_x,
        drift_lipschitz_x,
        diffusion_lipschitz_x,
        drift_lipschitz_measure: d.beta3.abs() + d.k1.abs() * d.gamma1.abs().max(d.gamma2.abs()),
        drift_growth: [
            d.beta0.abs() + (d.beta2.abs() + (d.k1 * d.gamma2).abs()) * ubar,
            d.beta1.abs(),
            d.beta3.abs() + (d.k1 * d.gamma1).abs(),
        ],
        variance_growth: [
            2.0 * d.s0 * d.s0 + d.s2 + (d.s3 + d.k2 * d.v2) * ubar * ubar,
            2.0 * d.s1 * d.s1,
            d.k2 * d.v1,
        ],
        running_growth: [
            (c.q_u.abs() + 4.0 * d.k3.abs() * c.q_uu.abs()) * ubar * ubar
                + 2.0 * c.q_x.abs() * c.x_bar * c.x_bar,
            2.0 * c.q_x.abs() + 2.0 * d.k3.abs() * c.q_xx.abs(),
            2.0 * d.k3.abs() * c.q_xx.abs(),
        ],
        reflection_growth: [c.c0.abs(), c.c1.abs()],
        variance_lower_bound: spec.variance_lower_bound(),
        notes,
    })
}
