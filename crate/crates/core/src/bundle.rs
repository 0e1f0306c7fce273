//! Versioned JSON serialisation of an equilibrium.
//!
//! Trajectories are stored as `(Y, control, W, A)`; `X` and `R` are rebuilt
//! with the Skorokhod map on load, which reproduces the engine bit for bit.

use serde::{Deserialize, Serialize};

use crate::best_response::{Exploitability, PolicyEntries, PolicyTable};
use crate::dynamics::{JointLawEmpirical, ParticleTrajectory, TrajectoryControl};
use crate::error::{Error, Result};
use crate::mfe_solver::{MfeOptions, MfeSolution};
use crate::paths::{ControlPath, Path, RelaxedControlPath};
use crate::scenario::ScenarioSpec;
use crate::skorokhod::skorokhod_map;

pub const BUNDLE_FORMAT: &str = "mfg-reflect-bundle";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum StoredControl {
    Strict(Vec<usize>),
    Relaxed(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredTrajectory {
    y: Vec<f64>,
    control: StoredControl,
    w: Vec<f64>,
    a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Stored {
    format: String,
    version: u32,
    scenario: ScenarioSpec,
    options: MfeOptions,
    policy: PolicyTable,
    iterate_policy: PolicyTable,
    pool: Vec<StoredTrajectory>,
    clamped: usize,
    residual_history: Vec<f64>,
    exploitability: Exploitability,
    cost_scale: f64,
    iterations: usize,
    converged: bool,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Bundle(msg.into())
}

/// Serialises `sol` together with the scenario it solves.
pub fn to_json(spec: &ScenarioSpec, sol: &MfeSolution) -> Result<String> {
    let pool = sol
        .pool
        .trajectories()
        .iter()
        .map(|t| StoredTrajectory {
            y: t.y.values().to_vec(),
            control: match &t.control {
                TrajectoryControl::Strict(c) => StoredControl::Strict(c.indices().to_vec()),
                TrajectoryControl::Relaxed(c) => StoredControl::Relaxed(c.weights().to_vec()),
            },
            w: t.w.values().to_vec(),
            a: t.a.values().to_vec(),
        })
        .collect();
    let stored = Stored {
        format: BUNDLE_FORMAT.into(),
        version: BUNDLE_VERSION,
        scenario: spec.clone(),
        options: sol.options.clone(),
        policy: sol.policy.clone(),
        iterate_policy: sol.iterate_policy.clone(),
        pool,
        clamped: sol.pool.clamped,
        residual_history: sol.residual_history.clone(),
        exploitability: sol.exploitability,
        cost_scale: sol.cost_scale,
        iterations: sol.iterations,
        converged: sol.converged,
    };
    Ok(serde_json::to_string(&stored)?)
}

/// Parses a bundle, re-validating the scenario and every stored path.
pub fn from_json(text: &str) -> Result<(ScenarioSpec, MfeSolution)> {
    let stored: Stored = serde_json::from_str(text).map_err(|e| bad(format!("malformed bundle: {e}")))?;
    if stored.format != BUNDLE_FORMAT {
        return Err(bad(format!("not a bundle (format tag {:?})", stored.format)));
    }
    if stored.version != BUNDLE_VERSION {
        return Err(bad(format!(
            "unsupported bundle version {} (expected {})",
            stored.version, BUNDLE_VERSION
        )));
    }
    let spec = stored.scenario;
    spec.validate().map_err(|e| bad(format!("stored scenario is invalid: {e}")))?;
    let grid = spec.grid();
    let controls = spec.control_grid()?;
    check_policy(&spec, &stored.policy)?;
    check_policy(&spec, &stored.iterate_policy)?;
    if stored.pool.is_empty() {
        return Err(bad("bundle holds an empty pool"));
    }
    let mut trajectories = Vec::with_capacity(stored.pool.len());
    for (i, t) in stored.pool.into_iter().enumerate() {
        let ctx = |e: Error| bad(format!("trajectory {i}: {e}"));
        let y = Path::new(grid, t.y).map_err(ctx)?;
        let w = Path::new(grid, t.w).map_err(ctx)?;
        let a = Path::new(grid, t.a).map_err(ctx)?;
        let refl = skorokhod_map(&a, &y).map_err(ctx)?;
        let control = match t.control {
            StoredControl::Strict(idx) => TrajectoryControl::Strict(ControlPath::new(grid, &controls, idx).map_err(ctx)?),
            StoredControl::Relaxed(rows) => {
                TrajectoryControl::Relaxed(RelaxedControlPath::new(grid, &controls, rows).map_err(ctx)?)
            }
        };
        trajectories.push(ParticleTrajectory {
            y,
            x: refl.g,
            r: refl.ell,
            control,
            w,
            a,
        });
    }
    let mut pool = JointLawEmpirical::new(controls, trajectories)?;
    pool.clamped = stored.clamped;
    let flow = pool.strict_flow()?;
    Ok((
        spec,
        MfeSolution {
            policy: stored.policy,
            iterate_policy: stored.iterate_policy,
            pool,
            flow,
            residual_history: stored.residual_history,
            exploitability: stored.exploitability,
            cost_scale: stored.cost_scale,
            iterations: stored.iterations,
            converged: stored.converged,
            options: stored.options,
        },
    ))
}

fn check_policy(spec: &ScenarioSpec, p: &PolicyTable) -> Result<()> {
    if p.grid != spec.grid() {
        return Err(bad("policy grid differs from the scenario grid"));
    }
    if p.controls != spec.control_grid()? {
        return Err(bad("policy control grid differs from the scenario"));
    }
    let cells = p.grid.steps() * p.lattice.len();
    let m = p.controls.len();
    match &p.entries {
        PolicyEntries::Strict(v) => {
            if v.len() != cells || v.iter().any(|&j| j as usize >= m) {
                return Err(bad("strict policy entries have the wrong shape or range"));
            }
        }
        PolicyEntries::Relaxed(v) => {
            if v.len() != cells * m || v.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(bad("relaxed policy entries have the wrong shape or sign"));
            }
        }
    }
    Ok(())
}

pub fn save(path: &std::path::Path, spec: &ScenarioSpec, sol: &MfeSolution) -> Result<()> {
    std::fs::write(path, to_json(spec, sol)?)?;
    Ok(())
}

pub fn load(path: &std::path::Path) -> Result<(ScenarioSpec, MfeSolution)> {
    from_json(&std::fs::read_to_string(path)?)
}
