//! Mean field games of controls with one-sided reflection along a stochastic
//! boundary: particle simulation, exact empirical transport, lattice best
//! responses, fixed-point equilibria and finite-population experiments.

pub mod best_response;
pub mod bundle;
pub mod checks;
pub mod dynamics;
pub mod error;
pub mod mfe_solver;
pub mod nplayer;
pub mod paths;
pub mod scenario;
pub mod skorokhod;
pub mod transport;

pub use error::{Error, Result};
pub use paths::{make_grid, ControlGrid, ControlPath, Path, RelaxedControlPath, TimeGrid};
pub use scenario::{parse_scenario, ScenarioSpec};
pub use skorokhod::{skorokhod_map, stepwise_reflection_oracle, ReflectionResult};
