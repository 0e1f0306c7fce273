//! One-sided dynamic Skorokhod problem on a time grid.
//!
//! Given a boundary `a` and a free path `f` with `f_0 >= a_0`, the reflected
//! path is `g = f + ℓ` where `ℓ_k = max_{s<=k} (a_s - f_s)⁺` is the minimal
//! nondecreasing pushing that keeps `g >= a`. Only grid nodes are reflected;
//! excursions between nodes are not seen.

use crate::error::{Error, Result};
use crate::paths::Path;

/// Tolerance for the discrete complementarity check `Δℓ_k > 0 ⇒ g_k <= a_k`.
pub const COMPLEMENTARITY_TOL: f64 = 1e-12;

/// Reflected path and the cumulative pushing that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionResult {
    pub g: Path,
    pub ell: Path,
}

impl ReflectionResult {
    /// Checks `g = f + ℓ`, `ℓ_0 = 0`, `ℓ` nondecreasing, `g >= a` and complementarity.
    pub fn check_invariants(&self, a: &Path, f: &Path) -> std::result::Result<(), String> {
        let (g, ell, a, f) = (
            self.g.values(),
            self.ell.values(),
            a.values(),
            f.values(),
        );
        if ell[0] != 0.0 {
            return Err(format!("ell_0 = {} != 0", ell[0]));
        }
        for k in 0..g.len() {
            if g[k] != f[k] + ell[k] {
                return Err(format!("g != f + ell at node {k}"));
            }
            if g[k] < a[k] - COMPLEMENTARITY_TOL {
                return Err(format!("g below boundary at node {k}: {} < {}", g[k], a[k]));
            }
            if k > 0 {
                if ell[k] < ell[k - 1] {
                    return Err(format!("ell decreases at node {k}"));
                }
                if ell[k] > ell[k - 1] && g[k] > a[k] + COMPLEMENTARITY_TOL {
                    return Err(format!("pushing off the boundary at node {k}"));
                }
            }
        }
        Ok(())
    }
}

fn check_domain(a: &Path, f: &Path) -> Result<()> {
    a.grid().ensure_same(f.grid())?;
    if f.value(0) < a.value(0) {
        return Err(Error::DomainViolation(format!(
            "f(0) = {} is below a(0) = {}",
            f.value(0),
            a.value(0)
        )));
    }
    Ok(())
}

/// Closed-form reflection map `Γ(a, f)` via the running supremum of `(a - f)⁺`.
pub fn skorokhod_map(a: &Path, f: &Path) -> Result<ReflectionResult> {
    check_domain(a, f)?;
    let grid = *f.grid();
    let mut running = 0.0_f64;
    let ell: Vec<f64> = a
        .values()
        .iter()
        .zip(f.values())
        .map(|(&ak, &fk)| {
            running = running.max((ak - fk).max(0.0));
            running
        })
        .collect();
    let g = f.values().iter().zip(&ell).map(|(x, l)| x + l).collect();
    Ok(ReflectionResult {
        g: Path::from_parts_unchecked(grid, g),
        ell: Path::from_parts_unchecked(grid, ell),
    })
}

/// Per-step recursion `ℓ_k = max(ℓ_{k-1}, a_k - f_k)`; the engine's update rule.
pub fn stepwise_reflection_oracle(a: &Path, f: &Path) -> Result<ReflectionResult> {
    check_domain(a, f)?;
    let grid = *f.grid();
    let mut reflector = StepReflector::default();
    let mut g = Vec::with_capacity(grid.num_nodes());
    let mut ell = Vec::with_capacity(grid.num_nodes());
    for (&fk, &ak) in f.values().iter().zip(a.values()) {
        let (x, l) = reflector.push(fk, ak);
        g.push(x);
        ell.push(l);
    }
    Ok(ReflectionResult {
        g: Path::from_parts_unchecked(grid, g),
        ell: Path::from_parts_unchecked(grid, ell),
    })
}

/// The reflection term `R = ℓ`, used as the integrator in the reflection cost.
pub fn reflection_increments(r: &ReflectionResult) -> Path {
    r.ell.clone()
}

/// Incremental form of the reflection map, fed one node at a time.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepReflector {
    pushed: f64,
}

impl StepReflector {
    /// Reflects the free value `y` against boundary `a`; returns `(x, ℓ)`.
    #[inline]
    pub fn push(&mut self, y: f64, a: f64) -> (f64, f64) {
        self.pushed = self.pushed.max(a - y);
        (y + self.pushed, self.pushed)
    }

    pub fn pushed(&self) -> f64 {
        self.pushed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::TimeGrid;

    fn grid() -> TimeGrid {
        TimeGrid::new(1.0, 10).unwrap()
    }

    #[test]
    fn no_contact_leaves_path_alone() {
        let g = grid();
        let f = Path::from_fn(g, |t| t).unwrap();
        let a = Path::constant(g, 0.0).unwrap();
        let r = skorokhod_map(&a, &f).unwrap();
        assert_eq!(r.g, f);
        assert!(r.ell.values().iter().all(|&l| l == 0.0));
        assert!(reflection_increments(&r).values().iter().all(|&l| l == 0.0));
    }

    #[test]
    fn decreasing_path_is_held_at_boundary() {
        let g = grid();
        let f = Path::from_fn(g, |t| -t).unwrap();
        let a = Path::constant(g, 0.0).unwrap();
        let r = skorokhod_map(&a, &f).unwrap();
        let nodes = g.nodes();
        for k in 0..=10 {
            assert_eq!(r.ell.value(k), nodes[k]);
            assert_eq!(r.g.value(k), 0.0);
        }
        assert_eq!(reflection_increments(&r).values(), nodes.as_slice());
        r.check_invariants(&a, &f).unwrap();
    }

    #[test]
    fn oracle_unrolls_recursion() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let a = Path::new(g, vec![0.0, 0.0, 0.5, 0.5, 0.0]).unwrap();
        let f = Path::new(g, vec![0.0, -1.0, -0.5, 1.0, -2.0]).unwrap();
        let r = stepwise_reflection_oracle(&a, &f).unwrap();
        assert_eq!(r.ell.values(), &[0.0, 1.0, 1.0, 1.0, 2.0]);
        assert_eq!(r.g.values(), &[0.0, 0.0, 0.5, 2.0, 0.0]);
        assert_eq!(r, skorokhod_map(&a, &f).unwrap());
        r.check_invariants(&a, &f).unwrap();
    }

    #[test]
    fn start_below_boundary_is_rejected() {
        let g = grid();
        let a = Path::constant(g, 1.0).unwrap();
        let f = Path::constant(g, 0.0).unwrap();
        assert!(matches!(skorokhod_map(&a, &f), Err(Error::DomainViolation(_))));
        assert!(matches!(
            stepwise_reflection_oracle(&a, &f),
            Err(Error::DomainViolation(_))
        ));
    }

    #[test]
    fn grid_mismatch_is_invalid_argument() {
        let a = Path::constant(grid(), 0.0).unwrap();
        let f = Path::constant(TimeGrid::new(1.0, 5).unwrap(), 1.0).unwrap();
        assert!(matches!(skorokhod_map(&a, &f), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn reflected_output_is_a_fixed_point() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let a = Path::new(g, vec![0.0, 0.3, -0.2, 0.1, 0.4]).unwrap();
        let f = Path::new(g, vec![0.5, -1.0, 0.2, -0.7, 0.3]).unwrap();
        let r = skorokhod_map(&a, &f).unwrap();
        let again = skorokhod_map(&a, &r.g).unwrap();
        assert_eq!(again.g, r.g);
        assert!(again.ell.values().iter().all(|&l| l == 0.0));
    }
}
