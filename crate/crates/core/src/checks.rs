//! Randomised oracle and inequality suites, runnable outside the test harness.
//!
//! Each property draws its cases from a seeded generator and reports the
//! number of violations and the worst excess over the allowed bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::paths::{sup_distance, ControlGrid, ControlPath, Path, TimeGrid};
use crate::skorokhod::{skorokhod_map, stepwise_reflection_oracle};
use crate::transport::{
    embed_strict, flatten_relaxed, flow_from_paths, solve_assignment, w2_1d, w2_assignment, w2_weighted,
    EmpiricalMeasure, Euclidean, GroundMetric, OccupationNormalization, RelaxedPathMetric,
    StateControl, StateMeasureMetric, StateWeights, StrictPathMetric, StrictPathPair,
    MAX_WEIGHT_RESOLUTION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Skorokhod,
    Transport,
    Lemmas,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Skorokhod, Suite::Transport, Suite::Lemmas];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Skorokhod => "skorokhod",
            Suite::Transport => "transport",
            Suite::Lemmas => "lemmas",
        }
    }

    pub fn parse(s: &str) -> Result<Suite> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| invalid(format!("unknown suite {s:?} (expected skorokhod, transport or lemmas)")))
    }
}

/// Deliberate defects used to confirm that the suites can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Scales the reflected path by 3 inside the Lipschitz property.
    Lipschitz,
}

impl Fault {
    pub fn parse(s: &str) -> Result<Fault> {
        match s {
            "lipschitz" => Ok(Fault::Lipschitz),
            _ => Err(invalid(format!("unknown fault {s:?} (expected lipschitz)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub suite: &'static str,
    pub property: &'static str,
    pub cases: usize,
    pub violations: usize,
    /// Largest amount by which a case exceeded its bound (0 if none did).
    pub worst_excess: f64,
}

impl PropertyResult {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

struct Tally {
    suite: &'static str,
    property: &'static str,
    cases: usize,
    violations: usize,
    worst: f64,
}

impl Tally {
    fn new(suite: &'static str, property: &'static str) -> Self {
        Tally {
            suite,
            property,
            cases: 0,
            violations: 0,
            worst: 0.0,
        }
    }

    /// Records `lhs <= rhs + slack`.
    fn le(&mut self, lhs: f64, rhs: f64, slack: f64) {
        self.cases += 1;
        let excess = lhs - rhs;
        if !(excess <= slack) {
            self.violations += 1;
            self.worst = self.worst.max(if excess.is_nan() { f64::INFINITY } else { excess });
        }
    }

    fn ok(&mut self, pass: bool) {
        self.cases += 1;
        if !pass {
            self.violations += 1;
            self.worst = f64::INFINITY;
        }
    }

    fn done(self) -> PropertyResult {
        PropertyResult {
            suite: self.suite,
            property: self.property,
            cases: self.cases,
            violations: self.violations,
            worst_excess: self.worst,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Random boundary and free path with `f_0 >= a_0`.
fn reflection_input(rng: &mut ChaCha8Rng, grid: TimeGrid) -> (Path, Path) {
    let sq = grid.dt().sqrt();
    let drift = 2.0 * normal(rng);
    let mut a = vec![normal(rng)];
    let mut f = vec![a[0] + 0.5 * normal(rng).abs()];
    for _ in 0..grid.steps() {
        a.push(a[a.len() - 1] + 0.5 * sq * normal(rng));
        f.push(f[f.len() - 1] + drift * grid.dt() + sq * normal(rng));
    }
    (Path::new(grid, a).expect("finite"), Path::new(grid, f).expect("finite"))
}

fn random_grid(rng: &mut ChaCha8Rng, max_steps: usize) -> TimeGrid {
    let k = rng.random_range(1..=max_steps);
    let t = [0.5, 1.0, 2.0][rng.random_range(0..3)];
    TimeGrid::new(t, k).expect("valid grid")
}

/// Runs one suite. Returns an error only for internal failures, not for
/// property violations.
pub fn run_suite(suite: Suite, seed: u64, fault: Option<Fault>) -> Result<Vec<PropertyResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (suite as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    match suite {
        Suite::Skorokhod => skorokhod_suite(&mut rng, fault),
        Suite::Transport => transport_suite(&mut rng),
        Suite::Lemmas => lemma_suite(&mut rng),
    }
}

fn skorokhod_suite(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<Vec<PropertyResult>> {
    let s = "skorokhod";
    let mut oracle = Tally::new(s, "closed form equals stepwise recursion");
    let mut invariants = Tally::new(s, "complementarity and monotonicity");
    let mut minimal = Tally::new(s, "minimal pushing");
    let mut idem = Tally::new(s, "idempotence");
    for _ in 0..1000 {
        let grid = random_grid(rng, 200);
        let (a, f) = reflection_input(rng, grid);
        let r = skorokhod_map(&a, &f)?;
        let o = stepwise_reflection_oracle(&a, &f)?;
        oracle.le(sup_distance(&r.g, &o.g)?.max(sup_distance(&r.ell, &o.ell)?), 0.0, 1e-12);
        invariants.ok(r.check_invariants(&a, &f).is_ok());
        // Any feasible pushing: running max of (a - f + e)⁺ with e >= 0.
        let mut run = 0.0_f64;
        let mut worst = f64::NEG_INFINITY;
        for k in 0..=grid.steps() {
            let e = if rng.random::<f64>() < 0.2 { rng.random::<f64>() } else { 0.0 };
            run = run.max((a.value(k) - f.value(k) + e).max(0.0));
            worst = worst.max(r.ell.value(k) - run);
        }
        minimal.le(worst, 0.0, 0.0);
        let again = skorokhod_map(&a, &r.g)?;
        idem.le(sup_distance(&again.g, &r.g)?.max(again.ell.last()), 0.0, 1e-12);
    }
    let mut lip = Tally::new(s, "Lipschitz bound");
    let gamma = |a: &Path, f: &Path| -> Result<Path> {
        let g = skorokhod_map(a, f)?.g;
        Ok(match fault {
            Some(Fault::Lipschitz) => Path::new(*g.grid(), g.values().iter().map(|v| 3.0 * v).collect())?,
            None => g,
        })
    };
    for case in 0..1000 {
        let grid = random_grid(rng, 200);
        let (a1, f1) = reflection_input(rng, grid);
        let (a2, f2) = if case % 2 == 0 {
            reflection_input(rng, grid)
        } else {
            let eps = 0.1 * rng.random::<f64>();
            let bump = |p: &Path, rng: &mut ChaCha8Rng| {
                Path::new(grid, p.values().iter().map(|v| v + eps * normal(rng)).collect()).expect("finite")
            };
            let a2 = bump(&a1, rng);
            let mut f2 = bump(&f1, rng).into_values();
            f2[0] = f2[0].max(a2.value(0));
            (a2, Path::new(grid, f2)?)
        };
        let lhs = sup_distance(&gamma(&a1, &f1)?, &gamma(&a2, &f2)?)?;
        let rhs = 2.0 * sup_distance(&f1, &f2)? + sup_distance(&a1, &a2)?;
        lip.le(lhs, rhs, 1e-12);
    }
    Ok(vec![oracle.done(), invariants.done(), minimal.done(), idem.done(), lip.done()])
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn transport_suite(rng: &mut ChaCha8Rng) -> Result<Vec<PropertyResult>> {
    let s = "transport";
    let mut sorted = Tally::new(s, "sorted coupling equals assignment");
    for _ in 0..200 {
        let n = rng.random_range(1..=64);
        let xs: Vec<f64> = (0..n).map(|_| 3.0 * normal(rng)).collect();
        let ys: Vec<f64> = (0..n).map(|_| 1.0 + 2.0 * normal(rng)).collect();
        let (mu, nu) = (EmpiricalMeasure::new(xs)?, EmpiricalMeasure::new(ys)?);
        let a = w2_1d(&mu, &nu)?;
        let b = w2_assignment(&mu, &nu, &Euclidean, 64)?;
        sorted.le((a - b).abs(), 0.0, 1e-9);
    }
    let mut brute = Tally::new(s, "assignment equals enumeration");
    for _ in 0..100 {
        let n = rng.random_range(1..=7);
        let pts = |rng: &mut ChaCha8Rng| -> Vec<StateControl> {
            (0..n).map(|_| StateControl { x: normal(rng), u: normal(rng) }).collect()
        };
        let (p, q) = (pts(rng), pts(rng));
        let mut c = Vec::with_capacity(n * n);
        for a in &p {
            for b in &q {
                let d = Euclidean.distance(a, b)?;
                c.push(d * d);
            }
        }
        let best = permutations(n)
            .iter()
            .map(|perm| perm.iter().enumerate().map(|(i, &j)| c[i * n + j]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let lap = solve_assignment(&c, n)?.cost;
        let w2 = w2_assignment(&EmpiricalMeasure::new(p)?, &EmpiricalMeasure::new(q)?, &Euclidean, 64)?;
        brute.ok(lap == best && w2 == (best / n as f64).sqrt());
    }
    Ok(vec![sorted.done(), brute.done()])
}

fn quarter_weights(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let mut w = vec![0.0; m];
    for _ in 0..4 {
        w[rng.random_range(0..m)] += 0.25;
    }
    w
}

fn random_strict_law(rng: &mut ChaCha8Rng, grid: TimeGrid, cg: &ControlGrid, n: usize) -> Result<(Vec<Path>, Vec<ControlPath>)> {
    let mut xs = Vec::with_capacity(n);
    let mut cs = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = vec![normal(rng)];
        for _ in 0..grid.steps() {
            x.push(x[x.len() - 1] + grid.dt().sqrt() * normal(rng));
        }
        xs.push(Path::new(grid, x)?);
        let idx = (0..grid.steps()).map(|_| rng.random_range(0..cg.len())).collect();
        cs.push(ControlPath::new(grid, cg, idx)?);
    }
    Ok((xs, cs))
}

fn strict_law_w2(x1: &[Path], c1: &[ControlPath], x2: &[Path], c2: &[ControlPath]) -> Result<f64> {
    let law = |x: &[Path], c: &[ControlPath]| {
        EmpiricalMeasure::new(
            x.iter()
                .zip(c)
                .map(|(x, c)| StrictPathPair { x: x.clone(), control: c.clone() })
                .collect(),
        )
    };
    w2_assignment(&law(x1, c1)?, &law(x2, c2)?, &StrictPathMetric, 64)
}

fn lemma_suite(rng: &mut ChaCha8Rng) -> Result<Vec<PropertyResult>> {
    let s = "lemmas";
    let mut flat = Tally::new(s, "flattening is 1-Lipschitz");
    for _ in 0..200 {
        let m = rng.random_range(2..=4);
        let cg = ControlGrid::uniform(-1.0, 1.0, m)?;
        let n = rng.random_range(1..=6);
        let mk = |rng: &mut ChaCha8Rng| -> Result<EmpiricalMeasure<StateWeights>> {
            EmpiricalMeasure::new(
                (0..n)
                    .map(|_| StateWeights { x: normal(rng), weights: quarter_weights(rng, m) })
                    .collect(),
            )
        };
        let (xi1, xi2) = (mk(rng)?, mk(rng)?);
        let (p1, p2) = (flatten_relaxed(&xi1, &cg)?, flatten_relaxed(&xi2, &cg)?);
        let lhs = w2_weighted(&p1, &p2, &Euclidean, MAX_WEIGHT_RESOLUTION, 1024)?;
        let rhs = w2_assignment(&xi1, &xi2, &StateMeasureMetric::new(&cg), 64)?;
        flat.le(lhs, rhs, 1e-9);
    }

    let mut cb = Tally::new(s, "node flows bounded by path law");
    let mut ext = Tally::new(s, "relaxed embedding is 1-Lipschitz");
    for _ in 0..200 {
        let grid = random_grid(rng, 6);
        let cg = ControlGrid::uniform(-1.0, 1.0, rng.random_range(2..=4))?;
        let n = rng.random_range(1..=5);
        let (x1, c1) = random_strict_law(rng, grid, &cg, n)?;
        let (x2, c2) = random_strict_law(rng, grid, &cg, n)?;
        let rhs = strict_law_w2(&x1, &c1, &x2, &c2)?;

        let f1 = flow_from_paths(&x1.iter().collect::<Vec<_>>(), &c1.iter().collect::<Vec<_>>())?;
        let f2 = flow_from_paths(&x2.iter().collect::<Vec<_>>(), &c2.iter().collect::<Vec<_>>())?;
        let mut lhs = 0.0;
        for k in 0..grid.steps() {
            let w = w2_assignment(f1.node(k), f2.node(k), &Euclidean, 64)?;
            lhs += w * w * grid.dt();
        }
        cb.le(lhs, grid.horizon().max(1.0) * rhs * rhs, 1e-9);

        let e1 = embed_strict(&x1, &c1, &cg)?;
        let e2 = embed_strict(&x2, &c2, &cg)?;
        let metric = RelaxedPathMetric { normalization: OccupationNormalization::Mass };
        ext.le(w2_assignment(&e1, &e2, &metric, 64)?, rhs, 1e-9);
    }
    Ok(vec![flat.done(), cb.done(), ext.done()])
}
