use std::path::{Path, PathBuf};

use clap::Args;
use mfg_reflect::bundle;
use mfg_reflect::checks::{run_suite, Fault, Suite};
use mfg_reflect::mfe_solver::{certify, solve_mfe, MfeOptions, MfeSolution};
use mfg_reflect::nplayer::{convergence_study, deviation_set, nash_gap, simulate_nplayer, study_means, trend_holds, StudyOptions};
use mfg_reflect::transport::NodeStats;
use mfg_reflect::{skorokhod_map, Path as GridPath, ScenarioSpec, TimeGrid};
use serde_json::json;

use crate::manifest::execute;
use crate::output::{num, CliResult, Table};
use crate::plot::convergence_svg;

pub const EXIT_NOT_CONVERGED: u8 = 2;
pub const EXIT_CHECK_FAILED: u8 = 3;

fn load_bundle(path: &Path) -> CliResult<(ScenarioSpec, MfeSolution)> {
    if !path.is_file() {
        return Err(format!("bundle {} does not exist", path.display()).into());
    }
    bundle::load(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn flow_table(grid: &TimeGrid, stats: &[NodeStats]) -> CliResult<Vec<u8>> {
    let mut t = Table::new(&["k", "t", "mean_x", "mean_u", "m2_x", "m2_u"])?;
    for (k, s) in stats.iter().enumerate() {
        t.row([k.to_string(), num(grid.node(k)), num(s.mean_x), num(s.mean_u), num(s.m2_x), num(s.m2_u)])?;
    }
    t.into_bytes()
}

// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct SolveArgs {
    /// Scenario TOML file.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = MfeOptions::default().particles)]
    particles: usize,
    /// Maximum number of fixed-point iterations.
    #[arg(long, default_value_t = MfeOptions::default().max_iters)]
    iters: usize,
    /// Residual tolerance, in the units of the node-wise W2 residual.
    #[arg(long, default_value_t = MfeOptions::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = MfeOptions::default().theta)]
    theta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also run the fresh-pool and exploitability recheck.
    #[arg(long)]
    certify: bool,
}

pub fn cmd_solve_mfe(a: SolveArgs, jobs: usize) -> CliResult<u8> {
    let spec = ScenarioSpec::from_file(&a.scenario).map_err(|e| e.to_string())?;
    let opts = MfeOptions {
        particles: a.particles,
        max_iters: a.iters,
        tol: a.tol,
        theta: a.theta,
        seed: a.seed,
    };
    let config = json!({ "scenario": spec, "options": opts, "certify": a.certify });
    execute(&a.out, "solve-mfe", config, Some(a.seed), jobs, |run| {
        let sol = solve_mfe(&spec, &opts)?;
        run.write("bundle.json", bundle::to_json(&spec, &sol)?.as_bytes())?;

        let mut res = Table::new(&["iteration", "residual"])?;
        for (i, r) in sol.residual_history.iter().enumerate() {
            res.row([(i + 1).to_string(), num(*r)])?;
        }
        run.write("residuals.csv", &res.into_bytes()?)?;
        run.write("flow.csv", &flow_table(sol.flow.grid(), sol.flow.all_stats())?)?;

        let ex = sol.exploitability;
        let mut summary = Table::new(&["key", "value"])?;
        let mut rows: Vec<(&str, String)> = vec![
            ("converged", sol.converged.to_string()),
            ("iterations", sol.iterations.to_string()),
            ("final_residual", num(*sol.residual_history.last().expect("one iteration"))),
            ("exploitability_gap", num(ex.gap)),
            ("exploitability_se", num(ex.se)),
            ("policy_cost", num(ex.policy_cost)),
            ("best_response_cost", num(ex.best_response_cost)),
            ("cost_scale", num(sol.cost_scale)),
            ("clamped_initial_draws", sol.pool.clamped.to_string()),
        ];
        if a.certify {
            let c = certify(&spec, &sol, a.seed)?;
            rows.extend([
                ("fresh_residual", num(c.fresh_residual)),
                ("bootstrap_allowance", num(c.bootstrap_allowance)),
                ("recheck_gap", num(c.exploitability.gap)),
                ("recheck_se", num(c.exploitability.se)),
                ("recheck_threshold", num(c.exploitability_threshold)),
                ("consistent", c.consistent.to_string()),
                ("optimal", c.optimal.to_string()),
            ]);
        }
        for (k, v) in &rows {
            summary.row([*k, v.as_str()])?;
        }
        run.write("summary.csv", &summary.into_bytes()?)?;

        println!(
            "{} after {} iterations, residual {:.4e}, exploitability {:.3e} (se {:.1e})",
            if sol.converged { "converged" } else { "not converged" },
            sol.iterations,
            sol.residual_history.last().expect("one iteration"),
            ex.gap,
            ex.se
        );
        Ok(if sol.converged { 0 } else { EXIT_NOT_CONVERGED })
    })
}

// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct NPlayerArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Number of players.
    #[arg(long = "N", alias = "n")]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn cmd_simulate_nplayer(a: NPlayerArgs, jobs: usize) -> CliResult<u8> {
    let (spec, sol) = load_bundle(&a.bundle)?;
    let config = json!({ "bundle": a.bundle, "n": a.n, "scenario": spec });
    execute(&a.out, "simulate-nplayer", config, Some(a.seed), jobs, |run| {
        let game = simulate_nplayer(&spec, &sol.policy, a.n, a.seed)?;
        let mut players = Table::new(&["player", "cost", "x_final", "r_final", "sup_abs_y"])?;
        for (i, (t, c)) in game.trajectories.iter().zip(&game.costs).enumerate() {
            players.row([i.to_string(), num(*c), num(t.x.last()), num(t.r.last()), num(t.y.sup_abs())])?;
        }
        run.write("players.csv", &players.into_bytes()?)?;
        run.write("flow.csv", &flow_table(game.flow.grid(), &game.step_stats)?)?;
        let mean = game.costs.iter().sum::<f64>() / game.costs.len() as f64;
        println!("{} players, mean cost {mean:.6e}", a.n);
        Ok(0)
    })
}

// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct GapArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long = "N", alias = "n")]
    n: usize,
    /// Index of the deviating player.
    #[arg(long, default_value_t = 0)]
    player: usize,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Constant-control deviations spread over the control grid.
    #[arg(long, default_value_t = 5)]
    constants: usize,
    /// Leave out the finite-population best response.
    #[arg(long)]
    no_finite_population: bool,
    #[arg(long)]
    out: PathBuf,
}

pub fn cmd_nash_gap(a: GapArgs, jobs: usize) -> CliResult<u8> {
    let (spec, sol) = load_bundle(&a.bundle)?;
    if a.player >= a.n {
        return Err(format!("player {} out of range for N = {}", a.player, a.n).into());
    }
    let config = json!({
        "bundle": a.bundle, "n": a.n, "player": a.player, "reps": a.reps,
        "constants": a.constants, "finite_population": !a.no_finite_population, "scenario": spec,
    });
    execute(&a.out, "nash-gap", config, Some(a.seed), jobs, |run| {
        let devs = deviation_set(&spec, &sol.flow, a.n, a.constants, !a.no_finite_population)?;
        let r = nash_gap(&spec, &sol.policy, a.n, a.player, &devs, a.reps, a.seed)?;
        let mut t = Table::new(&["deviation", "mean_gain", "se"])?;
        for d in &r.deviations {
            t.row([d.label.clone(), num(d.mean), num(d.se)])?;
        }
        run.write("gap.csv", &t.into_bytes()?)?;
        println!("N = {}, player {}: gap {:.4e} (se {:.1e})", r.n, r.player, r.gap, r.se);
        Ok(0)
    })
}

// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct ConvergenceArgs {
    /// Solution bundle from `solve-mfe`.
    #[arg(long)]
    mfe: PathBuf,
    /// Population sizes, comma separated.
    #[arg(long = "N", value_delimiter = ',', default_values_t = StudyOptions::default().n_list)]
    n_list: Vec<usize>,
    #[arg(long, default_value_t = StudyOptions::default().seeds)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Players whose deviations are evaluated per seed (default: all).
    #[arg(long)]
    players_per_seed: Option<usize>,
    #[arg(long, default_value_t = StudyOptions::default().constant_deviations)]
    constants: usize,
    #[arg(long)]
    no_finite_population: bool,
    /// Also write convergence.svg.
    #[arg(long)]
    plot: bool,
    #[arg(long)]
    out: PathBuf,
}

pub fn cmd_convergence(a: ConvergenceArgs, jobs: usize) -> CliResult<u8> {
    let (spec, sol) = load_bundle(&a.mfe)?;
    let opts = StudyOptions {
        n_list: a.n_list.clone(),
        seeds: a.seeds,
        players_per_seed: a.players_per_seed,
        constant_deviations: a.constants,
        finite_population_deviation: !a.no_finite_population,
        seed: a.seed,
    };
    let config = json!({ "mfe": a.mfe, "study": opts, "scenario": spec });
    execute(&a.out, "convergence", config, Some(a.seed), jobs, |run| {
        let rows = convergence_study(&spec, &sol, &opts)?;
        let mut t = Table::new(&["N", "seed", "w2_pathspace", "w2_nodeflow", "max_gap", "gap_se"])?;
        for r in &rows {
            t.row([
                r.n.to_string(),
                r.seed.to_string(),
                num(r.w2_pathspace),
                num(r.w2_nodeflow),
                num(r.max_gap),
                num(r.gap_se),
            ])?;
        }
        run.write("study.csv", &t.into_bytes()?)?;

        let means = study_means(&rows);
        let mut m = Table::new(&["N", "w2_pathspace", "w2_nodeflow", "max_gap", "gap_se"])?;
        for (n, r) in &means {
            m.row([n.to_string(), num(r.w2_pathspace), num(r.w2_nodeflow), num(r.max_gap), num(r.gap_se)])?;
            println!(
                "N = {n:>5}: w2_pathspace {:.4e}  w2_nodeflow {:.4e}  max_gap {:.4e}",
                r.w2_pathspace, r.w2_nodeflow, r.max_gap
            );
        }
        run.write("means.csv", &m.into_bytes()?)?;
        if means.len() >= 2 {
            let a_trend = trend_holds(&means.iter().map(|m| m.1.w2_pathspace).collect::<Vec<_>>());
            let g_trend = trend_holds(&means.iter().map(|m| m.1.max_gap).collect::<Vec<_>>());
            println!("trend w2_pathspace: {}", if a_trend { "decreasing" } else { "not decreasing" });
            println!("trend max_gap: {}", if g_trend { "decreasing" } else { "not decreasing" });
        }
        if a.plot {
            run.write("convergence.svg", convergence_svg(&means)?.as_bytes())?;
        }
        Ok(0)
    })
}

// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct CheckArgs {
    /// Run only these suites (skorokhod, transport, lemmas).
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
    /// Inject a known defect to confirm the suites can fail (lipschitz).
    #[arg(long)]
    inject: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write check.csv and a manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn cmd_check(a: CheckArgs, jobs: usize) -> CliResult<u8> {
    let suites: Vec<Suite> = if a.only.is_empty() {
        Suite::ALL.to_vec()
    } else {
        a.only.iter().map(|s| Suite::parse(s)).collect::<Result<_, _>>()?
    };
    let fault = a.inject.as_deref().map(Fault::parse).transpose()?;
    let body = |mut write: Option<&mut crate::manifest::Run>| -> CliResult<u8> {
        let mut t = Table::new(&["suite", "property", "cases", "violations", "worst_excess", "status"])?;
        let mut failed = 0;
        for s in &suites {
            let results = run_suite(*s, a.seed, fault)?;
            let ok = results.iter().all(|r| r.passed());
            println!("{} {}", if ok { "PASS" } else { "FAIL" }, s.name());
            for r in &results {
                let status = if r.passed() { "PASS" } else { "FAIL" };
                println!(
                    "  {status} {}: {} cases, {} violations, worst excess {:.3e}",
                    r.property, r.cases, r.violations, r.worst_excess
                );
                if !r.passed() {
                    failed += 1;
                }
                t.row([
                    r.suite.to_string(),
                    r.property.to_string(),
                    r.cases.to_string(),
                    r.violations.to_string(),
                    num(r.worst_excess),
                    status.to_string(),
                ])?;
            }
        }
        if let Some(run) = write.as_mut() {
            run.write("check.csv", &t.into_bytes()?)?;
        }
        Ok(if failed == 0 { 0 } else { EXIT_CHECK_FAILED })
    };
    match &a.out {
        Some(dir) => {
            let config = json!({
                "suites": suites.iter().map(|s| s.name()).collect::<Vec<_>>(),
                "inject": a.inject,
            });
            execute(dir, "check", config, Some(a.seed), jobs, |run| body(Some(run)))
        }
        None => body(None),
    }
}

// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct SkorokhodArgs {
    /// CSV with columns t, a, f on a uniform grid starting at t = 0.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn read_pair(path: &Path) -> CliResult<(GridPath, GridPath)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| format!("{}: missing column {name:?}", path.display()))
    };
    let (it, ia, i_f) = (col("t")?, col("a")?, col("f")?);
    let (mut t, mut a, mut f) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| -> CliResult<f64> {
            rec.get(i)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| format!("{}: line {}: bad number in column {}", path.display(), line + 2, i + 1).into())
        };
        t.push(field(it)?);
        a.push(field(ia)?);
        f.push(field(i_f)?);
    }
    if t.len() < 2 {
        return Err(format!("{}: need at least two rows", path.display()).into());
    }
    let k = t.len() - 1;
    let grid = TimeGrid::new(t[k], k)?;
    for (i, &ti) in t.iter().enumerate() {
        if (ti - grid.node(i)).abs() > 1e-9 * grid.horizon().max(1.0) {
            return Err(format!("{}: line {}: times must form a uniform grid from 0", path.display(), i + 2).into());
        }
    }
    Ok((GridPath::new(grid, a)?, GridPath::new(grid, f)?))
}

pub fn cmd_skorokhod(a: SkorokhodArgs, jobs: usize) -> CliResult<u8> {
    let (bound, input) = read_pair(&a.input)?;
    let config = json!({ "input": a.input, "steps": bound.grid().steps(), "horizon": bound.grid().horizon() });
    execute(&a.out, "skorokhod", config, None, jobs, |run| {
        let r = skorokhod_map(&bound, &input)?;
        let grid = *bound.grid();
        let mut t = Table::new(&["k", "t", "a", "f", "g", "ell"])?;
        for k in 0..grid.num_nodes() {
            t.row([
                k.to_string(),
                num(grid.node(k)),
                num(bound.value(k)),
                num(input.value(k)),
                num(r.g.value(k)),
                num(r.ell.value(k)),
            ])?;
        }
        run.write("reflected.csv", &t.into_bytes()?)?;
        println!("reflected {} nodes, total push {:.6e}", grid.num_nodes(), r.ell.last());
        Ok(0)
    })
}
