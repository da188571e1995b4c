//! Command-line front end: loads a run configuration, dispatches to the
//! trainers, the Riccati benchmark and the evaluation harness, and writes CSV
//! artifacts plus a manifest into the output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{EnvConfig, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{curve_export, social_cost, trajectory_compare, ActorPolicy, EvalReport};
use crate::grid::TimeGrid;
use crate::lq::{optimal_policy, population_value, solve_riccati, RiccatiSolution, SystemicRiskParams};
use crate::param::{Actor, Critic};
use crate::train::{train_offline, train_online, TrainReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_ASSUMPTION: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "mfac", version, about = "Actor-critic learning for linear-quadratic mean-field control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Whole-episode actor-critic.
    TrainOffline(RunArgs),
    /// Per-step actor-critic.
    TrainOnline(RunArgs),
    /// Solve the Riccati system for the configured model.
    Benchmark(RunArgs),
    /// Monte Carlo social cost of a trained actor.
    Eval(SnapshotArgs),
    /// Learnt critic and actor functions against the benchmark.
    ExportCurves(SnapshotArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the number of training episodes.
    #[arg(long)]
    pub episodes: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SnapshotArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Parameter snapshot; defaults to `snapshot.csv` in the output directory.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
}

/// Exit status for an error that escaped a command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::AssumptionViolation { .. } => EXIT_ASSUMPTION,
        e if e.is_numeric() => EXIT_NUMERIC,
        _ => EXIT_FAILURE,
    }
}

/// Runs one command and returns its exit status; errors are reported on stderr.
pub fn run(cli: Cli) -> i32 {
    let started = Instant::now();
    let outcome = match &cli.command {
        Command::TrainOffline(a) => cmd_train(a, false, started),
        Command::TrainOnline(a) => cmd_train(a, true, started),
        Command::Benchmark(a) => cmd_benchmark(a, started),
        Command::Eval(a) => cmd_eval(a, started),
        Command::ExportCurves(a) => cmd_export_curves(a, started),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

struct Loaded {
    cfg: RunConfig,
    config_sha256: String,
    out_dir: PathBuf,
}

fn load(args: &RunArgs) -> Result<Loaded> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.episodes {
        cfg.train.episodes = n;
    }
    if let Some(dir) = &args.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.validate()?;
    let config_sha256 = hex(&Sha256::digest(cfg.to_toml()?.as_bytes()));
    let out_dir = cfg.out_dir.clone();
    fs::create_dir_all(&out_dir)
        .map_err(|e| Error::Config(format!("out_dir {}: {e}", out_dir.display())))?;
    Ok(Loaded {
        cfg,
        config_sha256,
        out_dir,
    })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_path(path)?)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_sha256: &'a str,
    seed: u64,
    episodes: u64,
    wall_clock_seconds: f64,
    outputs: Vec<String>,
}

fn version() -> &'static str {
    option_env!("MFAC_GIT_DESCRIBE").unwrap_or(concat!("v", env!("CARGO_PKG_VERSION")))
}

fn write_manifest(l: &Loaded, command: &str, started: Instant, outputs: &[&str]) -> Result<()> {
    let m = Manifest {
        command,
        version: version(),
        config_sha256: &l.config_sha256,
        seed: l.cfg.seed,
        episodes: l.cfg.train.episodes,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    let text = toml::to_string(&m).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(l.out_dir.join("manifest.toml"), text)?;
    Ok(())
}

// ---------------------------------------------------------------- snapshots

/// Writes `role,kind,index,value` rows for the critic and the actor.
pub fn write_snapshot(path: &Path, critic: &dyn Critic, actor: &dyn Actor) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["role", "kind", "index", "value"])?;
    for (role, kind, params) in [
        ("critic", critic.kind(), critic.params()),
        ("actor", actor.kind(), actor.params()),
    ] {
        for (i, v) in params.iter().enumerate() {
            w.write_record([role, kind, &i.to_string(), &fmt_f64(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn snapshot_mismatch(path: &Path, msg: String) -> Error {
    Error::Config(format!("snapshot {}: {msg}", path.display()))
}

/// Loads a snapshot into parametrisations built from the config; kinds and lengths must match.
pub fn read_snapshot(path: &Path, critic: &mut dyn Critic, actor: &mut dyn Actor) -> Result<()> {
    let mut r = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| snapshot_mismatch(path, e.to_string()))?;
    let mut critic_values = Vec::new();
    let mut actor_values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| snapshot_mismatch(path, e.to_string()))?;
        let bad = |what: &str| snapshot_mismatch(path, format!("row {}: {what}", line + 2));
        if rec.len() != 4 {
            return Err(bad("expected role,kind,index,value"));
        }
        let index: usize = rec[2].parse().map_err(|_| bad("bad index"))?;
        let value: f64 = rec[3].trim().parse().map_err(|_| bad("bad value"))?;
        let (expected, values) = match &rec[0] {
            "critic" => (critic.kind(), &mut critic_values),
            "actor" => (actor.kind(), &mut actor_values),
            other => return Err(bad(&format!("unknown role {other:?}"))),
        };
        if &rec[1] != expected {
            return Err(bad(&format!("{} kind {:?}, config has {expected:?}", &rec[0], &rec[1])));
        }
        if index != values.len() {
            return Err(bad("indices must be consecutive from 0"));
        }
        values.push(value);
    }
    for (role, values, target) in [
        ("critic", critic_values, critic.params_mut()),
        ("actor", actor_values, actor.params_mut()),
    ] {
        if values.len() != target.len() {
            return Err(snapshot_mismatch(
                path,
                format!("{role} has {} values, config expects {}", values.len(), target.len()),
            ));
        }
        target.copy_from_slice(&values);
    }
    Ok(())
}

// ---------------------------------------------------------------- benchmark data

/// Optimal `(eta, theta)` when both parametrisations are the exact families of the model.
pub fn exact_parameters(cfg: &RunConfig) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    use crate::config::{ActorConfig as A, CriticConfig as C};
    Ok(match (&cfg.env, &cfg.critic, &cfg.actor) {
        (
            EnvConfig::SystemicRisk {
                b_bar,
                i,
                q,
                p,
                gamma,
                horizon,
                ..
            },
            C::ExactSysrisk { .. },
            A::ExactSysrisk { .. },
        ) => {
            let sd = sysrisk_params(*b_bar, *i, *q, *p, *gamma, *horizon).sqrt_delta()?;
            let eta2 = (b_bar + 2.0 * i + 2.0 * p) / sd;
            Some((vec![sd, eta2, b_bar + 2.0 * i, 0.5 * gamma * gamma], vec![sd, eta2, *b_bar]))
        }
        (EnvConfig::Trading { p, h, gamma, .. }, C::ExactTrading { .. }, A::ExactTrading { .. }) => {
            Some((vec![*p, gamma * gamma, h * h], vec![*p, *h]))
        }
        _ => None,
    })
}

fn sysrisk_params(b_bar: f64, i: f64, q: f64, p: f64, gamma: f64, horizon: f64) -> SystemicRiskParams {
    SystemicRiskParams {
        b_bar,
        i,
        q,
        p,
        gamma,
        lambda: 0.0,
        horizon,
    }
}

/// Riccati solution at temperature `lambda`, after checking the model assumptions.
fn benchmark_solution(cfg: &RunConfig, lambda: f64) -> Result<RiccatiSolution> {
    let coeffs = cfg.env.coefficients()?;
    coeffs.validate()?;
    solve_riccati(&coeffs, lambda, TimeGrid::new(cfg.env.horizon(), cfg.benchmark.n_nodes)?)
}

/// Expected optimal value at `t = 0` under the configured initial law.
fn initial_value(cfg: &RunConfig, sol: &RiccatiSolution) -> f64 {
    let law = cfg.env.initial();
    let cov = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(law.variance()));
    population_value(sol, 0.0, &law.mean(), &cov)
}

fn fmt_matrix(a: &DMatrix<f64>) -> String {
    if a.len() == 1 {
        return format!("{:.6}", a[(0, 0)]);
    }
    let rows: Vec<String> = a
        .row_iter()
        .map(|r| r.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", "))
        .collect();
    format!("[{}]", rows.join("; "))
}

fn entry_names(base: &str, rows: usize, cols: usize) -> Vec<String> {
    if rows * cols == 1 {
        return vec![base.to_string()];
    }
    (0..rows)
        .flat_map(|i| (0..cols).map(move |j| if cols == 1 { format!("{base}_{i}") } else { format!("{base}_{i}_{j}") }))
        .collect()
}

fn row_major(a: &DMatrix<f64>) -> Vec<f64> {
    a.transpose().as_slice().to_vec()
}

// ---------------------------------------------------------------- commands

fn write_params_and_costs(dir: &Path, report: &TrainReport) -> Result<()> {
    let (n_eta, n_theta) = (report.final_eta.len(), report.final_theta.len());
    let mut w = csv_writer(&dir.join("params.csv"))?;
    let mut header = vec!["episode".to_string()];
    header.extend((1..=n_eta).map(|i| format!("eta_{i}")));
    header.extend((1..=n_theta).map(|j| format!("theta_{j}")));
    w.write_record(&header)?;
    for r in &report.records {
        let mut row = vec![r.episode.to_string()];
        row.extend(r.eta.iter().chain(&r.theta).map(|v| fmt_f64(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join("costs.csv"))?;
    w.write_record(["episode", "lambda", "rho_s", "batch", "cost", "regularised_cost"])?;
    for r in &report.records {
        w.write_record([
            r.episode.to_string(),
            fmt_f64(r.settings.lambda),
            fmt_f64(r.settings.rho_s),
            r.settings.batch.to_string(),
            fmt_f64(r.cost),
            fmt_f64(r.regularised_cost),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn print_vector(name: &str, v: &[f64]) {
    if v.len() <= 12 {
        let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
        println!("{name} = ({})", parts.join(", "));
    } else {
        println!("{name}: {} parameters", v.len());
    }
}

fn print_comparison(eta: &[f64], theta: &[f64], exact: &(Vec<f64>, Vec<f64>)) {
    let mut header = format!("{:8}", "");
    for i in 1..=eta.len() {
        header.push_str(&format!("{:>10}", format!("eta{i}")));
    }
    for j in 1..=theta.len() {
        header.push_str(&format!("{:>10}", format!("theta{j}")));
    }
    println!("{header}");
    for (label, e, t) in [("learnt", eta, theta), ("exact", &exact.0[..], &exact.1[..])] {
        let mut line = format!("{label:8}");
        for v in e.iter().chain(t) {
            line.push_str(&format!("{v:>10.4}"));
        }
        println!("{line}");
    }
}

fn cmd_train(args: &RunArgs, online: bool, started: Instant) -> Result<i32> {
    let l = load(args)?;
    let cfg = &l.cfg;
    let env = cfg.env.build(None)?;
    let (mut critic, mut actor) = cfg.build_params()?;
    let train = cfg.train_config()?;
    let report = if online {
        train_online(&*env, &mut *actor, &mut *critic, &train)?
    } else {
        train_offline(&*env, &mut *actor, &mut *critic, &train)?
    };
    write_params_and_costs(&l.out_dir, &report)?;
    let snapshot = l.out_dir.join("snapshot.csv");
    write_snapshot(&snapshot, &*critic, &*actor)?;
    let command = if online { "train-online" } else { "train-offline" };
    write_manifest(&l, command, started, &["params.csv", "costs.csv", "snapshot.csv"])?;

    if let Some(abort) = &report.abort {
        eprintln!(
            "numeric abort at episode {}: {}; last finite parameters written to {}",
            abort.episode,
            abort.reason,
            snapshot.display()
        );
        return Ok(EXIT_NUMERIC);
    }
    println!(
        "trained {} episodes in {:.1} s",
        train.episodes,
        report.elapsed.as_secs_f64()
    );
    match exact_parameters(cfg)? {
        Some(exact) => print_comparison(&report.final_eta, &report.final_theta, &exact),
        None => {
            print_vector("eta", &report.final_eta);
            print_vector("theta", &report.final_theta);
        }
    }
    println!("snapshot: {}", snapshot.display());
    Ok(EXIT_OK)
}

fn cmd_benchmark(args: &RunArgs, started: Instant) -> Result<i32> {
    let l = load(args)?;
    let cfg = &l.cfg;
    let lambda = cfg.benchmark_lambda();
    let sol = benchmark_solution(cfg, lambda)?;
    let coeffs = cfg.env.coefficients()?;
    let policy = optimal_policy(&sol, &coeffs, lambda)?;
    let (d, m) = (coeffs.state_dim(), coeffs.action_dim());

    let mut header = vec!["t".to_string()];
    header.extend(entry_names("K", d, d));
    header.extend(entry_names("Lambda", d, d));
    header.extend(entry_names("Y", d, 1));
    header.push("R".into());
    header.extend(entry_names("phi1", m, d));
    header.extend(entry_names("phi2", m, d));
    header.extend(entry_names("phi3", m, 1));
    let mut w = csv_writer(&l.out_dir.join("benchmark.csv"))?;
    w.write_record(&header)?;
    let grid = TimeGrid::new(cfg.env.horizon(), cfg.env.n_steps())?;
    for t in grid.nodes() {
        let p = sol.at(t);
        let c = policy.coefficients_at(t)?;
        let mut row = vec![t];
        row.extend(row_major(&p.k));
        row.extend(row_major(&p.lambda));
        row.extend(p.y.iter());
        row.push(p.r);
        row.extend(row_major(&c.phi1));
        row.extend(row_major(&c.phi2));
        row.extend(c.phi3.iter());
        w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;

    let mut outputs = vec!["benchmark.csv"];
    let exact = exact_parameters(cfg)?;
    if let Some((eta, theta)) = &exact {
        let (mut critic, mut actor) = cfg.build_params()?;
        critic.params_mut().copy_from_slice(eta);
        actor.params_mut().copy_from_slice(theta);
        write_snapshot(&l.out_dir.join("optimal_snapshot.csv"), &*critic, &*actor)?;
        outputs.push("optimal_snapshot.csv");
    }
    write_manifest(&l, "benchmark", started, &outputs)?;

    let p0 = sol.at(0.0);
    let r_plain = if lambda > 0.0 { benchmark_solution(cfg, 0.0)?.at(0.0).r } else { p0.r };
    println!("lambda = {lambda}");
    println!("K(0) = {}", fmt_matrix(&p0.k));
    println!("Lambda(0) = {}", fmt_matrix(&p0.lambda));
    println!("Y(0) = {}", fmt_matrix(&DMatrix::from_column_slice(d, 1, p0.y.as_slice())));
    println!("R(0) = {:.6}", p0.r);
    println!("entropy part of R(0) = {:.6}", p0.r - r_plain);
    println!("initial value = {:.6}", initial_value(cfg, &sol));
    if let EnvConfig::SystemicRisk {
        b_bar,
        i,
        q,
        p,
        gamma,
        horizon,
        ..
    } = &cfg.env
    {
        let sd = sysrisk_params(*b_bar, *i, *q, *p, *gamma, *horizon).sqrt_delta()?;
        println!("sqrt(Delta) = {sd:.4}");
    }
    if let Some((eta, theta)) = &exact {
        print_vector("exact eta", eta);
        print_vector("exact theta", theta);
    }
    Ok(EXIT_OK)
}

fn load_snapshot(l: &Loaded, args: &SnapshotArgs) -> Result<(Box<dyn Critic>, Box<dyn Actor>)> {
    let cfg = &l.cfg;
    let path = args.snapshot.clone().unwrap_or_else(|| l.out_dir.join("snapshot.csv"));
    if !path.exists() {
        return Err(Error::Config(format!("snapshot {} not found", path.display())));
    }
    let (mut critic, mut actor) = cfg.build_params()?;
    read_snapshot(&path, &mut *critic, &mut *actor)?;
    Ok((critic, actor))
}

fn cmd_eval(args: &SnapshotArgs, started: Instant) -> Result<i32> {
    let l = load(&args.run)?;
    let cfg = &l.cfg;
    let (_, actor) = load_snapshot(&l, args)?;
    let lambda = cfg.benchmark_lambda();
    let env = cfg.env.build(cfg.eval.n_steps)?;
    let eval_cfg = cfg.eval_config()?;
    let learnt = ActorPolicy { actor: &*actor, lambda };
    let report = social_cost(&*env, &learnt, &eval_cfg)?;

    let sol = benchmark_solution(cfg, lambda)?;
    let exact_reg = initial_value(cfg, &sol);
    let exact_plain = if lambda > 0.0 {
        initial_value(cfg, &benchmark_solution(cfg, 0.0)?)
    } else {
        exact_reg
    };
    write_eval_report(&l.out_dir.join("eval_report.csv"), &report, lambda, exact_reg, exact_plain)?;

    let optimal = optimal_policy(&sol, &cfg.env.coefficients()?, lambda)?;
    let cmp = trajectory_compare(&*env, &learnt, &optimal, cfg.eval.n_agents, cfg.seed)?;
    let mut w = csv_writer(&l.out_dir.join("trajectories.csv"))?;
    w.write_record([
        "step",
        "t",
        "state_learnt",
        "state_optimal",
        "mean_learnt",
        "mean_optimal",
        "control_learnt",
        "control_optimal",
        "cost_learnt",
        "cost_optimal",
        "control_gap_sup",
    ])?;
    for r in &cmp.rows {
        let mut row = vec![r.step.to_string()];
        row.extend(
            [
                r.t,
                r.state_a,
                r.state_b,
                r.mean_a,
                r.mean_b,
                r.control_a,
                r.control_b,
                r.cost_a,
                r.cost_b,
                r.control_gap_sup,
            ]
            .map(fmt_f64),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    write_manifest(&l, "eval", started, &["eval_report.csv", "trajectories.csv"])?;

    println!(
        "{} populations x {} agents, {} steps",
        eval_cfg.n_populations,
        eval_cfg.n_agents,
        env.grid().n_steps()
    );
    println!("{:28}{:>12}{:>12}", "", "entropic", "plain");
    println!("{:28}{:>12.4}{:>12.4}", "learnt initial cost", report.mean, report.mean);
    println!("{:28}{:>12.4}{:>12.4}", "std across populations", report.std_dev, report.std_dev);
    println!(
        "{:28}{:>11.2}%{:>11.2}%",
        "relative error",
        100.0 * report.relative_error(exact_reg),
        100.0 * report.relative_error(exact_plain)
    );
    println!("{:28}{:>12.4}{:>12.4}", "exact value", exact_reg, exact_plain);
    Ok(EXIT_OK)
}

fn write_eval_report(path: &Path, r: &EvalReport, lambda: f64, exact_reg: f64, exact_plain: f64) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["quantity", "index", "value"])?;
    for (i, c) in r.population_costs.iter().enumerate() {
        w.write_record(["population_cost", &i.to_string(), &fmt_f64(*c)])?;
    }
    for (name, v) in [
        ("mean", r.mean),
        ("std_dev", r.std_dev),
        ("lambda", lambda),
        ("exact_entropic", exact_reg),
        ("relative_error_entropic", r.relative_error(exact_reg)),
        ("exact_plain", exact_plain),
        ("relative_error_plain", r.relative_error(exact_plain)),
    ] {
        w.write_record([name, "", &fmt_f64(v)])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_export_curves(args: &SnapshotArgs, started: Instant) -> Result<i32> {
    let l = load(&args.run)?;
    let cfg = &l.cfg;
    let (critic, actor) = load_snapshot(&l, args)?;
    let lambda = cfg.benchmark_lambda();
    let sol = benchmark_solution(cfg, lambda)?;
    let grid = TimeGrid::new(cfg.env.horizon(), cfg.env.n_steps())?;
    let table = curve_export(&sol, &cfg.env.coefficients()?, &*critic, &*actor, &grid)?;
    let mut w = csv_writer(&l.out_dir.join("curves.csv"))?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;
    write_manifest(&l, "export-curves", started, &["curves.csv"])?;

    let horizon = cfg.env.horizon();
    println!("{:10}{:>14}{:>14}{:>14}", "", "sup gap", "rel [0,T]", "rel [0,0.9T]");
    for col in table.header.iter().filter_map(|h| h.strip_suffix("_gap")) {
        let gap = table.sup_gap(col, horizon)?;
        let rel = gap / table.sup_exact(col, horizon)?;
        let rel09 = table.sup_gap(col, 0.9 * horizon)? / table.sup_exact(col, 0.9 * horizon)?;
        println!("{col:10}{gap:>14.6}{rel:>14.4}{rel09:>14.4}");
    }
    Ok(EXIT_OK)
}
