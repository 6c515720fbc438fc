use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use robustcoop::config::{EnvironmentConfig, RunConfig};
use robustcoop::dqn::{greedy_fidelity, train_adaptdqn};
use robustcoop::env::GatheringConfig;
use robustcoop::harness::report::{write_bounds_report, write_eval_outputs, INFERENCE_TRACE_HEADER};
use robustcoop::harness::{
    evaluate_grid, run_test_phase, verify_bounds_campaign, with_baselines, Algorithm, AlgorithmSpec, Estimator,
    PolicyHandle,
};
use robustcoop::io::{
    hash_json, load_artifact, save_artifact, Artifact, ArtifactKind, DqnArtifact, Manifest, PoolArtifact,
};
use robustcoop::par::{self, Execution};
use robustcoop::pool::{train_pool, training_cover};
use robustcoop::{Error, MdpFamily, Result, ThetaVector};

#[derive(Parser)]
#[command(name = "robustcoop", version, about = "Adaptive policies for cooperating with agents of unknown type")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, env = "ROBUSTCOOP_SEED")]
    seed: Option<u64>,
    /// Use the default gathering game on an N×N grid.
    #[arg(long, global = true, value_name = "N")]
    grid: Option<usize>,
    /// Directory for artifacts and CSVs
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Worker threads for data-parallel work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve best responses on an ε-cover of Θ for each configured radius.
    TrainPool {
        /// Cover radius; repeat for several pools.
        #[arg(long = "radius")]
        radii: Vec<f64>,
    },
    /// Train the AdaptDQN network on the training grid.
    TrainDqn {
        /// Training iteration budget
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Evaluate every algorithm over a grid of true types.
    Eval {
        /// Pool artifact; repeatable. Pools are trained from the config when omitted.
        #[arg(long = "pool")]
        pools: Vec<PathBuf>,
        /// AdaptDQN model artifact.
        #[arg(long, alias = "load-model")]
        model: Option<PathBuf>,
        /// Spacing of the θ_test grid
        #[arg(long)]
        resolution: Option<f64>,
        /// Runs per grid cell
        #[arg(long)]
        runs: Option<usize>,
        /// Episodes per run
        #[arg(long)]
        episodes: Option<usize>,
        /// Steps per episode
        #[arg(long)]
        steps: Option<usize>,
        /// Also run the bound-verification campaign.
        #[arg(long)]
        verify: bool,
        /// Verification trials
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Run the inference module against one true type and print its estimates.
    InferDemo {
        /// True type, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        theta: Vec<f64>,
        /// Episodes to simulate
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Randomized checks of the value-difference, smoothness, Pinsker and regret bounds.
    Verify {
        /// Verification trials
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Summarize an eval_grid.csv into per-algorithm worst- and average-case regret.
    ExportReport {
        /// Defaults to eval_grid.csv in the output directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::Artifact(_) => Failure::Usage(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(n) = common.grid {
        config.environment = EnvironmentConfig::Gathering(GatheringConfig::for_grid(n));
    }
    if let Some(dir) = &common.output_dir {
        config.output_dir = dir.clone();
    }
    Ok(config)
}

fn config_hash(config: &RunConfig) -> Result<String> {
    hash_json(config)
}

fn build_family(config: &RunConfig) -> CliResult<Box<dyn MdpFamily>> {
    config.validate()?;
    Ok(config.environment.build()?)
}

fn pool_path(dir: &Path, radius: f64) -> PathBuf {
    dir.join(format!("pool_{radius}.json"))
}

fn train_pools(family: &dyn MdpFamily, radii: &[f64]) -> Result<Vec<PoolArtifact>> {
    radii
        .iter()
        .map(|&radius| {
            let points = training_cover(family, radius)?;
            Ok(PoolArtifact { radius, pool: train_pool(family, &points, Execution::Parallel)? })
        })
        .collect()
}

fn cmd_train_pool(mut config: RunConfig, radii: Vec<f64>) -> CliResult<()> {
    if !radii.is_empty() {
        config.training.cover_radii = radii;
    }
    let family = build_family(&config)?;
    let hash = config_hash(&config)?;
    for art in train_pools(family.as_ref(), &config.training.cover_radii)? {
        let path = pool_path(&config.output_dir, art.radius);
        println!(
            "{}: {} policies, audited cover radius {:.4} -> {}",
            art.name(),
            art.pool.len(),
            art.pool.cover_radius,
            path.display()
        );
        let manifest = Manifest::new(ArtifactKind::Pool, family.as_ref(), hash.clone(), config.seed)?;
        save_artifact(&path, &Artifact { manifest, payload: art })?;
    }
    Ok(())
}

fn cmd_train_dqn(mut config: RunConfig, iterations: Option<usize>) -> CliResult<()> {
    if let Some(n) = iterations {
        config.training.dqn.max_iterations = n;
    }
    config.training.dqn.seed = config.seed;
    let family = build_family(&config)?;
    let points = family.space().grid(config.training.train_resolution)?;
    let (network, log) = train_adaptdqn(family.as_ref(), &points, &config.training.dqn)?;
    let fidelity = greedy_fidelity(&network, family.as_ref(), &points)?;
    println!(
        "{} iterations ({:?}); greedy match {:.4} (tie-aware), {:.4} (lowest index)",
        log.iterations,
        log.stop,
        fidelity.optimal_rate(),
        fidelity.exact_rate()
    );
    std::fs::create_dir_all(&config.output_dir).map_err(Error::from)?;
    let mut w = csv::Writer::from_path(config.output_dir.join("training_log.csv")).map_err(Error::from)?;
    w.write_record(["iteration", "validation_mse"]).map_err(Error::from)?;
    for c in &log.checkpoints {
        w.write_record([c.iteration.to_string(), c.validation_mse.to_string()]).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    let path = config.output_dir.join("dqn.json");
    let manifest = Manifest::new(ArtifactKind::Dqn, family.as_ref(), config_hash(&config)?, config.seed)?;
    save_artifact(&path, &Artifact { manifest, payload: DqnArtifact { network, log } })?;
    println!("model -> {}", path.display());
    Ok(())
}

struct EvalArgs {
    pools: Vec<PathBuf>,
    model: Option<PathBuf>,
    verify: bool,
}

fn cmd_eval(config: RunConfig, args: EvalArgs) -> CliResult<()> {
    let family = build_family(&config)?;
    let family = family.as_ref();
    let settings = config.eval_settings()?;

    let pools = if args.pools.is_empty() {
        train_pools(family, &config.training.cover_radii)?
    } else {
        let mut pools = Vec::new();
        for path in &args.pools {
            let art: Artifact<PoolArtifact> = load_artifact(path, ArtifactKind::Pool)?;
            art.manifest.check_environment(family)?;
            pools.push(art.payload);
        }
        pools
    };
    let mut algorithms: Vec<Algorithm> =
        pools.into_iter().map(|p| Algorithm::new(p.name(), AlgorithmSpec::Pool(p.pool))).collect();
    if let Some(path) = &args.model {
        let art: Artifact<DqnArtifact> = load_artifact(path, ArtifactKind::Dqn)?;
        art.manifest.check_environment(family)?;
        algorithms.push(Algorithm::new("AdaptDQN", AlgorithmSpec::Dqn(art.payload.network)));
    }
    let candidates = family.space().grid(config.training.train_resolution)?;
    let algorithms = with_baselines(family, algorithms, &candidates, Execution::Parallel)?;

    let report = evaluate_grid(family, &algorithms, &settings, Execution::Parallel)?;
    write_eval_outputs(&report, &config.output_dir)?;
    println!("{:<16} {:>12} {:>12}", "algorithm", "worst_regret", "avg_regret");
    for s in &report.summaries {
        println!("{:<16} {:>12.4} {:>12.4}", s.algorithm, s.worst_case, s.average_case);
    }
    for f in &report.failures {
        eprintln!("cell {} / {}: {}", f.cell, f.algorithm, f.message);
    }
    if !report.is_complete() {
        return Err(Failure::Run(format!("{} cell runs failed", report.failures.len())));
    }
    if args.verify {
        run_verify(&config)?;
    }
    Ok(())
}

fn run_verify(config: &RunConfig) -> CliResult<()> {
    let report = verify_bounds_campaign(config.seed, config.verification.trials)?;
    std::fs::create_dir_all(&config.output_dir).map_err(Error::from)?;
    let path = config.output_dir.join("bounds_report.csv");
    write_bounds_report(&report, std::fs::File::create(&path).map_err(Error::from)?)?;
    let failed = report.rows.iter().filter(|r| !r.pass).count();
    println!("{} bound checks, {} failed -> {}", report.rows.len(), failed, path.display());
    report.check()?;
    Ok(())
}

fn cmd_infer_demo(config: RunConfig, theta: Vec<f64>, episodes: Option<usize>) -> CliResult<()> {
    let family = build_family(&config)?;
    let family = family.as_ref();
    let theta = ThetaVector(theta);
    family.space().check(&theta).map_err(|e| Error::Config { field: "--theta".into(), message: e.to_string() })?;
    let theta0 = config.inference.theta0.clone().unwrap_or_else(|| family.space().center());
    let estimator = Estimator::for_family(family, theta0, config.inference.learning_rate)?;
    let episodes = episodes.unwrap_or(config.evaluation.episodes);
    let seed = robustcoop::seed::derive(config.seed, &[0]);
    let rec = run_test_phase(family, &theta, "Oracle", PolicyHandle::Oracle, estimator, episodes, config.evaluation.steps, seed)?;

    std::fs::create_dir_all(&config.output_dir).map_err(Error::from)?;
    let path = config.output_dir.join("inference_demo.csv");
    let mut w = csv::Writer::from_path(&path).map_err(Error::from)?;
    w.write_record(INFERENCE_TRACE_HEADER).map_err(Error::from)?;
    let coord = |t: &ThetaVector, i: usize| t.0.get(i).map(f64::to_string).unwrap_or_default();
    for (e, (est, err)) in rec.theta_trace.iter().zip(&rec.inference_error).enumerate() {
        w.write_record([
            coord(&theta, 0),
            coord(&theta, 1),
            "0".to_string(),
            (e + 1).to_string(),
            coord(est, 0),
            coord(est, 1),
            err.to_string(),
        ])
        .map_err(Error::from)?;
        if e == 0 || (e + 1) % 10 == 0 {
            println!("episode {:>4}  estimate {:?}  error {:.4}", e + 1, est.0, err);
        }
    }
    w.flush().map_err(Error::from)?;
    println!("final error {:.4} -> {}", rec.final_inference_error, path.display());
    Ok(())
}

fn cmd_export_report(config: RunConfig, input: Option<PathBuf>) -> CliResult<()> {
    let input = input.unwrap_or_else(|| config.output_dir.join("eval_grid.csv"));
    let mut reader = csv::Reader::from_path(&input)
        .map_err(|e| Error::Artifact(format!("cannot read {}: {e}", input.display())))?;
    let headers = reader.headers().map_err(Error::from)?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Artifact(format!("{} has no `{name}` column", input.display())))
    };
    let (t1, t2, alg, regret) = (column("theta1")?, column("theta2")?, column("algorithm")?, column("regret")?);
    // algorithm -> cell -> (sum, count); BTreeMap keeps the output order stable
    let mut cells: BTreeMap<String, BTreeMap<(String, String), (f64, usize)>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for row in reader.records() {
        let row = row.map_err(Error::from)?;
        let value: f64 = row[regret]
            .parse()
            .map_err(|_| Error::Artifact(format!("bad regret value `{}` in {}", &row[regret], input.display())))?;
        let name = row[alg].to_string();
        if !order.contains(&name) {
            order.push(name.clone());
        }
        let e = cells.entry(name).or_default().entry((row[t1].to_string(), row[t2].to_string())).or_insert((0.0, 0));
        e.0 += value;
        e.1 += 1;
    }
    std::fs::create_dir_all(&config.output_dir).map_err(Error::from)?;
    let path = config.output_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(Error::from)?;
    w.write_record(["algorithm", "cells", "worst_case_regret", "average_case_regret"]).map_err(Error::from)?;
    for name in &order {
        let means: Vec<f64> = cells[name].values().map(|(s, n)| s / *n as f64).collect();
        let worst = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let avg = means.iter().sum::<f64>() / means.len() as f64;
        println!("{name:<16} worst {worst:>10.4}  average {avg:>10.4}");
        w.write_record([name.clone(), means.len().to_string(), worst.to_string(), avg.to_string()])
            .map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    println!("summary -> {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let mut config = load_config(&cli.common)?;
    let jobs = cli.common.jobs;
    par::with_jobs(jobs, move || match cli.command {
        Command::TrainPool { radii } => cmd_train_pool(config, radii),
        Command::TrainDqn { iterations } => cmd_train_dqn(config, iterations),
        Command::Eval { pools, model, resolution, runs, episodes, steps, verify, trials } => {
            let e = &mut config.evaluation;
            e.resolution = resolution.unwrap_or(e.resolution);
            e.runs = runs.unwrap_or(e.runs);
            e.episodes = episodes.unwrap_or(e.episodes);
            e.steps = steps.unwrap_or(e.steps);
            if let Some(t) = trials {
                config.verification.trials = t;
            }
            cmd_eval(config, EvalArgs { pools, model, verify })
        }
        Command::InferDemo { theta, episodes } => cmd_infer_demo(config, theta, episodes),
        Command::Verify { trials } => {
            if let Some(t) = trials {
                config.verification.trials = t;
            }
            config.validate()?;
            run_verify(&config)
        }
        Command::ExportReport { input } => cmd_export_report(config, input),
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
