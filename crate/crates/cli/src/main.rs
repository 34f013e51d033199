use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use alliance_core::dynamics::{
    alliance_optimum, fixed_point_report, phase_portrait, simulate_learning, write_portrait_csv,
    write_trajectory_csv, DynamicsConfig, PolicyTriple,
};
use alliance_core::gifting::write_jsonl;
use alliance_core::matrix_games::{run_counting_experiment, run_epsilon_histogram, ThreePlayerGame};
use alliance_core::rng::stream_rng;
use alliance_core::scenarios::SCENARIOS;
use alliance_core::training::{
    evaluate, load_checkpoint, mean_ci95, regression_report, run_training, write_metrics_csv, write_scatter_csv,
    TrainConfig,
};
use alliance_core::verify;
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

mod config;
mod report;

use config::ExperimentConfig;
use report::{emit_report, write_headline};

/// Environment variable naming the default output directory.
const OUT_ENV: &str = "ALLIANCE_OUT_DIR";

#[derive(Parser)]
#[command(name = "alliance", version, about = "Alliance dilemma experiments")]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat `key = value` config file; see the `config.resolved` written by any run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $ALLIANCE_OUT_DIR/<command>, or runs/<command>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run seeds one after another instead of in parallel.
    #[arg(long, global = true)]
    single_thread: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Histogram of outcome-sum spreads of random two-player games.
    EpsilonHist {
        #[arg(long)]
        games: Option<usize>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Count alliance dilemmas among random three-player zero-sum games.
    DilemmaCount {
        #[arg(long)]
        games: Option<usize>,
    },
    /// Gradient dynamics of two learners against a stubborn player.
    Dynamics {
        /// `odd-one-out`, `matching`, or `p,q`.
        #[arg(long)]
        game: Option<String>,
        /// Initial `x,y` (or `x,y,z`); random interior starts when omitted.
        #[arg(long)]
        init: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Train A2C learners on Gifting.
    Train {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(SCENARIOS))]
        scenario: Option<String>,
        /// Episodes per update (with --eval-only: evaluation episodes).
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        updates: Option<usize>,
        /// Number of seeds to train.
        #[arg(long)]
        seeds: Option<usize>,
        /// Evaluate a checkpoint instead of training.
        #[arg(long, requires = "checkpoint")]
        eval_only: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Regress chips held on contracts signed over evaluation episodes of a checkpoint.
    Regress {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Run the built-in oracle and property checks.
    Verify,
    /// Regenerate summary.json for the run directory given by --out.
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::EpsilonHist { .. } => "epsilon-hist",
            Command::DilemmaCount { .. } => "dilemma-count",
            Command::Dynamics { .. } => "dynamics",
            Command::Train { .. } => "train",
            Command::Regress { .. } => "regress",
            Command::Verify => "verify",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EpsilonParams {
    games: usize,
    bins: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CountingParams {
    games: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DynamicsParams {
    game: String,
    init: String,
    runs: usize,
    steps: usize,
    learning_rate: f64,
    parameterization: String,
    stubborn_policy: f64,
    tolerance: f64,
    portrait_resolution: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegressParams {
    checkpoint: String,
    episodes: usize,
}

fn out_dir(cli: &Cli) -> PathBuf {
    match &cli.out {
        Some(dir) => dir.clone(),
        None => {
            let base = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
            base.join(cli.command.name())
        }
    }
}

/// Scenario named on the command line or in the config file, which decides
/// the training defaults.
fn requested_scenario(flag: Option<&str>, config: Option<&Path>) -> Result<String> {
    if let Some(s) = flag {
        return Ok(s.to_string());
    }
    if let Some(path) = config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                if k.trim() == "train.scenario" {
                    return Ok(v.trim().to_string());
                }
            }
        }
    }
    Ok("baseline".into())
}

/// Defaults, then the config file, then flags.
fn resolve(cli: &Cli, mut config: ExperimentConfig, flags: &[(&str, Option<String>)]) -> Result<ExperimentConfig> {
    config.add_default("seed", 0);
    if let Some(path) = &cli.config {
        config.apply_file(path)?;
    }
    if let Some(seed) = cli.seed {
        config.set("seed", &seed.to_string())?;
    }
    for (key, value) in flags {
        if let Some(v) = value {
            config.set(key, v)?;
        }
    }
    Ok(config)
}

fn prepare_dir(dir: &Path, config: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    config.write_snapshot(dir)
}

fn finish(dir: &Path, headline: serde_json::Value) -> Result<()> {
    write_headline(dir, &headline)?;
    emit_report(dir)?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn epsilon_hist(cli: &Cli, games: Option<usize>, bins: Option<usize>) -> Result<()> {
    let mut config = ExperimentConfig::new("epsilon-hist");
    config.add_defaults("epsilon", &EpsilonParams { games: 1000, bins: 20 })?;
    let config = resolve(
        cli,
        config,
        &[
            ("epsilon.games", games.map(|v| v.to_string())),
            ("epsilon.bins", bins.map(|v| v.to_string())),
        ],
    )?;
    let params: EpsilonParams = config.extract("epsilon", &EpsilonParams { games: 0, bins: 0 })?;
    let seed: u64 = config.parse("seed")?;
    let dir = out_dir(cli);
    prepare_dir(&dir, &config)?;
    let hist = run_epsilon_histogram(params.games, params.bins, seed)?;
    let mut out = create(&dir, "epsilon_histogram.csv")?;
    use std::io::Write;
    writeln!(out, "bin_lo,bin_hi,count")?;
    for b in &hist {
        writeln!(out, "{},{},{}", b.bin_lo, b.bin_hi, b.count)?;
    }
    out.flush()?;
    let modal = hist.iter().max_by_key(|b| b.count).expect("at least two bins");
    println!(
        "epsilon histogram: {} games, modal bin [{}, {}) with {} games",
        params.games, modal.bin_lo, modal.bin_hi, modal.count
    );
    finish(
        &dir,
        json!({
            "games": params.games,
            "counts": hist.iter().map(|b| b.count).collect::<Vec<_>>(),
            "modal_bin_lo": modal.bin_lo,
            "seeds": [seed],
        }),
    )
}

fn dilemma_count(cli: &Cli, games: Option<usize>) -> Result<()> {
    let mut config = ExperimentConfig::new("dilemma-count");
    config.add_defaults("counting", &CountingParams { games: 1000 })?;
    let config = resolve(cli, config, &[("counting.games", games.map(|v| v.to_string()))])?;
    let params: CountingParams = config.extract("counting", &CountingParams { games: 0 })?;
    let seed: u64 = config.parse("seed")?;
    let dir = out_dir(cli);
    prepare_dir(&dir, &config)?;
    let summary = run_counting_experiment(params.games, seed)?;
    use std::io::Write;
    let mut out = create(&dir, "dilemma_count.csv")?;
    writeln!(out, "game_index,p,q,has_dilemma,has_strict")?;
    for r in &summary.records {
        writeln!(out, "{},{},{},{},{}", r.game_index, r.p, r.q, r.has_dilemma, r.has_strict)?;
    }
    out.flush()?;
    let mut out = create(&dir, "stubborn_histogram.csv")?;
    writeln!(out, "stubborn_prob,games_with_dilemma,dilemma_labelings")?;
    for b in &summary.histogram {
        writeln!(out, "{},{},{}", b.stubborn_prob, b.games_with_dilemma, b.dilemma_labelings)?;
    }
    out.flush()?;
    println!(
        "dilemma fraction {:.3}, strict among dilemmas {:.3}, strict among all games {:.3} ({} games, seed {seed})",
        summary.dilemma_fraction, summary.strict_fraction_of_dilemmas, summary.strict_fraction_of_games, summary.n_games
    );
    finish(
        &dir,
        json!({
            "games": summary.n_games,
            "dilemma_fraction": summary.dilemma_fraction,
            "strict_fraction_of_dilemmas": summary.strict_fraction_of_dilemmas,
            "strict_fraction_of_games": summary.strict_fraction_of_games,
            "seeds": [seed],
        }),
    )
}

fn parse_game(spec: &str) -> Result<ThreePlayerGame> {
    Ok(match spec {
        "odd-one-out" => ThreePlayerGame::odd_one_out(),
        "matching" => ThreePlayerGame::matching(),
        other => {
            let parts: Vec<&str> = other.split(',').collect();
            if parts.len() != 2 {
                bail!("game must be `odd-one-out`, `matching` or `p,q`, got `{other}`");
            }
            ThreePlayerGame::new(parts[0].trim().parse()?, parts[1].trim().parse()?)?
        }
    })
}

fn dynamics(cli: &Cli, game: Option<String>, init: Option<String>, steps: Option<usize>, runs: Option<usize>) -> Result<()> {
    let lib = DynamicsConfig::default();
    let defaults = DynamicsParams {
        game: "odd-one-out".into(),
        init: String::new(),
        runs: 100,
        steps: lib.n_steps,
        learning_rate: lib.learning_rate,
        parameterization: lib.parameterization.clone(),
        stubborn_policy: lib.stubborn_policy,
        tolerance: lib.tolerance,
        portrait_resolution: 21,
    };
    let mut config = ExperimentConfig::new("dynamics");
    config.add_defaults("dynamics", &defaults)?;
    let config = resolve(
        cli,
        config,
        &[
            ("dynamics.game", game),
            ("dynamics.init", init),
            ("dynamics.steps", steps.map(|v| v.to_string())),
            ("dynamics.runs", runs.map(|v| v.to_string())),
        ],
    )?;
    let params: DynamicsParams = config.extract("dynamics", &defaults)?;
    let seed: u64 = config.parse("seed")?;
    let game = parse_game(&params.game)?;
    let lib = DynamicsConfig {
        learning_rate: params.learning_rate,
        n_steps: params.steps,
        parameterization: params.parameterization.clone(),
        stubborn_policy: params.stubborn_policy,
        tolerance: params.tolerance,
        ..DynamicsConfig::default()
    };
    let inits: Vec<PolicyTriple> = if params.init.trim().is_empty() {
        let mut rng = stream_rng(seed, 0);
        (0..params.runs)
            .map(|_| PolicyTriple([rng.gen_range(1e-3..1.0 - 1e-3), rng.gen_range(1e-3..1.0 - 1e-3), params.stubborn_policy]))
            .collect()
    } else {
        let v: Vec<f64> = params
            .init
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .context("init must be comma-separated probabilities")?;
        match v.as_slice() {
            [x, y] => vec![PolicyTriple::new(*x, *y, params.stubborn_policy)?],
            [x, y, z] => vec![PolicyTriple::new(*x, *y, *z)?],
            _ => bail!("init needs 2 or 3 probabilities"),
        }
    };
    let dir = out_dir(cli);
    prepare_dir(&dir, &config)?;
    let runs = inits
        .iter()
        .enumerate()
        .map(|(k, init)| Ok((k, simulate_learning(&game, &lib, init)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = create(&dir, "trajectories.csv")?;
    write_trajectory_csv(&mut out, &runs)?;
    let mut out = create(&dir, "portrait.csv")?;
    write_portrait_csv(&mut out, &phase_portrait(&game, params.stubborn_policy, params.portrait_resolution))?;
    drop(out);

    let fixed_points = match fixed_point_report(&game) {
        Ok(points) => serde_json::to_value(points)?,
        Err(e) => json!({"analysis": "numeric only", "reason": e.to_string()}),
    };
    fs::write(dir.join("fixed_points.json"), serde_json::to_string_pretty(&fixed_points)? + "\n")?;
    let optimum = match alliance_optimum(&game, params.stubborn_policy) {
        Ok(o) => serde_json::to_value(o)?,
        Err(e) => json!({"analysis": "unavailable", "reason": e.to_string()}),
    };
    let n = runs.len() as f64;
    let mean_final = |k: usize| runs.iter().map(|(_, r)| r.last().payoffs[k]).sum::<f64>() / n;
    println!(
        "{} runs of {}: mean final learner payoffs {:.6}, {:.6}",
        runs.len(),
        params.game,
        mean_final(0),
        mean_final(1)
    );
    finish(
        &dir,
        json!({
            "game": params.game,
            "runs": runs.len(),
            "mean_final_payoffs": [mean_final(0), mean_final(1), mean_final(2)],
            "converged_runs": runs.iter().filter(|(_, r)| r.converged_at.is_some()).count(),
            "alliance_optimum": optimum,
            "seeds": [seed],
        }),
    )
}

fn train_config(cli: &Cli, scenario: Option<String>, flags: &[(&str, Option<String>)]) -> Result<(ExperimentConfig, TrainConfig)> {
    let scenario = requested_scenario(scenario.as_deref(), cli.config.as_deref())?;
    let defaults = TrainConfig::for_scenario(&scenario)?;
    let mut config = ExperimentConfig::new("train");
    config.add_defaults("train", &defaults)?;
    config.remove("train.seed");
    let mut all = flags.to_vec();
    all.push(("train.scenario", Some(scenario)));
    if cli.single_thread {
        all.push(("train.single_thread", Some("true".into())));
    }
    let config = resolve(cli, config, &all)?;
    let mut extract = config.clone();
    extract.add_default("train.seed", config.get("seed").unwrap_or("0"));
    let train: TrainConfig = extract.extract("train", &defaults)?;
    train.validate()?;
    Ok((config, train))
}

fn train(
    cli: &Cli,
    scenario: Option<String>,
    episodes: Option<usize>,
    updates: Option<usize>,
    seeds: Option<usize>,
    eval_only: bool,
    checkpoint: Option<PathBuf>,
) -> Result<()> {
    let dir = out_dir(cli);
    if eval_only {
        let path = checkpoint.expect("clap enforces --checkpoint");
        let (mut stored, table, params) = load_checkpoint(&fs::read_to_string(&path)?)?;
        if let Some(e) = episodes {
            stored.eval_episodes = e;
        }
        if let Some(s) = cli.seed {
            stored.seed = s;
        }
        let mut config = ExperimentConfig::new("train-eval");
        config.add_defaults("train", &stored)?;
        config.add_default("checkpoint", path.display());
        config.add_default("seed", stored.seed);
        prepare_dir(&dir, &config)?;
        let (rows, summary, batch) = evaluate(&table, &params, stored.eval_episodes, stored.seed)?;
        write_metrics_csv(&mut create(&dir, "eval.csv")?, &rows)?;
        let mut steps = create(&dir, "episodes.jsonl")?;
        let mut events = create(&dir, "contract_events.jsonl")?;
        for log in batch.episodes.iter().filter_map(|e| e.log.as_ref()) {
            write_jsonl(&mut steps, &log.steps)?;
            write_jsonl(&mut events, &log.contracts)?;
        }
        for r in &rows {
            println!("agent {}: mean reward {:.3}, gift rate {:.3}", r.agent, r.mean_reward, r.gift_rate);
        }
        return finish(
            &dir,
            json!({
                "scenario": stored.scenario,
                "episodes": summary.episodes,
                "mean_reward": rows.iter().map(|r| r.mean_reward).collect::<Vec<_>>(),
                "gift_rate": rows.iter().map(|r| r.gift_rate).collect::<Vec<_>>(),
                "two_way_draws": summary.two_way_draws,
                "seeds": [stored.seed],
            }),
        );
    }

    let (config, train) = train_config(
        cli,
        scenario,
        &[
            ("train.episodes_per_update", episodes.map(|v| v.to_string())),
            ("train.updates", updates.map(|v| v.to_string())),
            ("train.n_seeds", seeds.map(|v| v.to_string())),
        ],
    )?;
    prepare_dir(&dir, &config)?;
    let report = run_training(&train, Some(&dir))?;
    let mut per_seed = Vec::new();
    let n = train.n_players;
    let mut finals: Vec<Vec<f64>> = vec![Vec::new(); n];
    for run in &report.runs {
        let rows = run.final_eval();
        let rewards: Vec<f64> = rows.iter().map(|r| r.mean_reward).collect();
        for (k, r) in rewards.iter().enumerate() {
            finals[k].push(*r);
        }
        println!(
            "seed {}: final eval rewards {}",
            run.seed,
            rewards.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(" ")
        );
        per_seed.push(json!({
            "seed": run.seed,
            "final_reward": rewards,
            "final_gift_rate": rows.iter().map(|r| r.gift_rate).collect::<Vec<_>>(),
            "two_way_draws": run.eval_summary.last().map(|s| s.two_way_draws),
        }));
    }
    let ci: Vec<_> = finals
        .iter()
        .map(|v| {
            let (m, h) = mean_ci95(v);
            json!({"mean": m, "ci95": h})
        })
        .collect();
    finish(
        &dir,
        json!({
            "scenario": train.scenario,
            "updates": train.updates,
            "per_seed": per_seed,
            "final_reward_over_seeds": ci,
            "seeds": train.seeds(),
        }),
    )
}

fn regress(cli: &Cli, checkpoint: Option<PathBuf>, episodes: Option<usize>) -> Result<()> {
    let mut config = ExperimentConfig::new("regress");
    let defaults = RegressParams {
        checkpoint: String::new(),
        episodes: 50,
    };
    config.add_defaults("regress", &defaults)?;
    let config = resolve(
        cli,
        config,
        &[
            ("regress.checkpoint", checkpoint.map(|p| p.display().to_string())),
            ("regress.episodes", episodes.map(|v| v.to_string())),
        ],
    )?;
    let params: RegressParams = config.extract("regress", &defaults)?;
    if params.checkpoint.is_empty() {
        bail!("regress needs --checkpoint or regress.checkpoint");
    }
    let seed: u64 = config.parse("seed")?;
    let (_, table, weights) = load_checkpoint(&fs::read_to_string(&params.checkpoint)?)?;
    let dir = out_dir(cli);
    prepare_dir(&dir, &config)?;
    let report = regression_report(&table, &weights, params.episodes, seed)?;
    write_scatter_csv(&mut create(&dir, "scatter.csv")?, &report.records)?;
    fs::write(dir.join("regression.json"), serde_json::to_string_pretty(&report.fit)? + "\n")?;
    println!(
        "slope {:.4}, intercept {:.4}, p-value {:.3e} over {} records",
        report.fit.slope, report.fit.intercept, report.fit.p_value, report.fit.n
    );
    finish(
        &dir,
        json!({
            "slope": report.fit.slope,
            "intercept": report.fit.intercept,
            "p_value": report.fit.p_value,
            "records": report.records.len(),
            "seeds": [seed],
        }),
    )
}

fn run_verify(cli: &Cli) -> Result<bool> {
    let seed = cli.seed.unwrap_or(0);
    let results = verify::run_all(seed);
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    Ok(results.iter().all(|r| r.passed))
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::EpsilonHist { games, bins } => epsilon_hist(cli, *games, *bins)?,
        Command::DilemmaCount { games } => dilemma_count(cli, *games)?,
        Command::Dynamics { game, init, steps, runs } => dynamics(cli, game.clone(), init.clone(), *steps, *runs)?,
        Command::Train {
            scenario,
            episodes,
            updates,
            seeds,
            eval_only,
            checkpoint,
        } => train(cli, scenario.clone(), *episodes, *updates, *seeds, *eval_only, checkpoint.clone())?,
        Command::Regress { checkpoint, episodes } => regress(cli, checkpoint.clone(), *episodes)?,
        Command::Verify => return run_verify(cli),
        Command::Report => {
            let dir = cli.out.clone().context("report needs --out <run directory>")?;
            let summary = emit_report(&dir)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
