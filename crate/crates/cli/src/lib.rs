//! Command-line front end. Every subcommand parses its flags, calls one
//! function of `nes_eval::commands` and writes the result.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use nes_core::io::{read_json, to_json_string, write_json, GameFile, TargetOverrides};
use nes_core::{Concept, GameShape, NormOrder, ParamName, SolveConfig};
use nes_eval::commands::{self, EvalRequest, TrainRequest, DEFAULT_SEED, TRAIN_EVAL_GAMES};
use nes_eval::fixtures::PURE_TARGET_FLOOR;
use nes_eval::generalization::GENERALIZATION_GAMES;
use nes_eval::report::{write_csv, write_summary};
use nes_eval::{PolytopeMode, PolytopeOptions};

/// Exit code of a run that completed.
pub const EXIT_OK: i32 = 0;
/// Exit code of a domain error (no convergence, violated fixture fact, bad
/// input file).
pub const EXIT_DOMAIN: i32 = 1;
/// Exit code of a command line that does not parse.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "nes", version, about = "Select and solve (coarse) correlated equilibria of normal-form games")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a random game file from the invariant game distribution.
    Sample(SampleArgs),
    /// Solve a game file exactly with the dual oracle.
    Solve(SolveArgs),
    /// Train a network on freshly sampled games.
    Train(TrainArgs),
    /// Evaluate a trained network zero-shot on several game shapes.
    Eval(EvalArgs),
    /// Select one equilibrium per joint action to approximate the polytope.
    Polytope(PolytopeArgs),
    /// Re-derive the facts of every shipped fixture game.
    VerifyFixtures(FixtureArgs),
    /// Emit polytope vertices and the selected equilibrium of a 2x2 game.
    PlotData(PlotArgs),
}

#[derive(Debug, Args)]
pub struct TargetArgs {
    /// Parameterization (ME, MU, MWME, MRE, MS, eps-ME, ...); overrides the game file.
    #[arg(long)]
    pub param: Option<ParamName>,
    /// Target-epsilon penalty weight.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Welfare weight.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Seed of every random draw (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TargetArgs {
    fn overrides(&self) -> TargetOverrides {
        TargetOverrides {
            parameterization: self.param,
            rho: self.rho,
            mu: self.mu,
        }
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or_else(|| {
            log::info!("no --seed given, using {DEFAULT_SEED}");
            DEFAULT_SEED
        })
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Game shape, e.g. 2x2 or 3x3x3.
    #[arg(long)]
    pub shape: GameShape,
    #[command(flatten)]
    pub targets: TargetArgs,
    /// Output game file (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Input game file.
    #[arg(long)]
    pub game: PathBuf,
    /// Solution concept (CE or CCE).
    #[arg(long, default_value = "CCE")]
    pub concept: Concept,
    #[command(flatten)]
    pub targets: TargetArgs,
    /// Output solution file (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training game shape, e.g. 2x2.
    #[arg(long)]
    pub shape: GameShape,
    #[arg(long, default_value = "CCE")]
    pub concept: Concept,
    #[command(flatten)]
    pub targets: TargetArgs,
    /// Optimizer steps.
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    /// Games per step.
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    /// Base learning rate.
    #[arg(long, default_value_t = 4e-4)]
    pub lr: f64,
    /// Worker threads for solving the evaluation set.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Checkpoint directory (config, metrics CSV, parameter files).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory or parameter file.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated shapes, e.g. 2x2,3x3,2x2x2.
    #[arg(long, default_value = "2x2")]
    pub eval_shapes: String,
    #[command(flatten)]
    pub targets: TargetArgs,
    /// Games per shape.
    #[arg(long, default_value_t = GENERALIZATION_GAMES)]
    pub games: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory (summary JSON and one per-game CSV per shape);
    /// the summary goes to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PolytopeArgs {
    #[arg(long)]
    pub game: PathBuf,
    #[arg(long, default_value = "CCE")]
    pub concept: Concept,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Welfare weight of welfare mode.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Target each joint by maximum welfare instead of relative entropy.
    #[arg(long)]
    pub welfare: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    /// Write the full report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub game: PathBuf,
    #[arg(long, default_value = "CCE")]
    pub concept: Concept,
    #[command(flatten)]
    pub targets: TargetArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Writes `value` as JSON to `out`, or to stdout.
fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(path) => write_json(path, value).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{}", to_json_string(value)?),
    }
    Ok(())
}

fn read_game(path: &Path) -> Result<GameFile> {
    read_json(path).with_context(|| format!("reading game file {}", path.display()))
}

fn sample(args: SampleArgs) -> Result<()> {
    let t = &args.targets;
    let file = commands::sample_game(
        &args.shape,
        t.param.unwrap_or(ParamName::Me),
        t.rho,
        t.mu,
        NormOrder::L2,
        t.seed(),
    );
    emit(args.out.as_deref(), &file)
}

fn solve(args: SolveArgs) -> Result<()> {
    let file = read_game(&args.game)?;
    let t = &args.targets;
    let solution = commands::solve_game_file(
        &file,
        &t.overrides(),
        args.concept,
        NormOrder::L2,
        t.seed(),
        &SolveConfig::default(),
    )?;
    emit(args.out.as_deref(), &solution)?;
    if !solution.converged {
        anyhow::bail!(
            "solver did not converge after {} iterations (gradient norm {:e})",
            solution.iterations,
            solution.grad_norm
        );
    }
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let t = &args.targets;
    let req = TrainRequest {
        shape: args.shape,
        concept: args.concept,
        parameterization: t.param.unwrap_or(ParamName::Me),
        steps: args.steps,
        batch_size: args.batch,
        learning_rate: args.lr,
        rho: t.rho,
        mu: t.mu,
        seed: t.seed(),
        out: Some(args.out.clone()),
        eval_games: TRAIN_EVAL_GAMES,
        jobs: args.jobs,
    };
    let (_, log) = commands::train_network(&req)?;
    if let Some(last) = log.records.last() {
        println!(
            "step {} loss {:e} solver_gap {} gap {}",
            last.step,
            last.loss,
            last.solver_gap.map_or("-".into(), |v| format!("{v:e}")),
            last.gap.map_or("-".into(), |v| format!("{v:e}")),
        );
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let net = commands::load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let t = &args.targets;
    let req = EvalRequest {
        shapes: commands::parse_shapes(&args.eval_shapes)?,
        parameterization: t.param.unwrap_or(ParamName::Me),
        rho: t.rho,
        mu: t.mu,
        games: args.games,
        seed: t.seed(),
        jobs: args.jobs,
    };
    let results = commands::evaluate_network(&net, &req)?;
    let rows: Vec<_> = results.iter().map(|(row, _)| row.clone()).collect();
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_summary(&dir.join("summary.json"), &rows)?;
            for (row, games) in &results {
                write_csv(&dir.join(format!("games_{}.csv", row.shape)), games)?;
            }
        }
        None => emit(None, &rows)?,
    }
    Ok(())
}

fn polytope(args: PolytopeArgs) -> Result<()> {
    let game = read_game(&args.game)?.game()?;
    let defaults = PolytopeOptions::default();
    let opts = PolytopeOptions {
        rho: args.rho.unwrap_or(defaults.rho),
        mu: args.mu.unwrap_or(defaults.mu),
        jobs: args.jobs,
        ..defaults
    };
    let mode = if args.welfare { PolytopeMode::Welfare } else { PolytopeMode::Targets };
    let report = commands::polytope_report(&game, args.concept, PURE_TARGET_FLOOR, mode, &opts)?;
    emit(args.out.as_deref(), &report)
}

fn verify_fixtures(args: FixtureArgs) -> Result<()> {
    let reports = commands::verify_all_fixtures();
    for report in &reports {
        for o in &report.outcomes {
            let observed = o.observed.map_or_else(|| o.error.clone().unwrap_or_default(), |v| format!("{v:.6}"));
            println!(
                "{} {}/{}: observed {observed}, expected {}",
                if o.passed { "PASS" } else { "FAIL" },
                report.fixture,
                o.id,
                o.expectation
            );
        }
    }
    if let Some(path) = &args.out {
        write_json(path, &reports)?;
    }
    let mut failures = Vec::new();
    for report in reports {
        if let Err(e) = report.into_result() {
            failures.push(e.to_string());
        }
    }
    if !failures.is_empty() {
        anyhow::bail!("{}", failures.join("\n"));
    }
    Ok(())
}

fn plot(args: PlotArgs) -> Result<()> {
    let file = read_game(&args.game)?;
    let t = &args.targets;
    let data = commands::plot_game_file(&file, &t.overrides(), args.concept, NormOrder::L2, t.seed(), &SolveConfig::default())?;
    emit(args.out.as_deref(), &data)
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample(a) => sample(a),
        Command::Solve(a) => solve(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Polytope(a) => polytope(a),
        Command::VerifyFixtures(a) => verify_fixtures(a),
        Command::PlotData(a) => plot(a),
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_DOMAIN
        }
    }
}
