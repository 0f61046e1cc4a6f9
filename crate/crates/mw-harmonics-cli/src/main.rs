use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mw_harmonics_cli::config::{CubeSpec, CzoAction, ExperimentConfig, FamilySpec, GridSpec, InputFile, KernelChoice, Task};
use mw_harmonics_cli::run::run;
use mw_harmonics_cli::suite::Tier;
use mw_harmonics_cli::CliError;

#[derive(Parser)]
#[command(name = "mw-harmonics", version, about = "Matrix-weighted multilinear harmonic analysis experiments")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for the CSV and JSON reports.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true, env = "MWLAB_THREADS")]
    threads: Option<usize>,
    /// Acceptance tier for `verify`.
    #[arg(long, global = true, value_enum)]
    tier: Option<Tier>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run whatever task the config names.
    Run,
    Characteristic,
    Reduce,
    Maximal,
    SparseDominate,
    Nondegeneracy,
    /// Run the acceptance suite.
    Verify,
    /// Calderón–Zygmund operators on `[0,4)^d` with `Q0 = [1,2)^d`.
    Czo(CzoArgs),
}

#[derive(Args)]
struct CzoArgs {
    #[arg(long, value_enum, default_value = "riesz")]
    kernel: KernelChoice,
    #[arg(long, default_value_t = 1)]
    m: usize,
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// `Q0` has `2^level` cells per side.
    #[arg(long, default_value_t = 5)]
    level: u32,
    /// Inputs file `{"inputs": [...]}`; defaults to `1_{Q0}` in every slot.
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(subcommand)]
    action: CzoCommand,
}

#[derive(Subcommand)]
enum CzoCommand {
    Apply,
    GrandMaximal,
    CzDecompose {
        #[arg(long)]
        lambda: f64,
    },
    Diagnostics,
    SparseDominate {
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
    },
}

fn czo_config(args: &CzoArgs, seed: u64) -> Result<ExperimentConfig, CliError> {
    let top = CubeSpec { corner: vec![1.0; args.d], side: 1.0 };
    let (seed, inputs) = match &args.input {
        Some(path) => {
            let file = InputFile::load(path)?;
            if file.inputs.len() != args.m {
                return Err(CliError::Input(format!("inputs: expected {} inputs, got {}", args.m, file.inputs.len())));
            }
            (file.seed ^ seed, file.inputs)
        }
        None => {
            let one = mw_harmonics_cli::config::InputSpec::Indicator { cube: top.clone(), vector: vec![1.0] };
            (seed, vec![one; args.m])
        }
    };
    let action = match &args.action {
        CzoCommand::Apply => CzoAction::Apply,
        CzoCommand::GrandMaximal => CzoAction::GrandMaximal,
        CzoCommand::CzDecompose { lambda } => CzoAction::CzDecompose { lambda: *lambda },
        CzoCommand::Diagnostics => CzoAction::Diagnostics { top: top.clone() },
        CzoCommand::SparseDominate { eps } => CzoAction::SparseDominate { top: top.clone(), eps: *eps },
    };
    Ok(ExperimentConfig {
        seed,
        grid: GridSpec { d: args.d, level: args.level + 2, side_log2: 2 },
        weights: Vec::new(),
        exponents: None,
        family: FamilySpec::Dyadic,
        inputs,
        task: Task::Czo { kernel: args.kernel, action },
    })
}

fn load(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Input("--config is required".into()))?;
    ExperimentConfig::load(path)
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.command {
        Command::Czo(args) => czo_config(args, cli.seed.unwrap_or(0))?,
        Command::Verify => {
            let mut cfg = match &cli.config {
                Some(_) => load(cli)?,
                None => ExperimentConfig {
                    seed: 0x5eed,
                    grid: GridSpec { d: 1, level: 0, side_log2: 0 },
                    weights: Vec::new(),
                    exponents: None,
                    family: FamilySpec::Dyadic,
                    inputs: Vec::new(),
                    task: Task::Verify { tier: Tier::Fast },
                },
            };
            if let (Some(t), Task::Verify { tier }) = (cli.tier, &mut cfg.task) {
                *tier = t;
            }
            cfg
        }
        Command::Run => load(cli)?,
        other => {
            let cfg = load(cli)?;
            let want = match other {
                Command::Characteristic => "characteristic",
                Command::Reduce => "reduce",
                Command::Maximal => "maximal",
                Command::SparseDominate => "sparse-dominate",
                _ => "nondegeneracy",
            };
            if cfg.task.name() != want {
                return Err(CliError::Input(format!("task.command: config runs {}, not {want}", cfg.task.name())));
            }
            cfg
        }
    };
    if let Some(s) = cli.seed {
        if !matches!(cli.command, Command::Czo(_)) {
            cfg.seed = s;
        }
    }
    if !matches!(cfg.task, Task::Verify { .. }) && cfg.task.name() != "czo" {
        cfg.cell_grid()?;
    }
    Ok(cfg)
}

fn configure_threads(threads: Option<usize>) -> Result<(), CliError> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Input("--threads must be positive".into()));
    }
    if n == 1 {
        mw_harmonics::par::set_sequential(true);
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Input(format!("--threads: {e}")))
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    configure_threads(cli.threads)?;
    let cfg = build_config(cli)?;
    let report = run(&cfg)?;
    report.write(&cli.out)?;
    println!("{}", serde_json::to_string(&report.json_value()).map_err(|e| CliError::Io(e.to_string()))?);
    if report.violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(report.violations.join("; ")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
