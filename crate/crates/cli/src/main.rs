use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mgproj_cli::config::{parse_seed_list, ExperimentConfig, Task};
use mgproj_cli::experiment::{compare_dir, config_for_seed, describe, run_seeds, seed_dir, write_experiment};
use mgproj_cli::validation::validate_heuristics;
use mgproj_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "mgproj", version, about = "Plain-versus-projector experiments with static exports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train plain and projector variants for every seed and export results.
    Run(RunArgs),
    /// Re-emit SVG plots for an experiment directory.
    Plots { dir: PathBuf },
    /// Monte Carlo check of the variance and error-rate heuristics.
    Validate(RunArgs),
    /// Summarise plain-versus-projector outcomes across seeds.
    Compare { dir: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Root output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds; overrides MGPROJ_SEED and the config.
    #[arg(long, env = "MGPROJ_SEED")]
    seeds: Option<String>,
    /// Validate and print the resolved settings without writing anything.
    #[arg(long)]
    dry_run: bool,
    /// Worker threads for seeds run in parallel (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = &self.seeds {
            cfg.seeds = parse_seed_list(s)?;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        Ok(cfg)
    }
}

fn run(args: &RunArgs) -> CliResult<()> {
    let cfg = args.resolve()?;
    if args.dry_run {
        print!("{}", describe(&cfg));
        return Ok(());
    }
    if cfg.task == Task::SubspaceValidation {
        return validate(&cfg);
    }
    let outcomes = run_seeds(&cfg, args.threads)?;
    let manifest = write_experiment(&cfg, &outcomes)?;
    println!("wrote {} files to {}", manifest.files.len() + 1, cfg.experiment_dir().display());
    print!("{}", compare_dir(&cfg.experiment_dir())?.report());
    Ok(())
}

fn validate(cfg: &ExperimentConfig) -> CliResult<()> {
    if cfg.task != Task::SubspaceValidation {
        return Err(CliError::Config(format!("validate needs task = \"subspace-validation\", got {:?}", cfg.task)));
    }
    let exp_dir = cfg.experiment_dir();
    fs::create_dir_all(&exp_dir)?;
    fs::write(exp_dir.join("config.toml"), cfg.to_toml())?;
    let mut failed = 0;
    for &seed in &cfg.seeds {
        let c = config_for_seed(cfg, seed);
        let report = validate_heuristics(&c.subspace, &c.validation)?;
        let dir = seed_dir(&exp_dir, seed);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("validation.csv"), report.to_csv())?;
        fs::write(dir.join("validation.json"), serde_json::to_string_pretty(&report)?)?;
        println!("seed {seed}:");
        for r in &report.rows {
            println!(
                "  alpha {:<5} ratio {:<4} var {:.4}/{:.4} err {:.4}/{:.4} {}",
                r.alpha,
                r.ratio,
                r.measured_var,
                r.predicted_var,
                r.measured_err,
                r.predicted_err,
                if r.pass() { "pass" } else { "FAIL" }
            );
        }
        match &report.warning {
            Some(w) => eprintln!("warning: {w}"),
            None => failed += report.rows.iter().filter(|r| !r.pass()).count(),
        }
    }
    if failed > 0 {
        return Err(CliError::Other(format!("{failed} heuristic rows failed")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Validate(args) => args.resolve().and_then(|cfg| {
            if args.dry_run {
                print!("{}", describe(&cfg));
                Ok(())
            } else {
                validate(&cfg)
            }
        }),
        Command::Plots { dir } => mgproj_cli::plots::emit_plots(dir).map(|w| println!("wrote {} plots", w.len())),
        Command::Compare { dir } => compare_dir(dir).map(|s| print!("{}", s.report())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
