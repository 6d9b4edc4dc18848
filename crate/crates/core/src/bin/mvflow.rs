use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mvflow::cli::{
    self, cmd_diagnose, cmd_report, cmd_run, cmd_sweep, cmd_wsu, cmd_ym_build, cmd_ym_validate, parse_config,
    CommandReport, SweepParameter, EXIT_ASSERTION, EXIT_OK, EXIT_VALIDATION,
};
use mvflow::Result;

/// Laboratory for measure-valued solutions of barotropic compressible flow.
#[derive(Parser)]
#[command(name = "mvflow", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration.
    Run {
        config: PathBuf,
        /// Output directory; defaults to `output` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a ladder of one parameter (K, delta or cells) as a family.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
        /// Comma-separated ladder values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Energy budget, a-priori bounds, weak residuals and K-rates.
    Diagnose { dir: PathBuf },
    /// Empirical Young measures of a family.
    Ym {
        #[command(subcommand)]
        action: YmAction,
    },
    /// Weak-strong stability experiment against the built-in reference.
    Wsu {
        #[command(subcommand)]
        mode: WsuMode,
    },
    /// Collect the pipeline tables of a run or family into `report/`.
    Report { dir: PathBuf },
}

#[derive(Subcommand)]
enum YmAction {
    /// Build the measure and its defect estimates.
    Build { dir: PathBuf },
    /// Check the four measure-valued conditions.
    Validate { dir: PathBuf },
}

#[derive(Subcommand)]
enum WsuMode {
    /// Every rung starts on the reference.
    Matched {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Every rung starts at the configured perturbation amplitudes.
    Perturbed {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var("MVFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("MVFLOW_THREADS = {raw:?} is not a positive integer"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn out_dir(out: Option<PathBuf>, config: &Path) -> Result<(mvflow::cli::RunConfig, PathBuf)> {
    let cfg = parse_config(config)?;
    let dir = out.unwrap_or_else(|| cfg.output.clone());
    Ok((cfg, dir))
}

fn dispatch(command: Command) -> Result<CommandReport> {
    match command {
        Command::Run { config, out } => {
            let (cfg, dir) = out_dir(out, &config)?;
            cmd_run(&cfg, &dir)
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => {
            let (cfg, dir) = out_dir(out, &config)?;
            let p: SweepParameter = param.parse()?;
            cmd_sweep(&cfg, p, &values, &dir)
        }
        Command::Diagnose { dir } => cmd_diagnose(&dir),
        Command::Ym { action } => match action {
            YmAction::Build { dir } => cmd_ym_build(&dir),
            YmAction::Validate { dir } => cmd_ym_validate(&dir),
        },
        Command::Wsu { mode } => match mode {
            WsuMode::Matched { config, out } => {
                let (cfg, dir) = out_dir(out, &config)?;
                cmd_wsu(&cfg, true, &dir)
            }
            WsuMode::Perturbed { config, out } => {
                let (cfg, dir) = out_dir(out, &config)?;
                cmd_wsu(&cfg, false, &dir)
            }
        },
        Command::Report { dir } => cmd_report(&dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    if let Err(msg) = threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_VALIDATION as u8);
    }
    let code = match dispatch(cli.command) {
        Ok(report) => {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for p in &report.outputs {
                println!("{}", p.display());
            }
            for f in &report.failures {
                eprintln!("FAILED: {f}");
            }
            if report.passed() {
                EXIT_OK
            } else {
                EXIT_ASSERTION
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            cli::exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
