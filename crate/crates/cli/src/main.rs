use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scsc_cli::commands::{self, SynthArgs, GRADCHECK_TOLERANCE};
use scsc_cli::{pgm, CliError, CliResult, RunConfig, TensorContainer};

#[derive(Parser)]
#[command(name = "scsc", version, about = "Side-information guided CSC pansharpening toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic HRMS/LRMS/PAN dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        bands: usize,
        #[arg(long, default_value_t = 1)]
        pan_bands: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 4)]
        ratio: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Wald blur sigma (default ratio / 2).
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Train a model and write its checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_model: PathBuf,
        /// Per-epoch `epoch,loss` lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Reconstruct HRMS for every sample of a dataset.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print `id,psnr,ssim,sam,ergas` per sample.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = 4)]
        ratio: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classical ISTA sparse coding of one image.
    CscSolve {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        lambda: f64,
        #[arg(long, default_value_t = 500)]
        iters: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the analytic gradient (exit 3 on failure).
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the learnable parameter count.
    CountParams {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Count the PAN extraction module only.
        #[arg(long)]
        siem_only: bool,
    },
    /// Export one band of a container entry as 16-bit PGM.
    ExportPgm {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        entry: String,
        #[arg(long, default_value_t = 0)]
        band: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Synth {
            out,
            n,
            bands,
            pan_bands,
            size,
            ratio,
            seed,
            sigma,
        } => commands::cmd_synth(
            &SynthArgs {
                count: n,
                bands,
                pan_bands,
                size,
                ratio,
                seed,
                sigma,
            },
            &out,
        ),
        Command::Train {
            data,
            config,
            out_model,
            trace,
        } => {
            let cfg = RunConfig::load_or_default(config.as_deref())?;
            commands::cmd_train(&data, &cfg, &out_model, trace.as_deref()).map(|_| ())
        }
        Command::Infer { model, data, out } => commands::cmd_infer(&model, &data, &out),
        Command::Eval {
            pred,
            reference,
            ratio,
            out,
        } => {
            let report = commands::cmd_eval(&pred, &reference, ratio, out.as_deref())?;
            if out.is_none() {
                print!("{}", report);
            }
            Ok(())
        }
        Command::CscSolve {
            image,
            dict,
            lambda,
            iters,
            out,
        } => {
            let (_, report) = commands::cmd_csc_solve(&image, &dict, lambda, iters, &out)?;
            println!(
                "iterations={} converged={} objective={}",
                report.iterations_run,
                report.converged,
                report.objective_trace.last().copied().unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Command::Gradcheck { config, seed } => {
            let report = commands::cmd_gradcheck(&RunConfig::load(&config)?, seed)?;
            println!(
                "max_rel_error={} checked={} excluded={} worst={}",
                report.max_rel_error,
                report.checked,
                report.excluded,
                report.worst_param.as_deref().unwrap_or("-")
            );
            if report.max_rel_error < GRADCHECK_TOLERANCE {
                Ok(())
            } else {
                Err(CliError::Numeric(format!(
                    "gradient check error {} exceeds {}",
                    report.max_rel_error, GRADCHECK_TOLERANCE
                )))
            }
        }
        Command::CountParams { config, siem_only } => {
            let cfg = RunConfig::load_or_default(config.as_deref())?;
            println!("{}", commands::cmd_count_params(&cfg, siem_only)?);
            Ok(())
        }
        Command::ExportPgm {
            input,
            entry,
            band,
            out,
        } => {
            let c = TensorContainer::load(&input)?;
            pgm::write_pgm(c.require(&entry)?, band, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("scsc: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
