use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use airl::error::Result;
use airl::runner::{self, StudyScale};

#[derive(Parser)]
#[command(name = "airl", version, about = "Desk-scale self-supervised learning laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain from a config file.
    Pretrain {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Edit checkpoint weights.
    #[command(subcommand)]
    Surgery(SurgeryCommand),
    /// Inspect checkpoints.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Run a pre-canned study and write its table.
    Reproduce {
        study: String,
        #[arg(long, default_value = "desk", value_parser = parse_scale)]
        scale: StudyScale,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Linear probe on the frozen student backbone.
    Linear {
        #[arg(long)]
        ckpt: PathBuf,
        /// Config whose data block defines the dataset; defaults to the checkpoint's own.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum SurgeryCommand {
    /// Rescale every trainable tensor to an anchor checkpoint's norms or by a constant.
    Rescale {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, conflicts_with = "factor", required_unless_present = "factor")]
        anchor: Option<PathBuf>,
        #[arg(long)]
        factor: Option<f64>,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// L2 norm of every trainable tensor.
    Norms {
        #[arg(long, alias = "ckpt")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stagewise linear CKA between two checkpoints.
    Cka {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Config whose data block defines the probe images.
        #[arg(long)]
        probe: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_scale(s: &str) -> std::result::Result<StudyScale, String> {
    StudyScale::parse(s).ok_or_else(|| format!("unknown scale `{s}` (expected desk or smoke)"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain { config } => {
            let out = runner::cmd_pretrain(&config)?;
            println!("{}", out.display());
        }
        Command::Eval(EvalCommand::Linear { ckpt, data, out }) => {
            let r = runner::cmd_eval_linear(&ckpt, data.as_deref(), &out)?;
            println!("top1 {:.4} train_top1 {:.4}", r.top1, r.train_top1);
        }
        Command::Surgery(SurgeryCommand::Rescale { input, anchor, factor, output }) => {
            let (student, teacher) = runner::cmd_surgery_rescale(&input, anchor.as_deref(), factor, &output)?;
            println!(
                "rescaled {} student and {} teacher tensors into {}",
                student.touched.len(),
                teacher.touched.len(),
                output.display()
            );
        }
        Command::Analyze(AnalyzeCommand::Norms { input, out }) => {
            for r in runner::cmd_analyze_norms(&input, out.as_deref())? {
                println!("{}\t{}\t{}", r.name, r.role, r.norm);
            }
        }
        Command::Analyze(AnalyzeCommand::Cka { a, b, probe, out }) => {
            for (stage, v) in runner::cmd_analyze_cka(&a, &b, probe.as_deref(), out.as_deref())? {
                println!("{stage}\t{v}");
            }
        }
        Command::Reproduce { study, scale } => {
            let (report, path) = runner::cmd_reproduce(&study, scale)?;
            print!("{}", report.render());
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
