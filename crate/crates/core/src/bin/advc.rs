//! Batch CLI over the conversion pipeline. Every command reads one project
//! config; failures leave a machine-readable JSON envelope on stderr and a
//! per-kind exit code.

use advc_core::config::ProjectConfig;
use advc_core::pipeline;
use advc_core::Result;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "advc",
    version,
    about = "Any-to-one voice conversion with adversarial speaker disentanglement"
)]
struct Cli {
    /// Project configuration file.
    #[arg(short, long, global = true, default_value = "advc.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Scan the corpora and materialize every training artifact.
    Prepare,
    /// Train from the prepared manifests.
    Train {
        /// Resume from an existing checkpoint blob.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Convert wav files from any source speaker into the target voice.
    Convert {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory for converted wavs, named by input stem.
        #[arg(long, default_value = "converted")]
        out_dir: PathBuf,
        /// Input wav files.
        inputs: Vec<PathBuf>,
    },
    /// Score converted audio against target-speaker references.
    Evaluate {
        /// Directory of converted wavs.
        #[arg(long)]
        converted: PathBuf,
        /// Directory of target-speaker renditions, paired by stem.
        #[arg(long)]
        reference: PathBuf,
        /// Directory of the original source inputs for prosody scoring;
        /// defaults to the reference directory.
        #[arg(long)]
        source: Option<PathBuf>,
        /// Also write the full per-pair report as JSON.
        #[arg(long)]
        json_out: Option<PathBuf>,
    },
    /// Project content embeddings to 2-D and quantify speaker leakage.
    Visualize {
        /// Checkpoint trained with the similarity losses.
        #[arg(long)]
        with_lsim: Option<PathBuf>,
        /// Checkpoint trained without the similarity losses.
        #[arg(long)]
        without_lsim: Option<PathBuf>,
        /// Additional labeled checkpoints as label=path.
        #[arg(long = "checkpoint", value_parser = parse_labeled)]
        checkpoints: Vec<(String, PathBuf)>,
        #[arg(long, default_value = "viz")]
        out_dir: PathBuf,
    },
}

fn parse_labeled(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((label, path)) if !label.is_empty() && !path.is_empty() => {
            Ok((label.to_string(), PathBuf::from(path)))
        }
        _ => Err(format!("expected label=path, got {s:?}")),
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("summary serializes")
    );
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = ProjectConfig::load(&cli.config)?;
    match &cli.command {
        Cmd::Prepare => {
            let summary = pipeline::prepare(&cfg)?;
            print_json(&summary);
        }
        Cmd::Train { resume } => {
            let outcome = pipeline::train(&cfg, resume.as_deref())?;
            print_json(&outcome);
        }
        Cmd::Convert {
            checkpoint,
            out_dir,
            inputs,
        } => {
            let summary = pipeline::convert(&cfg, checkpoint, inputs, out_dir)?;
            print_json(&summary);
        }
        Cmd::Evaluate {
            converted,
            reference,
            source,
            json_out,
        } => {
            let out = pipeline::evaluate(&cfg, converted, reference, source.as_deref())?;
            print!("{}", out.report.table());
            print_json(&out.report);
            if let Some(path) = json_out {
                let bytes =
                    serde_json::to_vec_pretty(&out).expect("report serializes");
                advc_core::tensorio::write_atomic(path, &bytes)?;
            }
        }
        Cmd::Visualize {
            with_lsim,
            without_lsim,
            checkpoints,
            out_dir,
        } => {
            // Fixed panel order: without on the left, with on the right.
            let mut labeled: Vec<(String, PathBuf)> = Vec::new();
            if let Some(p) = without_lsim {
                labeled.push(("without_lsim".into(), p.clone()));
            }
            if let Some(p) = with_lsim {
                labeled.push(("with_lsim".into(), p.clone()));
            }
            labeled.extend(checkpoints.iter().cloned());
            let summary = pipeline::visualize(&cfg, &labeled, out_dir)?;
            print_json(&summary);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let envelope = serde_json::json!({
                "error": {
                    "kind": e.kind(),
                    "message": e.to_string(),
                    "exit_code": e.exit_code(),
                }
            });
            eprintln!("{envelope}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
