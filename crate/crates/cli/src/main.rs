mod commands;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{EvalArgs, GenerativeArgs, InspectArgs, ToyArgs, TrainArgs};

#[derive(Parser)]
#[command(name = "tnml", version, about = "Matrix product state classifiers and toy experiments")]
struct Cli {
    /// Worker threads for parallel loops (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an MPS classifier on MNIST.
    MnistTrain(TrainArgs),
    /// Error rate and confusion matrix of a saved model.
    MnistEval(EvalArgs),
    /// Two-component classifiers on synthetic data.
    Toy(ToyArgs),
    /// KL divergence of likelihood-trained models against sample size.
    Generative(GenerativeArgs),
    /// Bond dimensions and singular value spectra of a saved model.
    Inspect(InspectArgs),
}

/// Bad flags, missing files or malformed input.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use tnml::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::NonFinite(_) | E::Divergence(_) => 1,
                E::Io { .. }
                | E::Idx(_)
                | E::Format(_)
                | E::InvalidArgument(_)
                | E::InvalidShape(_)
                | E::DimensionMismatch(_)
                | E::OutOfDomain(_)
                | E::ScalarKind { .. }
                | E::NotSpd(_)
                | E::NotNormalized(_)
                | E::SizeGuard(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| {
        if let Some(t) = cli.threads {
            if t == 0 {
                return Err(UsageError("--threads must be positive".into()).into());
            }
            rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
        }
        match &cli.command {
            Command::MnistTrain(a) => commands::mnist_train(a, cli.threads),
            Command::MnistEval(a) => commands::mnist_eval(a),
            Command::Toy(a) => commands::toy(a),
            Command::Generative(a) => commands::generative(a),
            Command::Inspect(a) => commands::inspect(a),
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // thiserror messages already embed their source
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
