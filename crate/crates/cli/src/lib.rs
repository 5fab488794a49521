//! Command-line front end: synthetic data, feature extraction, training,
//! prediction, evaluation and benchmarking.

pub mod args;
pub mod commands;
pub mod error;

use args::{Cli, Command};
use error::CliResult;

/// Run one parsed invocation inside a pool of `cli.threads` workers and
/// return the text to print.
pub fn run(cli: &Cli) -> CliResult<String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| error::CliError::usage(format!("cannot start {} threads: {e}", cli.threads)))?;
    pool.install(|| dispatch(&cli.command))
}

fn dispatch(cmd: &Command) -> CliResult<String> {
    use commands::*;
    Ok(match cmd {
        Command::Synth(a) => {
            let s = cmd_synth(a)?;
            format!("wrote {} clips, manifest {}\n{}", s.clips, s.manifest.display(), s.coverage)
        }
        Command::Extract(a) => {
            let s = cmd_extract(a)?;
            format!(
                "wrote {} feature images ({} windows skipped), labels {}",
                s.windows,
                s.skipped,
                s.labels.display()
            )
        }
        Command::Train(a) => {
            let s = cmd_train(a)?;
            let val = s.best_val_loss.map_or("-".into(), |v| format!("{v:.6}"));
            format!(
                "trained on {} samples ({} held out for test), best iteration {} val loss {val}, model {}",
                s.n_train,
                s.n_test,
                s.best_iteration,
                s.model.display()
            )
        }
        Command::Predict(a) => {
            let s = cmd_predict(a)?;
            format!("wrote {} predictions for {} videos", s.predictions, s.videos)
        }
        Command::Eval(a) => cmd_eval(a)?.to_string(),
        Command::Bench(a) => cmd_bench(a)?.to_string(),
    })
}
