//! `ddk` command-line front end.

mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "ddk",
    version,
    about = "Vehicle dynamics identification and tracking with a learned latent linear model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate excitation episodes and write a dataset directory.
    SimCollect(commands::SimCollectArgs),
    /// Train a model on a dataset directory.
    Train(commands::TrainArgs),
    /// Multi-step prediction RMSE of a checkpoint on a dataset split.
    Predict(commands::PredictArgs),
    /// Generate a mixed straight-and-turn reference trajectory CSV.
    SimReference(commands::SimReferenceArgs),
    /// Closed-loop tracking of a reference with the learned-model controller.
    Track(commands::TrackArgs),
    /// Closed-loop tracking of a reference with pure pursuit.
    BaselinePp(commands::BaselineArgs),
    /// Summarise and merge prediction and tracking reports.
    Report(commands::ReportArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::SimCollect(a) => commands::sim_collect(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::SimReference(a) => commands::sim_reference(a),
        Command::Track(a) => commands::track(a),
        Command::BaselinePp(a) => commands::baseline_pp(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
