use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "algsel", version, about = "Per-instance algorithm selection lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// JSON configuration; relative paths inside it resolve against its directory.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed for every random stream of the command.
    #[arg(long, value_name = "INT")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
    /// Worker threads (0 = all cores); never changes results.
    #[arg(long, value_name = "INT", default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw random problems into problems.jsonl.
    Gen(Common),
    /// Build a portfolio and label problems: portfolio.json, perf.csv, labels.csv.
    Label(Common),
    /// Partition labeled problems into split.json.
    Split(Common),
    /// Train one selector into model.json.
    Train(Common),
    /// Selection errors of a trained selector into eval.json.
    Eval(Common),
    /// Generalization bounds into bounds.json.
    Bounds(Common),
    /// Chi-square divergence between two generative configs into shift.json.
    Divergence(Common),
    /// Run sweeps into results.csv and summary.json.
    Experiment(Common),
    /// One SVG chart per scenario in results.csv.
    Plot(Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{}", e.render());
                    ExitCode::from(1)
                }
            };
        }
    };
    let result = match cli.cmd {
        Cmd::Gen(c) => commands::gen(&c),
        Cmd::Label(c) => commands::label(&c),
        Cmd::Split(c) => commands::split(&c),
        Cmd::Train(c) => commands::train(&c),
        Cmd::Eval(c) => commands::eval(&c),
        Cmd::Bounds(c) => commands::bounds(&c),
        Cmd::Divergence(c) => commands::divergence(&c),
        Cmd::Experiment(c) => commands::experiment(&c),
        Cmd::Plot(c) => commands::plot(&c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
