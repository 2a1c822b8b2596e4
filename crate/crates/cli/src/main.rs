use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tbpsurv::models::ModelKind;
use tbpsurv::Error;

mod commands;
mod config;
mod report;

use config::FrailtyKind;

#[derive(Parser)]
#[command(name = "tbpsurv", version, about = "Semiparametric Bayesian survival regression with spatial frailties")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write summary.txt, draws.csv, loglik.csv and meta.json.
    Fit(FitArgs),
    /// Generate a synthetic dataset with a matching fit config.
    Simulate(SimulateArgs),
    /// Cox-Snell residuals and criteria recomputation for a saved fit.
    Diagnose(DiagnoseArgs),
    /// Replicate simulate-and-fit study with coverage summaries.
    McStudy(McStudyArgs),
}

#[derive(Args, Default)]
pub struct Overrides {
    /// Data CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_model)]
    pub model: Option<ModelKind>,
    #[arg(long, value_enum)]
    pub frailty: Option<FrailtyKind>,
    #[arg(long)]
    pub adjacency: Option<PathBuf>,
    /// Location id column.
    #[arg(long)]
    pub location: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Covariates that get a B-spline term.
    #[arg(long, value_delimiter = ',')]
    pub nonlinear: Option<Vec<String>>,
    #[arg(long)]
    pub selection: bool,
    #[arg(long)]
    pub nburn: Option<usize>,
    #[arg(long)]
    pub nsave: Option<usize>,
    #[arg(long)]
    pub nskip: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct FitArgs {
    /// TOML config, or the meta.json of an earlier fit.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Validate and print the resolved settings without sampling.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DesignName {
    /// 37 ICAR regions, two covariates.
    Icar,
    /// 150 GRF sites, two covariates.
    Grf,
    /// Selection example with five independent covariates.
    Sel1,
    /// Selection example with collinear x2 and x3.
    Sel2,
    /// Selection example with ten correlated covariates.
    Sel3,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub design: DesignName,
    #[arg(long, value_parser = parse_model, default_value = "PH")]
    pub model: ModelKind,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct DiagnoseArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Number of posterior draws overlaid in the residual plot.
    #[arg(long, default_value_t = tbpsurv::diagnostics::DEFAULT_OVERLAY_DRAWS)]
    pub draws: usize,
    /// Also write coxsnell.svg.
    #[arg(long)]
    pub svg: bool,
    /// Output directory; defaults to the fit directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct McStudyArgs {
    #[arg(long, value_enum, default_value = "icar")]
    pub design: DesignName,
    #[arg(long, value_parser = parse_model, default_value = "PH")]
    pub model: ModelKind,
    #[arg(long, default_value_t = 50)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// TOML config supplying the MCMC settings.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub nburn: Option<usize>,
    #[arg(long)]
    pub nsave: Option<usize>,
    #[arg(long)]
    pub nskip: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Input problems exit with 2, failures during computation with 1.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::Config(_)
        | Error::UnknownColumn(_)
        | Error::Csv(_)
        | Error::Json(_)
        | Error::InvalidObservation(_)
        | Error::Frailty(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Diagnose(a) => commands::diagnose(a),
        Command::McStudy(a) => commands::mc_study(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
