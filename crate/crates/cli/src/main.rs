//! `creig` — adaptive nonconforming eigenvalue experiments from the
//! command line. See `creig --help` and the repository README for the
//! configuration format and output layout.

use clap::{Args, Parser, Subcommand};
use creig_cli::config::{self, Overrides, RunConfig};
use creig_cli::manifest;
use creig_cli::runner;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "creig",
    about = "Adaptive Crouzeix-Raviart eigenvalue solver benchmarks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonFlags {
    /// Configuration file (`key = value` lines with [sections]).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Domain: `ring`, `square:<n>`, or a mesh file path.
    #[arg(long, global = true)]
    domain: Option<String>,
    /// Dörfler bulk fraction in (0,1).
    #[arg(long, global = true)]
    theta: Option<f64>,
    /// Number of eigenpairs to compute.
    #[arg(long, global = true)]
    nev: Option<usize>,
    /// Stop refining once the CR dimension reaches this.
    #[arg(long = "max-dof", global = true)]
    max_dof: Option<usize>,
    /// 1-based index of the tracked eigenvalue.
    #[arg(long, global = true)]
    target: Option<usize>,
    /// Marking strategy: `cluster` or `single:<k>`.
    #[arg(long, global = true)]
    marking: Option<String>,
    /// Seed for the eigensolver start block.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for CSV/plot/mesh artifacts and the manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Relative-gap tolerance for cluster detection.
    #[arg(long = "cluster-rtol", global = true)]
    cluster_rtol: Option<f64>,
    /// Trusted reference eigenvalue (audits and error columns).
    #[arg(long, global = true)]
    reference: Option<f64>,
    /// Uniform refinement levels for `reference`.
    #[arg(long, global = true)]
    levels: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve both spectra (CR and conforming) on one mesh.
    Solve(CommonFlags),
    /// Run the adaptive refinement loop.
    Adapt(CommonFlags),
    /// Run the adaptive loop and audit eigenvalue bounds each iteration.
    Audit(CommonFlags),
    /// Extrapolate reference eigenvalues from uniform refinements.
    Reference(CommonFlags),
    /// Print mesh statistics (and optionally write the mesh file).
    MeshInfo(CommonFlags),
}

fn resolve(flags: &CommonFlags) -> Result<RunConfig, String> {
    let mut cfg = match &flags.config {
        Some(path) => config::parse_file(path).map_err(|e| e.to_string())?,
        None => RunConfig::default(),
    };
    let ov = Overrides {
        domain: flags.domain.clone(),
        theta: flags.theta,
        nev: flags.nev,
        max_dof: flags.max_dof,
        target: flags.target,
        marking: flags.marking.clone(),
        seed: flags.seed,
        out: flags.out.clone(),
        cluster_rtol: flags.cluster_rtol,
        reference: flags.reference,
        levels: flags.levels,
    };
    config::apply_overrides(&mut cfg, &ov).map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn main() -> ExitCode {
    // Usage mistakes are configuration errors under the exit-code contract
    // (1 = configuration, 2 = numerical), so clap's default code of 2 must
    // not leak through.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    // Validate the thread cap up front so a malformed value fails fast.
    if let Err(msg) = manifest::thread_cap() {
        eprintln!("creig: configuration error: {msg}");
        return ExitCode::from(1);
    }
    let flags = match &cli.command {
        Command::Solve(f)
        | Command::Adapt(f)
        | Command::Audit(f)
        | Command::Reference(f)
        | Command::MeshInfo(f) => f,
    };
    let cfg = match resolve(flags) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("creig: configuration error: {msg}");
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::Solve(_) => runner::solve(&cfg),
        Command::Adapt(_) => runner::adapt(&cfg),
        Command::Audit(_) => runner::audit(&cfg),
        Command::Reference(_) => runner::reference(&cfg),
        Command::MeshInfo(_) => runner::mesh_info(&cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("creig: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
