//! `peakcert`: peak bounds, trajectory recovery and safety margins for
//! polynomial ODEs from a JSON problem file.

mod commands;
mod plot;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{Degrees, Overrides, RecoverArgs};
use peakcert::relaxation::Program;

#[derive(Parser)]
#[command(
    name = "peakcert",
    version,
    about = "Peak estimation, trajectory recovery and safety margins for polynomial ODEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Upper bound on the peak of a single objective.
    Bound {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        degrees: DegreeArgs,
    },
    /// Upper bound on the peak of the minimum of several objectives.
    Maximin {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        degrees: DegreeArgs,
    },
    /// Raise the degree until near-optimal trajectories are recovered.
    Recover {
        #[command(flatten)]
        common: Common,
        /// First degree [default: options.degree, else the smallest admissible]
        #[arg(long)]
        d0: Option<usize>,
        /// Last degree [default: d0 + 2]
        #[arg(long)]
        dmax: Option<usize>,
        /// Acceptance gap between bound and sampled peak [default: 1e-2]
        #[arg(long)]
        epsilon: Option<f64>,
        /// Simulation cutoff for infinite horizons [default: options.t_sim, else 20]
        #[arg(long)]
        t_sim: Option<f64>,
        /// Integrate peak atoms backwards and report how close they come to X0
        #[arg(long)]
        backward_check: bool,
    },
    /// Maximin bound over the unsafe set's inequalities; negative means safe.
    Margin {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        degrees: DegreeArgs,
        /// Also solve the unsafety feasibility relaxation at the last degree
        #[arg(long)]
        with_unsafe_check: bool,
    },
    /// Feasibility of a flow from the initial set into the unsafe set.
    Unsafe {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        degrees: DegreeArgs,
    },
    /// Write a relaxation in SDPA sparse format.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        degree: Option<usize>,
        #[arg(long, value_enum, default_value_t = ProgramArg::Peak)]
        program: ProgramArg,
    },
}

#[derive(Args)]
struct Common {
    /// Problem file (JSON)
    file: PathBuf,
    /// Output directory
    #[arg(long, default_value = "peakcert-out")]
    out: PathBuf,
    /// Relative singular-value threshold for numerical rank [default: 1e-3]
    #[arg(long)]
    rank_tol: Option<f64>,
    /// Solver feasibility tolerance [default: 1e-8]
    #[arg(long)]
    feas_tol: Option<f64>,
    /// Solver relative gap tolerance [default: 1e-8]
    #[arg(long)]
    gap_tol: Option<f64>,
    /// Solver iteration limit [default: 200]
    #[arg(long)]
    max_iter: Option<usize>,
    /// Cap on the occupation-measure mass
    #[arg(long)]
    mass_cap: Option<f64>,
}

#[derive(Args)]
struct DegreeArgs {
    /// Relaxation degree [default: options.degree, else the smallest admissible]
    #[arg(long, conflicts_with = "ladder")]
    degree: Option<usize>,
    /// Degree range `d0..d1`, inclusive
    #[arg(long, value_parser = parse_ladder)]
    ladder: Option<(usize, usize)>,
}

impl DegreeArgs {
    fn degrees(&self) -> Degrees {
        match (self.degree, self.ladder) {
            (Some(d), _) => Degrees::Single(d),
            (None, Some((a, b))) => Degrees::Ladder(a, b),
            (None, None) => Degrees::Default,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProgramArg {
    Peak,
    Maximin,
    Unsafe,
}

impl From<ProgramArg> for Program {
    fn from(p: ProgramArg) -> Program {
        match p {
            ProgramArg::Peak => Program::Peak,
            ProgramArg::Maximin => Program::Maximin,
            ProgramArg::Unsafe => Program::Unsafe,
        }
    }
}

fn parse_ladder(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected d0..d1, got `{s}`"))?;
    let a = a.trim().parse().map_err(|_| format!("bad degree `{a}`"))?;
    let b = b.trim().parse().map_err(|_| format!("bad degree `{b}`"))?;
    Ok((a, b))
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            rank_tol: self.rank_tol,
            feas_tol: self.feas_tol,
            gap_tol: self.gap_tol,
            max_iter: self.max_iter,
            mass_cap: self.mass_cap,
            ..Overrides::default()
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bound { common, degrees } => commands::bound(
            &common.file,
            degrees.degrees(),
            &common.overrides(),
            Program::Peak,
            common.out,
        ),
        Command::Maximin { common, degrees } => commands::bound(
            &common.file,
            degrees.degrees(),
            &common.overrides(),
            Program::Maximin,
            common.out,
        ),
        Command::Recover {
            common,
            d0,
            dmax,
            epsilon,
            t_sim,
            backward_check,
        } => {
            let ov = Overrides {
                epsilon,
                t_sim,
                ..common.overrides()
            };
            let args = RecoverArgs {
                d0,
                d_max: dmax,
                backward_check,
            };
            commands::recover(&common.file, &args, &ov, common.out)
        }
        Command::Margin {
            common,
            degrees,
            with_unsafe_check,
        } => commands::margin(
            &common.file,
            degrees.degrees(),
            with_unsafe_check,
            &common.overrides(),
            common.out,
        ),
        Command::Unsafe { common, degrees } => {
            commands::unsafe_check(&common.file, degrees.degrees(), &common.overrides(), common.out)
        }
        Command::Export {
            common,
            degree,
            program,
        } => commands::export(&common.file, degree, program.into(), &common.overrides(), common.out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("peakcert: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
