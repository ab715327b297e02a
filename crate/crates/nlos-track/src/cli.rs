//! Command line: `run`, `project` and `emit-scenarios`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use nlos_track_core::filters::FilterKind;
use nlos_track_core::linalg::UpperCholesky;
use nlos_track_core::model::{position, StateVector};
use nlos_track_core::projection::{project_sigma, Disc, DiscRegion};
use nlos_track_core::srukf::STATE_DIM;

use crate::config::ScenarioFile;
use crate::experiment::{run_experiment, summarize_run, FilterSummary};
use crate::output::write_run;
use crate::scenarios::builtin_files;
use crate::AppError;

/// Overrides `--out` when set.
pub const OUT_ENV: &str = "NLOS_TRACK_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "nlos-track",
    version,
    about = "Constrained SRUKF tracking under NLOS ranging"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a Monte-Carlo experiment and write CSVs, manifest and plot scripts.
    Run(RunArgs),
    /// Project one state onto a disc intersection and print the result.
    Project(ProjectArgs),
    /// Write the built-in scenario files.
    EmitScenarios {
        #[arg(long, default_value = "scenarios")]
        out: PathBuf,
    },
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Comma-separated filter names (default: the scenario's list).
    #[arg(long, value_delimiter = ',')]
    pub filters: Option<Vec<String>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, clap::Args)]
pub struct ProjectArgs {
    /// `x,y,vx,vy`
    #[arg(long, allow_hyphen_values = true)]
    pub state: String,
    /// Upper Cholesky factor: 4 diagonal entries or 16 row-major entries.
    /// Identity when omitted.
    #[arg(long, allow_hyphen_values = true)]
    pub factor: Option<String>,
    /// `x,y,radius`; repeat for several discs.
    #[arg(long = "disc", allow_hyphen_values = true, required = true)]
    pub discs: Vec<String>,
}

fn numbers(text: &str, what: &str) -> Result<Vec<f64>, AppError> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| AppError::Runtime(format!("cannot parse {what} entry '{t}'")))
        })
        .collect()
}

/// Scenario with command-line overrides applied, and the filters to run.
pub fn resolve_run(args: &RunArgs) -> Result<(ScenarioFile, Vec<FilterKind>), AppError> {
    if !args.scenario.is_file() {
        return Err(AppError::Config(format!(
            "scenario file {} does not exist",
            args.scenario.display()
        )));
    }
    let mut file = ScenarioFile::load(&args.scenario)?;
    if let Some(t) = args.trials {
        file.trials = t;
    }
    if let Some(k) = args.steps {
        file.steps = k;
    }
    if let Some(s) = args.seed {
        file.seed = s;
    }
    if let Some(a) = args.alpha {
        file.filter.alpha = a;
    }
    if let Some(e) = args.epsilon {
        file.filter.epsilon = e;
    }
    if let Some(f) = &args.filters {
        file.filters = Some(f.clone());
    }
    if args.threads == Some(0) {
        return Err(AppError::Config("--threads must be positive".into()));
    }
    let filters = file.filter_kinds()?;
    file.filters = Some(filters.iter().map(|f| f.name().to_string()).collect());
    file.to_spec()?;
    Ok((file, filters))
}

pub fn output_dir(flag: &Path) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag.to_path_buf(),
    }
}

pub fn summary_table(summaries: &[FilterSummary]) -> String {
    let mut s = format!(
        "{:<8} {:>14} {:>6} {:>9} {:>10}\n",
        "filter", "steady RMSE", "used", "diverged", "skips"
    );
    for f in summaries {
        let (rmse, used) = f
            .metrics
            .as_ref()
            .map_or(("all diverged".to_string(), 0), |m| {
                (format!("{:.3}", m.steady_state_rmse), m.used_trials)
            });
        s.push_str(&format!(
            "{:<8} {:>14} {:>6} {:>9} {:>10}\n",
            f.kind.name(),
            rmse,
            used,
            f.diverged_trials,
            f.infeasible_skips
        ));
    }
    s
}

pub fn cmd_run(args: &RunArgs, stdout: &mut dyn Write) -> Result<(), AppError> {
    let (file, filters) = resolve_run(args)?;
    let spec = file.to_spec()?;
    let records = run_experiment(&spec, &filters, args.threads)?;
    let summaries = summarize_run(&records, &filters)?;
    let dir = output_dir(&args.out);
    write_run(&dir, &file, &filters, &records, &summaries)?;
    let out = |e: std::io::Error| AppError::Runtime(format!("stdout: {e}"));
    write!(
        stdout,
        "{}: {} trials x {} epochs, seed {}\n{}wrote {}\n",
        file.name,
        spec.trials,
        spec.steps,
        spec.seed,
        summary_table(&summaries),
        dir.display()
    )
    .map_err(out)
}

pub fn cmd_project(args: &ProjectArgs, stdout: &mut dyn Write) -> Result<(), AppError> {
    let s = numbers(&args.state, "state")?;
    if s.len() != STATE_DIM {
        return Err(AppError::Runtime("state needs 4 entries".into()));
    }
    let state = StateVector::from_column_slice(&s);
    let factor = match &args.factor {
        None => UpperCholesky::identity(STATE_DIM),
        Some(text) => {
            let v = numbers(text, "factor")?;
            let r = match v.len() {
                4 => UpperCholesky::from_diagonal(&v),
                16 => UpperCholesky::new(DMatrix::from_row_slice(4, 4, &v)),
                _ => return Err(AppError::Runtime("factor needs 4 or 16 entries".into())),
            };
            r.map_err(|e| AppError::Runtime(format!("factor: {e}")))?
        }
    };
    let mut discs = Vec::new();
    for (i, d) in args.discs.iter().enumerate() {
        let v = numbers(d, "disc")?;
        if v.len() != 3 || !(v[2] > 0.0) {
            return Err(AppError::Runtime(format!(
                "disc '{d}' must be x,y,radius with radius > 0"
            )));
        }
        discs.push(Disc {
            anchor_id: i + 1,
            center: nalgebra::Vector2::new(v[0], v[1]),
            radius: v[2],
        });
    }
    let region = DiscRegion {
        discs,
        epsilon: 0.0,
    };
    let res = project_sigma(&state, &factor, &region).map_err(|e| match e {
        nlos_track_core::Error::InfeasibleRegion(why) => {
            AppError::Runtime(format!("infeasible region ({why:?})"))
        }
        other => AppError::Runtime(other.to_string()),
    })?;
    let p = position(&res.point);
    let q = &res.point;
    write!(
        stdout,
        "state = [{}, {}, {}, {}]\nposition = ({}, {})\nactive = {}\niterations = {}\n",
        q[0], q[1], q[2], q[3], p[0], p[1], res.active, res.iterations
    )
    .map_err(|e| AppError::Runtime(format!("stdout: {e}")))
}

pub fn cmd_emit_scenarios(dir: &Path, stdout: &mut dyn Write) -> Result<(), AppError> {
    std::fs::create_dir_all(dir).map_err(AppError::io(dir))?;
    for (name, text) in builtin_files() {
        let p = dir.join(&name);
        std::fs::write(&p, text).map_err(AppError::io(&p))?;
        writeln!(stdout, "{}", p.display())
            .map_err(|e| AppError::Runtime(format!("stdout: {e}")))?;
    }
    Ok(())
}

/// Runs a parsed command; returns the process exit code.
pub fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8 {
    let res = match &cli.command {
        Command::Run(a) => cmd_run(a, stdout),
        Command::Project(a) => cmd_project(a, stdout),
        Command::EmitScenarios { out } => cmd_emit_scenarios(out, stdout),
    };
    match res {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with(args: &[String], stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8 {
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli, stdout, stderr),
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 {
                write!(stdout, "{e}")
            } else {
                write!(stderr, "{e}")
            };
            code
        }
    }
}
