mod config;
mod pipeline;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use pipeline::{run, Verb, EXIT_VALIDATION};
use sweep::{sweep, Axis};

/// Eigenvalues of gradient-constrained elliptic problems.
#[derive(Parser, Debug)]
#[command(name = "gradeig", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the structural assumptions of a problem.
    Validate(Common),
    /// Compute the eigenpair.
    Solve(Common),
    /// Compute the eigenpair and the minmax certificates.
    Certify(Common),
    /// Radial or separable reference solution.
    Oracle(Common),
    /// Repeat `certify` over a list of parameter values.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
    },
}

/// Flags override the JSON config, which overrides defaults.
#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in problem name.
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    nodes: Option<usize>,
    /// Half-width of the grid box.
    #[arg(long)]
    half: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    width: Option<f64>,
    #[arg(long)]
    delta_min: Option<f64>,
    #[arg(long)]
    eps_min: Option<f64>,
    #[arg(long)]
    tol_lambda: Option<f64>,
    #[arg(long)]
    tol_u: Option<f64>,
    /// Exit with code 4 when an acceptance check fails.
    #[arg(long)]
    check: bool,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, String> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path).map_err(|e| e.0)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.problem {
            c.problem = Some(p.clone());
            c.inline = None;
        }
        if let Some(h) = self.h {
            c.grid.h = Some(h);
            c.grid.nodes = None;
        }
        if let Some(n) = self.nodes {
            c.grid.nodes = Some(n);
            c.grid.h = None;
        }
        if let Some(half) = self.half {
            c.grid.half = Some(half);
            c.grid.lo = None;
            c.grid.hi = None;
        }
        if let Some(out) = &self.out {
            c.output = out.clone();
        }
        if let Some(t) = self.tau {
            c.certify.tau = t;
        }
        if self.width.is_some() {
            c.certify.width = self.width;
        }
        if let Some(d) = self.delta_min {
            c.solver.delta_min = d;
        }
        if self.eps_min.is_some() {
            c.solver.eps_min = self.eps_min;
        }
        if let Some(t) = self.tol_lambda {
            c.solver.tol_lambda = t;
        }
        if let Some(t) = self.tol_u {
            c.solver.tol_u = t;
        }
        c.check |= self.check;
        Ok(c)
    }
}

fn run_verb(verb: Verb, common: &Common) -> i32 {
    let config = match common.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_VALIDATION;
        }
    };
    let m = run(verb, &config, None);
    if let Some(e) = &m.error {
        eprintln!("error: {e}");
    }
    for w in &m.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(l) = m.lambda_star {
        println!("lambda_star = {l:.10}");
    }
    if let Some(o) = &m.oracle {
        println!("oracle ({}) = {:.10}", o.kind, o.lambda_oracle);
    }
    if let Some(b) = &m.certificates {
        println!("lambda_minus = {:.10}, lambda_plus = {:.10}", b.lambda_minus, b.lambda_plus);
    }
    println!("manifest: {}", config.output.join("manifest.json").display());
    m.exit_code
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Validate(c) => run_verb(Verb::Validate, c),
        Command::Solve(c) => run_verb(Verb::Solve, c),
        Command::Certify(c) => run_verb(Verb::Certify, c),
        Command::Oracle(c) => run_verb(Verb::Oracle, c),
        Command::Sweep { common, axis, values } => match common.resolve() {
            Ok(config) => sweep(&config, *axis, values),
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_VALIDATION
            }
        },
    };
    ExitCode::from(code as u8)
}
