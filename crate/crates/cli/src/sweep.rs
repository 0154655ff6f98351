use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::config::RunConfig;
use crate::pipeline::{run, SolveCache, Verb, EXIT_VALIDATION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    H,
    Tau,
    Width,
    DeltaFloor,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::H => "h",
            Axis::Tau => "tau",
            Axis::Width => "width",
            Axis::DeltaFloor => "delta_floor",
        }
    }

    fn apply(self, config: &mut RunConfig, value: f64) {
        match self {
            Axis::H => {
                config.grid.h = Some(value);
                config.grid.nodes = None;
            }
            Axis::Tau => config.certify.tau = value,
            Axis::Width => config.certify.width = Some(value),
            Axis::DeltaFloor => config.solver.delta_min = value,
        }
    }
}

#[derive(Debug, Serialize)]
struct Row {
    value: f64,
    lambda_star: Option<f64>,
    lambda_minus: Option<f64>,
    lambda_plus: Option<f64>,
    residual: Option<f64>,
    runtime_s: f64,
    exit_code: i32,
}

/// One certify sub-run per value in `<output>/<axis>_<k>`, then
/// `sweep_summary.csv`; returns the worst exit code.
pub fn sweep(config: &RunConfig, axis: Axis, values: &[f64]) -> i32 {
    if values.is_empty() {
        eprintln!("error: sweep needs at least one value");
        return EXIT_VALIDATION;
    }
    if let Err(e) = std::fs::create_dir_all(&config.output) {
        eprintln!("error: output directory {}: {e}", config.output.display());
        return EXIT_VALIDATION;
    }
    let mut cache: Option<SolveCache> = None;
    let mut rows = Vec::with_capacity(values.len());
    for (k, &value) in values.iter().enumerate() {
        let mut sub = config.clone();
        axis.apply(&mut sub, value);
        sub.output = config.output.join(format!("{}_{k:03}", axis.name()));
        let start = Instant::now();
        let m = run(Verb::Certify, &sub, Some(&mut cache));
        if let Some(e) = &m.error {
            eprintln!("{} = {value}: {e}", axis.name());
        }
        rows.push(Row {
            value,
            lambda_star: m.lambda_star,
            lambda_minus: m.certificates.as_ref().map(|c| c.lambda_minus),
            lambda_plus: m.certificates.as_ref().map(|c| c.lambda_plus),
            residual: m.eigen.as_ref().map(|e| e.residuals.sup_filtered),
            runtime_s: start.elapsed().as_secs_f64(),
            exit_code: m.exit_code,
        });
    }
    if let Err(e) = write_summary(&config.output.join("sweep_summary.csv"), &rows) {
        eprintln!("error: sweep_summary.csv: {e}");
        return EXIT_VALIDATION;
    }
    rows.iter().map(|r| r.exit_code).max().unwrap_or(0)
}

fn write_summary(path: &Path, rows: &[Row]) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
