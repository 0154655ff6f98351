use std::path::{Path, PathBuf};

use gradeig::eigen::DOMAIN_MARGIN;
use gradeig::penalty::SolverParams;
use gradeig::{builtin, Grid, InlineSpec, ProblemSpec};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Box `[-half, half]^n` unless `lo`/`hi` are given.
    pub half: Option<f64>,
    pub lo: Option<Vec<f64>>,
    pub hi: Option<Vec<f64>>,
    /// Target spacing; exclusive with `nodes`.
    pub h: Option<f64>,
    /// Nodes per axis; exclusive with `h`.
    pub nodes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyConfig {
    pub tau: f64,
    /// Mollifier width; `4h` when absent.
    pub width: Option<f64>,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self { tau: 1.01, width: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Option<String>,
    pub inline: Option<InlineSpec>,
    pub grid: GridConfig,
    pub solver: SolverParams,
    pub certify: CertifyConfig,
    pub output: PathBuf,
    pub check: bool,
    /// Allowed `|lambda_star - oracle|`; `5e-3` in 1D and `2e-2` otherwise.
    pub check_tolerance: Option<f64>,
    /// Rows of `phi.csv`.
    pub oracle_rows: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: None,
            inline: None,
            grid: GridConfig::default(),
            solver: SolverParams::default(),
            certify: CertifyConfig::default(),
            output: PathBuf::from("gradeig_out"),
            check: false,
            check_tolerance: None,
            oracle_rows: 1001,
        }
    }
}

pub const DEFAULT_HALF: f64 = 3.0;

pub fn default_h(dim: usize) -> f64 {
    match dim {
        1 => 2e-3,
        2 => 0.04,
        _ => 0.1,
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn spec(&self) -> Result<ProblemSpec, ConfigError> {
        match (&self.problem, &self.inline) {
            (Some(name), None) => builtin(name).map_err(|e| ConfigError(format!("problem: {e}"))),
            (None, Some(inline)) => inline.build().map_err(|e| ConfigError(format!("inline: {e}"))),
            (Some(_), Some(_)) => Err(ConfigError("give either `problem` or `inline`, not both".into())),
            (None, None) => Err(ConfigError("no problem given (`problem` or `inline`)".into())),
        }
    }

    pub fn problem_name(&self) -> String {
        match (&self.problem, &self.inline) {
            (Some(name), _) => name.clone(),
            (None, Some(inline)) => inline.name.clone(),
            _ => String::new(),
        }
    }

    /// Grid before the contact-radius check.
    pub fn base_grid(&self, dim: usize) -> Result<Grid, ConfigError> {
        let half = self.grid.half.unwrap_or(DEFAULT_HALF);
        let lo = self.grid.lo.clone().unwrap_or_else(|| vec![-half; dim]);
        let hi = self.grid.hi.clone().unwrap_or_else(|| vec![half; dim]);
        if lo.len() != dim || hi.len() != dim {
            return Err(ConfigError(format!("grid.lo/grid.hi must have {dim} entries")));
        }
        let grid = match (self.grid.h, self.grid.nodes) {
            (Some(_), Some(_)) => return Err(ConfigError("grid: give either `h` or `nodes`, not both".into())),
            (_, Some(n)) => Grid::new(lo, hi, vec![n; dim]),
            (h, None) => Grid::with_spacing(lo, hi, h.unwrap_or_else(|| default_h(dim))),
        };
        grid.map_err(|e| ConfigError(format!("grid: {e}")))
    }

    pub fn width(&self, grid: &Grid) -> f64 {
        self.certify.width.unwrap_or(4.0 * grid.h_max())
    }

    pub fn check_tolerance(&self, dim: usize) -> f64 {
        self.check_tolerance.unwrap_or(if dim == 1 { 5e-3 } else { 2e-2 })
    }
}

/// Grows `grid` so that it holds the ball of radius `(1 + margin) r`, keeping
/// the spacing; returns the new grid and a warning when it had to grow.
pub fn expand_for_contact(grid: Grid, radius: f64) -> Result<(Grid, Option<String>), ConfigError> {
    let need = (1.0 + DOMAIN_MARGIN) * radius;
    if grid.contains_ball(need) {
        return Ok((grid, None));
    }
    let n = grid.dim();
    let mut lo = grid.lo().to_vec();
    let mut hi = grid.hi().to_vec();
    let mut nodes = Vec::with_capacity(n);
    for k in 0..n {
        let h = grid.h(k);
        let steps_lo = ((lo[k] + need) / h).ceil().max(0.0);
        let steps_hi = ((need - hi[k]) / h).ceil().max(0.0);
        lo[k] -= steps_lo * h;
        hi[k] += steps_hi * h;
        nodes.push(((hi[k] - lo[k]) / h).round() as usize + 1);
    }
    let ranges: Vec<String> = lo.iter().zip(&hi).map(|(a, b)| format!("[{a:.4}, {b:.4}]")).collect();
    let warning = format!(
        "grid box expanded to {} to hold the ball of radius {need:.4} (contact radius {radius:.4})",
        ranges.join(" x ")
    );
    let grid = Grid::new(lo, hi, nodes).map_err(|e| ConfigError(format!("grid: {e}")))?;
    Ok((grid, Some(warning)))
}
