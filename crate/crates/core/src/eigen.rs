//! Vanishing-discount driver, contact sets and the extension formula.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd::{gauge_field, pde_residual, ResidualReport};
use crate::geometry::{direction_mesh, inf_convolve, SupportFunction, ICOSPHERE_LEVEL, PLANAR_DIRECTIONS};
use crate::grid::{Field, Grid};
use crate::penalty::{DiscountedSolution, DiscountedSolver, SolverParams};
use crate::problems::{k1_constant, ProblemSpec};

/// Fraction of the half-width, measured from each face, excluded from the
/// trusted region where discounted solutions are compared.
pub const TRUSTED_FRACTION: f64 = 0.1;

/// Lower bound on the trusted margin in grid steps.
pub const TRUSTED_NODES: usize = 10;

/// Required margin of the grid box beyond the contact radius.
pub const DOMAIN_MARGIN: f64 = 0.2;

/// Smallest `R` with `f(R d) >= K1 + c1 R` for every sampled unit direction
/// `d`, found by doubling and then bisection.
pub fn estimate_contact_radius(spec: &ProblemSpec) -> Result<f64> {
    let k1 = k1_constant(spec)?;
    let c1 = spec.support()?.c1();
    let dirs = direction_mesh(spec.dim(), PLANAR_DIRECTIONS, ICOSPHERE_LEVEL)?;
    let mut x = vec![0.0; spec.dim()];
    let mut holds = |r: f64| {
        dirs.iter().all(|d| {
            x.iter_mut().zip(d).for_each(|(xi, di)| *xi = r * di);
            spec.cost().eval(&x) >= k1 + c1 * r
        })
    };
    if holds(0.0) {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while !holds(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > 1048576.0 {
            return Err(Error::Bracket("f(R d) stays below K1 + c1 R up to R = 2^20".into()));
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-12 * hi {
            break;
        }
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `(delta u(x_delta), u - u(x_delta))`.
pub fn normalize(sol: &DiscountedSolution) -> (f64, Field) {
    let base = sol.u.values()[sol.x_node];
    (sol.delta * base, sol.u.shifted(-base))
}

/// Nodes at distance at least `max(TRUSTED_FRACTION` of the half-width,
/// `TRUSTED_NODES h)` from every face of the grid box.
pub fn trusted_region(grid: &Grid) -> Vec<bool> {
    (0..grid.len())
        .map(|i| {
            (0..grid.dim()).all(|k| {
                let x = grid.coord(i, k);
                let margin = (TRUSTED_FRACTION * 0.5 * (grid.hi()[k] - grid.lo()[k]))
                    .max(TRUSTED_NODES as f64 * grid.h(k));
                (x - grid.lo()[k]).min(grid.hi()[k] - x) >= margin - 1e-12
            })
        })
        .collect()
}

/// `x -> min over masked nodes y of u(y) + l(x - y)`.
pub fn extend_field(u: &Field, mask: &[bool], ell: &SupportFunction) -> Result<Field> {
    if mask.len() != u.len() {
        return Err(Error::Dimension { expected: u.len(), got: mask.len() });
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Empty("contact mask"));
    }
    let g = Field::new(
        u.grid().clone(),
        u.values().iter().zip(mask).map(|(&v, &m)| if m { v } else { f64::INFINITY }).collect(),
    )?;
    inf_convolve(&g, ell)
}

/// Keeps `u` on `region` and replaces it elsewhere by the supremum of the
/// tangent planes (central-difference slopes) at the rim of `region`, the
/// smallest convex extension when `u` is convex on `region`.
pub fn convex_extension(u: &Field, region: &[bool]) -> Result<Field> {
    let grid = u.grid().clone();
    if region.len() != grid.len() {
        return Err(Error::Dimension { expected: grid.len(), got: region.len() });
    }
    let n = grid.dim();
    let near: Vec<Vec<isize>> = {
        let mut out: Vec<Vec<isize>> = vec![vec![]];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|o| {
                    (-2..=2isize).map(move |s| {
                        let mut o = o.clone();
                        o.push(s);
                        o
                    })
                })
                .collect();
        }
        out
    };
    let planes: Vec<(Vec<f64>, f64, Vec<f64>)> = (0..grid.len())
        .filter(|&i| {
            region[i]
                && !grid.is_boundary(i)
                && near.iter().any(|o| grid.offset(i, o).map_or(true, |j| !region[j]))
        })
        .map(|i| {
            let slope = crate::fd::gradient_fd(u, i, crate::fd::GradientScheme::Central)?;
            Ok((grid.point(i), u.get(i), slope))
        })
        .collect::<Result<_>>()?;
    if planes.is_empty() {
        return Err(Error::Empty("region rim"));
    }
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if region[i] {
                return u.get(i);
            }
            let x = grid.point(i);
            planes
                .iter()
                .map(|(y, v, p)| v + p.iter().zip(x.iter().zip(y)).map(|(pk, (a, b))| pk * (a - b)).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    Field::new(grid, values)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub delta: f64,
    pub lambda: f64,
    /// `|lambda_delta - lambda_previous|`, absent for the first discount.
    pub lambda_drift: Option<f64>,
    /// Sup over the trusted region of `|v_delta - v_previous|`.
    pub u_drift: Option<f64>,
    pub newton_iterations: usize,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct EigenPair {
    pub problem: String,
    pub lambda_star: f64,
    /// Normalized eigenfunction (`min = 0`).
    pub u_star: Field,
    /// Last normalized discounted solution.
    pub raw: Field,
    /// Interior trusted nodes with `H0(Du) < 0`.
    pub omega0: Vec<bool>,
    pub trusted: Vec<bool>,
    pub residual: ResidualReport,
    pub trace: Vec<TracePoint>,
    pub x_node: usize,
    pub contact_radius: f64,
    pub tol_c: f64,
    /// Sup over the trusted region of the gap between `raw` and its
    /// extension from `omega0`.
    pub extension_discrepancy: f64,
    pub warnings: Vec<String>,
}

/// JSON-friendly digest of an [`EigenPair`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenSummary {
    pub problem: String,
    pub lambda_star: f64,
    pub delta_trace: Vec<(f64, f64)>,
    pub trace: Vec<TracePoint>,
    pub residuals: ResidualReport,
    pub contact_fraction: f64,
    pub contact_radius: f64,
    pub tol_c: f64,
    pub extension_discrepancy: f64,
    pub growth_proxy: f64,
    pub grid: Grid,
    pub warnings: Vec<String>,
}

impl EigenPair {
    pub fn delta_trace(&self) -> Vec<(f64, f64)> {
        self.trace.iter().map(|t| (t.delta, t.lambda)).collect()
    }

    pub fn contact_fraction(&self) -> f64 {
        let g = self.u_star.grid();
        let interior = g.interior_nodes().count().max(1);
        self.omega0.iter().filter(|&&b| b).count() as f64 / interior as f64
    }

    /// Max of `|u_star(x)/l(x) - 1|` over interior nodes next to the boundary.
    pub fn growth_proxy(&self, ell: &SupportFunction) -> f64 {
        let g = self.u_star.grid();
        g.interior_nodes()
            .filter(|&i| g.depth(i) == 1)
            .map(|i| {
                let l = ell.eval(&g.point(i));
                (self.u_star.get(i) / l - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn summary(&self, spec: &ProblemSpec) -> Result<EigenSummary> {
        Ok(EigenSummary {
            problem: self.problem.clone(),
            lambda_star: self.lambda_star,
            delta_trace: self.delta_trace(),
            trace: self.trace.clone(),
            residuals: self.residual.clone(),
            contact_fraction: self.contact_fraction(),
            contact_radius: self.contact_radius,
            tol_c: self.tol_c,
            extension_discrepancy: self.extension_discrepancy,
            growth_proxy: self.growth_proxy(spec.support()?),
            grid: self.u_star.grid().as_ref().clone(),
            warnings: self.warnings.clone(),
        })
    }
}

/// Checks that the grid box holds the contact ball with the required
/// margin; returns a warning otherwise.
pub fn domain_warning(grid: &Grid, radius: f64) -> Option<String> {
    (!grid.contains_ball((1.0 + DOMAIN_MARGIN) * radius)).then(|| {
        format!(
            "grid box does not contain the ball of radius {:.4} (contact radius {:.4} plus {:.0}% margin)",
            (1.0 + DOMAIN_MARGIN) * radius,
            radius,
            100.0 * DOMAIN_MARGIN
        )
    })
}

/// `lambda_delta, v_delta` along `delta = delta_0 2^-k` until consecutive
/// values agree to `tol_lambda` and `tol_u`. The eigenfunction is the last
/// `v_delta` on the trusted region, continued convexly to the rest of the box.
pub fn vanishing_discount(spec: &ProblemSpec, grid: Arc<Grid>, params: &SolverParams) -> Result<EigenPair> {
    if spec.operator().is_degenerate() {
        return Err(Error::Unsupported("degenerate operator; use degenerate_eigen".into()));
    }
    let ell = spec.support()?;
    let contact_radius = estimate_contact_radius(spec)?;
    let warnings: Vec<String> = domain_warning(&grid, contact_radius).into_iter().collect();
    let solver = DiscountedSolver::new(spec, grid.clone(), params.clone())?;
    let trusted = trusted_region(&grid);

    let mut trace: Vec<TracePoint> = Vec::new();
    let mut prev: Option<(DiscountedSolution, Field)> = None;
    let mut delta = params.delta;
    let mut converged = false;
    while delta >= params.delta_min * (1.0 - 1e-12) {
        let sol = solver.solve(delta, prev.as_ref().map(|p| &p.0))?;
        let (lambda, v) = normalize(&sol);
        let (ld, ud) = match &prev {
            Some((p, pv)) => (Some((lambda - p.lambda).abs()), Some(v.sup_distance(pv, |i| trusted[i]))),
            None => (None, None),
        };
        trace.push(TracePoint {
            delta,
            lambda,
            lambda_drift: ld,
            u_drift: ud,
            newton_iterations: sol.newton_iterations,
            eps: sol.eps,
        });
        prev = Some((sol, v));
        if let (Some(ld), Some(ud)) = (ld, ud) {
            if ld < params.tol_lambda && ud < params.tol_u {
                converged = true;
                break;
            }
        }
        delta *= 0.5;
    }
    if !converged {
        return Err(Error::NotCauchy { trace: trace.iter().map(|t| (t.delta, t.lambda)).collect() });
    }
    let (sol, raw) = prev.expect("at least one discount");
    let gauge = gauge_field(ell, &raw);
    let omega0: Vec<bool> =
        (0..grid.len()).map(|i| trusted[i] && !grid.is_boundary(i) && gauge.get(i) < 0.0).collect();
    let ext = extend_field(&raw, &omega0, ell)?;
    let extension_discrepancy = raw.sup_distance(&ext, |i| trusted[i]);
    let cont = convex_extension(&raw, &trusted)?;
    let u_star = cont.shifted(-cont.min());
    let lambda_star = trace.last().unwrap().lambda;
    let residual = pde_residual(spec, lambda_star, &u_star)?;
    Ok(EigenPair {
        problem: spec.name().to_string(),
        lambda_star,
        x_node: u_star.argmin(),
        u_star,
        raw,
        omega0,
        trusted,
        residual,
        trace,
        contact_radius,
        tol_c: sol.tol_c,
        extension_discrepancy,
        warnings,
    })
}

/// `F = 0`: `lambda* = min f` over nodes and `u* = l(x - x0)` at the first
/// minimizing node.
pub fn degenerate_eigen(spec: &ProblemSpec, grid: Arc<Grid>) -> Result<EigenPair> {
    if !spec.operator().is_degenerate() {
        return Err(Error::Unsupported("degenerate_eigen needs F = 0".into()));
    }
    let ell = spec.support()?;
    let f = Field::from_fn(grid.clone(), |x| spec.cost().eval(x));
    let x_node = f.argmin();
    let lambda_star = f.get(x_node);
    let x0 = grid.point(x_node);
    let u_star = Field::from_fn(grid.clone(), |x| {
        let d: Vec<f64> = x.iter().zip(&x0).map(|(a, b)| a - b).collect();
        ell.eval(&d)
    });
    let residual = pde_residual(spec, lambda_star, &u_star)?;
    let mut omega0 = vec![false; grid.len()];
    omega0[x_node] = true;
    let contact_radius = estimate_contact_radius(spec)?;
    Ok(EigenPair {
        problem: spec.name().to_string(),
        lambda_star,
        raw: u_star.clone(),
        u_star,
        omega0,
        trusted: vec![true; grid.len()],
        residual,
        trace: Vec::new(),
        x_node,
        contact_radius,
        tol_c: 0.0,
        extension_discrepancy: 0.0,
        warnings: domain_warning(&grid, contact_radius).into_iter().collect(),
    })
}

/// Dispatches on whether `F` is degenerate.
pub fn solve_eigen(spec: &ProblemSpec, grid: Arc<Grid>, params: &SolverParams) -> Result<EigenPair> {
    if spec.operator().is_degenerate() {
        degenerate_eigen(spec, grid)
    } else {
        vanishing_discount(spec, grid, params)
    }
}
