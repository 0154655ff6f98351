//! Finite-difference stencils, the discrete operator `F(D^2 u)` and PDE
//! residuals.
//!
//! The second-order part uses central differences; cross derivatives of a
//! linear operator use the seven-point stencil oriented by the sign of
//! `a_ij`, which is monotone under diagonal dominance. The gradient
//! constraint uses upwind one-sided differences: per axis the one-sided
//! difference pointing away from lower neighbors, choosing among the sign
//! patterns the one with the largest gauge.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{SupportFunction, TOL_GEO};
use crate::grid::{Field, Grid};
use crate::problems::{OperatorKind, ProblemSpec};

#[derive(Clone, Copy, Debug)]
pub enum GradientScheme<'a> {
    Central,
    /// One-sided differences; `+1` forward, `-1` backward, per axis.
    Upwind(&'a [f64]),
}

pub fn gradient_fd(u: &Field, node: usize, scheme: GradientScheme<'_>) -> Result<Vec<f64>> {
    let g = u.grid();
    let v = u.values();
    (0..g.dim())
        .map(|k| {
            let h = g.h(k);
            match scheme {
                GradientScheme::Central => {
                    let (Some(a), Some(b)) = (g.neighbor(node, k, -1), g.neighbor(node, k, 1)) else {
                        return Err(Error::BoundaryNode { node });
                    };
                    Ok((v[b] - v[a]) / (2.0 * h))
                }
                GradientScheme::Upwind(signs) => {
                    if signs[k] >= 0.0 {
                        let b = g.neighbor(node, k, 1).ok_or(Error::BoundaryNode { node })?;
                        Ok((v[b] - v[node]) / h)
                    } else {
                        let a = g.neighbor(node, k, -1).ok_or(Error::BoundaryNode { node })?;
                        Ok((v[node] - v[a]) / h)
                    }
                }
            }
        })
        .collect()
}

pub fn hessian_fd(u: &Field, node: usize) -> Result<DMatrix<f64>> {
    let g = u.grid();
    if g.is_boundary(node) {
        return Err(Error::BoundaryNode { node });
    }
    let v = u.values();
    let n = g.dim();
    let mut m = DMatrix::zeros(n, n);
    let mut off = vec![0isize; n];
    for i in 0..n {
        let hi = g.h(i);
        let a = g.neighbor(node, i, -1).expect("interior");
        let b = g.neighbor(node, i, 1).expect("interior");
        m[(i, i)] = (v[a] - 2.0 * v[node] + v[b]) / (hi * hi);
        for j in (i + 1)..n {
            let mut at = |si: isize, sj: isize| {
                off.iter_mut().for_each(|o| *o = 0);
                off[i] = si;
                off[j] = sj;
                v[g.offset(node, &off).expect("interior")]
            };
            let c = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * hi * g.h(j));
            m[(i, j)] = c;
            m[(j, i)] = c;
        }
    }
    Ok(m)
}

/// Linear combination `sum_t w_t u(x + o_t)` over flat interior offsets.
type Branch = Vec<(isize, f64)>;

/// `F(D^2 u)` discretized on a fixed grid. For Pucci operators each branch is
/// one coefficient matrix and the discrete value is the minimum over branches.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    branches: Vec<Branch>,
}

impl DiscreteOperator {
    pub fn new(spec: &ProblemSpec, grid: &Grid) -> Result<Self> {
        let op = spec.operator();
        if op.dim() != grid.dim() {
            return Err(Error::Dimension { expected: op.dim(), got: grid.dim() });
        }
        if let Some((i, j, detail)) = op.monotonicity_violation(grid.spacing()) {
            return Err(Error::Monotonicity { axis_i: i, axis_j: j, detail });
        }
        let n = grid.dim();
        let stride = |k: usize| grid.stride(k) as isize;
        // -sum_i a_i D_ii u for a diagonal coefficient vector.
        let diagonal_branch = |a: &[f64]| -> Branch {
            let mut b = Vec::new();
            let mut center = 0.0;
            for (k, &ak) in a.iter().enumerate() {
                let w = ak / (grid.h(k) * grid.h(k));
                center += 2.0 * w;
                b.push((stride(k), -w));
                b.push((-stride(k), -w));
            }
            b.push((0, center));
            merge(b)
        };
        let branches = match op.kind() {
            OperatorKind::Zero => vec![Vec::new()],
            OperatorKind::PucciMin { diagonals } => diagonals.iter().map(|d| diagonal_branch(d)).collect(),
            OperatorKind::Linear { a } => {
                let diag: Vec<f64> = (0..n).map(|k| a[(k, k)]).collect();
                let mut b = diagonal_branch(&diag);
                for i in 0..n {
                    for j in (i + 1)..n {
                        let aij = a[(i, j)];
                        if aij == 0.0 {
                            continue;
                        }
                        // -2 a_ij D_ij with the monotone seven-point stencil.
                        let w = aij.abs() / (grid.h(i) * grid.h(j));
                        let s = if aij > 0.0 { 1 } else { -1 };
                        let (si, sj) = (stride(i), stride(j));
                        b.extend([
                            (0, -2.0 * w),
                            (si, w),
                            (-si, w),
                            (sj, w),
                            (-sj, w),
                            (si + s * sj, -w),
                            (-si - s * sj, -w),
                        ]);
                    }
                }
                vec![merge(b)]
            }
        };
        Ok(Self { branches })
    }

    pub fn branches(&self) -> usize {
        self.branches.len()
    }

    /// Value at an interior node together with the active branch.
    pub fn eval(&self, values: &[f64], node: usize) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for (k, b) in self.branches.iter().enumerate() {
            let v: f64 = b.iter().map(|&(o, w)| w * values[(node as isize + o) as usize]).sum();
            if v < best.0 {
                best = (v, k);
            }
        }
        best
    }

    /// Stencil of one branch (flat offsets and weights).
    pub fn branch(&self, k: usize) -> &[(isize, f64)] {
        &self.branches[k]
    }

    /// Every flat offset any branch touches, center first.
    pub fn footprint(&self) -> Vec<isize> {
        let mut out = vec![0isize];
        for b in &self.branches {
            for &(o, _) in b {
                if !out.contains(&o) {
                    out.push(o);
                }
            }
        }
        out
    }
}

fn merge(terms: Branch) -> Branch {
    let mut out: Branch = Vec::new();
    for (o, w) in terms {
        match out.iter_mut().find(|t| t.0 == o) {
            Some(t) => t.1 += w,
            None => out.push((o, w)),
        }
    }
    out
}

/// Upwind gradient at an interior node.
///
/// Writes the gradient into `p` and, per axis, which one-sided difference was
/// used into `side` (`-1` backward, `+1` forward, `0` neither).
pub fn upwind_gradient(grid: &Grid, values: &[f64], node: usize, p: &mut [f64], side: &mut [i8]) {
    let u0 = values[node];
    for k in 0..grid.dim() {
        let h = grid.h(k);
        let s = grid.stride(k);
        let back = (u0 - values[node - s]) / h;
        let fwd = (values[node + s] - u0) / h;
        if back > 0.0 && back >= -fwd {
            p[k] = back;
            side[k] = -1;
        } else if fwd < 0.0 {
            p[k] = fwd;
            side[k] = 1;
        } else {
            p[k] = 0.0;
            side[k] = 0;
        }
    }
}

/// `F(D^2 u)` on interior nodes; boundary nodes carry `NaN`.
pub fn apply_operator(spec: &ProblemSpec, u: &Field) -> Result<Field> {
    let grid = u.grid();
    let op = DiscreteOperator::new(spec, grid)?;
    let values: Vec<f64> = (0..grid.len())
        .map(|i| if grid.is_boundary(i) { f64::NAN } else { op.eval(u.values(), i).0 })
        .collect();
    Field::new(grid.clone(), values)
}

/// Residual of `max{ lambda + F(D^2 u) - f, H0(Du) } = 0` on interior nodes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Sup over interior nodes of `|max{...}|`.
    pub sup: f64,
    /// Same, excluding nodes flagged as gradient kinks.
    pub sup_filtered: f64,
    /// Positive part of the elliptic branch.
    pub elliptic_excess: f64,
    /// Positive part of the constraint branch.
    pub constraint_excess: f64,
    /// Node attaining `sup`.
    pub worst_node: usize,
    /// Fraction of counted nodes with `H0(Du) < 0`.
    pub contact_fraction: f64,
    pub kink_nodes: usize,
    pub nodes: usize,
}

pub fn pde_residual(spec: &ProblemSpec, lambda: f64, u: &Field) -> Result<ResidualReport> {
    pde_residual_in(spec, lambda, u, |_| true)
}

/// Residual restricted to interior nodes selected by `include`.
pub fn pde_residual_in(
    spec: &ProblemSpec,
    lambda: f64,
    u: &Field,
    include: impl Fn(usize) -> bool,
) -> Result<ResidualReport> {
    obstacle_residual_in(spec, |_| lambda, u, include)
}

/// Residual of `max{ c(x) + F(D^2 u) - f, H0(Du) } = 0` for a node-wise
/// zeroth-order term `c` (a constant eigenvalue or `delta u`).
pub fn obstacle_residual_in(
    spec: &ProblemSpec,
    zeroth: impl Fn(usize) -> f64,
    u: &Field,
    include: impl Fn(usize) -> bool,
) -> Result<ResidualReport> {
    let grid = u.grid();
    let ell = spec.support()?;
    let op = DiscreteOperator::new(spec, grid)?;
    let vals = u.values();
    let n = grid.dim();
    let kink = KinkFilter::new(u);
    let mut x = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut side = vec![0i8; n];
    let mut rep = ResidualReport::default();
    let mut contact = 0usize;
    for i in grid.interior_nodes().filter(|&i| include(i)) {
        grid.point_into(i, &mut x);
        let elliptic = zeroth(i) + op.eval(vals, i).0 - spec.cost().eval(&x);
        upwind_gradient(grid, vals, i, &mut p, &mut side);
        let gauge = ell.gauge(&p);
        let r = elliptic.max(gauge).abs();
        rep.nodes += 1;
        if gauge < -TOL_GEO {
            contact += 1;
        }
        rep.elliptic_excess = rep.elliptic_excess.max(elliptic);
        rep.constraint_excess = rep.constraint_excess.max(gauge);
        if r > rep.sup {
            rep.sup = r;
            rep.worst_node = i;
        }
        if kink.is_kink(i) {
            rep.kink_nodes += 1;
        } else {
            rep.sup_filtered = rep.sup_filtered.max(r);
        }
    }
    rep.contact_fraction = if rep.nodes > 0 { contact as f64 / rep.nodes as f64 } else { 0.0 };
    Ok(rep)
}

/// Flags nodes where backward and forward differences along some axis differ
/// by more than `10 h kappa`, with `kappa` the curvature scale
/// `max(1, 90th percentile of |D_kk u|)`.
pub struct KinkFilter<'a> {
    u: &'a Field,
    threshold: Vec<f64>,
}

impl<'a> KinkFilter<'a> {
    pub fn new(u: &'a Field) -> Self {
        let g = u.grid();
        let v = u.values();
        let mut second: Vec<f64> = g
            .interior_nodes()
            .flat_map(|i| {
                (0..g.dim()).map(move |k| {
                    let s = g.stride(k);
                    ((v[i + s] - 2.0 * v[i] + v[i - s]) / (g.h(k) * g.h(k))).abs()
                })
            })
            .collect();
        let kappa = if second.is_empty() {
            1.0
        } else {
            let idx = ((second.len() - 1) as f64 * 0.9) as usize;
            let (_, q, _) = second.select_nth_unstable_by(idx, |a, b| a.total_cmp(b));
            q.max(1.0)
        };
        let threshold = (0..g.dim()).map(|k| 10.0 * g.h(k) * kappa).collect();
        Self { u, threshold }
    }

    pub fn is_kink(&self, node: usize) -> bool {
        let g = self.u.grid();
        let v = self.u.values();
        (0..g.dim()).any(|k| {
            let s = g.stride(k);
            let h = g.h(k);
            let jump = ((v[node + s] - v[node]) - (v[node] - v[node - s])) / h;
            jump.abs() > self.threshold[k]
        })
    }
}

/// Upwind gauge field `H0(Du)` on interior nodes (`NaN` on the boundary).
pub fn gauge_field(ell: &SupportFunction, u: &Field) -> Field {
    let grid = u.grid();
    let n = grid.dim();
    let mut p = vec![0.0; n];
    let mut side = vec![0i8; n];
    let values = (0..grid.len())
        .map(|i| {
            if grid.is_boundary(i) {
                f64::NAN
            } else {
                upwind_gradient(grid, u.values(), i, &mut p, &mut side);
                ell.gauge(&p)
            }
        })
        .collect();
    Field::new(grid.clone(), values).expect("same grid")
}
