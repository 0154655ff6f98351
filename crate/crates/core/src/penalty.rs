//! Penalized discounted equation `delta u + F(D^2 u) + beta_eps(H0(Du)) = f`
//! with Dirichlet data, solved by semismooth Newton with damping and
//! continuation in `eps`.

use std::collections::VecDeque;
use std::sync::Arc;

use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd::{obstacle_residual_in, upwind_gradient, DiscreteOperator, ResidualReport};
use crate::geometry::{inf_convolve, SupportFunction, TOL_GEO};
use crate::grid::{Field, Grid};
use crate::problems::{k1_constant, ProblemSpec};

/// Coefficients of `s^3, s^4, s^5` in the junction `beta(2 eps s)`, `s in [0, 1]`.
const JUNCTION: [f64; 3] = [2.0, -1.0, 0.0];

/// `beta_eps`: zero for `z <= 0`, `(z - eps)/eps` for `z >= 2 eps`, and a
/// convex polynomial junction in between matching value, slope and
/// curvature at both ends.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltyFn {
    eps: f64,
    junction: [f64; 3],
}

pub fn make_beta(eps: f64) -> Result<PenaltyFn> {
    PenaltyFn::new(eps)
}

impl PenaltyFn {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter { name: "eps", reason: format!("must be positive, got {eps}") });
        }
        Ok(Self { eps, junction: JUNCTION })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn junction(&self) -> [f64; 3] {
        self.junction
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.eval_all(z).0
    }

    pub fn derivative(&self, z: f64) -> f64 {
        self.eval_all(z).1
    }

    pub fn second_derivative(&self, z: f64) -> f64 {
        self.eval_all(z).2
    }

    /// Value, first and second derivative.
    pub fn eval_all(&self, z: f64) -> (f64, f64, f64) {
        let e = self.eps;
        if z <= 0.0 {
            (0.0, 0.0, 0.0)
        } else if z >= 2.0 * e {
            ((z - e) / e, 1.0 / e, 0.0)
        } else {
            let s = z / (2.0 * e);
            let [a, b, c] = self.junction;
            let p = s * s * s * (a + s * (b + s * c));
            let dp = s * s * (3.0 * a + s * (4.0 * b + 5.0 * c * s));
            let ddp = s * (6.0 * a + s * (12.0 * b + 20.0 * c * s));
            (p, dp / (2.0 * e), ddp / (4.0 * e * e))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    /// Sup-norm target for the Newton residual (raised to the roundoff floor
    /// when that is larger).
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Damping factors `1, 1/2, ..., 2^-max_halvings`.
    pub max_halvings: u32,
    /// First penalty parameter; the sequence halves down to `eps_min`.
    pub eps_start: f64,
    /// Defaults to `max(1e-4, h/10)`.
    pub eps_min: Option<f64>,
    /// Extra `eps` values inserted after a failed continuation step.
    pub max_refinements: usize,
    pub delta: f64,
    /// Smallest discount in the vanishing-discount schedule.
    pub delta_min: f64,
    pub tol_lambda: f64,
    pub tol_u: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            newton_tol: 1e-9,
            max_newton: 60,
            max_halvings: 10,
            eps_start: 1.0,
            eps_min: None,
            max_refinements: 8,
            delta: 1.0,
            delta_min: 2f64.powi(-10),
            tol_lambda: 1e-3,
            tol_u: 1e-2,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("newton_tol", self.newton_tol),
            ("eps_start", self.eps_start),
            ("delta", self.delta),
            ("delta_min", self.delta_min),
            ("tol_lambda", self.tol_lambda),
            ("tol_u", self.tol_u),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter { name, reason: format!("must be positive, got {v}") });
            }
        }
        if let Some(e) = self.eps_min {
            if !(e > 0.0 && e <= self.eps_start) {
                return Err(Error::InvalidParameter {
                    name: "eps_min",
                    reason: format!("must lie in (0, eps_start], got {e}"),
                });
            }
        }
        if self.max_newton == 0 {
            return Err(Error::InvalidParameter { name: "max_newton", reason: "must be at least 1".into() });
        }
        Ok(())
    }

    pub fn eps_min_for(&self, grid: &Grid) -> f64 {
        self.eps_min.unwrap_or_else(|| (grid.h_max() / 10.0).max(1e-4)).min(self.eps_start)
    }

    /// `eps_start, eps_start/2, ...` while above `eps_min`, then `eps_min`.
    pub fn eps_sequence(&self, grid: &Grid) -> Vec<f64> {
        let emin = self.eps_min_for(grid);
        let mut out = Vec::new();
        let mut e = self.eps_start;
        while e > emin * (1.0 + 1e-12) {
            out.push(e);
            e *= 0.5;
        }
        out.push(emin);
        out
    }

    /// Contact threshold `max(2 eps_min, 5 h c1)`.
    pub fn contact_tolerance(&self, grid: &Grid, c1: f64) -> f64 {
        (2.0 * self.eps_min_for(grid)).max(5.0 * grid.h_max() * c1)
    }
}

/// `K1/delta + inf_convolve(|x|^2/2, ell)`: a supersolution of the discounted
/// problem used as Dirichlet data.
pub fn boundary_supersolution(spec: &ProblemSpec, delta: f64, grid: Arc<Grid>) -> Result<Field> {
    check_delta(delta)?;
    let phi = quadratic_envelope(spec, grid)?;
    Ok(phi.shifted(k1_constant(spec)? / delta))
}

fn quadratic_envelope(spec: &ProblemSpec, grid: Arc<Grid>) -> Result<Field> {
    let q = Field::from_fn(grid, |x| 0.5 * x.iter().map(|v| v * v).sum::<f64>());
    inf_convolve(&q, spec.support()?)
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter { name: "delta", reason: format!("must be positive, got {delta}") });
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PenalizedSolve {
    pub u: Field,
    pub eps: f64,
    pub iterations: usize,
    /// Final residual sup-norm.
    pub residual: f64,
    /// Tolerance actually used (including the roundoff floor).
    pub tolerance: f64,
    /// `max beta_eps(H0(Du))` over interior nodes.
    pub max_penalty: f64,
}

/// Solves the penalized equation at fixed `delta` and `eps`, with boundary
/// values taken from `boundary`.
pub fn solve_penalized(
    spec: &ProblemSpec,
    delta: f64,
    eps: f64,
    boundary: &Field,
    warm_start: Option<&Field>,
    params: &SolverParams,
) -> Result<PenalizedSolve> {
    check_delta(delta)?;
    let beta = make_beta(eps)?;
    let sys = PenalizedSystem::new(spec, boundary.grid().clone())?;
    let start = warm_start.unwrap_or(boundary);
    sys.newton(delta, &beta, boundary, start, params)
}

/// Per-node linearization data recorded while evaluating the residual.
#[derive(Clone, Copy, Debug, Default)]
struct NodeLin {
    branch: usize,
    beta_slope: f64,
    grad: [f64; 3],
    side: [i8; 3],
}

/// Discretization of the penalized operator on a fixed grid, with a reusable
/// sparsity pattern and symbolic factorization.
pub struct PenalizedSystem<'a> {
    ell: &'a SupportFunction,
    grid: Arc<Grid>,
    op: DiscreteOperator,
    f: Vec<f64>,
    /// Flat column offsets per interior row (center first).
    offsets: Vec<isize>,
    row_start: Vec<usize>,
    symbolic: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    lu_symbolic: SymbolicLu<usize>,
    op_weight: f64,
}

impl<'a> PenalizedSystem<'a> {
    pub fn new(spec: &'a ProblemSpec, grid: Arc<Grid>) -> Result<Self> {
        if spec.operator().is_degenerate() {
            return Err(Error::Unsupported(
                "the penalized solver needs a uniformly elliptic operator; use the degenerate eigen path".into(),
            ));
        }
        if grid.dim() > 3 {
            return Err(Error::Unsupported(format!("dimension {} > 3", grid.dim())));
        }
        let ell = spec.support()?;
        let op = DiscreteOperator::new(spec, &grid)?;
        let mut offsets = op.footprint();
        for k in 0..grid.dim() {
            for o in [grid.stride(k) as isize, -(grid.stride(k) as isize)] {
                if !offsets.contains(&o) {
                    offsets.push(o);
                }
            }
        }
        let op_weight = (0..op.branches())
            .map(|b| op.branch(b).iter().map(|t| t.1.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let n = grid.len();
        let mut pairs = Vec::with_capacity(n * offsets.len());
        let mut row_start = Vec::with_capacity(n + 1);
        for i in 0..n {
            row_start.push(pairs.len());
            if grid.is_boundary(i) {
                pairs.push(Pair::new(i, i));
            } else {
                for &o in &offsets {
                    pairs.push(Pair::new(i, (i as isize + o) as usize));
                }
            }
        }
        row_start.push(pairs.len());
        let (symbolic, argsort) = SymbolicSparseColMat::try_new_from_indices(n, n, &pairs)
            .map_err(|e| Error::Linear(format!("{e:?}")))?;
        let lu_symbolic =
            SymbolicLu::try_new(symbolic.as_ref()).map_err(|e| Error::Linear(format!("{e:?}")))?;
        let mut x = vec![0.0; grid.dim()];
        let f = (0..n)
            .map(|i| {
                grid.point_into(i, &mut x);
                spec.cost().eval(&x)
            })
            .collect();
        Ok(Self { ell, grid, op, f, offsets, row_start, symbolic, argsort, lu_symbolic, op_weight })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Residual of the shifted unknown `w = u - shift`; fills `lin` for the
    /// Jacobian and returns the sup-norm.
    fn residual(
        &self,
        w: &[f64],
        shift: f64,
        delta: f64,
        beta: &PenaltyFn,
        bc: &[f64],
        out: &mut [f64],
        lin: &mut [NodeLin],
    ) -> f64 {
        let g = &*self.grid;
        let dim = g.dim();
        out.par_iter_mut()
            .zip(lin.par_iter_mut())
            .enumerate()
            .map(|(i, (r, l))| {
                if g.is_boundary(i) {
                    *r = w[i] - bc[i];
                } else {
                    let (fv, branch) = self.op.eval(w, i);
                    let mut p = [0.0; 3];
                    let mut grad = [0.0; 3];
                    upwind_gradient(g, w, i, &mut p[..dim], &mut l.side[..dim]);
                    let z = self.ell.gauge_with_grad(&p[..dim], &mut grad[..dim]);
                    let (b, db, _) = beta.eval_all(z);
                    *r = delta * (w[i] + shift) + fv + b - self.f[i];
                    l.branch = branch;
                    l.beta_slope = db;
                    l.grad = grad;
                }
                r.abs()
            })
            .reduce(|| 0.0, f64::max)
    }

    fn jacobian(&self, delta: f64, lin: &[NodeLin], vals: &mut [f64]) {
        let g = &*self.grid;
        vals.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..g.len() {
            let row = &mut vals[self.row_start[i]..self.row_start[i + 1]];
            if g.is_boundary(i) {
                row[0] = 1.0;
                continue;
            }
            let l = &lin[i];
            row[0] += delta;
            for &(o, w) in self.op.branch(l.branch) {
                let slot = self.offsets.iter().position(|&x| x == o).expect("footprint");
                row[slot] += w;
            }
            for k in 0..g.dim() {
                let c = l.beta_slope * l.grad[k] / g.h(k);
                if c == 0.0 || l.side[k] == 0 {
                    continue;
                }
                let s = g.stride(k) as isize;
                // Backward: p_k = (u0 - u_-)/h; forward: p_k = (u_+ - u0)/h.
                let (nb, sign) = if l.side[k] < 0 { (-s, -1.0) } else { (s, 1.0) };
                let slot = self.offsets.iter().position(|&x| x == nb).expect("axis neighbor");
                row[0] -= sign * c;
                row[slot] += sign * c;
            }
        }
    }

    /// Roundoff floor for the residual of `w` given the size of its terms.
    fn roundoff_floor(&self, w: &[f64], shift: f64, delta: f64, beta: &PenaltyFn) -> f64 {
        let wmax = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let fmax = self.f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let grad_scale = (0..self.grid.dim()).map(|k| 2.0 / self.grid.h(k)).sum::<f64>() / beta.eps();
        256.0 * f64::EPSILON * (delta * shift.abs() + wmax * (self.op_weight + grad_scale) + fmax + 1.0)
    }

    pub fn newton(
        &self,
        delta: f64,
        beta: &PenaltyFn,
        boundary: &Field,
        start: &Field,
        params: &SolverParams,
    ) -> Result<PenalizedSolve> {
        let g = &*self.grid;
        if boundary.grid().as_ref() != g || start.grid().as_ref() != g {
            return Err(Error::InvalidParameter { name: "grid", reason: "fields live on different grids".into() });
        }
        let n = g.len();
        let shift = start.values()[start.argmin()];
        let bc: Vec<f64> = boundary.values().iter().map(|v| v - shift).collect();
        let mut w: Vec<f64> = (0..n)
            .map(|i| if g.is_boundary(i) { bc[i] } else { start.values()[i] - shift })
            .collect();
        let mut r = vec![0.0; n];
        let mut lin = vec![NodeLin::default(); n];
        let mut res = self.residual(&w, shift, delta, beta, &bc, &mut r, &mut lin);
        let mut vals = vec![0.0; *self.row_start.last().unwrap()];
        let mut w_try = vec![0.0; n];
        let mut r_try = vec![0.0; n];
        let mut lin_try = vec![NodeLin::default(); n];
        let mut iterations = 0;
        let mut tol = params.newton_tol.max(self.roundoff_floor(&w, shift, delta, beta));
        let mut failure = None;
        while res > tol {
            if iterations == params.max_newton {
                failure = Some(format!("{} iterations", params.max_newton));
                break;
            }
            iterations += 1;
            self.jacobian(delta, &lin, &mut vals);
            let mat = SparseColMat::new_from_argsort(self.symbolic.clone(), &self.argsort, &vals)
                .map_err(|e| Error::Linear(format!("{e:?}")))?;
            let lu = Lu::try_new_with_symbolic(self.lu_symbolic.clone(), mat.as_ref())
                .map_err(|e| Error::Linear(format!("{e:?}")))?;
            let rhs = Mat::<f64>::from_fn(n, 1, |i, _| -r[i]);
            let d = lu.solve(&rhs);
            if (0..n).any(|i| !d[(i, 0)].is_finite()) {
                failure = Some("singular Newton system".into());
                break;
            }
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..=params.max_halvings {
                w_try.iter_mut().enumerate().for_each(|(i, v)| *v = w[i] + alpha * d[(i, 0)]);
                let res_try = self.residual(&w_try, shift, delta, beta, &bc, &mut r_try, &mut lin_try);
                if res_try < res {
                    std::mem::swap(&mut w, &mut w_try);
                    std::mem::swap(&mut r, &mut r_try);
                    std::mem::swap(&mut lin, &mut lin_try);
                    res = res_try;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                failure = Some(format!("no residual decrease down to damping 2^-{}", params.max_halvings));
                break;
            }
            tol = params.newton_tol.max(self.roundoff_floor(&w, shift, delta, beta));
        }
        let u = Field::new(self.grid.clone(), w.iter().map(|v| v + shift).collect())?;
        if let Some(detail) = failure {
            return Err(Error::NewtonDivergence { detail, residual: res, best: Box::new(u) });
        }
        let max_penalty = g
            .interior_nodes()
            .map(|i| {
                let mut p = [0.0; 3];
                let mut side = [0i8; 3];
                upwind_gradient(g, &w, i, &mut p[..g.dim()], &mut side[..g.dim()]);
                beta.eval(self.ell.gauge(&p[..g.dim()]))
            })
            .fold(0.0, f64::max);
        Ok(PenalizedSolve { u, eps: beta.eps(), iterations, residual: res, tolerance: tol, max_penalty })
    }

    /// Runs the `eps` sequence from `start`, inserting intermediate values
    /// after a failed step.
    pub fn continuation(
        &self,
        delta: f64,
        eps_seq: &[f64],
        boundary: &Field,
        start: &Field,
        params: &SolverParams,
    ) -> Result<(PenalizedSolve, usize)> {
        let mut queue: VecDeque<f64> = eps_seq.iter().copied().collect();
        let mut current = start.clone();
        let mut last: Option<PenalizedSolve> = None;
        let mut refinements = 0;
        let mut total = 0;
        while let Some(eps) = queue.pop_front() {
            match self.newton(delta, &make_beta(eps)?, boundary, &current, params) {
                Ok(sol) => {
                    total += sol.iterations;
                    current = sol.u.clone();
                    last = Some(sol);
                }
                Err(Error::NewtonDivergence { .. }) if refinements < params.max_refinements => {
                    refinements += 1;
                    let retry = match &last {
                        Some(prev) => (prev.eps * eps).sqrt(),
                        None => 2.0 * eps,
                    };
                    queue.push_front(eps);
                    queue.push_front(retry);
                }
                Err(Error::NewtonDivergence { .. }) => {
                    return Err(Error::Continuation {
                        eps,
                        last_good: last.as_ref().map(|s| s.eps),
                        iterate: Box::new(current),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let sol = last.ok_or(Error::Empty("eps sequence"))?;
        Ok((sol, total))
    }
}

/// Solution of the discounted obstacle problem at one `delta`.
#[derive(Clone, Debug)]
pub struct DiscountedSolution {
    pub delta: f64,
    pub u: Field,
    /// Argmin node (smallest flat index among ties).
    pub x_node: usize,
    /// `delta u(x_delta)`.
    pub lambda: f64,
    /// Interior nodes with `H0(Du) < -tol_c`.
    pub contact: Vec<bool>,
    pub tol_c: f64,
    pub eps: f64,
    pub newton_iterations: usize,
    pub residual: ResidualReport,
}

impl DiscountedSolution {
    pub fn contact_count(&self) -> usize {
        self.contact.iter().filter(|&&b| b).count()
    }
}

/// Drives the penalty continuation for a sequence of discounts on one grid,
/// reusing the factorization pattern and boundary envelope.
pub struct DiscountedSolver<'a> {
    spec: &'a ProblemSpec,
    params: SolverParams,
    system: PenalizedSystem<'a>,
    envelope: Field,
    k1: f64,
    tol_c: f64,
}

impl<'a> DiscountedSolver<'a> {
    pub fn new(spec: &'a ProblemSpec, grid: Arc<Grid>, params: SolverParams) -> Result<Self> {
        params.validate()?;
        let system = PenalizedSystem::new(spec, grid.clone())?;
        let envelope = quadratic_envelope(spec, grid.clone())?;
        let tol_c = params.contact_tolerance(&grid, spec.support()?.c1());
        Ok(Self { spec, params, system, envelope, k1: k1_constant(spec)?, tol_c })
    }

    pub fn params(&self) -> &SolverParams {
        &self.params
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.system.grid()
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn contact_tolerance(&self) -> f64 {
        self.tol_c
    }

    pub fn boundary(&self, delta: f64) -> Field {
        self.envelope.shifted(self.k1 / delta)
    }

    /// Solves at `delta`. With a previous solution the start is
    /// `v_prev + lambda_prev / delta` and only `eps_min` is attempted before
    /// falling back to the full continuation.
    pub fn solve(&self, delta: f64, previous: Option<&DiscountedSolution>) -> Result<DiscountedSolution> {
        check_delta(delta)?;
        let boundary = self.boundary(delta);
        let seq = self.params.eps_sequence(self.grid());
        let (sol, iters) = match previous {
            None => self.system.continuation(delta, &seq, &boundary, &boundary, &self.params)?,
            Some(prev) => {
                let base = prev.u.values()[prev.x_node];
                let start = prev.u.shifted(prev.lambda / delta - base);
                let emin = *seq.last().unwrap();
                match self.system.newton(delta, &make_beta(emin)?, &boundary, &start, &self.params) {
                    Ok(s) => {
                        let it = s.iterations;
                        (s, it)
                    }
                    Err(Error::NewtonDivergence { .. }) => {
                        self.system.continuation(delta, &seq, &boundary, &start, &self.params)?
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        self.finish(delta, sol, iters)
    }

    fn finish(&self, delta: f64, sol: PenalizedSolve, iters: usize) -> Result<DiscountedSolution> {
        let u = sol.u;
        let grid = u.grid().clone();
        let x_node = u.argmin();
        let lambda = delta * u.values()[x_node];
        let ell = self.spec.support()?;
        let gauge = crate::fd::gauge_field(ell, &u);
        let contact = (0..grid.len())
            .map(|i| !grid.is_boundary(i) && gauge.get(i) < -self.tol_c)
            .collect();
        let vals = u.values();
        let residual = obstacle_residual_in(self.spec, |i| delta * vals[i], &u, |_| true)?;
        Ok(DiscountedSolution {
            delta,
            x_node,
            lambda,
            contact,
            tol_c: self.tol_c,
            eps: sol.eps,
            newton_iterations: iters,
            residual,
            u,
        })
    }
}

/// One discounted solve with the full `eps` continuation.
pub fn solve_discounted(
    spec: &ProblemSpec,
    delta: f64,
    grid: Arc<Grid>,
    params: &SolverParams,
) -> Result<DiscountedSolution> {
    DiscountedSolver::new(spec, grid, params.clone())?.solve(delta, None)
}

/// Nodes with `H0 > tol` among those selected.
pub fn inadmissible_nodes(ell: &SupportFunction, u: &Field, tol: f64, include: impl Fn(usize) -> bool) -> usize {
    let g = crate::fd::gauge_field(ell, u);
    u.grid()
        .interior_nodes()
        .filter(|&i| include(i) && g.get(i) > tol.max(TOL_GEO))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::convexity_minimum;
    use crate::problems::builtin;

    fn quartic_grid(h: f64) -> Arc<Grid> {
        Arc::new(Grid::cube(1, 3.0, h).unwrap())
    }

    #[test]
    fn beta_examples() {
        let b = make_beta(0.1).unwrap();
        assert_eq!(b.eval(-1.0), 0.0);
        assert!((b.eval(0.3) - 2.0).abs() < 1e-12);
        assert!((b.derivative(0.3) - 10.0).abs() < 1e-12);
        assert!(make_beta(0.0).is_err());
        assert!(make_beta(f64::NAN).is_err());
    }

    #[test]
    fn beta_convex_and_c2() {
        let e = 0.05;
        let b = make_beta(e).unwrap();
        for k in 0..100_000 {
            let z = -0.1 + 0.3 * k as f64 / 100_000.0;
            assert!(b.second_derivative(z) >= -1e-12, "z={z}");
        }
        let d = 1e-9;
        for z0 in [0.0, 2.0 * e] {
            let (lo, hi) = (b.eval_all(z0 - d), b.eval_all(z0 + d));
            assert!((lo.0 - hi.0).abs() < 1e-6);
            assert!((lo.1 - hi.1).abs() < 1e-5);
            assert!((lo.2 - hi.2).abs() < 1e-3 / (e * e));
        }
    }

    #[test]
    fn eps_sequence_halves_to_floor() {
        let grid = Grid::cube(1, 3.0, 0.01).unwrap();
        let p = SolverParams::default();
        let seq = p.eps_sequence(&grid);
        assert_eq!(seq[0], 1.0);
        assert_eq!(*seq.last().unwrap(), p.eps_min_for(&grid));
        assert!(seq.windows(2).all(|w| w[1] < w[0] && w[1] >= 0.5 * w[0]));
    }

    #[test]
    fn degenerate_operator_rejected() {
        let spec = builtin("degenerate_zeroF").unwrap();
        let grid = quartic_grid(0.05);
        let bdry = boundary_supersolution(&spec, 1.0, grid).unwrap();
        let err = solve_penalized(&spec, 1.0, 0.1, &bdry, None, &SolverParams::default()).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)), "{err}");
    }

    #[test]
    fn penalty_bounded_along_continuation() {
        let spec = builtin("quartic1d").unwrap();
        let grid = quartic_grid(0.01);
        let params = SolverParams::default();
        let bdry = boundary_supersolution(&spec, 1.0, grid.clone()).unwrap();
        let mut start = bdry.clone();
        let t = trusted(&grid);
        let mut peaks = Vec::new();
        for k in 1..=8 {
            let s = solve_penalized(&spec, 1.0, 0.5f64.powi(k), &bdry, Some(&start), &params).unwrap();
            // beta = f - delta u - F(D^2 u) at interior nodes.
            let fu = crate::fd::apply_operator(&spec, &s.u).unwrap();
            let peak = grid
                .interior_nodes()
                .filter(|&i| t[i])
                .map(|i| spec.cost().eval(&grid.point(i)) - s.u.get(i) - fu.get(i))
                .fold(0.0, f64::max);
            peaks.push(peak);
            start = s.u;
        }
        let top = peaks.iter().cloned().fold(0.0, f64::max);
        assert!(top < 10.0, "{peaks:?}");
    }

    #[test]
    fn discounted_solution_properties() {
        let spec = builtin("quartic1d").unwrap();
        let grid = quartic_grid(0.01);
        let solver = DiscountedSolver::new(&spec, grid.clone(), SolverParams::default()).unwrap();
        let sol = solver.solve(0.5, None).unwrap();
        assert!(sol.lambda >= 0.0 && sol.lambda <= solver.k1() + 1e-9, "{}", sol.lambda);
        let bar = solver.boundary(0.5);
        let over = sol.u.values().iter().zip(bar.values()).map(|(u, b)| u - b).fold(f64::MIN, f64::max);
        assert!(over <= 1e-9, "{over}");
        let (cmin, _) = convexity_minimum(&sol.u);
        assert!(cmin >= -1e-6 * (1.0 + sol.u.max()), "{cmin}");
        assert!(sol.contact_count() > 0);
        let ell = spec.support().unwrap();
        let t = trusted(&grid);
        assert_eq!(inadmissible_nodes(ell, &sol.u, 10.0 * 0.01, |i| t[i]), 0);
    }

    fn trusted(grid: &Grid) -> Vec<bool> {
        crate::eigen::trusted_region(grid)
    }

    #[test]
    fn warm_start_saves_iterations() {
        let spec = builtin("quartic1d").unwrap();
        let grid = quartic_grid(0.01);
        let solver = DiscountedSolver::new(&spec, grid, SolverParams::default()).unwrap();
        let first = solver.solve(0.25, None).unwrap();
        let cold = solver.solve(0.125, None).unwrap();
        let warm = solver.solve(0.125, Some(&first)).unwrap();
        assert!(
            2 * warm.newton_iterations <= cold.newton_iterations,
            "warm {} cold {}",
            warm.newton_iterations,
            cold.newton_iterations
        );
        assert!((warm.lambda - cold.lambda).abs() < 1e-6);
    }
}
