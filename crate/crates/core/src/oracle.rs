//! Reference solutions for rotational problems by shooting on the radial
//! profile `phi'(r)`, and separable compositions of one-dimensional profiles.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ConstraintForm;
use crate::grid::{Field, Grid};
use crate::problems::{CostKind, ProblemSpec, Symmetry};

/// RK4 steps across `[0, r_cap]`.
pub const RADIAL_STEPS: usize = 100_000;

/// Target for `|phi'(r_hit) - a|`.
pub const DEFECT_TOL: f64 = 1e-10;

pub const MAX_BISECTIONS: usize = 200;

pub type ProfileFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `max{ lambda + G(phi'/r, ..., phi'/r, phi'') - f0(r), phi' - a } = 0` with
/// `G(mu, ..., mu, nu) = min_k -a_k ((n-1) mu + nu)`.
#[derive(Clone)]
pub struct RadialProblem {
    n: usize,
    weights: Vec<f64>,
    f0: ProfileFn,
    a: f64,
}

impl std::fmt::Debug for RadialProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RadialProblem")
            .field("n", &self.n)
            .field("weights", &self.weights)
            .field("a", &self.a)
            .finish_non_exhaustive()
    }
}

impl RadialProblem {
    pub fn new(n: usize, weights: Vec<f64>, f0: ProfileFn, a: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter { name: "n", reason: "must be positive".into() });
        }
        if weights.is_empty() || weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Unsupported(
                "G must be strictly decreasing in its last argument (positive weights)".into(),
            ));
        }
        if !(a > 0.0) {
            return Err(Error::InvalidParameter { name: "a", reason: format!("must be positive, got {a}") });
        }
        Ok(Self { n, weights, f0, a })
    }

    /// Radialization of a rotational spec: scalar operator weights, ball
    /// constraint and `f0(r) = f(r e_1)`.
    pub fn from_spec(spec: &ProblemSpec) -> Result<Self> {
        let weights = spec
            .operator()
            .scalar_weights()
            .ok_or_else(|| Error::Unsupported("operator is not orthogonally invariant".into()))?;
        let a = match spec.constraint().form() {
            ConstraintForm::Ball { radius } => *radius,
            _ => return Err(Error::Unsupported("radial reduction needs a ball constraint".into())),
        };
        if !spec.cost().is_radial() {
            return Err(Error::Unsupported("cost is not radial".into()));
        }
        let n = spec.dim();
        let cost = spec.cost().clone();
        let f0: ProfileFn = Arc::new(move |r| {
            let mut x = vec![0.0; n];
            x[0] = r;
            cost.eval(&x)
        });
        Self::new(n, weights, f0, a)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn slope_bound(&self) -> f64 {
        self.a
    }

    pub fn f0(&self, r: f64) -> f64 {
        (self.f0)(r)
    }

    /// `G(1, ..., 1)`.
    pub fn g_identity(&self) -> f64 {
        self.weights.iter().map(|w| -w * self.n as f64).fold(f64::INFINITY, f64::min)
    }

    /// Solves `min_k -a_k s = t` for `s`.
    fn invert(&self, t: f64) -> f64 {
        let c = if t <= 0.0 {
            self.weights.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        } else {
            self.weights.iter().copied().fold(f64::INFINITY, f64::min)
        };
        -t / c
    }

    /// `phi''` given `r > 0` and `phi'`.
    fn second(&self, lambda: f64, r: f64, p: f64) -> f64 {
        let s = self.invert(self.f0(r) - lambda);
        if self.n == 1 {
            s
        } else {
            s - (self.n - 1) as f64 * p / r
        }
    }

    /// Smallest `R` with `f0(R) >= lambda`; beyond it the profile is concave.
    fn r_cap(&self, lambda: f64) -> Result<f64> {
        let mut hi = 1.0;
        while self.f0(hi) < lambda {
            hi *= 2.0;
            if hi > 1e6 {
                return Err(Error::Bracket(format!("f0 stays below {lambda} up to r = 1e6")));
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.f0(mid) >= lambda {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    /// Slope `c` of the series start `phi'(r) ~ c r`, from
    /// `G(c, ..., c) = f0(0) - lambda`.
    fn series_slope(&self, lambda: f64) -> f64 {
        self.invert(self.f0(0.0) - lambda) / self.n as f64
    }

    fn rk4(&self, lambda: f64, r: f64, y: [f64; 2], dr: f64) -> [f64; 2] {
        let rhs = |r: f64, y: [f64; 2]| [y[1], self.second(lambda, r, y[1])];
        let k1 = rhs(r, y);
        let k2 = rhs(r + 0.5 * dr, [y[0] + 0.5 * dr * k1[0], y[1] + 0.5 * dr * k1[1]]);
        let k3 = rhs(r + 0.5 * dr, [y[0] + 0.5 * dr * k2[0], y[1] + 0.5 * dr * k2[1]]);
        let k4 = rhs(r + dr, [y[0] + dr * k3[0], y[1] + dr * k3[1]]);
        [
            y[0] + dr / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y[1] + dr / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ]
    }

    /// Integrates `(phi, phi')` outward until `phi''` crosses zero; returns the
    /// samples `(r, phi, phi', phi'')` with the last one at the crossing.
    fn integrate(&self, lambda: f64, keep: bool) -> Result<Vec<[f64; 4]>> {
        let c = self.series_slope(lambda);
        let start = [0.0, 0.0, 0.0, c];
        if c <= 0.0 {
            return Ok(vec![start]);
        }
        let cap = self.r_cap(lambda)?;
        let dr = cap / RADIAL_STEPS as f64;
        let mut out = vec![start];
        // Series start over the first step: phi' = c r, phi = c r^2 / 2.
        let mut r = dr;
        let mut y = [0.5 * c * dr * dr, c * dr];
        let mut d2 = self.second(lambda, r, y[1]);
        if d2 <= 0.0 {
            out.push([r, y[0], y[1], d2]);
            return Ok(out);
        }
        if keep {
            out.push([r, y[0], y[1], d2]);
        }
        let limit = 2 * RADIAL_STEPS + 10;
        for _ in 0..limit {
            let next = self.rk4(lambda, r, y, dr);
            let next_d2 = self.second(lambda, r + dr, next[1]);
            if next_d2 <= 0.0 {
                // Secant on phi'' over partial steps from r.
                let (mut t0, mut g0) = (0.0, d2);
                let (mut t1, mut g1) = (dr, next_d2);
                let mut hit = (r + dr, next, next_d2);
                for _ in 0..100 {
                    let t = t0 - g0 * (t1 - t0) / (g1 - g0);
                    if !(t > t0 && t < t1) {
                        break;
                    }
                    let yt = self.rk4(lambda, r, y, t);
                    let gt = self.second(lambda, r + t, yt[1]);
                    hit = (r + t, yt, gt);
                    if gt.abs() <= 1e-14 || (t1 - t0) <= 1e-15 * (r + t) {
                        break;
                    }
                    if gt > 0.0 {
                        t0 = t;
                        g0 = gt;
                    } else {
                        t1 = t;
                        g1 = gt;
                    }
                }
                out.push([hit.0, hit.1[0], hit.1[1], hit.2]);
                return Ok(out);
            }
            r += dr;
            y = next;
            d2 = next_d2;
            if keep {
                out.push([r, y[0], y[1], d2]);
            }
        }
        Err(Error::Stalled(format!("phi'' did not cross zero before r = {}", r)))
    }
}

/// Integrates the interior branch at `lambda` until `phi''` crosses zero;
/// returns `(r_hit, phi'(r_hit) - a)`.
pub fn shoot(problem: &RadialProblem, lambda: f64) -> Result<(f64, f64)> {
    let path = problem.integrate(lambda, false)?;
    let last = path.last().expect("nonempty");
    Ok((last[0], last[2] - problem.a))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialSolution {
    pub n: usize,
    pub lambda: f64,
    pub r0: f64,
    pub a: f64,
    pub defect: f64,
    pub bisections: usize,
    /// Samples `(r, phi, phi', phi'')` on `[0, r0]`, `phi(0) = 0`.
    pub samples: Vec<[f64; 4]>,
}

impl RadialSolution {
    /// `(phi, phi')` at `r >= 0`, cubic Hermite inside, affine beyond `r0`.
    pub fn profile(&self, r: f64) -> (f64, f64) {
        let last = self.samples.last().expect("nonempty");
        if r >= last[0] {
            return (last[1] + self.a * (r - last[0]), self.a);
        }
        let k = self.samples.partition_point(|s| s[0] <= r).max(1) - 1;
        let (s0, s1) = (&self.samples[k], &self.samples[k + 1]);
        let h = s1[0] - s0[0];
        let t = (r - s0[0]) / h;
        let (h00, h10, h01, h11) = (
            2.0 * t.powi(3) - 3.0 * t * t + 1.0,
            t.powi(3) - 2.0 * t * t + t,
            -2.0 * t.powi(3) + 3.0 * t * t,
            t.powi(3) - t * t,
        );
        let phi = h00 * s0[1] + h10 * h * s0[2] + h01 * s1[1] + h11 * h * s1[2];
        let dphi = h00 * s0[2] + h10 * h * s0[3] + h01 * s1[2] + h11 * h * s1[3];
        (phi, dphi)
    }

    pub fn phi(&self, r: f64) -> f64 {
        self.profile(r).0
    }

    pub fn phi_prime(&self, r: f64) -> f64 {
        self.profile(r).1
    }

    /// `u(x) = phi(|x|)` sampled on a grid.
    pub fn field(&self, grid: Arc<Grid>) -> Field {
        Field::from_fn(grid, |x| self.phi(x.iter().map(|v| v * v).sum::<f64>().sqrt()))
    }

    /// Two-column CSV `r,phi_prime` with `rows` evenly spaced samples on
    /// `[0, r0]`.
    pub fn write_phi_csv<W: Write>(&self, writer: W, rows: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["r", "phi_prime"])?;
        let rows = rows.max(2);
        for k in 0..rows {
            let r = self.r0 * k as f64 / (rows - 1) as f64;
            w.write_record([format!("{r:e}"), format!("{:e}", self.phi_prime(r))])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Bisection on `lambda` over `[f0(0) + 1e-9, -G(I) + f0(a) + 1]` for
/// `phi'(r_hit) = a`.
pub fn smooth_fit_solve(problem: &RadialProblem) -> Result<RadialSolution> {
    let (mut lo, mut hi) = smooth_fit_bracket(problem);
    let defect = |l: f64| shoot(problem, l).map(|s| s.1);
    let (d_lo, d_hi) = (defect(lo)?, defect(hi)?);
    if !(d_lo < 0.0 && d_hi > 0.0) {
        return Err(Error::Bracket(format!(
            "defect has no sign change on [{lo}, {hi}]: {d_lo:e}, {d_hi:e}"
        )));
    }
    let mut bisections = 0;
    let mut lambda = 0.5 * (lo + hi);
    let mut d = defect(lambda)?;
    while d.abs() > DEFECT_TOL && bisections < MAX_BISECTIONS {
        if d > 0.0 {
            hi = lambda;
        } else {
            lo = lambda;
        }
        lambda = 0.5 * (lo + hi);
        d = defect(lambda)?;
        bisections += 1;
    }
    if d.abs() > DEFECT_TOL {
        return Err(Error::Bracket(format!("defect {d:e} above tolerance after {bisections} bisections")));
    }
    let samples = problem.integrate(lambda, true)?;
    Ok(RadialSolution {
        n: problem.n,
        lambda,
        r0: samples.last().unwrap()[0],
        a: problem.a,
        defect: d,
        bisections,
        samples,
    })
}

/// The bisection bracket used by [`smooth_fit_solve`].
pub fn smooth_fit_bracket(problem: &RadialProblem) -> (f64, f64) {
    let lo = problem.f0(0.0) + 1e-9;
    let hi = -problem.g_identity() + problem.f0(problem.a) + 1.0;
    (lo, hi)
}

/// `lambda = n lambda_1`, `u(x) = sum_i u_1(x_i)` from a one-dimensional
/// profile.
#[derive(Clone, Debug)]
pub struct SeparableSolution {
    pub lambda: f64,
    pub n: usize,
    base: RadialSolution,
}

pub fn separable_compose(base: &RadialSolution, n: usize) -> Result<SeparableSolution> {
    if base.n != 1 {
        return Err(Error::InvalidParameter { name: "base", reason: format!("needs a 1D profile, got n = {}", base.n) });
    }
    if n == 0 {
        return Err(Error::InvalidParameter { name: "n", reason: "must be positive".into() });
    }
    Ok(SeparableSolution { lambda: n as f64 * base.lambda, n, base: base.clone() })
}

impl SeparableSolution {
    pub fn eval(&self, x: &[f64]) -> f64 {
        x.iter().map(|&v| self.base.phi(v.abs())).sum()
    }

    pub fn field(&self, grid: Arc<Grid>) -> Field {
        Field::from_fn(grid, |x| self.eval(x))
    }
}

/// Reference eigenvalue for a spec when one of the reductions applies.
#[derive(Clone, Debug)]
pub enum Reference {
    Radial(RadialSolution),
    /// `n` copies of a one-dimensional profile.
    Separable(SeparableSolution),
}

impl Reference {
    pub fn lambda(&self) -> f64 {
        match self {
            Reference::Radial(s) => s.lambda,
            Reference::Separable(s) => s.lambda,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Reference::Radial(_) => "radial",
            Reference::Separable(_) => "separable",
        }
    }

    /// The profile behind the reference (the 1D factor for separable ones).
    pub fn profile(&self) -> &RadialSolution {
        match self {
            Reference::Radial(s) => s,
            Reference::Separable(s) => &s.base,
        }
    }

    pub fn field(&self, grid: Arc<Grid>) -> Field {
        match self {
            Reference::Radial(s) => s.field(grid),
            Reference::Separable(s) => s.field(grid),
        }
    }
}

/// Rotational specs go through [`RadialProblem::from_spec`]; separable ones
/// need one scalar operator weight, a box constraint and `f = |x|^2`.
pub fn reference_for(spec: &ProblemSpec) -> Result<Reference> {
    if spec.symmetry() == Symmetry::Separable {
        let weights = spec
            .operator()
            .scalar_weights()
            .filter(|w| w.len() == 1 && w[0] > 0.0)
            .ok_or_else(|| Error::Unsupported("separable reduction needs F = -a tr(M)".into()))?;
        let ConstraintForm::Box { half_width } = spec.constraint().form() else {
            return Err(Error::Unsupported("separable reduction needs a box constraint".into()));
        };
        if !matches!(spec.cost().kind(), CostKind::Quadratic) {
            return Err(Error::Unsupported("separable reduction needs f = |x|^2".into()));
        }
        let base = RadialProblem::new(1, weights, Arc::new(|r| r * r), *half_width)?;
        return Ok(Reference::Separable(separable_compose(&smooth_fit_solve(&base)?, spec.dim())?));
    }
    Ok(Reference::Radial(smooth_fit_solve(&RadialProblem::from_spec(spec)?)?))
}
