//! Problem instances `(F, H, f)` and the built-in registry.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    direction_mesh, ConstraintForm, ConstraintH, ScalarFn, SupportFunction, ICOSPHERE_LEVEL, PLANAR_DIRECTIONS,
};

/// Seed for every sampled validation check; recorded in run manifests.
pub const VALIDATION_SEED: u64 = 0x6772_6164_6569_67;

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 5] = ["quartic1d", "separable2d", "radial2d", "degenerate_zeroF", "ellipse2d"];

#[derive(Clone, Debug, PartialEq)]
pub enum OperatorKind {
    /// `F(M) = -tr(A M)` with `A` symmetric positive definite.
    Linear { a: DMatrix<f64> },
    /// `F(M) = min_k -tr(A_k M)` with diagonal positive definite `A_k`.
    PucciMin { diagonals: Vec<Vec<f64>> },
    /// `F = 0`.
    Zero,
}

/// Positively homogeneous, degenerate elliptic operator `F(D^2 u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorF {
    dim: usize,
    kind: OperatorKind,
    theta: f64,
    big_theta: f64,
}

impl OperatorF {
    pub fn linear(a: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::InvalidParameter {
                name: "A",
                reason: format!("need a nonempty square matrix, got {}x{}", a.nrows(), a.ncols()),
            });
        }
        if (&a - a.transpose()).amax() > 1e-12 * (1.0 + a.amax()) {
            return Err(Error::InvalidParameter { name: "A", reason: "not symmetric".into() });
        }
        let eig = a.clone().symmetric_eigen().eigenvalues;
        let theta = eig.min();
        let big_theta = eig.max();
        if !(theta > 0.0) {
            return Err(Error::InvalidParameter {
                name: "A",
                reason: format!("not positive definite (smallest eigenvalue {theta})"),
            });
        }
        Ok(Self { dim: n, kind: OperatorKind::Linear { a }, theta, big_theta })
    }

    /// `F(M) = -tr(M)`.
    pub fn laplacian(dim: usize) -> Self {
        Self::linear(DMatrix::identity(dim, dim)).expect("identity is SPD")
    }

    pub fn pucci_min(diagonals: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = diagonals.first() else {
            return Err(Error::Empty("Pucci family"));
        };
        let n = first.len();
        let mut theta = f64::INFINITY;
        let mut big_theta: f64 = 0.0;
        for d in &diagonals {
            if d.len() != n {
                return Err(Error::Dimension { expected: n, got: d.len() });
            }
            for &x in d {
                if !(x.is_finite() && x > 0.0) {
                    return Err(Error::InvalidParameter {
                        name: "A_k",
                        reason: format!("diagonal entries must be positive, got {x}"),
                    });
                }
                theta = theta.min(x);
                big_theta = big_theta.max(x);
            }
        }
        Ok(Self { dim: n, kind: OperatorKind::PucciMin { diagonals }, theta, big_theta })
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, kind: OperatorKind::Zero, theta: 0.0, big_theta: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    /// Lower ellipticity constant.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Upper ellipticity constant.
    pub fn big_theta(&self) -> f64 {
        self.big_theta
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self.kind, OperatorKind::Zero)
    }

    pub fn eval(&self, m: &DMatrix<f64>) -> f64 {
        self.eval_flat(m.transpose().as_slice())
    }

    /// `F` of a row-major `n x n` symmetric matrix.
    pub fn eval_flat(&self, m: &[f64]) -> f64 {
        let n = self.dim;
        match &self.kind {
            OperatorKind::Zero => 0.0,
            OperatorKind::Linear { a } => {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        s += a[(i, j)] * m[j * n + i];
                    }
                }
                -s
            }
            OperatorKind::PucciMin { diagonals } => self.pucci_active(diagonals, |i| m[i * n + i]).1,
        }
    }

    /// Active branch `(k, F)` of the Pucci minimum for a matrix with diagonal
    /// `diag(i)`; ties go to the smallest `k`.
    pub(crate) fn pucci_active(&self, diagonals: &[Vec<f64>], diag: impl Fn(usize) -> f64) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, d) in diagonals.iter().enumerate() {
            let v = -d.iter().enumerate().map(|(i, a)| a * diag(i)).sum::<f64>();
            if v < best.1 {
                best = (k, v);
            }
        }
        best
    }

    /// `F(I_n)`.
    pub fn at_identity(&self) -> f64 {
        self.eval(&DMatrix::identity(self.dim, self.dim))
    }

    /// Invariant under `M -> O M O^t` for orthogonal `O`.
    pub fn is_rotational(&self) -> bool {
        self.scalar_weights().is_some()
    }

    /// Scalar weights `a_k` when every coefficient matrix is a multiple of the
    /// identity, so that `F(M) = min_k -a_k tr(M)`.
    pub fn scalar_weights(&self) -> Option<Vec<f64>> {
        let scalar = |d: &[f64]| d.iter().all(|&x| x == d[0]);
        match &self.kind {
            OperatorKind::Zero => Some(vec![0.0]),
            OperatorKind::Linear { a } => {
                let a0 = a[(0, 0)];
                let is_scalar = (0..self.dim)
                    .all(|i| (0..self.dim).all(|j| a[(i, j)] == if i == j { a0 } else { 0.0 }));
                is_scalar.then(|| vec![a0])
            }
            OperatorKind::PucciMin { diagonals } => diagonals
                .iter()
                .all(|d| scalar(d))
                .then(|| diagonals.iter().map(|d| d[0]).collect()),
        }
    }

    /// Axis pair violating diagonal dominance of `A`, which the monotone
    /// seven-point cross-derivative stencil needs.
    pub fn monotonicity_violation(&self, spacing: &[f64]) -> Option<(usize, usize, String)> {
        let OperatorKind::Linear { a } = &self.kind else {
            return None;
        };
        let n = self.dim;
        for i in 0..n {
            let diag = a[(i, i)] / (spacing[i] * spacing[i]);
            let off: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| a[(i, j)].abs() / (spacing[i] * spacing[j]))
                .sum();
            if off > diag * (1.0 + 1e-12) {
                let j = (0..n)
                    .filter(|&j| j != i)
                    .max_by(|&p, &q| a[(i, p)].abs().total_cmp(&a[(i, q)].abs()))
                    .unwrap_or(i);
                return Some((
                    i,
                    j,
                    format!("a_ii/h_i^2 = {diag:e} < sum_j |a_ij|/(h_i h_j) = {off:e}"),
                ));
            }
        }
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CostKind {
    /// `|x|^2`.
    Quadratic,
    /// `x . Q x`.
    QuadForm(DMatrix<f64>),
    Custom,
}

/// Convex superlinear running cost `f`.
#[derive(Clone)]
pub struct CostF {
    dim: usize,
    kind: CostKind,
    eval: ScalarFn,
    infimum: Option<f64>,
    argmin: Option<Vec<f64>>,
    radial: bool,
    label: String,
}

impl fmt::Debug for CostF {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostF")
            .field("dim", &self.dim)
            .field("kind", &self.kind)
            .field("infimum", &self.infimum)
            .field("argmin", &self.argmin)
            .field("label", &self.label)
            .finish()
    }
}

impl CostF {
    pub fn quadratic(dim: usize) -> Self {
        Self {
            dim,
            kind: CostKind::Quadratic,
            eval: Arc::new(|x: &[f64]| x.iter().map(|v| v * v).sum()),
            infimum: Some(0.0),
            argmin: Some(vec![0.0; dim]),
            radial: true,
            label: "|x|^2".into(),
        }
    }

    pub fn quad_form(q: DMatrix<f64>) -> Result<Self> {
        let n = q.nrows();
        if n == 0 || q.ncols() != n {
            return Err(Error::InvalidParameter { name: "Q", reason: "need a square matrix".into() });
        }
        let qq = q.clone();
        let radial = (0..n).all(|i| (0..n).all(|j| q[(i, j)] == if i == j { q[(0, 0)] } else { 0.0 }));
        Ok(Self {
            dim: n,
            kind: CostKind::QuadForm(q),
            eval: Arc::new(move |x: &[f64]| {
                let mut s = 0.0;
                for i in 0..x.len() {
                    for j in 0..x.len() {
                        s += x[i] * qq[(i, j)] * x[j];
                    }
                }
                s
            }),
            infimum: Some(0.0),
            argmin: Some(vec![0.0; n]),
            radial,
            label: "x.Qx".into(),
        })
    }

    /// `|x - c|^2`.
    pub fn shifted_quadratic(center: Vec<f64>) -> Self {
        let c = center.clone();
        Self {
            dim: center.len(),
            kind: CostKind::Custom,
            eval: Arc::new(move |x: &[f64]| x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum()),
            infimum: Some(0.0),
            radial: center.iter().all(|&v| v == 0.0),
            label: format!("|x - {center:?}|^2"),
            argmin: Some(center),
        }
    }

    pub fn custom(
        dim: usize,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        infimum: Option<(f64, Vec<f64>)>,
        radial: bool,
        label: impl Into<String>,
    ) -> Self {
        let (infimum, argmin) = match infimum {
            Some((v, x)) => (Some(v), Some(x)),
            None => (None, None),
        };
        Self { dim, kind: CostKind::Custom, eval: Arc::new(eval), infimum, argmin, radial, label: label.into() }
    }

    /// `c f` for `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        let inner = self.eval.clone();
        Self {
            dim: self.dim,
            kind: CostKind::Custom,
            eval: Arc::new(move |x: &[f64]| c * inner(x)),
            infimum: self.infimum.map(|v| c * v),
            argmin: self.argmin.clone(),
            radial: self.radial,
            label: format!("{c} * ({})", self.label),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub fn infimum(&self) -> Option<f64> {
        self.infimum
    }

    pub fn argmin(&self) -> Option<&[f64]> {
        self.argmin.as_deref()
    }

    pub fn is_radial(&self) -> bool {
        self.radial
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    Rotational,
    Separable,
    None,
}

/// A full problem instance.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    name: String,
    dim: usize,
    op: OperatorF,
    constraint: ConstraintH,
    cost: CostF,
    support: Option<SupportFunction>,
    symmetry: Symmetry,
}

impl ProblemSpec {
    /// Assembles a problem. Structural assumptions are not enforced here; see
    /// [`validate`].
    pub fn new(
        name: impl Into<String>,
        op: OperatorF,
        constraint: ConstraintH,
        cost: CostF,
        symmetry: Symmetry,
    ) -> Result<Self> {
        let dim = op.dim();
        for got in [constraint.dim(), cost.dim()] {
            if got != dim {
                return Err(Error::Dimension { expected: dim, got });
            }
        }
        let support = SupportFunction::new(constraint.clone()).ok();
        Ok(Self { name: name.into(), dim, op, constraint, cost, support, symmetry })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn operator(&self) -> &OperatorF {
        &self.op
    }

    pub fn constraint(&self) -> &ConstraintH {
        &self.constraint
    }

    pub fn cost(&self) -> &CostF {
        &self.cost
    }

    pub fn symmetry(&self) -> Symmetry {
        self.symmetry
    }

    pub fn support(&self) -> Result<&SupportFunction> {
        self.support
            .as_ref()
            .ok_or_else(|| Error::Constraint("support function unavailable (unbounded constraint set)".into()))
    }

    /// Same problem with `f` replaced by `c f`.
    pub fn with_scaled_cost(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.cost = self.cost.scaled(c);
        out.name = format!("{}*{c}", self.name);
        out
    }

    /// Rotational symmetry requirements: radial `f`, ball constraint and an
    /// orthogonally invariant operator.
    pub fn is_rotational(&self) -> bool {
        self.cost.is_radial() && self.constraint.is_radial() && self.op.is_rotational()
    }
}

/// One assumption check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Failing sample, if any.
    pub witness: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub problem: String,
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn ensure(&self) -> Result<()> {
        if self.passed() {
            Ok(())
        } else {
            let names: Vec<String> = self
                .failures()
                .iter()
                .map(|c| format!("{} ({})", c.name, c.witness.clone().unwrap_or_default()))
                .collect();
            Err(Error::Validation(names.join("; ")))
        }
    }
}

fn check(name: &str, witness: Option<String>) -> Check {
    Check { name: name.into(), passed: witness.is_none(), witness }
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&b + b.transpose()) * 0.5
}

fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    b.transpose() * b
}

/// Checks the structural assumptions on `(F, H, f)`. Failures are reported,
/// never raised.
pub fn validate(spec: &ProblemSpec) -> ValidationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(VALIDATION_SEED);
    let n = spec.dim();
    let h = spec.constraint();
    let op = spec.operator();
    let f = spec.cost();
    let mut checks = Vec::new();

    let h0 = h.eval(&vec![0.0; n]);
    checks.push(check("H(0) < 0", (!(h0 < 0.0)).then(|| format!("H(0) = {h0}"))));

    let probe = h.probe_radius();
    checks.push(check(
        "constraint set compact",
        probe.is_none().then(|| "H stays nonpositive along an axis up to radius 2^60".to_string()),
    ));

    checks.push(check(
        "support function",
        spec.support().err().map(|e| e.to_string()),
    ));

    if let (Some((sigma, big_sigma)), Some(r)) = (h.curvature(), probe) {
        let t = 1e-3;
        let tol = 1e-4 * (1.0 + big_sigma);
        let mut witness = None;
        for _ in 0..200 {
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(-r..r)).collect();
            let mut xi: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let nx = crate::geometry::norm(&xi).max(1e-12);
            xi.iter_mut().for_each(|x| *x /= nx);
            let at = |s: f64| {
                let q: Vec<f64> = p.iter().zip(&xi).map(|(a, b)| a + s * b).collect();
                h.eval(&q)
            };
            let d2 = (at(t) - 2.0 * at(0.0) + at(-t)) / (t * t);
            if d2 < sigma - tol || d2 > big_sigma + tol {
                witness = Some(format!("p = {p:?}, xi = {xi:?}: second difference {d2}"));
                break;
            }
        }
        checks.push(check("constraint curvature bounds", witness));
    }

    // Ellipticity sandwich, homogeneity and superadditivity of F.
    let (theta, big_theta) = (op.theta(), op.big_theta());
    let mut ell_w = None;
    let mut hom_w = None;
    let mut sup_w = None;
    for _ in 0..500 {
        let m = random_symmetric(&mut rng, n);
        let nn = random_psd(&mut rng, n);
        let scale = 1.0 + m.amax() + nn.amax();
        let tol = 1e-12 * scale * (1.0 + big_theta);
        let diff = op.eval(&(&m + &nn)) - op.eval(&m);
        let tr = nn.trace();
        if ell_w.is_none() && (diff < -big_theta * tr - tol || diff > -theta * tr + tol) {
            ell_w = Some(format!("M = {m}, N = {nn}: F(M+N) - F(M) = {diff}"));
        }
        let t: f64 = rng.random_range(0.0..10.0);
        let lhs = op.eval(&(&m * t));
        let rhs = t * op.eval(&m);
        if hom_w.is_none() && (lhs - rhs).abs() > 1e-12 * (1.0 + rhs.abs()) * scale {
            hom_w = Some(format!("t = {t}, M = {m}: {lhs} vs {rhs}"));
        }
        let m2 = random_symmetric(&mut rng, n);
        if sup_w.is_none() && op.eval(&m) + op.eval(&m2) > op.eval(&(&m + &m2)) + tol {
            sup_w = Some(format!("M = {m}, N = {m2}"));
        }
    }
    checks.push(check("F degenerate elliptic", ell_w));
    checks.push(check("F positively homogeneous", hom_w));
    checks.push(check("F superadditive", sup_w));
    checks.push(check(
        "F monotone stencil",
        op.monotonicity_violation(&vec![1.0; n])
            .map(|(i, j, d)| format!("axes ({i}, {j}): {d}")),
    ));

    // Convexity of f by the midpoint inequality.
    let mut cvx_w = None;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        let (fm, fx, fy) = (f.eval(&mid), f.eval(&x), f.eval(&y));
        if fm > 0.5 * (fx + fy) + 1e-10 * (1.0 + fx.abs() + fy.abs()) {
            cvx_w = Some(format!("x = {x:?}, y = {y:?}"));
            break;
        }
    }
    checks.push(check("f convex", cvx_w));

    let c1 = spec.support().map(|s| s.c1()).unwrap_or(1.0);
    checks.push(check(
        "f superlinear",
        superlinearity_radius(f, c1).err().map(|e| e.to_string()),
    ));

    let rot_w = (spec.symmetry() == Symmetry::Rotational && !spec.is_rotational())
        .then(|| "rotational tag needs radial f, ball H and orthogonally invariant F".to_string());
    checks.push(check("symmetry tag consistent", rot_w));

    ValidationReport { problem: spec.name().to_string(), seed: VALIDATION_SEED, checks }
}

/// Finite surrogate for superlinear growth: the radius, doubling from 1 up to
/// `2^10`, at which `f(R e) / R >= 10 c1` along every signed axis direction.
pub fn superlinearity_radius(f: &CostF, c1: f64) -> Result<f64> {
    let n = f.dim();
    let mut x = vec![0.0; n];
    let mut r = 1.0;
    while r <= 1024.0 {
        let ok = (0..n).all(|k| {
            [1.0, -1.0].iter().all(|s| {
                x.iter_mut().for_each(|v| *v = 0.0);
                x[k] = s * r;
                f.eval(&x) / r >= 10.0 * c1
            })
        });
        if ok {
            return Ok(r);
        }
        r *= 2.0;
    }
    Err(Error::Validation(format!(
        "f(R e)/R stays below {} up to R = 1024",
        10.0 * c1
    )))
}

/// `sup f` over the constraint set `{H <= 0}`, sampled on boundary points
/// along the direction mesh (plus box corners). `f` is convex, so the
/// supremum sits on the boundary.
pub fn sup_cost_on_constraint(spec: &ProblemSpec) -> Result<f64> {
    let h = spec.constraint();
    let n = spec.dim();
    let mut best = spec.cost().eval(&vec![0.0; n]);
    for d in direction_mesh(n, PLANAR_DIRECTIONS, ICOSPHERE_LEVEL)? {
        best = best.max(spec.cost().eval(&h.boundary_point(&d)?));
    }
    if let ConstraintForm::Box { half_width } = h.form() {
        for mask in 0..(1usize << n) {
            let x: Vec<f64> =
                (0..n).map(|k| if mask >> k & 1 == 1 { *half_width } else { -half_width }).collect();
            best = best.max(spec.cost().eval(&x));
        }
    }
    Ok(best)
}

/// `K1 = -F(I) + sup_{H <= 0} f`.
pub fn k1_constant(spec: &ProblemSpec) -> Result<f64> {
    Ok(-spec.operator().at_identity() + sup_cost_on_constraint(spec)?)
}

/// Serializable problem description for configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSpec {
    pub name: String,
    pub operator: OperatorConfig,
    pub constraint: ConstraintConfig,
    pub cost: CostConfig,
    #[serde(default = "default_symmetry")]
    pub symmetry: Symmetry,
}

fn default_symmetry() -> Symmetry {
    Symmetry::None
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorConfig {
    Laplacian { dim: usize },
    Linear { a: Vec<Vec<f64>> },
    PucciMin { diagonals: Vec<Vec<f64>> },
    Zero { dim: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintConfig {
    Ball { dim: usize, radius: f64 },
    BallQuadratic { dim: usize, radius: f64 },
    Box { dim: usize, half_width: f64 },
    Ellipsoid { semi_axes: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostConfig {
    Quadratic { dim: usize },
    ShiftedQuadratic { center: Vec<f64> },
    QuadForm { q: Vec<Vec<f64>> },
}

fn square(rows: &[Vec<f64>], name: &'static str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidParameter { name, reason: "need a nonempty square matrix".into() });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl InlineSpec {
    pub fn build(&self) -> Result<ProblemSpec> {
        let op = match &self.operator {
            OperatorConfig::Laplacian { dim } => OperatorF::laplacian(*dim),
            OperatorConfig::Linear { a } => OperatorF::linear(square(a, "A")?)?,
            OperatorConfig::PucciMin { diagonals } => OperatorF::pucci_min(diagonals.clone())?,
            OperatorConfig::Zero { dim } => OperatorF::zero(*dim),
        };
        let constraint = match &self.constraint {
            ConstraintConfig::Ball { dim, radius } => ConstraintH::ball(*dim, *radius)?,
            ConstraintConfig::BallQuadratic { dim, radius } => ConstraintH::ball_quadratic(*dim, *radius)?,
            ConstraintConfig::Box { dim, half_width } => ConstraintH::box_constraint(*dim, *half_width)?,
            ConstraintConfig::Ellipsoid { semi_axes } => ConstraintH::ellipsoid(semi_axes.clone())?,
        };
        let cost = match &self.cost {
            CostConfig::Quadratic { dim } => CostF::quadratic(*dim),
            CostConfig::ShiftedQuadratic { center } => CostF::shifted_quadratic(center.clone()),
            CostConfig::QuadForm { q } => CostF::quad_form(square(q, "Q")?)?,
        };
        ProblemSpec::new(self.name.clone(), op, constraint, cost, self.symmetry)
    }
}

pub fn builtin(name: &str) -> Result<ProblemSpec> {
    match name {
        "quartic1d" => ProblemSpec::new(
            name,
            OperatorF::laplacian(1),
            ConstraintH::ball(1, 1.0)?,
            CostF::quadratic(1),
            Symmetry::Rotational,
        ),
        "separable2d" => ProblemSpec::new(
            name,
            OperatorF::laplacian(2),
            ConstraintH::box_constraint(2, 1.0)?,
            CostF::quadratic(2),
            Symmetry::Separable,
        ),
        "radial2d" => ProblemSpec::new(
            name,
            OperatorF::laplacian(2),
            ConstraintH::ball(2, 1.0)?,
            CostF::quadratic(2),
            Symmetry::Rotational,
        ),
        "degenerate_zeroF" => ProblemSpec::new(
            name,
            OperatorF::zero(1),
            ConstraintH::ball(1, 1.0)?,
            CostF::shifted_quadratic(vec![0.3]),
            Symmetry::None,
        ),
        "ellipse2d" => ProblemSpec::new(
            name,
            OperatorF::laplacian(2),
            ConstraintH::ellipsoid(vec![1.0, 0.5])?,
            CostF::quadratic(2),
            Symmetry::None,
        ),
        other => Err(Error::UnknownProblem(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(v))
    }

    #[test]
    fn k1_values() {
        assert!((k1_constant(&builtin("quartic1d").unwrap()).unwrap() - 2.0).abs() < 1e-12);
        assert!((k1_constant(&builtin("separable2d").unwrap()).unwrap() - 4.0).abs() < 1e-12);
        assert!((k1_constant(&builtin("radial2d").unwrap()).unwrap() - 3.0).abs() < 1e-12);
        assert!((k1_constant(&builtin("degenerate_zeroF").unwrap()).unwrap() - 1.69).abs() < 1e-12);
        assert!((k1_constant(&builtin("ellipse2d").unwrap()).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn eval_examples() {
        assert_eq!(OperatorF::laplacian(2).eval(&diag(&[2.0, 3.0])), -5.0);
        let p = OperatorF::pucci_min(vec![vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(p.eval(&diag(&[1.0, -1.0])), 0.0);
        let p = OperatorF::pucci_min(vec![vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        // Enumerate both traces: -tr(diag(1,2) diag(1,0)) = -1, -tr(diag(2,1) diag(1,0)) = -2.
        assert_eq!(p.eval(&diag(&[1.0, 0.0])), -2.0);
        assert_eq!(p.eval(&DMatrix::zeros(2, 2)), 0.0);
    }

    #[test]
    fn linear_uses_off_diagonal_entries() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let op = OperatorF::linear(a).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, -1.0]);
        assert!((op.eval(&m) - -(2.0 + 1.5 + 1.5 - 1.0)).abs() < 1e-15);
        assert!(op.theta() > 0.0 && op.big_theta() > op.theta());
    }

    #[test]
    fn rejects_bad_operators() {
        assert!(OperatorF::linear(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
        assert!(OperatorF::pucci_min(vec![vec![1.0, -1.0]]).is_err());
        assert!(OperatorF::pucci_min(vec![]).is_err());
    }

    #[test]
    fn every_builtin_validates() {
        for name in BUILTIN_NAMES {
            let spec = builtin(name).unwrap();
            let report = validate(&spec);
            assert!(report.passed(), "{name}: {:?}", report.failures());
        }
    }

    #[test]
    fn builtin_data() {
        let q = builtin("quartic1d").unwrap();
        assert_eq!(q.dim(), 1);
        assert_eq!(q.operator().eval_flat(&[1.0]), -1.0);
        assert_eq!(q.cost().eval(&[3.0]), 9.0);
        assert_eq!(q.constraint().eval(&[2.0]), 1.0);
        let s = builtin("separable2d").unwrap();
        assert_eq!(s.constraint().eval(&[0.5, -1.5]), 0.5);
        let z = builtin("degenerate_zeroF").unwrap();
        assert!(z.operator().is_degenerate());
        assert_eq!(z.operator().theta(), 0.0);
        assert!(builtin("nope").is_err());
    }

    #[test]
    fn unbounded_constraint_fails_compactness() {
        let spec = ProblemSpec::new(
            "flat",
            OperatorF::laplacian(1),
            ConstraintH::custom(1, |_: &[f64]| -1.0, None, "-1").unwrap(),
            CostF::quadratic(1),
            Symmetry::None,
        )
        .unwrap();
        let report = validate(&spec);
        assert!(!report.check("constraint set compact").unwrap().passed);
        assert!(report.ensure().is_err());
    }

    #[test]
    fn linear_growth_fails_superlinearity() {
        let spec = ProblemSpec::new(
            "abs",
            OperatorF::laplacian(1),
            ConstraintH::ball(1, 1.0).unwrap(),
            CostF::custom(1, |x: &[f64]| x[0].abs(), Some((0.0, vec![0.0])), true, "|x|"),
            Symmetry::None,
        )
        .unwrap();
        let report = validate(&spec);
        let c = report.check("f superlinear").unwrap();
        assert!(!c.passed);
        assert!(report.check("f convex").unwrap().passed);
    }

    #[test]
    fn concave_cost_fails_convexity() {
        let spec = ProblemSpec::new(
            "concave",
            OperatorF::laplacian(1),
            ConstraintH::ball(1, 1.0).unwrap(),
            CostF::custom(1, |x: &[f64]| x[0].powi(2) - 3.0 * x[0].abs().sqrt(), None, true, "c"),
            Symmetry::None,
        )
        .unwrap();
        assert!(!validate(&spec).check("f convex").unwrap().passed);
    }

    #[test]
    fn rotational_tag_is_checked() {
        let spec = ProblemSpec::new(
            "fake",
            OperatorF::laplacian(2),
            ConstraintH::box_constraint(2, 1.0).unwrap(),
            CostF::quadratic(2),
            Symmetry::Rotational,
        )
        .unwrap();
        assert!(!validate(&spec).check("symmetry tag consistent").unwrap().passed);
    }

    #[test]
    fn diagonal_dominance_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]);
        let op = OperatorF::linear(a).unwrap();
        assert!(op.monotonicity_violation(&[1.0, 1.0]).is_none());
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 5.0]);
        let op = OperatorF::linear(a).unwrap();
        let (i, j, _) = op.monotonicity_violation(&[1.0, 0.2]).unwrap();
        assert_eq!((i, j), (0, 1));
    }

    #[test]
    fn pucci_ties_pick_smallest_index() {
        let op = OperatorF::pucci_min(vec![vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let OperatorKind::PucciMin { diagonals } = op.kind() else { unreachable!() };
        assert_eq!(op.pucci_active(diagonals, |_| 1.0).0, 0);
    }

    fn sym(v: &[f64]) -> DMatrix<f64> {
        let b = DMatrix::from_row_slice(2, 2, v);
        (&b + b.transpose()) * 0.5
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn homogeneity_and_superadditivity(
            m in prop::array::uniform4(-5.0f64..5.0),
            n in prop::array::uniform4(-5.0f64..5.0),
            t in 0.0f64..10.0,
        ) {
            let (m, n) = (sym(&m), sym(&n));
            let ops = [
                OperatorF::laplacian(2),
                OperatorF::pucci_min(vec![vec![1.0, 2.0], vec![2.0, 1.0], vec![0.5, 3.0]]).unwrap(),
                OperatorF::linear(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap(),
            ];
            for op in &ops {
                let lhs = op.eval(&(&m * t));
                prop_assert!((lhs - t * op.eval(&m)).abs() <= 1e-12 * (1.0 + lhs.abs()));
                prop_assert!(op.eval(&m) + op.eval(&n) <= op.eval(&(&m + &n)) + 1e-12);
            }
        }
    }
}
