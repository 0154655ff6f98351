//! Convex geometry of the gradient constraint `{H <= 0}`.
//!
//! [`SupportFunction`] evaluates `l(v) = max { p.v : H(p) <= 0 }`, the gauge
//! `H0(p) = max_{|v| = 1} { p.v - l(v) }` (which has the same sign as `H`),
//! and inf-convolutions of grid fields with `l`. Ball, box and ellipsoid
//! constraints use closed forms; custom constraints go through a direction
//! mesh of boundary scales refined by local golden-section search.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Field;

/// Absolute tolerance for geometric evaluations.
pub const TOL_GEO: f64 = 1e-8;

/// Direction count for planar meshes.
pub const PLANAR_DIRECTIONS: usize = 4096;

/// Subdivision level of the icosphere used for three-dimensional meshes
/// (`20 * 4^5 = 20480` faces).
pub const ICOSPHERE_LEVEL: usize = 5;

/// Above this node count [`inf_convolve`] switches from the exact scan to
/// neighbor sweeping.
pub const SCAN_LIMIT: usize = 200_000;

const GOLDEN: f64 = 0.618_033_988_749_894_9;
const MAX_PROBE_DOUBLINGS: usize = 60;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Shape tag for the constraint set. Tagged forms get closed-form support
/// functions and gauges.
#[derive(Clone, Debug, PartialEq)]
pub enum ConstraintForm {
    /// `{ |p| <= radius }`.
    Ball { radius: f64 },
    /// `{ max_i |p_i| <= half_width }`.
    Box { half_width: f64 },
    /// `{ sum_i (p_i / a_i)^2 <= 1 }`.
    Ellipsoid { semi_axes: Vec<f64> },
    Custom,
}

/// The gradient constraint `p -> H(p)`.
#[derive(Clone)]
pub struct ConstraintH {
    dim: usize,
    form: ConstraintForm,
    eval: ScalarFn,
    curvature: Option<(f64, f64)>,
    label: String,
}

impl fmt::Debug for ConstraintH {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintH")
            .field("dim", &self.dim)
            .field("form", &self.form)
            .field("curvature", &self.curvature)
            .field("label", &self.label)
            .finish()
    }
}

impl ConstraintH {
    /// `H(p) = |p| - r`.
    pub fn ball(dim: usize, radius: f64) -> Result<Self> {
        positive("radius", radius)?;
        Self::build(
            dim,
            ConstraintForm::Ball { radius },
            Arc::new(move |p: &[f64]| norm(p) - radius),
            None,
            format!("|p| - {radius}"),
        )
    }

    /// `H(p) = |p|^2 - r^2`, uniformly convex with `D^2 H = 2 I`.
    pub fn ball_quadratic(dim: usize, radius: f64) -> Result<Self> {
        positive("radius", radius)?;
        Self::build(
            dim,
            ConstraintForm::Ball { radius },
            Arc::new(move |p: &[f64]| dot(p, p) - radius * radius),
            Some((2.0, 2.0)),
            format!("|p|^2 - {}", radius * radius),
        )
    }

    /// `H(p) = max_i |p_i| - a`.
    pub fn box_constraint(dim: usize, half_width: f64) -> Result<Self> {
        positive("half_width", half_width)?;
        Self::build(
            dim,
            ConstraintForm::Box { half_width },
            Arc::new(move |p: &[f64]| p.iter().fold(0.0f64, |m, x| m.max(x.abs())) - half_width),
            None,
            format!("max|p_i| - {half_width}"),
        )
    }

    /// `H(p) = sum_i (p_i / a_i)^2 - 1`.
    pub fn ellipsoid(semi_axes: Vec<f64>) -> Result<Self> {
        for &a in &semi_axes {
            positive("semi_axes", a)?;
        }
        let dim = semi_axes.len();
        let inv: Vec<f64> = semi_axes.iter().map(|a| 1.0 / (a * a)).collect();
        let lo = 2.0 * inv.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = 2.0 * inv.iter().cloned().fold(0.0, f64::max);
        let weights = inv.clone();
        Self::build(
            dim,
            ConstraintForm::Ellipsoid { semi_axes },
            Arc::new(move |p: &[f64]| {
                p.iter().zip(&weights).map(|(x, w)| w * x * x).sum::<f64>() - 1.0
            }),
            Some((lo, hi)),
            "ellipsoid".into(),
        )
    }

    /// Arbitrary convex `H` with optional declared curvature bounds
    /// `sigma |xi|^2 <= D^2 H xi.xi <= Sigma |xi|^2`.
    pub fn custom(
        dim: usize,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        curvature: Option<(f64, f64)>,
        label: impl Into<String>,
    ) -> Result<Self> {
        if let Some((s, big)) = curvature {
            if !(s > 0.0 && big >= s) {
                return Err(Error::InvalidParameter {
                    name: "curvature",
                    reason: format!("need 0 < sigma <= Sigma, got ({s}, {big})"),
                });
            }
        }
        Self::build(dim, ConstraintForm::Custom, Arc::new(eval), curvature, label.into())
    }

    fn build(
        dim: usize,
        form: ConstraintForm,
        eval: ScalarFn,
        curvature: Option<(f64, f64)>,
        label: String,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter { name: "dim", reason: "must be >= 1".into() });
        }
        if let ConstraintForm::Ellipsoid { semi_axes } = &form {
            if semi_axes.len() != dim {
                return Err(Error::Dimension { expected: dim, got: semi_axes.len() });
            }
        }
        let h0 = eval(&vec![0.0; dim]);
        if !(h0 < 0.0) {
            return Err(Error::Constraint(format!("H(0) = {h0} is not negative")));
        }
        Ok(Self { dim, form, eval, curvature, label })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn form(&self) -> &ConstraintForm {
        &self.form
    }

    pub fn curvature(&self) -> Option<(f64, f64)> {
        self.curvature
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, p: &[f64]) -> f64 {
        (self.eval)(p)
    }

    pub fn is_radial(&self) -> bool {
        matches!(self.form, ConstraintForm::Ball { .. })
    }

    /// Radius `R` (found by doubling) with `H(R e) > 0` along every signed
    /// axis direction `e`, or `None` if the probe never leaves the set.
    pub fn probe_radius(&self) -> Option<f64> {
        let mut p = vec![0.0; self.dim];
        let mut r = 1.0;
        for _ in 0..MAX_PROBE_DOUBLINGS {
            let mut outside = true;
            'axes: for k in 0..self.dim {
                for s in [1.0, -1.0] {
                    p.iter_mut().for_each(|x| *x = 0.0);
                    p[k] = s * r;
                    if !(self.eval(&p) > 0.0) {
                        outside = false;
                        break 'axes;
                    }
                }
            }
            if outside {
                return Some(r);
            }
            r *= 2.0;
        }
        None
    }

    /// Boundary scale `t*(d) = sup { t >= 0 : H(t d) <= 0 }` along a unit
    /// direction `d`.
    pub fn boundary_scale(&self, d: &[f64]) -> Result<f64> {
        match &self.form {
            ConstraintForm::Ball { radius } => Ok(radius / norm(d)),
            ConstraintForm::Box { half_width } => {
                let m = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                Ok(half_width / m)
            }
            ConstraintForm::Ellipsoid { semi_axes } => {
                let q: f64 = d.iter().zip(semi_axes).map(|(x, a)| (x / a).powi(2)).sum();
                Ok(1.0 / q.sqrt())
            }
            ConstraintForm::Custom => self.bisect_boundary(d),
        }
    }

    fn bisect_boundary(&self, d: &[f64]) -> Result<f64> {
        let mut p = vec![0.0; self.dim];
        let at = |t: f64, p: &mut Vec<f64>| {
            for (pi, di) in p.iter_mut().zip(d) {
                *pi = t * di;
            }
            self.eval(p)
        };
        let mut lo = 0.0;
        let mut hi = 1.0;
        let mut found = false;
        for _ in 0..MAX_PROBE_DOUBLINGS {
            if at(hi, &mut p) > 0.0 {
                found = true;
                break;
            }
            lo = hi;
            hi *= 2.0;
        }
        if !found {
            return Err(Error::Constraint(format!(
                "sublevel set unbounded along direction {d:?}"
            )));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if at(mid, &mut p) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(lo)
    }

    /// A point on `{H = 0}` along direction `d`.
    pub fn boundary_point(&self, d: &[f64]) -> Result<Vec<f64>> {
        let t = self.boundary_scale(d)?;
        Ok(d.iter().map(|x| t * x).collect())
    }
}

fn positive(name: &'static str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, reason: format!("must be positive, got {x}") })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Unit directions used to discretize the sphere in dimension `dim`.
///
/// One dimension: `{+1, -1}`. Two: `count` equally spaced angles. Three:
/// normalized face centroids of a subdivided icosahedron.
pub fn direction_mesh(dim: usize, planar_count: usize, ico_level: usize) -> Result<Vec<Vec<f64>>> {
    match dim {
        1 => Ok(vec![vec![1.0], vec![-1.0]]),
        2 => Ok((0..planar_count)
            .map(|k| {
                let th = 2.0 * PI * k as f64 / planar_count as f64;
                vec![th.cos(), th.sin()]
            })
            .collect()),
        3 => Ok(icosphere_centroids(ico_level)),
        _ => Err(Error::Unsupported(format!(
            "direction meshes are available for dimension <= 3, got {dim}"
        ))),
    }
}

fn icosphere_centroids(level: usize) -> Vec<Vec<f64>> {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<[f64; 3]> = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let unit = |v: [f64; 3]| {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    };
    verts.iter_mut().for_each(|v| *v = unit(*v));
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut cache = std::collections::HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, verts: &mut Vec<[f64; 3]>| -> usize {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                let (p, q) = (verts[a], verts[b]);
                verts.push(unit([p[0] + q[0], p[1] + q[1], p[2] + q[2]]));
                verts.len() - 1
            })
        };
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    faces
        .iter()
        .map(|f| {
            let c = unit([
                verts[f[0]][0] + verts[f[1]][0] + verts[f[2]][0],
                verts[f[0]][1] + verts[f[1]][1] + verts[f[2]][1],
                verts[f[0]][2] + verts[f[1]][2] + verts[f[2]][2],
            ]);
            c.to_vec()
        })
        .collect()
}

/// Result of an inner maximization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub converged: bool,
}

/// Support function of `{H <= 0}` with its sandwich constants
/// `c0 |v| <= l(v) <= c1 |v|`.
#[derive(Clone, Debug)]
pub struct SupportFunction {
    constraint: ConstraintH,
    /// Custom constraints only: mesh directions and their boundary scales.
    mesh: Vec<(Vec<f64>, f64)>,
    c0: f64,
    c1: f64,
}

impl SupportFunction {
    pub fn new(constraint: ConstraintH) -> Result<Self> {
        let n = constraint.dim();
        let (mesh, c0, c1) = match constraint.form() {
            ConstraintForm::Ball { radius } => (Vec::new(), *radius, *radius),
            ConstraintForm::Box { half_width } => {
                (Vec::new(), *half_width, half_width * (n as f64).sqrt())
            }
            ConstraintForm::Ellipsoid { semi_axes } => {
                let lo = semi_axes.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = semi_axes.iter().cloned().fold(0.0, f64::max);
                (Vec::new(), lo, hi)
            }
            ConstraintForm::Custom => {
                let dirs = direction_mesh(n, PLANAR_DIRECTIONS, ICOSPHERE_LEVEL)?;
                let mesh = dirs
                    .into_par_iter()
                    .map(|d| {
                        let t = constraint.boundary_scale(&d)?;
                        Ok((d, t))
                    })
                    .collect::<Result<Vec<_>>>()?;
                // For a convex body containing the origin, the extreme support
                // values over unit directions equal the extreme boundary radii.
                let lo = mesh.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
                let hi = mesh.iter().map(|m| m.1).fold(0.0, f64::max);
                (mesh, lo, hi)
            }
        };
        Ok(Self { constraint, mesh, c0, c1 })
    }

    pub fn constraint(&self) -> &ConstraintH {
        &self.constraint
    }

    pub fn dim(&self) -> usize {
        self.constraint.dim()
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    /// `l(v)`; see [`SupportFunction::eval_checked`] for the convergence flag.
    pub fn eval(&self, v: &[f64]) -> f64 {
        self.eval_checked(v).value
    }

    pub fn eval_checked(&self, v: &[f64]) -> Evaluation {
        if v.iter().all(|&x| x == 0.0) {
            return Evaluation { value: 0.0, converged: true };
        }
        let value = match self.constraint.form() {
            ConstraintForm::Ball { radius } => radius * norm(v),
            ConstraintForm::Box { half_width } => half_width * v.iter().map(|x| x.abs()).sum::<f64>(),
            ConstraintForm::Ellipsoid { semi_axes } => v
                .iter()
                .zip(semi_axes)
                .map(|(x, a)| (a * x).powi(2))
                .sum::<f64>()
                .sqrt(),
            ConstraintForm::Custom => return self.custom_support(v),
        };
        Evaluation { value, converged: true }
    }

    fn custom_support(&self, v: &[f64]) -> Evaluation {
        let score = |d: &[f64], t: f64| t * dot(d, v);
        let (best, _) = self
            .mesh
            .iter()
            .enumerate()
            .map(|(k, (d, t))| (k, score(d, *t)))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let mesh_value = score(&self.mesh[best].0, self.mesh[best].1);
        match self.dim() {
            1 => Evaluation { value: mesh_value, converged: true },
            2 => {
                let step = 2.0 * PI / self.mesh.len() as f64;
                let d = &self.mesh[best].0;
                let center = d[1].atan2(d[0]);
                let g = |th: f64| {
                    let d = [th.cos(), th.sin()];
                    match self.constraint.boundary_scale(&d) {
                        Ok(t) => score(&d, t),
                        Err(_) => f64::NEG_INFINITY,
                    }
                };
                let (th, value) = golden_max(g, center - step, center + step, 1e-13);
                let converged = (th - center).abs() < step * (1.0 - 1e-6);
                Evaluation { value: value.max(mesh_value), converged }
            }
            _ => {
                let d0 = self.mesh[best].0.clone();
                let g = |d: &[f64]| match self.constraint.boundary_scale(d) {
                    Ok(t) => score(d, t),
                    Err(_) => f64::NEG_INFINITY,
                };
                let (value, converged) = sphere_pattern_search(g, &d0, 0.02);
                Evaluation { value: value.max(mesh_value), converged }
            }
        }
    }

    /// Gauge `H0(p) = max_{|v| = 1} { p.v - l(v) }`.
    pub fn gauge(&self, p: &[f64]) -> f64 {
        let mut g = vec![0.0; p.len()];
        self.gauge_with_grad(p, &mut g)
    }

    /// Gauge value; writes a maximizing unit vector (a subgradient of `H0`)
    /// into `grad`.
    pub fn gauge_with_grad(&self, p: &[f64], grad: &mut [f64]) -> f64 {
        match self.constraint.form() {
            ConstraintForm::Ball { radius } => {
                let r = norm(p);
                if r > 0.0 {
                    grad.iter_mut().zip(p).for_each(|(g, x)| *g = x / r);
                } else {
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    grad[0] = 1.0;
                }
                r - radius
            }
            ConstraintForm::Box { half_width } => {
                let mut pos = 0.0;
                let mut best = 0;
                for (k, x) in p.iter().enumerate() {
                    let q = x.abs() - half_width;
                    if q > 0.0 {
                        pos += q * q;
                    }
                    if x.abs() > p[best].abs() {
                        best = k;
                    }
                }
                if pos > 0.0 {
                    let s = pos.sqrt();
                    for (g, x) in grad.iter_mut().zip(p) {
                        *g = x.signum() * (x.abs() - half_width).max(0.0) / s;
                    }
                    s
                } else {
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    grad[best] = if p[best] < 0.0 { -1.0 } else { 1.0 };
                    p[best].abs() - half_width
                }
            }
            _ => self.numeric_gauge(p, grad),
        }
    }

    fn numeric_gauge(&self, p: &[f64], grad: &mut [f64]) -> f64 {
        let obj = |v: &[f64]| dot(p, v) - self.eval(v);
        match self.dim() {
            1 => {
                let a = obj(&[1.0]);
                let b = obj(&[-1.0]);
                grad[0] = if a >= b { 1.0 } else { -1.0 };
                a.max(b)
            }
            2 => {
                const COARSE: usize = 256;
                let mut best = (0.0, f64::NEG_INFINITY);
                for k in 0..COARSE {
                    let th = 2.0 * PI * k as f64 / COARSE as f64;
                    let val = obj(&[th.cos(), th.sin()]);
                    if val > best.1 {
                        best = (th, val);
                    }
                }
                let step = 2.0 * PI / COARSE as f64;
                let (th, val) =
                    golden_max(|t| obj(&[t.cos(), t.sin()]), best.0 - step, best.0 + step, 1e-12);
                let (th, val) = if val >= best.1 { (th, val) } else { best };
                grad[0] = th.cos();
                grad[1] = th.sin();
                val
            }
            _ => {
                let coarse = icosphere_centroids(3);
                let start = coarse
                    .iter()
                    .max_by(|a, b| obj(a).total_cmp(&obj(b)))
                    .cloned()
                    .unwrap_or_else(|| vec![1.0, 0.0, 0.0]);
                let mut arg = start.clone();
                let (val, _) = sphere_pattern_search_arg(obj, &start, 0.1, &mut arg);
                grad.copy_from_slice(&arg);
                val
            }
        }
    }
}

/// Golden-section maximization of a unimodal function on `[a, b]`.
pub(crate) fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (b - a).abs() > tol {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = f(x1);
        }
    }
    if f1 > f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

pub(crate) fn golden_min(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let (x, v) = golden_max(|t| -f(t), a, b, tol);
    (x, -v)
}

fn sphere_pattern_search(f: impl Fn(&[f64]) -> f64, start: &[f64], step: f64) -> (f64, bool) {
    let mut arg = start.to_vec();
    sphere_pattern_search_arg(f, start, step, &mut arg)
}

/// Compass search on the unit sphere in a rotating tangent frame.
fn sphere_pattern_search_arg(
    f: impl Fn(&[f64]) -> f64,
    start: &[f64],
    mut step: f64,
    arg: &mut Vec<f64>,
) -> (f64, bool) {
    let mut x = start.to_vec();
    let mut fx = f(&x);
    let mut iters = 0;
    while step > 1e-12 && iters < 20_000 {
        iters += 1;
        let (t1, t2) = tangent_frame(&x);
        let mut improved = false;
        for t in [&t1, &t2] {
            for s in [step, -step] {
                let mut y: Vec<f64> = x.iter().zip(t.iter()).map(|(a, b)| a + s * b).collect();
                let ny = norm(&y);
                y.iter_mut().for_each(|c| *c /= ny);
                let fy = f(&y);
                if fy > fx {
                    x = y;
                    fx = fy;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    *arg = x;
    (fx, step <= 1e-12)
}

fn tangent_frame(x: &[f64]) -> ([f64; 3], [f64; 3]) {
    let a = if x[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let cross = |u: [f64; 3], v: [f64; 3]| {
        [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]]
    };
    let xv = [x[0], x[1], x[2]];
    let mut t1 = cross(xv, a);
    let n1 = norm(&t1);
    t1.iter_mut().for_each(|c| *c /= n1);
    let t2 = cross(xv, t1);
    (t1, t2)
}

/// Legendre transform `H*(w) = sup_p { p.w - H(p) }` for a uniformly convex
/// constraint, by gradient ascent with step `1 / Sigma`.
pub fn legendre_eval(h: &ConstraintH, w: &[f64]) -> Result<Evaluation> {
    let Some((_, big_sigma)) = h.curvature() else {
        return Err(Error::Unsupported(
            "Legendre transform needs declared uniform-convexity bounds".into(),
        ));
    };
    if w.len() != h.dim() {
        return Err(Error::Dimension { expected: h.dim(), got: w.len() });
    }
    let n = h.dim();
    let fd = 1e-6;
    let mut p = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut converged = false;
    for _ in 0..10_000 {
        for k in 0..n {
            q.copy_from_slice(&p);
            q[k] += fd;
            let up = h.eval(&q);
            q[k] -= 2.0 * fd;
            let dn = h.eval(&q);
            grad[k] = w[k] - (up - dn) / (2.0 * fd);
        }
        if norm(&grad) < 1e-10 {
            converged = true;
            break;
        }
        for k in 0..n {
            p[k] += grad[k] / big_sigma;
        }
    }
    Ok(Evaluation { value: dot(&p, w) - h.eval(&p), converged })
}

/// `inf_{0 < s <= 10} s H*(v / s)`, which recovers `l(v)` for uniformly convex `H`.
pub fn support_via_legendre(h: &ConstraintH, v: &[f64]) -> Result<f64> {
    if v.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    let obj = |log_s: f64| {
        let s = log_s.exp();
        let w: Vec<f64> = v.iter().map(|x| x / s).collect();
        legendre_eval(h, &w).map(|e| s * e.value).unwrap_or(f64::INFINITY)
    };
    let (_, val) = golden_min(obj, (1e-6f64).ln(), 10f64.ln(), 1e-10);
    Ok(val)
}

/// Discrete inf-convolution `v(x) = min_y { g(y) + l(x - y) }` over grid nodes.
///
/// Exact O(N^2) scan up to [`SCAN_LIMIT`] nodes, neighbor sweeping above.
pub fn inf_convolve(g: &Field, ell: &SupportFunction) -> Result<Field> {
    if g.is_empty() {
        return Err(Error::Empty("grid"));
    }
    if g.grid().dim() != ell.dim() {
        return Err(Error::Dimension { expected: ell.dim(), got: g.grid().dim() });
    }
    if g.len() <= SCAN_LIMIT {
        Ok(inf_convolve_scan(g, ell))
    } else {
        inf_convolve_sweep(g, ell, 3)
    }
}

/// Exact discrete inf-convolution by scanning all node pairs.
pub fn inf_convolve_scan(g: &Field, ell: &SupportFunction) -> Field {
    let grid = g.grid().clone();
    let n = grid.dim();
    let points: Vec<f64> = (0..grid.len()).flat_map(|i| grid.point(i)).collect();
    let vals = g.values();
    let out: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |diff, i| {
                let x = &points[i * n..(i + 1) * n];
                let mut best = vals[i];
                for (j, &gj) in vals.iter().enumerate() {
                    if gj >= best {
                        continue;
                    }
                    let y = &points[j * n..(j + 1) * n];
                    for k in 0..n {
                        diff[k] = x[k] - y[k];
                    }
                    let c = gj + ell.eval(diff);
                    if c < best {
                        best = c;
                    }
                }
                best
            },
        )
        .collect();
    Field::new(grid, out).expect("same grid")
}

/// Inf-convolution by repeated local relaxation
/// `v(x) <- min(v(x), v(y) + l(x - y))` over lattice offsets with max-norm
/// at most `reach`, until no value changes. Agrees with the scan up to the
/// angular resolution of the offset set.
pub fn inf_convolve_sweep(g: &Field, ell: &SupportFunction, reach: isize) -> Result<Field> {
    let grid = g.grid().clone();
    let n = grid.dim();
    let mut offsets: Vec<Vec<isize>> = vec![vec![]];
    for _ in 0..n {
        offsets = offsets
            .into_iter()
            .flat_map(|o| {
                (-reach..=reach).map(move |s| {
                    let mut o = o.clone();
                    o.push(s);
                    o
                })
            })
            .collect();
    }
    offsets.retain(|o| o.iter().any(|&s| s != 0));
    let costs: Vec<f64> = offsets
        .iter()
        .map(|o| {
            let d: Vec<f64> = o.iter().enumerate().map(|(k, &s)| s as f64 * grid.h(k)).collect();
            ell.eval(&d)
        })
        .collect();
    let mut v = g.values().to_vec();
    let mut changed = true;
    let mut sweeps = 0;
    while changed {
        changed = false;
        sweeps += 1;
        if sweeps > 10_000 {
            return Err(Error::Stalled("inf-convolution sweep".into()));
        }
        for forward in [true, false] {
            for step in 0..grid.len() {
                let i = if forward { step } else { grid.len() - 1 - step };
                let mut best = v[i];
                for (o, c) in offsets.iter().zip(&costs) {
                    if let Some(j) = grid.offset(i, o) {
                        let cand = v[j] + c;
                        if cand < best {
                            best = cand;
                        }
                    }
                }
                if best < v[i] {
                    v[i] = best;
                    changed = true;
                }
            }
        }
    }
    Field::new(grid, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ball2() -> SupportFunction {
        SupportFunction::new(ConstraintH::ball(2, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn ball_support_is_norm() {
        assert_eq!(ball2().eval(&[3.0, 4.0]), 5.0);
    }

    #[test]
    fn box_support_is_l1() {
        let ell = SupportFunction::new(ConstraintH::box_constraint(2, 1.0).unwrap()).unwrap();
        assert_eq!(ell.eval(&[1.0, -2.0]), 3.0);
        assert!((ell.c1() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ellipse_support_closed_form() {
        let ell = SupportFunction::new(ConstraintH::ellipsoid(vec![1.0, 0.5]).unwrap()).unwrap();
        assert!((ell.eval(&[0.0, 1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn custom_ellipse_matches_closed_form() {
        let h = ConstraintH::custom(2, |p: &[f64]| p[0] * p[0] + 4.0 * p[1] * p[1] - 1.0, None, "e")
            .unwrap();
        let ell = SupportFunction::new(h).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let v = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let e = ell.eval_checked(&v);
            let exact = (v[0] * v[0] + v[1] * v[1] / 4.0).sqrt();
            assert!((e.value - exact).abs() < 1e-8, "{v:?}: {} vs {exact}", e.value);
        }
        assert!((ell.c0() - 0.5).abs() < 1e-9);
        assert!((ell.c1() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn custom_ball_in_three_dimensions() {
        let h = ConstraintH::custom(3, |p: &[f64]| norm(p) - 2.0, None, "ball3").unwrap();
        let ell = SupportFunction::new(h).unwrap();
        let v = [0.3, -1.2, 0.7];
        assert!((ell.eval(&v) - 2.0 * norm(&v)).abs() < 1e-8);
        assert!((ell.gauge(&[0.5, 0.5, 0.5]) - (norm(&[0.5; 3]) - 2.0)).abs() < 1e-8);
    }

    #[test]
    fn zero_direction_is_zero() {
        let h = ConstraintH::custom(2, |p: &[f64]| norm(p) - 1.0, None, "c").unwrap();
        let ell = SupportFunction::new(h).unwrap();
        assert_eq!(ell.eval(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn gauge_values() {
        let ell = ball2();
        assert_eq!(ell.gauge(&[0.5, 0.0]), -0.5);
        assert_eq!(ell.gauge(&[0.0, 0.0]), -ell.c0());
    }

    #[test]
    fn box_gauge_matches_numeric_maximization() {
        let ell = SupportFunction::new(ConstraintH::box_constraint(2, 1.0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let p = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let brute = (0..20000)
                .map(|k| {
                    let th = 2.0 * PI * k as f64 / 20000.0;
                    let v = [th.cos(), th.sin()];
                    dot(&p, &v) - ell.eval(&v)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((ell.gauge(&p) - brute).abs() < 1e-6, "{p:?}");
        }
    }

    #[test]
    fn gauge_sign_matches_constraint() {
        let h = ConstraintH::ellipsoid(vec![1.0, 0.5]).unwrap();
        let ell = SupportFunction::new(h.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 10_000 {
            let p = [rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)];
            let hv = h.eval(&p);
            if hv.abs() <= TOL_GEO {
                continue;
            }
            let g = ell.gauge(&p);
            assert_eq!(hv > 0.0, g > 0.0, "{p:?}: H = {hv}, H0 = {g}");
            assert!(g >= norm(&p) - ell.c1() - 1e-9 && g <= norm(&p) - ell.c0() + 1e-9);
            checked += 1;
        }
    }

    #[test]
    fn legendre_of_quadratic_ball() {
        let h = ConstraintH::ball_quadratic(2, 1.0).unwrap();
        assert!((legendre_eval(&h, &[0.0, 0.0]).unwrap().value - 1.0).abs() < 1e-12);
        // Oracle: brute-force maximization of p.w - H(p) over a fine grid.
        let w = [2.0, 0.0];
        let mut brute = f64::NEG_INFINITY;
        for i in 0..=400 {
            for j in 0..=400 {
                let p = [-2.0 + 4.0 * i as f64 / 400.0, -2.0 + 4.0 * j as f64 / 400.0];
                brute = brute.max(dot(&p, &w) - h.eval(&p));
            }
        }
        let e = legendre_eval(&h, &w).unwrap();
        assert!(e.converged);
        assert!((e.value - brute).abs() < 1e-9);
        assert!((e.value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn legendre_recovers_support() {
        let h = ConstraintH::ball_quadratic(2, 1.0).unwrap();
        assert!((support_via_legendre(&h, &[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-8);
        let e = ConstraintH::ellipsoid(vec![1.0, 0.5]).unwrap();
        let ell = SupportFunction::new(e.clone()).unwrap();
        let v = [0.4, -1.3];
        assert!((support_via_legendre(&e, &v).unwrap() - ell.eval(&v)).abs() < 1e-7);
    }

    #[test]
    fn legendre_requires_uniform_convexity() {
        let h = ConstraintH::ball(2, 1.0).unwrap();
        assert!(matches!(legendre_eval(&h, &[1.0, 0.0]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn constraint_must_contain_origin() {
        assert!(ConstraintH::custom(1, |p: &[f64]| p[0].abs(), None, "bad").is_err());
    }

    #[test]
    fn unbounded_constraint_has_no_probe_radius() {
        let h = ConstraintH::custom(2, |_: &[f64]| -1.0, None, "all").unwrap();
        assert_eq!(h.probe_radius(), None);
        assert!(SupportFunction::new(h).is_err());
    }

    #[test]
    fn icosphere_has_expected_size() {
        assert_eq!(direction_mesh(3, 0, ICOSPHERE_LEVEL).unwrap().len(), 20480);
    }

    #[test]
    fn lipschitz_input_is_fixed_point() {
        let g = Arc::new(Grid::cube(2, 1.0, 0.1).unwrap());
        let ell = ball2();
        let f = Field::from_fn(g, |x| 0.5 * norm(x) + 0.1 * x[0]);
        let v = inf_convolve(&f, &ell).unwrap();
        assert_eq!(v.values(), f.values());
    }

    #[test]
    fn sweep_agrees_with_scan_in_one_dimension() {
        let g = Arc::new(Grid::cube(1, 2.0, 0.05).unwrap());
        let ell = SupportFunction::new(ConstraintH::ball(1, 1.0).unwrap()).unwrap();
        let f = Field::from_fn(g, |x| x[0].powi(4) - x[0]);
        let a = inf_convolve_scan(&f, &ell);
        let b = inf_convolve_sweep(&f, &ell, 1).unwrap();
        assert!(a.sup_distance(&b, |_| true) < 1e-12);
    }

    #[test]
    fn inf_convolution_is_below_and_lipschitz() {
        let g = Arc::new(Grid::cube(2, 1.0, 0.1).unwrap());
        let ell = ball2();
        let f = Field::from_fn(g.clone(), |x| 3.0 * (x[0] * 2.0).sin() + x[1] * x[1] * 4.0);
        let v = inf_convolve(&f, &ell).unwrap();
        for i in 0..g.len() {
            assert!(v.get(i) <= f.get(i));
            for j in 0..g.len() {
                let d: Vec<f64> = g.point(i).iter().zip(g.point(j)).map(|(a, b)| a - b).collect();
                assert!(v.get(i) - v.get(j) <= ell.eval(&d) + 1e-12);
            }
        }
    }
}
