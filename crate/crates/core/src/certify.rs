//! Eigenvalue brackets, minmax bounds from test functions, and structural
//! checks of computed eigenfunctions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::{estimate_contact_radius, EigenPair};
use crate::error::{Error, Result};
use crate::fd::{gauge_field, hessian_fd};
use crate::geometry::{inf_convolve, SupportFunction, TOL_GEO};
use crate::grid::{Field, Grid};
use crate::problems::{k1_constant, ProblemSpec, VALIDATION_SEED};

/// Samples per axis for the lower end of the a-priori bracket.
const BRACKET_SAMPLES: [usize; 3] = [4001, 401, 81];

/// Random node pairs added to the local pairs in the Lipschitz check.
const LIPSCHITZ_RANDOM_PAIRS: usize = 20_000;

/// `(min f over a dense sample of ball(R_contact), -F(I) + sup_{H <= 0} f)`.
pub fn apriori_bracket(spec: &ProblemSpec) -> Result<(f64, f64)> {
    let n = spec.dim();
    let r = estimate_contact_radius(spec)?.max(1e-12);
    let m = *BRACKET_SAMPLES
        .get(n - 1)
        .ok_or_else(|| Error::Unsupported(format!("dimension {n} > 3")))?;
    let mut lo = f64::INFINITY;
    let mut idx = vec![0usize; n];
    let mut x = vec![0.0; n];
    'outer: loop {
        for k in 0..n {
            x[k] = -r + 2.0 * r * idx[k] as f64 / (m - 1) as f64;
        }
        if x.iter().map(|v| v * v).sum::<f64>() <= r * r * (1.0 + 1e-12) {
            lo = lo.min(spec.cost().eval(&x));
        }
        for k in (0..n).rev() {
            idx[k] += 1;
            if idx[k] < m {
                continue 'outer;
            }
            idx[k] = 0;
        }
        break;
    }
    if let Some(a) = spec.cost().argmin() {
        if a.iter().map(|v| v * v).sum::<f64>() <= r * r {
            lo = lo.min(spec.cost().eval(a));
        }
    }
    Ok((lo, k1_constant(spec)?))
}

/// All lattice offsets `o` with `|o_k| <= reach_k`.
fn box_offsets(reach: &[isize]) -> Vec<Vec<isize>> {
    let mut out: Vec<Vec<isize>> = vec![vec![]];
    for &r in reach {
        out = out
            .into_iter()
            .flat_map(|o| {
                (-r..=r).map(move |s| {
                    let mut o = o.clone();
                    o.push(s);
                    o
                })
            })
            .collect();
    }
    out
}

/// Largest `l`-Lipschitz minorant of `u` on the grid.
pub fn clip_admissible(u: &Field, ell: &SupportFunction) -> Result<Field> {
    inf_convolve(u, ell)
}

/// `min over interior nodes of -F(D^2 phi) + f`, for `phi` with
/// `H0(D phi) <= tol` at every interior node.
pub fn lambda_minus(spec: &ProblemSpec, phi: &Field, tol: f64) -> Result<f64> {
    let grid = phi.grid();
    let gauge = gauge_field(spec.support()?, phi);
    if let Some((node, value)) = grid
        .interior_nodes()
        .map(|i| (i, gauge.get(i)))
        .filter(|&(_, v)| v > tol)
        .max_by(|a, b| a.1.total_cmp(&b.1))
    {
        return Err(Error::Inadmissible { node, value });
    }
    let nodes: Vec<usize> = grid.interior_nodes().collect();
    nodes
        .par_iter()
        .map(|&i| -> Result<f64> {
            let hess = hessian_fd(phi, i)?;
            Ok(-spec.operator().eval(&hess) + spec.cost().eval(&grid.point(i)))
        })
        .try_reduce(|| f64::INFINITY, |a, b| Ok(a.min(b)))
}

/// Lattice mollifier `(1 - (r/w)^2)^2` for `r < w`, renormalized to unit
/// mass over the in-grid nodes of each stencil.
pub fn mollify(u: &Field, width: f64) -> Result<Field> {
    let grid = u.grid();
    if !(width > 0.0) {
        return Err(Error::InvalidParameter { name: "width", reason: format!("must be positive, got {width}") });
    }
    let n = grid.dim();
    let reach: Vec<isize> = (0..n).map(|k| (width / grid.h(k)).floor() as isize).collect();
    let stencil: Vec<(Vec<isize>, f64)> = box_offsets(&reach)
        .into_iter()
        .filter_map(|o| {
            let r2: f64 = o.iter().enumerate().map(|(k, &s)| (s as f64 * grid.h(k)).powi(2)).sum();
            let s = r2 / (width * width);
            (s < 1.0).then(|| (o, (1.0 - s).powi(2)))
        })
        .collect();
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let (mut acc, mut mass) = (0.0, 0.0);
            for (o, w) in &stencil {
                if let Some(j) = grid.offset(i, o) {
                    acc += w * u.get(j);
                    mass += w;
                }
            }
            acc / mass
        })
        .collect();
    Field::new(grid.clone(), values)
}

/// Upper estimate: with `psi = tau * mollify(u_star, width)`, the sup of
/// `-F(D^2 psi) + f` over interior nodes where `H0(D psi) < -tol_c`.
pub fn lambda_plus(spec: &ProblemSpec, pair: &EigenPair, tau: f64, width: f64) -> Result<f64> {
    if !(tau > 1.0) {
        return Err(Error::InvalidParameter { name: "tau", reason: format!("must exceed 1, got {tau}") });
    }
    let grid = pair.u_star.grid();
    if width < 2.0 * grid.h_max() - 1e-12 {
        return Err(Error::InvalidParameter {
            name: "width",
            reason: format!("must be at least 2h = {}, got {width}", 2.0 * grid.h_max()),
        });
    }
    let psi = mollify(&pair.u_star, width)?.scaled(tau);
    let gauge = gauge_field(spec.support()?, &psi);
    let region: Vec<usize> = grid.interior_nodes().filter(|&i| gauge.get(i) < -pair.tol_c).collect();
    if region.is_empty() {
        return Err(Error::Empty("strictly admissible region of the scaled test function"));
    }
    region
        .par_iter()
        .map(|&i| -> Result<f64> {
            let hess = hessian_fd(&psi, i)?;
            Ok(-spec.operator().eval(&hess) + spec.cost().eval(&grid.point(i)))
        })
        .try_reduce(|| f64::NEG_INFINITY, |a, b| Ok(a.max(b)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateBounds {
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub tau: f64,
    pub mollify_width: f64,
    pub apriori: (f64, f64),
}

pub fn certify(spec: &ProblemSpec, pair: &EigenPair, tau: f64, width: f64) -> Result<CertificateBounds> {
    let clipped = clip_admissible(&pair.u_star, spec.support()?)?;
    Ok(CertificateBounds {
        lambda_minus: lambda_minus(spec, &clipped, pair.tol_c.max(1e-12))?,
        lambda_plus: lambda_plus(spec, pair, tau, width)?,
        tau,
        mollify_width: width,
        apriori: apriori_bracket(spec)?,
    })
}

/// Max of `u(x) - u(y) - l(x - y)` over node pairs within two lattice steps
/// plus a fixed-seed random sample; returns the value and the pair.
pub fn lipschitz_violation(u: &Field, ell: &SupportFunction) -> (f64, (usize, usize)) {
    let grid = u.grid();
    let n = grid.dim();
    let mut offsets = box_offsets(&vec![2; n]);
    offsets.retain(|o| o.iter().any(|&s| s != 0));
    let pair_gap = |i: usize, j: usize| {
        let d: Vec<f64> = grid.point(i).iter().zip(grid.point(j)).map(|(a, b)| a - b).collect();
        u.get(i) - u.get(j) - ell.eval(&d)
    };
    let local = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            offsets
                .iter()
                .filter_map(|o| grid.offset(i, o))
                .map(|j| (pair_gap(i, j), (i, j)))
                .fold((f64::NEG_INFINITY, (i, i)), |a, b| if b.0 > a.0 { b } else { a })
        })
        .reduce(|| (f64::NEG_INFINITY, (0, 0)), |a, b| if b.0 > a.0 { b } else { a });
    let mut rng = ChaCha8Rng::seed_from_u64(VALIDATION_SEED);
    let mut best = local;
    for _ in 0..LIPSCHITZ_RANDOM_PAIRS {
        let i = rng.random_range(0..grid.len());
        let j = rng.random_range(0..grid.len());
        let g = pair_gap(i, j);
        if g > best.0 {
            best = (g, (i, j));
        }
    }
    best
}

/// Undivided second differences along the axes and the two-axis diagonals
/// `e_i +- e_j`; returns the minimum and its center node.
pub fn convexity_minimum(u: &Field) -> (f64, usize) {
    let grid = u.grid();
    let n = grid.dim();
    let mut dirs: Vec<Vec<isize>> = Vec::new();
    for i in 0..n {
        let mut e = vec![0isize; n];
        e[i] = 1;
        dirs.push(e);
        for j in (i + 1)..n {
            for s in [1, -1] {
                let mut d = vec![0isize; n];
                d[i] = 1;
                d[j] = s;
                dirs.push(d);
            }
        }
    }
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let mut best = (f64::INFINITY, i);
            for d in &dirs {
                let back: Vec<isize> = d.iter().map(|&s| -s).collect();
                if let (Some(a), Some(b)) = (grid.offset(i, d), grid.offset(i, &back)) {
                    let s = u.get(a) - 2.0 * u.get(i) + u.get(b);
                    if s < best.0 {
                        best = (s, i);
                    }
                }
            }
            best
        })
        .reduce(|| (f64::INFINITY, 0), |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub lipschitz_violation: f64,
    pub lipschitz_witness: (usize, usize),
    pub convexity_min: f64,
    pub convexity_witness: usize,
    /// `1e-6 (1 + max u)`.
    pub convexity_tolerance: f64,
    pub contact_fraction: f64,
    /// Largest `|x|` over the contact mask.
    pub contact_extent: f64,
    pub contact_radius: f64,
    /// Interior nodes with `H0(Du) > max(tol_c, TOL_GEO)`.
    pub inadmissible_nodes: usize,
    pub growth_proxy: f64,
    pub extension_discrepancy: f64,
    pub oscillation: f64,
}

impl CheckReport {
    pub fn convex(&self) -> bool {
        self.convexity_min >= -self.convexity_tolerance
    }

    pub fn contact_nested(&self) -> bool {
        self.contact_extent <= self.contact_radius
    }
}

pub fn structural_checks(spec: &ProblemSpec, pair: &EigenPair) -> Result<CheckReport> {
    let ell = spec.support()?;
    let u = &pair.u_star;
    let grid: &Grid = u.grid();
    let (lipschitz_violation, lipschitz_witness) = lipschitz_violation(u, ell);
    let (convexity_min, convexity_witness) = convexity_minimum(u);
    let gauge = gauge_field(ell, u);
    let tol_c = pair.tol_c;
    let inadmissible_nodes = grid.interior_nodes().filter(|&i| gauge.get(i) > tol_c.max(TOL_GEO)).count();
    let contact_extent = (0..grid.len())
        .filter(|&i| pair.omega0[i])
        .map(|i| grid.point(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    Ok(CheckReport {
        lipschitz_violation,
        lipschitz_witness,
        convexity_min,
        convexity_witness,
        convexity_tolerance: 1e-6 * (1.0 + u.max()),
        contact_fraction: pair.contact_fraction(),
        contact_extent,
        contact_radius: pair.contact_radius,
        inadmissible_nodes,
        growth_proxy: pair.growth_proxy(ell),
        extension_discrepancy: pair.extension_discrepancy,
        oscillation: u.oscillation(),
    })
}
