//! Acceptance criteria 1-11. Each test prints one `criterion N: PASS|FAIL`
//! line before asserting.

use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use gradeig::certify::{apriori_bracket, certify, structural_checks};
use gradeig::eigen::{solve_eigen, EigenPair};
use gradeig::fd::{pde_residual, pde_residual_in};
use gradeig::geometry::inf_convolve;
use gradeig::oracle::{separable_compose, shoot, smooth_fit_bracket, smooth_fit_solve, RadialProblem};
use gradeig::penalty::SolverParams;
use gradeig::{builtin, Field, Grid, ProblemSpec, BUILTIN_NAMES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Closed-form smooth fit for `-u'' = lambda - x^2`, `|u'| <= 1`:
/// `u' = lambda x - x^3 / 3` with `u'' = 0` and `u' = 1` at `x0 = sqrt(lambda)`,
/// so `(2/3) lambda^(3/2) = 1`.
fn quartic_lambda() -> f64 {
    1.5f64.powf(2.0 / 3.0)
}

fn quartic_x0() -> f64 {
    quartic_lambda().sqrt()
}

/// Same for `n = 2`: `phi' = lambda r / 2 - r^3 / 4`, `r0^3 = 2`,
/// `lambda = 3 / r0`.
fn radial_lambda() -> f64 {
    3.0 / 2f64.powf(1.0 / 3.0)
}

fn verdict(criterion: u32, pass: bool, detail: String) {
    println!("criterion {criterion}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {criterion} failed: {detail}");
}

struct Solved {
    spec: ProblemSpec,
    pair: EigenPair,
    h: f64,
    elapsed: Duration,
}

/// Held while solving so that timings do not include other solves.
static SOLVING: Mutex<()> = Mutex::new(());

fn solve(name: &str, half: f64, h: f64, eps_min: Option<f64>) -> Solved {
    let _guard = SOLVING.lock().unwrap_or_else(|e| e.into_inner());
    let spec = builtin(name).unwrap();
    let grid = Arc::new(Grid::cube(spec.dim(), half, h).unwrap());
    let params = SolverParams { eps_min, delta_min: 2f64.powi(-10), ..SolverParams::default() };
    let start = Instant::now();
    let pair = solve_eigen(&spec, grid, &params).unwrap();
    Solved { spec, pair, h, elapsed: start.elapsed() }
}

fn quartic() -> &'static Solved {
    static S: OnceLock<Solved> = OnceLock::new();
    S.get_or_init(|| solve("quartic1d", 3.0, 2e-3, Some(1e-4)))
}

fn radial() -> &'static Solved {
    static S: OnceLock<Solved> = OnceLock::new();
    S.get_or_init(|| solve("radial2d", 2.5, 0.02, None))
}

fn separable() -> &'static Solved {
    static S: OnceLock<Solved> = OnceLock::new();
    S.get_or_init(|| solve("separable2d", 3.5, 0.04, None))
}

fn ellipse() -> &'static Solved {
    static S: OnceLock<Solved> = OnceLock::new();
    S.get_or_init(|| solve("ellipse2d", 3.0, 0.05, None))
}

fn degenerate() -> &'static Solved {
    static S: OnceLock<Solved> = OnceLock::new();
    S.get_or_init(|| solve("degenerate_zeroF", 3.0, 0.01, None))
}

fn by_name(name: &str) -> &'static Solved {
    match name {
        "quartic1d" => quartic(),
        "separable2d" => separable(),
        "radial2d" => radial(),
        "ellipse2d" => ellipse(),
        "degenerate_zeroF" => degenerate(),
        _ => unreachable!(),
    }
}

#[test]
fn criterion_01_quartic_eigenvalue() {
    let s = quartic();
    let err = (s.pair.lambda_star - quartic_lambda()).abs();
    let oracle = smooth_fit_solve(&RadialProblem::from_spec(&s.spec).unwrap()).unwrap().lambda;
    let pass = err <= 5e-3 && (oracle - quartic_lambda()).abs() < 1e-8 && s.elapsed < Duration::from_secs(10);
    verdict(
        1,
        pass,
        format!("lambda_star {:.7}, closed form {:.7}, error {err:.2e}, runtime {:.2?}", s.pair.lambda_star, quartic_lambda(), s.elapsed),
    );
}

#[test]
fn criterion_02_free_boundary() {
    let s = quartic();
    let grid = s.pair.u_star.grid();
    let xs: Vec<f64> = (0..grid.len()).filter(|&i| s.pair.omega0[i]).map(|i| grid.point(i)[0]).collect();
    let (lo, hi) = (xs.iter().cloned().fold(f64::INFINITY, f64::min), xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let x0 = quartic_x0();
    let err = (lo + x0).abs().max((hi - x0).abs());
    verdict(2, err <= 5.0 * s.h, format!("contact set [{lo:.4}, {hi:.4}] vs +-{x0:.7}, error {err:.2e} <= {:.1e}", 5.0 * s.h));
}

#[test]
fn criterion_03_radial_eigenvalue() {
    let s = radial();
    let err = (s.pair.lambda_star - radial_lambda()).abs();
    let pass = err <= 2e-2 && s.elapsed < Duration::from_secs(300);
    verdict(3, pass, format!("lambda_star {:.6} vs {:.7}, error {err:.2e}, runtime {:.1?}", s.pair.lambda_star, radial_lambda(), s.elapsed));
}

#[test]
fn criterion_04_separability() {
    let s = separable();
    let expected = 2.0 * quartic_lambda();
    let err = (s.pair.lambda_star - expected).abs();
    let base = smooth_fit_solve(&RadialProblem::from_spec(&builtin("quartic1d").unwrap()).unwrap()).unwrap();
    let composed = separable_compose(&base, 2).unwrap();
    let grid = s.pair.u_star.grid().clone();
    let res = pde_residual(&s.spec, composed.lambda, &composed.field(grid)).unwrap();
    let pass = err <= 2e-2 && (composed.lambda - expected).abs() < 1e-8 && res.sup_filtered <= 10.0 * s.h;
    verdict(
        4,
        pass,
        format!("lambda_star {:.6} vs {expected:.7}, error {err:.2e}; composed residual {:.2e} <= {:.1e}", s.pair.lambda_star, res.sup_filtered, 10.0 * s.h),
    );
}

#[test]
fn criterion_05_degenerate() {
    let s = degenerate();
    let grid = s.pair.u_star.grid();
    let min_f = (0..grid.len()).map(|i| s.spec.cost().eval(&grid.point(i))).fold(f64::INFINITY, f64::min);
    let kink = s.pair.x_node;
    let res = pde_residual_in(&s.spec, s.pair.lambda_star, &s.pair.u_star, |i| i != kink).unwrap();
    let pass = s.pair.lambda_star == min_f && res.sup_filtered <= 10.0 * s.h;
    verdict(
        5,
        pass,
        format!("lambda_star {:e} vs min f {min_f:e}; residual off the kink {:.2e} <= {:.1e}", s.pair.lambda_star, res.sup_filtered, 10.0 * s.h),
    );
}

#[test]
fn criterion_06_apriori_bracket() {
    let mut failures = Vec::new();
    let mut checked = 0;
    let quartic_bracket = apriori_bracket(&builtin("quartic1d").unwrap()).unwrap();
    for name in BUILTIN_NAMES {
        let s = by_name(name);
        let (lo, hi) = apriori_bracket(&s.spec).unwrap();
        let slack = 1e-12 * (1.0 + hi.abs());
        let mut values: Vec<f64> = s.pair.trace.iter().map(|t| t.lambda).collect();
        values.push(s.pair.lambda_star);
        for v in values {
            checked += 1;
            if !(v >= lo - slack && v <= hi + slack) {
                failures.push(format!("{name}: {v} outside [{lo}, {hi}]"));
            }
        }
    }
    let quartic_ok = quartic_bracket.0.abs() < 1e-12 && (quartic_bracket.1 - 2.0).abs() < 1e-12;
    verdict(
        6,
        failures.is_empty() && quartic_ok,
        format!("{checked} values checked, quartic1d bracket {quartic_bracket:?}, failures {failures:?}"),
    );
}

#[test]
fn criterion_07_minmax_sandwich() {
    let s = quartic();
    let b = certify(&s.spec, &s.pair, 1.01, 4.0 * s.h).unwrap();
    let l = s.pair.lambda_star;
    let pass = b.lambda_minus <= l && l <= b.lambda_plus && b.lambda_plus - l <= 0.1;
    verdict(7, pass, format!("{:.7} <= {l:.7} <= {:.7}, gap {:.2e}", b.lambda_minus, b.lambda_plus, b.lambda_plus - l));
}

#[test]
fn criterion_08_structural() {
    let mut lines = Vec::new();
    let mut pass = true;
    for name in BUILTIN_NAMES {
        let s = by_name(name);
        if s.spec.operator().theta() <= 0.0 {
            continue;
        }
        let c = structural_checks(&s.spec, &s.pair).unwrap();
        let ok = c.convex()
            && c.lipschitz_violation <= 10.0 * s.h
            && c.inadmissible_nodes == 0
            && c.contact_nested()
            && c.extension_discrepancy <= 0.05 * c.oscillation;
        pass &= ok;
        lines.push(format!(
            "{name}: convexity {:.1e}, lipschitz {:.1e}, inadmissible {}, extent {:.3} / R {:.3}, discrepancy {:.1e} / osc {:.2}",
            c.convexity_min, c.lipschitz_violation, c.inadmissible_nodes, c.contact_extent, c.contact_radius,
            c.extension_discrepancy, c.oscillation
        ));
    }
    verdict(8, pass, lines.join("; "));
}

#[test]
fn criterion_09_geometry() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_hom = 0.0f64;
    let mut worst_sub = f64::NEG_INFINITY;
    for name in BUILTIN_NAMES {
        let spec = builtin(name).unwrap();
        let ell = spec.support().unwrap();
        let n = spec.dim();
        for _ in 0..100 {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let t: f64 = rng.random_range(0.0..5.0);
            let tv: Vec<f64> = v.iter().map(|x| t * x).collect();
            let vw: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a + b).collect();
            worst_hom = worst_hom.max((ell.eval(&tv) - t * ell.eval(&v)).abs());
            worst_sub = worst_sub.max(ell.eval(&vw) - ell.eval(&v) - ell.eval(&w));
        }
    }
    let ellipse = builtin("ellipse2d").unwrap();
    let ell = ellipse.support().unwrap();
    let mut worst_ellipse = 0.0f64;
    for _ in 0..100 {
        let v = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        worst_ellipse = worst_ellipse.max((ell.eval(&v) - (v[0] * v[0] + v[1] * v[1] / 4.0).sqrt()).abs());
    }
    let h = 0.05;
    let mut worst_env = 0.0f64;
    for name in ["radial2d", "separable2d", "ellipse2d"] {
        let spec = builtin(name).unwrap();
        let grid = Arc::new(Grid::cube(2, 2.0, h).unwrap());
        let q = Field::from_fn(grid.clone(), |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
        let env = inf_convolve(&q, spec.support().unwrap()).unwrap();
        for i in 0..grid.len() {
            if spec.constraint().eval(&grid.point(i)) <= 0.0 {
                worst_env = worst_env.max((env.get(i) - q.get(i)).abs());
            }
        }
    }
    let pass = worst_hom <= 1e-8 && worst_sub <= 1e-8 && worst_ellipse <= 1e-6 && worst_env <= h * h;
    verdict(
        9,
        pass,
        format!("homogeneity {worst_hom:.1e}, subadditivity excess {worst_sub:.1e}, ellipse {worst_ellipse:.1e}, envelope {worst_env:.1e} <= {:.1e}", h * h),
    );
}

#[test]
fn criterion_10_residual_order() {
    let spec = builtin("quartic1d").unwrap();
    let (l, x0) = (quartic_lambda(), quartic_x0());
    let u = move |a: f64| {
        if a <= x0 {
            l * a * a / 2.0 - a.powi(4) / 12.0
        } else {
            l * x0 * x0 / 2.0 - x0.powi(4) / 12.0 + (a - x0)
        }
    };
    let res: Vec<f64> = [4e-3, 2e-3, 1e-3]
        .iter()
        .map(|&h| {
            let grid = Arc::new(Grid::cube(1, 3.0, h).unwrap());
            pde_residual(&spec, l, &Field::from_fn(grid, |x| u(x[0].abs()))).unwrap().sup
        })
        .collect();
    let ratios = [res[0] / res[1], res[1] / res[2]];
    let pass = ratios.iter().all(|r| (1.5..=2.5).contains(r));
    verdict(10, pass, format!("residuals {:.3e} {:.3e} {:.3e}, ratios {:.3} {:.3}", res[0], res[1], res[2], ratios[0], ratios[1]));
}

#[test]
fn criterion_11_oracle() {
    let roots = [
        (1, quartic_lambda()),
        (2, radial_lambda()),
        // phi' = lambda r / 3 - r^3 / 5, r0^3 = 5 / 2, lambda = 9 / (2 r0).
        (3, 4.5 / 2.5f64.powf(1.0 / 3.0)),
    ];
    let mut worst = 0.0f64;
    let mut monotone = true;
    for (n, exact) in roots {
        let problem = RadialProblem::new(n, vec![1.0], Arc::new(|r| r * r), 1.0).unwrap();
        worst = worst.max((smooth_fit_solve(&problem).unwrap().lambda - exact).abs());
        let (lo, hi) = smooth_fit_bracket(&problem);
        let defects: Vec<f64> = (0..=40).map(|k| shoot(&problem, lo + (hi - lo) * k as f64 / 40.0).unwrap().1).collect();
        monotone &= defects.windows(2).all(|w| w[1] > w[0]);
    }
    verdict(11, worst <= 1e-8 && monotone, format!("max root error {worst:.1e}, defect monotone {monotone}"));
}
