use std::sync::Arc;

use approx::assert_relative_eq;
use gradeig::oracle::{smooth_fit_solve, RadialProblem};
use gradeig::{builtin, Field, Grid, InlineSpec, BUILTIN_NAMES};

#[test]
fn field_csv_roundtrip() {
    let grid = Arc::new(Grid::cube(2, 1.0, 0.25).unwrap());
    let u = Field::from_fn(grid.clone(), |x| x[0].exp() - 3.0 * x[1]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.csv");
    u.save_csv(&path).unwrap();
    let back = Field::read_csv(grid, std::fs::File::open(&path).unwrap()).unwrap();
    for (a, b) in u.values().iter().zip(back.values()) {
        assert_relative_eq!(a, b, max_relative = 1e-15);
    }
    let text = std::fs::read_to_string(&path).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 3);
}

#[test]
fn phi_csv_has_header_and_ends_at_slope_bound() {
    let sol = smooth_fit_solve(&RadialProblem::from_spec(&builtin("radial2d").unwrap()).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("phi.csv");
    sol.write_phi_csv(std::fs::File::create(&path).unwrap(), 101).unwrap();
    let mut rdr = csv::Reader::from_path(&path).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["r", "phi_prime"]);
    let rows: Vec<Vec<f64>> = rdr.records().map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 101);
    assert!(rows.windows(2).all(|w| w[1][0] > w[0][0]));
    assert_relative_eq!(rows[100][1], 1.0, epsilon = 1e-9);
}

#[test]
fn inline_spec_json() {
    let text = r#"{
        "name": "tilted",
        "operator": {"kind": "linear", "a": [[2.0, 0.5], [0.5, 1.0]]},
        "constraint": {"kind": "ellipsoid", "semi_axes": [1.0, 0.5]},
        "cost": {"kind": "shifted_quadratic", "center": [0.2, 0.0]}
    }"#;
    let inline: InlineSpec = serde_json::from_str(text).unwrap();
    let spec = inline.build().unwrap();
    assert_eq!(spec.dim(), 2);
    assert!(gradeig::validate(&spec).passed());
    let again: InlineSpec = serde_json::from_str(&serde_json::to_string(&inline).unwrap()).unwrap();
    assert_eq!(again, inline);
    assert!(serde_json::from_str::<InlineSpec>(r#"{"name": "x", "operator": {"kind": "laplacian", "dim": 1}}"#).is_err());
    let bad = r#"{"name": "x", "operator": {"kind": "laplacian", "dim": 2},
                 "constraint": {"kind": "ball", "dim": 1, "radius": 1.0}, "cost": {"kind": "quadratic", "dim": 2}}"#;
    assert!(serde_json::from_str::<InlineSpec>(bad).unwrap().build().is_err());
}

#[test]
fn builtin_names_resolve() {
    for name in BUILTIN_NAMES {
        assert_eq!(builtin(name).unwrap().name(), name);
    }
    assert!(builtin("nope").is_err());
}
