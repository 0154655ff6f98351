//! Uniform box lattices and scalar fields living on them.
//!
//! Nodes are ordered lexicographically by multi-index, with the last axis
//! varying fastest. Node coordinates are always recomputed as `lo + i * h`
//! so that they are reproducible from indices alone.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of nodes per axis.
pub const MIN_NODES: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    nodes: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, nodes: Vec<usize>) -> Result<Self> {
        let n = lo.len();
        if n == 0 {
            return Err(Error::Empty("grid"));
        }
        if hi.len() != n {
            return Err(Error::Dimension { expected: n, got: hi.len() });
        }
        if nodes.len() != n {
            return Err(Error::Dimension { expected: n, got: nodes.len() });
        }
        for k in 0..n {
            if !(lo[k].is_finite() && hi[k].is_finite() && hi[k] > lo[k]) {
                return Err(Error::InvalidParameter {
                    name: "grid box",
                    reason: format!("axis {k}: need finite lo < hi, got [{}, {}]", lo[k], hi[k]),
                });
            }
            if nodes[k] < MIN_NODES {
                return Err(Error::InvalidParameter {
                    name: "nodes per axis",
                    reason: format!("axis {k}: {} < {MIN_NODES}", nodes[k]),
                });
            }
        }
        let spacing = (0..n)
            .map(|k| (hi[k] - lo[k]) / (nodes[k] - 1) as f64)
            .collect();
        let mut strides = vec![1usize; n];
        for k in (0..n.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * nodes[k + 1];
        }
        Ok(Self { lo, hi, nodes, spacing, strides })
    }

    /// Box `[lo, hi]` with the node count per axis chosen so the spacing is as
    /// close as possible to `h`.
    pub fn with_spacing(lo: Vec<f64>, hi: Vec<f64>, h: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidParameter {
                name: "h",
                reason: format!("spacing must be positive, got {h}"),
            });
        }
        let nodes = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| ((b - a) / h).round().max(0.0) as usize + 1)
            .collect();
        Self::new(lo, hi, nodes)
    }

    /// The cube `[-half, half]^n` at spacing `h`.
    pub fn cube(dim: usize, half: f64, h: f64) -> Result<Self> {
        Self::with_spacing(vec![-half; dim], vec![half; dim], h)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn h(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    /// Largest spacing over all axes.
    pub fn h_max(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn axis_index(&self, node: usize, axis: usize) -> usize {
        (node / self.strides[axis]) % self.nodes[axis]
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        (0..self.dim()).map(|k| self.axis_index(node, k)).collect()
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn coord(&self, node: usize, axis: usize) -> f64 {
        self.lo[axis] + self.axis_index(node, axis) as f64 * self.spacing[axis]
    }

    pub fn point_into(&self, node: usize, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.coord(node, k);
        }
    }

    pub fn point(&self, node: usize) -> Vec<f64> {
        (0..self.dim()).map(|k| self.coord(node, k)).collect()
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        (0..self.dim()).any(|k| {
            let i = self.axis_index(node, k);
            i == 0 || i + 1 == self.nodes[k]
        })
    }

    /// Neighbor reached by moving `step` nodes along `axis`, if it exists.
    pub fn neighbor(&self, node: usize, axis: usize, step: isize) -> Option<usize> {
        let i = self.axis_index(node, axis) as isize + step;
        if i < 0 || i >= self.nodes[axis] as isize {
            return None;
        }
        Some((node as isize + step * self.strides[axis] as isize) as usize)
    }

    /// Neighbor reached by a general lattice offset.
    pub fn offset(&self, node: usize, offset: &[isize]) -> Option<usize> {
        let mut out = node as isize;
        for (k, &s) in offset.iter().enumerate() {
            let i = self.axis_index(node, k) as isize + s;
            if i < 0 || i >= self.nodes[k] as isize {
                return None;
            }
            out += s * self.strides[k] as isize;
        }
        Some(out as usize)
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| !self.is_boundary(i))
    }

    /// Number of whole nodes between `node` and the nearest box face.
    pub fn depth(&self, node: usize) -> usize {
        (0..self.dim())
            .map(|k| {
                let i = self.axis_index(node, k);
                i.min(self.nodes[k] - 1 - i)
            })
            .min()
            .unwrap_or(0)
    }

    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let multi: Vec<usize> = (0..self.dim())
            .map(|k| {
                let t = ((x[k] - self.lo[k]) / self.spacing[k]).round();
                t.clamp(0.0, (self.nodes[k] - 1) as f64) as usize
            })
            .collect();
        self.flat_index(&multi)
    }

    /// True when the closed ball of radius `r` about the origin lies in the box.
    pub fn contains_ball(&self, r: f64) -> bool {
        self.lo.iter().all(|&a| a <= -r) && self.hi.iter().all(|&b| b >= r)
    }
}

/// Scalar values on the nodes of a grid.
#[derive(Clone, Debug)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension { expected: grid.len(), got: values.len() });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut x = vec![0.0; grid.dim()];
        let values = (0..grid.len())
            .map(|i| {
                grid.point_into(i, &mut x);
                f(&x)
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// First (lexicographically smallest) node attaining the minimum.
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v < self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn oscillation(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn shifted(&self, c: f64) -> Field {
        self.map(|v| v + c)
    }

    pub fn scaled(&self, c: f64) -> Field {
        self.map(|v| v * c)
    }

    /// Sup-norm distance over the nodes selected by `keep`.
    pub fn sup_distance(&self, other: &Field, keep: impl Fn(usize) -> bool) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, (a, b))| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Writes the field as CSV: one coordinate column per axis, then `value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let n = self.grid.dim();
        let mut header: Vec<String> = (0..n).map(|k| format!("x{k}")).collect();
        header.push("value".into());
        w.write_record(&header)?;
        let mut rec = Vec::with_capacity(n + 1);
        for i in 0..self.len() {
            rec.clear();
            for k in 0..n {
                rec.push(format!("{:e}", self.grid.coord(i, k)));
            }
            rec.push(format!("{:e}", self.values[i]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads values written by [`Field::write_csv`] back onto `grid`.
    ///
    /// Rows must be in lexicographic node order; coordinates are checked
    /// against the grid to within a relative `1e-9`.
    pub fn read_csv<R: Read>(grid: Arc<Grid>, reader: R) -> Result<Field> {
        let mut r = csv::Reader::from_reader(reader);
        let n = grid.dim();
        let mut values = Vec::with_capacity(grid.len());
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != n + 1 {
                return Err(Error::Dimension { expected: n + 1, got: rec.len() });
            }
            if i >= grid.len() {
                return Err(Error::Dimension { expected: grid.len(), got: i + 1 });
            }
            for k in 0..n {
                let x: f64 = parse_cell(&rec[k])?;
                let want = grid.coord(i, k);
                if (x - want).abs() > 1e-9 * (1.0 + want.abs()) {
                    return Err(Error::InvalidParameter {
                        name: "csv coordinates",
                        reason: format!("row {i} axis {k}: {x} != {want}"),
                    });
                }
            }
            values.push(parse_cell(&rec[n])?);
        }
        Field::new(grid, values)
    }
}

fn parse_cell(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::InvalidParameter {
        name: "csv cell",
        reason: format!("not a number: {s:?}"),
    })
}
