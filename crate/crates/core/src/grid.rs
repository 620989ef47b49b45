//! Periodic grids and the nodal field containers that live on them.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nodal::{self, Mat};

pub const DEFAULT_SPD_FLOOR: f64 = 1e-6;

/// A uniform periodic grid on the flat torus `[0,L_1) x ... x [0,L_n)`.
///
/// Nodes are numbered row-major with the last axis fastest.
#[derive(Clone)]
pub struct TorusGrid {
    dim: usize,
    resolution: [usize; 3],
    periods: [f64; 3],
    spacing: [f64; 3],
    strides: [usize; 3],
    nodes: usize,
    // neighbors[(p * dim + axis) * 2 + side], side 0 = minus, 1 = plus
    neighbors: Arc<Vec<u32>>,
}

impl TorusGrid {
    pub fn new(resolution: &[usize], periods: &[f64]) -> Result<Self> {
        let dim = resolution.len();
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidArgument(format!(
                "grid dimension must be 2 or 3, got {dim}"
            )));
        }
        if periods.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "{} periods given for a {dim}-dimensional grid",
                periods.len()
            )));
        }
        for &n in resolution {
            if n < 8 || n % 2 != 0 {
                return Err(Error::InvalidArgument(format!(
                    "resolution entries must be even and >= 8, got {n}"
                )));
            }
        }
        for &l in periods {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "periods must be positive and finite, got {l}"
                )));
            }
        }
        let mut res = [1usize; 3];
        let mut per = [1.0f64; 3];
        let mut spacing = [1.0f64; 3];
        for a in 0..dim {
            res[a] = resolution[a];
            per[a] = periods[a];
            spacing[a] = periods[a] / resolution[a] as f64;
        }
        let mut strides = [0usize; 3];
        let mut s = 1;
        for a in (0..dim).rev() {
            strides[a] = s;
            s *= res[a];
        }
        let nodes = s;
        let mut neighbors = vec![0u32; nodes * dim * 2];
        for p in 0..nodes {
            for a in 0..dim {
                let i = (p / strides[a]) % res[a];
                let base = p - i * strides[a];
                let minus = base + ((i + res[a] - 1) % res[a]) * strides[a];
                let plus = base + ((i + 1) % res[a]) * strides[a];
                neighbors[(p * dim + a) * 2] = minus as u32;
                neighbors[(p * dim + a) * 2 + 1] = plus as u32;
            }
        }
        Ok(Self {
            dim,
            resolution: res,
            periods: per,
            spacing,
            strides,
            nodes,
            neighbors: Arc::new(neighbors),
        })
    }

    /// Unit torus `[0,1)^dim` with `n` nodes per axis.
    pub fn unit(dim: usize, n: usize) -> Result<Self> {
        Self::new(&vec![n; dim], &vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution[..self.dim]
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    /// Volume of one grid cell, `prod h_i`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    pub fn volume(&self) -> f64 {
        self.periods().iter().product()
    }

    /// Number of independent components of a symmetric 2-tensor.
    pub fn sym_components(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    #[inline]
    pub fn minus(&self, p: usize, axis: usize) -> usize {
        self.neighbors[(p * self.dim + axis) * 2] as usize
    }

    #[inline]
    pub fn plus(&self, p: usize, axis: usize) -> usize {
        self.neighbors[(p * self.dim + axis) * 2 + 1] as usize
    }

    #[inline]
    pub fn shift(&self, p: usize, axis: usize, offset: isize) -> usize {
        let mut q = p;
        if offset >= 0 {
            for _ in 0..offset {
                q = self.plus(q, axis);
            }
        } else {
            for _ in 0..(-offset) {
                q = self.minus(q, axis);
            }
        }
        q
    }

    pub fn index_of(&self, idx: &[usize]) -> usize {
        (0..self.dim)
            .map(|a| (idx[a] % self.resolution[a]) * self.strides[a])
            .sum()
    }

    pub fn multi_index(&self, p: usize) -> [usize; 3] {
        let mut out = [0usize; 3];
        for a in 0..self.dim {
            out[a] = (p / self.strides[a]) % self.resolution[a];
        }
        out
    }

    pub fn position(&self, p: usize) -> [f64; 3] {
        let idx = self.multi_index(p);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = idx[a] as f64 * self.spacing[a];
        }
        x
    }

    pub fn check_same(&self, other: &TorusGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }

    // --- finite-difference stencils on node-major interleaved arrays ---

    /// Central first difference of component `c` (of `stride`) along `axis`.
    #[inline]
    pub(crate) fn d1(&self, data: &[f64], stride: usize, c: usize, p: usize, axis: usize) -> f64 {
        (data[self.plus(p, axis) * stride + c] - data[self.minus(p, axis) * stride + c])
            / (2.0 * self.spacing[axis])
    }

    /// Second difference: compact three-point stencil on the diagonal,
    /// product of central differences off the diagonal.
    #[inline]
    pub(crate) fn d2(
        &self,
        data: &[f64],
        stride: usize,
        c: usize,
        p: usize,
        a: usize,
        b: usize,
    ) -> f64 {
        if a == b {
            let h = self.spacing[a];
            (data[self.plus(p, a) * stride + c] - 2.0 * data[p * stride + c]
                + data[self.minus(p, a) * stride + c])
                / (h * h)
        } else {
            let pa = self.plus(p, a);
            let ma = self.minus(p, a);
            let v = data[self.plus(pa, b) * stride + c] - data[self.minus(pa, b) * stride + c]
                - data[self.plus(ma, b) * stride + c]
                + data[self.minus(ma, b) * stride + c];
            v / (4.0 * self.spacing[a] * self.spacing[b])
        }
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.resolution == other.resolution
            && self.periods == other.periods
    }
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "TorusGrid({:?} nodes, periods {:?})",
            self.resolution(),
            self.periods()
        )
    }
}

/// Position of `(i, j)` in upper-triangle storage order (g11, g12, ..., gnn).
#[inline]
pub fn sym_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * dim - i * (i.saturating_sub(1)) / 2 + (j - i)
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    if let Some(k) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "{what} has a non-finite entry at index {k}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub grid: TorusGrid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        check_finite(&values, "scalar field")?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: &TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &TorusGrid, c: f64) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![c; grid.node_count()],
        }
    }

    pub fn from_fn(grid: &TorusGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.node_count())
            .map(|p| f(&grid.position(p)[..grid.dim()]))
            .collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `n` components per node. Whether the index is up or down is fixed by the
/// producing operation: flows and diffeomorphisms carry contravariant fields,
/// divergences and one-forms are covariant.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub grid: TorusGrid,
    pub data: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: TorusGrid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.node_count() * grid.dim() {
            return Err(Error::GridMismatch(format!(
                "{} vector entries for {} nodes in dimension {}",
                data.len(),
                grid.node_count(),
                grid.dim()
            )));
        }
        check_finite(&data, "vector field")?;
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: &TorusGrid) -> Self {
        Self {
            grid: grid.clone(),
            data: vec![0.0; grid.node_count() * grid.dim()],
        }
    }

    pub fn from_fn(grid: &TorusGrid, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let dim = grid.dim();
        let mut data = Vec::with_capacity(grid.node_count() * dim);
        for p in 0..grid.node_count() {
            let v = f(&grid.position(p)[..dim]);
            data.extend_from_slice(&v[..dim]);
        }
        Self {
            grid: grid.clone(),
            data,
        }
    }

    #[inline]
    pub fn at(&self, p: usize) -> &[f64] {
        let n = self.grid.dim();
        &self.data[p * n..(p + 1) * n]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Symmetric 2-tensor field with lower indices, upper triangle stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SymTensorField {
    pub grid: TorusGrid,
    pub data: Vec<f64>,
}

impl SymTensorField {
    pub fn new(grid: TorusGrid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.node_count() * grid.sym_components() {
            return Err(Error::GridMismatch(format!(
                "{} tensor entries for {} nodes with {} components",
                data.len(),
                grid.node_count(),
                grid.sym_components()
            )));
        }
        check_finite(&data, "tensor field")?;
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: &TorusGrid) -> Self {
        Self {
            grid: grid.clone(),
            data: vec![0.0; grid.node_count() * grid.sym_components()],
        }
    }

    /// The same symmetric matrix at every node.
    pub fn uniform(grid: &TorusGrid, components: &[f64]) -> Self {
        let m = grid.sym_components();
        let mut data = Vec::with_capacity(grid.node_count() * m);
        for _ in 0..grid.node_count() {
            data.extend_from_slice(&components[..m]);
        }
        Self {
            grid: grid.clone(),
            data,
        }
    }

    pub fn identity(grid: &TorusGrid) -> Self {
        let dim = grid.dim();
        let mut comps = vec![0.0; grid.sym_components()];
        for i in 0..dim {
            comps[sym_index(dim, i, i)] = 1.0;
        }
        Self::uniform(grid, &comps)
    }

    /// Build from a function of position returning upper-triangle components.
    pub fn from_fn(grid: &TorusGrid, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let m = grid.sym_components();
        let mut data = Vec::with_capacity(grid.node_count() * m);
        for p in 0..grid.node_count() {
            let v = f(&grid.position(p)[..grid.dim()]);
            data.extend_from_slice(&v[..m]);
        }
        Self {
            grid: grid.clone(),
            data,
        }
    }

    #[inline]
    pub fn at(&self, p: usize) -> &[f64] {
        let m = self.grid.sym_components();
        &self.data[p * m..(p + 1) * m]
    }

    #[inline]
    pub fn get(&self, p: usize, i: usize, j: usize) -> f64 {
        self.data[p * self.grid.sym_components() + sym_index(self.grid.dim(), i, j)]
    }

    #[inline]
    pub fn mat(&self, p: usize) -> Mat {
        nodal::from_sym(self.grid.dim(), self.at(p))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &SymTensorField) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self {
            grid: self.grid.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + s * b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &SymTensorField) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A symmetric positive definite [`SymTensorField`].
#[derive(Clone, Debug, PartialEq)]
pub struct MetricField {
    base: SymTensorField,
    spd_floor: f64,
}

impl MetricField {
    pub fn new(base: SymTensorField) -> Result<Self> {
        Self::with_floor(base, DEFAULT_SPD_FLOOR)
    }

    pub fn with_floor(base: SymTensorField, spd_floor: f64) -> Result<Self> {
        let dim = base.grid.dim();
        for p in 0..base.grid.node_count() {
            let m = nodal::from_sym(dim, base.at(p));
            let ev = nodal::min_eigenvalue(dim, &m);
            if !(ev >= spd_floor) {
                return Err(Error::SpdViolation {
                    node: p,
                    min_eigenvalue: ev,
                    floor: spd_floor,
                });
            }
        }
        Ok(Self { base, spd_floor })
    }

    /// The Euclidean metric `delta_ij`.
    pub fn flat(grid: &TorusGrid) -> Self {
        Self {
            base: SymTensorField::identity(grid),
            spd_floor: DEFAULT_SPD_FLOOR,
        }
    }

    /// Conformally flat metric `exp(2u) delta`.
    pub fn conformal(u: &ScalarField) -> Result<Self> {
        let grid = &u.grid;
        let dim = grid.dim();
        let m = grid.sym_components();
        let mut data = vec![0.0; grid.node_count() * m];
        for p in 0..grid.node_count() {
            let s = (2.0 * u.values[p]).exp();
            for i in 0..dim {
                data[p * m + sym_index(dim, i, i)] = s;
            }
        }
        Self::new(SymTensorField::new(grid.clone(), data)?)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.base.grid
    }

    pub fn tensor(&self) -> &SymTensorField {
        &self.base
    }

    pub fn into_tensor(self) -> SymTensorField {
        self.base
    }

    pub fn spd_floor(&self) -> f64 {
        self.spd_floor
    }

    #[inline]
    pub fn mat(&self, p: usize) -> Mat {
        self.base.mat(p)
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::with_floor(self.base.scaled(c), self.spd_floor)
    }
}

/// Levi-Civita connection coefficients `Gamma^k_ij`, stored per node as
/// `[k][sym(i,j)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChristoffelField {
    pub grid: TorusGrid,
    pub data: Vec<f64>,
}

impl ChristoffelField {
    pub fn stride(grid: &TorusGrid) -> usize {
        grid.dim() * grid.sym_components()
    }

    #[inline]
    pub fn get(&self, p: usize, k: usize, i: usize, j: usize) -> f64 {
        let dim = self.grid.dim();
        let m = self.grid.sym_components();
        self.data[p * dim * m + k * m + sym_index(dim, i, j)]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(TorusGrid::new(&[8, 8], &[1.0, 1.0]).is_ok());
        assert!(TorusGrid::new(&[6, 8], &[1.0, 1.0]).is_err());
        assert!(TorusGrid::new(&[9, 8], &[1.0, 1.0]).is_err());
        assert!(TorusGrid::new(&[8, 8], &[1.0, 0.0]).is_err());
        assert!(TorusGrid::new(&[8], &[1.0]).is_err());
        let g = TorusGrid::new(&[8, 10, 12], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g.node_count(), 960);
        assert_eq!(g.sym_components(), 6);
    }

    #[test]
    fn neighbors_wrap() {
        let g = TorusGrid::new(&[8, 10], &[1.0, 1.0]).unwrap();
        let p = g.index_of(&[0, 9]);
        assert_eq!(g.multi_index(g.plus(p, 1)), [0, 0, 0]);
        assert_eq!(g.multi_index(g.minus(p, 0)), [7, 9, 0]);
        assert_eq!(g.shift(p, 1, -3), g.index_of(&[0, 6]));
        // last axis fastest
        assert_eq!(g.index_of(&[1, 0]), 10);
    }

    #[test]
    fn sym_index_order() {
        assert_eq!(
            [(0, 0), (0, 1), (1, 1)].map(|(i, j)| sym_index(2, i, j)),
            [0, 1, 2]
        );
        assert_eq!(
            [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)].map(|(i, j)| sym_index(3, i, j)),
            [0, 1, 2, 3, 4, 5]
        );
        assert_eq!(sym_index(3, 2, 1), 4);
    }

    #[test]
    fn metric_rejects_indefinite() {
        let g = TorusGrid::unit(2, 8).unwrap();
        let bad = SymTensorField::uniform(&g, &[1.0, 2.0, 1.0]);
        assert!(matches!(
            MetricField::new(bad),
            Err(Error::SpdViolation { .. })
        ));
        let tiny = SymTensorField::uniform(&g, &[1e-7, 0.0, 1.0]);
        assert!(MetricField::new(tiny).is_err());
    }
}
