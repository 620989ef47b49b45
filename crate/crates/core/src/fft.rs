//! Diagonal solves in the discrete Fourier basis of a periodic grid.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::TorusGrid;

/// Multidimensional complex FFT over the node ordering of a grid.
pub(crate) struct PeriodicFft {
    resolution: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl PeriodicFft {
    pub fn new(grid: &TorusGrid) -> Self {
        let resolution = grid.resolution().to_vec();
        let mut planner = FftPlanner::new();
        let forward = resolution.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = resolution.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Self {
            resolution,
            forward,
            inverse,
        }
    }

    fn transform(&self, buf: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        let dim = self.resolution.len();
        let total = buf.len();
        let mut stride = 1;
        let mut line = Vec::new();
        for axis in (0..dim).rev() {
            let n = self.resolution[axis];
            let plan = &plans[axis];
            line.resize(n, Complex64::new(0.0, 0.0));
            let block = stride * n;
            for outer in (0..total).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for (k, v) in line.iter_mut().enumerate() {
                        *v = buf[base + k * stride];
                    }
                    plan.process(&mut line);
                    for (k, v) in line.iter().enumerate() {
                        buf[base + k * stride] = *v;
                    }
                }
            }
            stride = block;
        }
    }

    /// Forward transform of component `c` of an interleaved real array.
    pub fn forward(&self, data: &[f64], stride: usize, c: usize) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data
            .iter()
            .skip(c)
            .step_by(stride)
            .map(|&r| Complex64::new(r, 0.0))
            .collect();
        self.transform(&mut buf, &self.forward);
        buf
    }

    /// Normalized inverse transform, real part written into component `c`.
    pub fn inverse_into(&self, mut buf: Vec<Complex64>, out: &mut [f64], stride: usize, c: usize) {
        self.transform(&mut buf, &self.inverse);
        let scale = 1.0 / buf.len() as f64;
        for (o, v) in out.iter_mut().skip(c).step_by(stride).zip(&buf) {
            *o = v.re * scale;
        }
    }
}

/// Inverts a real, translation-invariant operator given by its Fourier symbol.
/// Zero symbol entries are treated as a kernel and mapped to zero.
pub(crate) struct SymbolSolver {
    fft: PeriodicFft,
    inv_symbol: Vec<f64>,
}

impl SymbolSolver {
    /// `symbol(k)` receives the integer wave numbers per axis (`0..N_i`).
    pub fn new(grid: &TorusGrid, symbol: impl Fn(&[usize]) -> f64) -> Self {
        let dim = grid.dim();
        let inv_symbol = (0..grid.node_count())
            .map(|p| {
                let s = symbol(&grid.multi_index(p)[..dim]);
                if s == 0.0 {
                    0.0
                } else {
                    1.0 / s
                }
            })
            .collect();
        Self {
            fft: PeriodicFft::new(grid),
            inv_symbol,
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut buf = self.fft.forward(rhs, 1, 0);
        for (b, s) in buf.iter_mut().zip(&self.inv_symbol) {
            *b *= *s;
        }
        let mut out = vec![0.0; rhs.len()];
        self.fft.inverse_into(buf, &mut out, 1, 0);
        out
    }
}

/// Like [`SymbolSolver`] for `n`-component fields whose symbol is a real
/// symmetric `n x n` matrix per wave vector (given already inverted).
pub(crate) struct BlockSymbolSolver {
    fft: PeriodicFft,
    components: usize,
    inv_blocks: Vec<f64>,
}

impl BlockSymbolSolver {
    pub fn new(grid: &TorusGrid, components: usize, inverse_block: impl Fn(&[usize]) -> Vec<f64>) -> Self {
        let dim = grid.dim();
        let mut inv_blocks = Vec::with_capacity(grid.node_count() * components * components);
        for p in 0..grid.node_count() {
            inv_blocks.extend(inverse_block(&grid.multi_index(p)[..dim]));
        }
        Self {
            fft: PeriodicFft::new(grid),
            components,
            inv_blocks,
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.components;
        let hat: Vec<Vec<Complex64>> = (0..n).map(|c| self.fft.forward(rhs, n, c)).collect();
        let nodes = hat[0].len();
        let mut out_hat = vec![vec![Complex64::new(0.0, 0.0); nodes]; n];
        for p in 0..nodes {
            let blk = &self.inv_blocks[p * n * n..(p + 1) * n * n];
            for a in 0..n {
                let mut s = Complex64::new(0.0, 0.0);
                for b in 0..n {
                    s += hat[b][p] * blk[a * n + b];
                }
                out_hat[a][p] = s;
            }
        }
        let mut out = vec![0.0; rhs.len()];
        for (c, buf) in out_hat.into_iter().enumerate() {
            self.fft.inverse_into(buf, &mut out, n, c);
        }
        out
    }
}
