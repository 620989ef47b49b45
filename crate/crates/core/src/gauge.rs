//! Diffeomorphisms of the torus, pullbacks, and projection onto
//! divergence-free symmetric tensors.

use crate::error::{Error, Result};
use crate::exec;
use crate::fft::BlockSymbolSolver;
use crate::geometry::{self, NodeFrame};
use crate::grid::{sym_index, MetricField, SymTensorField, TorusGrid, VectorField};
use crate::krylov;
use crate::nodal::{self, Mat};

/// A map `x -> x + d(x)` of the torus with periodic displacement `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffeoMap {
    grid: TorusGrid,
    displacement: Vec<f64>,
    jacobian_floor: f64,
}

impl DiffeoMap {
    pub fn identity(grid: &TorusGrid) -> Self {
        Self {
            grid: grid.clone(),
            displacement: vec![0.0; grid.node_count() * grid.dim()],
            jacobian_floor: 1.0,
        }
    }

    pub fn translation(grid: &TorusGrid, v: &[f64]) -> Self {
        let dim = grid.dim();
        let displacement = (0..grid.node_count() * dim).map(|k| v[k % dim]).collect();
        Self {
            grid: grid.clone(),
            displacement,
            jacobian_floor: 1.0,
        }
    }

    /// Validates that the Jacobian determinant stays positive.
    pub fn from_displacement(grid: &TorusGrid, displacement: Vec<f64>) -> Result<Self> {
        if displacement.len() != grid.node_count() * grid.dim() {
            return Err(Error::GridMismatch(format!(
                "{} displacement entries for {} nodes",
                displacement.len(),
                grid.node_count()
            )));
        }
        let mut map = Self {
            grid: grid.clone(),
            displacement,
            jacobian_floor: 0.0,
        };
        let dim = grid.dim();
        let dets = exec::map_nodes(grid.node_count(), |p| nodal::det(dim, &map.jacobian(p)));
        let (node, det) = dets
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (p, &d)| if d < acc.1 { (p, d) } else { acc });
        if !(det > 0.0) {
            return Err(Error::JacobianCollapse { node, det });
        }
        map.jacobian_floor = det;
        Ok(map)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn displacement(&self) -> &[f64] {
        &self.displacement
    }

    pub fn jacobian_floor(&self) -> f64 {
        self.jacobian_floor
    }

    /// Image of node `p`, wrapped into the fundamental domain.
    pub fn image(&self, p: usize) -> [f64; 3] {
        let dim = self.grid.dim();
        let x = self.grid.position(p);
        let mut out = [0.0; 3];
        for a in 0..dim {
            let l = self.grid.periods()[a];
            out[a] = (x[a] + self.displacement[p * dim + a]).rem_euclid(l);
        }
        out
    }

    /// Image of node `p` in fractional index coordinates, unwrapped.
    fn index_image(&self, p: usize) -> [f64; 3] {
        let dim = self.grid.dim();
        let idx = self.grid.multi_index(p);
        let h = self.grid.spacing();
        let mut s = [0.0; 3];
        for a in 0..dim {
            s[a] = idx[a] as f64 + self.displacement[p * dim + a] / h[a];
        }
        s
    }

    /// `D phi = I + D d` by central differences.
    pub fn jacobian(&self, p: usize) -> Mat {
        let dim = self.grid.dim();
        let mut j = [[0.0; 3]; 3];
        for a in 0..dim {
            for i in 0..dim {
                j[a][i] = self.grid.d1(&self.displacement, dim, a, p, i) + if a == i { 1.0 } else { 0.0 };
            }
        }
        j
    }
}

/// Periodic four-point Lagrange interpolation, tensor product over axes, at a
/// point given in fractional index coordinates.
pub(crate) fn interpolate(grid: &TorusGrid, data: &[f64], stride: usize, s: &[f64; 3], out: &mut [f64]) {
    let dim = grid.dim();
    let res = grid.resolution();
    let mut base = [0i64; 3];
    let mut weights = [[0.0; 4]; 3];
    for a in 0..dim {
        let fl = s[a].floor();
        let t = s[a] - fl;
        base[a] = fl as i64 - 1;
        weights[a] = [
            -t * (t - 1.0) * (t - 2.0) / 6.0,
            (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
            -(t + 1.0) * t * (t - 2.0) / 2.0,
            (t + 1.0) * t * (t - 1.0) / 6.0,
        ];
    }
    out.iter_mut().for_each(|o| *o = 0.0);
    let corners = 4usize.pow(dim as u32);
    let mut idx = [0usize; 3];
    for corner in 0..corners {
        let mut w = 1.0;
        let mut rem = corner;
        for a in (0..dim).rev() {
            let k = rem % 4;
            rem /= 4;
            w *= weights[a][k];
            idx[a] = (base[a] + k as i64).rem_euclid(res[a] as i64) as usize;
        }
        if w == 0.0 {
            continue;
        }
        let q = grid.index_of(&idx[..dim]);
        for (c, o) in out.iter_mut().enumerate() {
            *o += w * data[q * stride + c];
        }
    }
}

/// `X(phi(x))` for every node.
fn sample_at(field: &VectorField, positions: &[[f64; 3]]) -> Vec<f64> {
    let grid = &field.grid;
    let dim = grid.dim();
    let mut out = vec![0.0; grid.node_count() * dim];
    exec::fill_nodes(&mut out, dim, |p, o| interpolate(grid, &field.data, dim, &positions[p], o));
    out
}

/// Solves `d phi/dt = X(t, phi)` from `init` at `t0` to `t1` with `steps`
/// classical Runge-Kutta steps; `x_at(t)` supplies the contravariant field.
pub fn integrate_diffeo(
    x_at: &dyn Fn(f64) -> Result<VectorField>,
    t0: f64,
    t1: f64,
    steps: usize,
    init: &DiffeoMap,
) -> Result<DiffeoMap> {
    if !(t1 >= t0) {
        return Err(Error::InvalidArgument(format!("t1 {t1} precedes t0 {t0}")));
    }
    let grid = init.grid.clone();
    if t1 == t0 || steps == 0 {
        return Ok(init.clone());
    }
    let dim = grid.dim();
    let h: Vec<f64> = grid.spacing().to_vec();
    let n = grid.node_count();
    let dt = (t1 - t0) / steps as f64;
    let mut d = init.displacement.clone();

    let positions = |disp: &[f64]| -> Vec<[f64; 3]> {
        (0..n)
            .map(|p| {
                let idx = grid.multi_index(p);
                let mut s = [0.0; 3];
                for a in 0..dim {
                    s[a] = idx[a] as f64 + disp[p * dim + a] / h[a];
                }
                s
            })
            .collect()
    };
    let offset = |base: &[f64], k: &[f64], c: f64| -> Vec<f64> {
        base.iter().zip(k).map(|(b, ki)| b + c * ki).collect()
    };

    for s in 0..steps {
        let t = t0 + s as f64 * dt;
        let x0 = x_at(t)?;
        let xm = x_at(t + 0.5 * dt)?;
        let x1 = x_at(t + dt)?;
        for x in [&x0, &xm, &x1] {
            x.grid.check_same(&grid)?;
        }
        let k1 = sample_at(&x0, &positions(&d));
        let k2 = sample_at(&xm, &positions(&offset(&d, &k1, 0.5 * dt)));
        let k3 = sample_at(&xm, &positions(&offset(&d, &k2, 0.5 * dt)));
        let k4 = sample_at(&x1, &positions(&offset(&d, &k3, dt)));
        for i in 0..d.len() {
            d[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    DiffeoMap::from_displacement(&grid, d)
}

/// `(phi^* g)_ij = D_i phi^a D_j phi^b g_ab(phi)`.
pub fn pullback_metric(phi: &DiffeoMap, g: &MetricField) -> Result<MetricField> {
    phi.grid.check_same(g.grid())?;
    if !(phi.jacobian_floor > 0.0) {
        return Err(Error::JacobianCollapse {
            node: 0,
            det: phi.jacobian_floor,
        });
    }
    let grid = g.grid();
    let dim = grid.dim();
    let m = grid.sym_components();
    let src = &g.tensor().data;
    let mut data = vec![0.0; grid.node_count() * m];
    exec::fill_nodes(&mut data, m, |p, out| {
        let mut comps = [0.0; 6];
        interpolate(grid, src, m, &phi.index_image(p), &mut comps[..m]);
        let gm = nodal::from_sym(dim, &comps[..m]);
        let j = phi.jacobian(p);
        for i in 0..dim {
            for k in i..dim {
                let mut s = 0.0;
                for a in 0..dim {
                    for b in 0..dim {
                        s += j[a][i] * j[b][k] * gm[a][b];
                    }
                }
                out[sym_index(dim, i, k)] = s;
            }
        }
    });
    MetricField::with_floor(
        SymTensorField {
            grid: grid.clone(),
            data,
        },
        g.spd_floor(),
    )
}

const SLICE_TOL: f64 = 1e-10;
const SLICE_FLOOR: f64 = 1e-13;
const SLICE_MAX_ITERATIONS: usize = 2000;

/// Orthogonal projection onto `ker div` in `L^2(dV_g)` for a fixed
/// background metric.
///
/// Minimizes `||h - delta^* w||` over one-forms `w`, mean-zero ones when the
/// background is constant and constants are Killing. The normal equations use
/// the exact discrete adjoint of `delta^*`, which on a flat background is
/// `-m div`, so the result is divergence-free in the discrete sense.
pub struct SliceProjector {
    grid: TorusGrid,
    constant: bool,
    ginv: Vec<Mat>,
    gamma: Vec<[[[f64; 3]; 3]; 3]>,
    mass: Vec<f64>,
    precond: BlockSymbolSolver,
}

impl SliceProjector {
    pub fn new(background: &MetricField) -> Result<Self> {
        let grid = background.grid().clone();
        let dim = grid.dim();
        let cell = grid.cell_volume();
        let n = grid.node_count();
        let mut ginv = Vec::with_capacity(n);
        let mut gamma = Vec::with_capacity(n);
        let mut mass = Vec::with_capacity(n);
        for p in 0..n {
            let frame = NodeFrame::new(background, p)?;
            mass.push(nodal::det(dim, &frame.g).sqrt() * cell);
            ginv.push(frame.ginv);
            gamma.push(frame.gamma);
        }
        let m_mean = mass.iter().sum::<f64>() / n as f64;
        let h = grid.spacing().to_vec();
        let res = grid.resolution().to_vec();
        // Mean squared Christoffel size. Without it the symbol vanishes at
        // k in {0, N/2}^dim, where the Gamma terms are all that remain.
        let gamma2 = gamma
            .iter()
            .map(|gm| gm.iter().flatten().flatten().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        let constant = gamma2 == 0.0;
        let shift = m_mean * gamma2;
        // frozen flat symbol (m/2) (|s|^2 I + s s^T) + shift, pseudo-inverted
        let precond = BlockSymbolSolver::new(&grid, dim, |k| {
            let s: Vec<f64> = (0..dim)
                .map(|i| (2.0 * std::f64::consts::PI * k[i] as f64 / res[i] as f64).sin() / h[i])
                .collect();
            let s2: f64 = s.iter().map(|x| x * x).sum();
            let mut blk = vec![0.0; dim * dim];
            if s2 > 1e-12 || shift > 0.0 {
                let a = 0.5 * m_mean * s2 + shift;
                let b = 0.5 * m_mean;
                for i in 0..dim {
                    for j in 0..dim {
                        let id = if i == j { 1.0 } else { 0.0 };
                        blk[i * dim + j] = (id - b * s[i] * s[j] / (a + b * s2)) / a;
                    }
                }
            }
            blk
        });
        Ok(Self {
            grid,
            constant,
            ginv,
            gamma,
            mass,
            precond,
        })
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// `sum_p m_p <a, b>_g` for interleaved tensor data.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let dim = self.grid.dim();
        let m = self.grid.sym_components();
        let mut s = 0.0;
        for p in 0..self.grid.node_count() {
            let am = nodal::from_sym(dim, &a[p * m..(p + 1) * m]);
            let bm = nodal::from_sym(dim, &b[p * m..(p + 1) * m]);
            s += self.mass[p] * nodal::metric_pair(dim, &self.ginv[p], &am, &bm);
        }
        s
    }

    /// `delta^* w` for a covariant one-form.
    fn sym_grad(&self, w: &[f64]) -> Vec<f64> {
        let grid = &self.grid;
        let dim = grid.dim();
        let m = grid.sym_components();
        let mut out = vec![0.0; grid.node_count() * m];
        exec::fill_nodes(&mut out, m, |p, o| {
            let gam = &self.gamma[p];
            for i in 0..dim {
                for j in i..dim {
                    let mut s = 0.5 * (grid.d1(w, dim, j, p, i) + grid.d1(w, dim, i, p, j));
                    for k in 0..dim {
                        s -= gam[k][i][j] * w[p * dim + k];
                    }
                    o[sym_index(dim, i, j)] = s;
                }
            }
        });
        out
    }

    /// Euclidean adjoint of `sym_grad` with respect to [`Self::inner`].
    fn adjoint(&self, h: &[f64]) -> Vec<f64> {
        let grid = &self.grid;
        let dim = grid.dim();
        let m = grid.sym_components();
        let n = grid.node_count();
        // H^{ij} = m g^{ia} g^{jb} h_ab, stored full
        let mut raised = vec![0.0; n * dim * dim];
        exec::fill_nodes(&mut raised, dim * dim, |p, o| {
            let hm = nodal::from_sym(dim, &h[p * m..(p + 1) * m]);
            let gi = &self.ginv[p];
            let up = nodal::matmul(dim, &nodal::matmul(dim, gi, &hm), gi);
            for i in 0..dim {
                for j in 0..dim {
                    o[i * dim + j] = self.mass[p] * up[i][j];
                }
            }
        });
        let mut out = vec![0.0; n * dim];
        exec::fill_nodes(&mut out, dim, |p, o| {
            let gam = &self.gamma[p];
            for k in 0..dim {
                let mut s = 0.0;
                for i in 0..dim {
                    s -= grid.d1(&raised, dim * dim, i * dim + k, p, i);
                    for j in 0..dim {
                        s -= gam[k][i][j] * raised[p * dim * dim + i * dim + j];
                    }
                }
                o[k] = s;
            }
        });
        out
    }

    fn remove_mean(&self, w: &mut [f64]) {
        if !self.constant {
            return;
        }
        let dim = self.grid.dim();
        let n = self.grid.node_count() as f64;
        for c in 0..dim {
            let mean = w.iter().skip(c).step_by(dim).sum::<f64>() / n;
            w.iter_mut().skip(c).step_by(dim).for_each(|x| *x -= mean);
        }
    }

    /// Returns `(h - delta^* w, w)`.
    pub fn project(&self, h: &SymTensorField) -> Result<(SymTensorField, VectorField)> {
        h.grid.check_same(&self.grid)?;
        let mut b = self.adjoint(&h.data);
        self.remove_mean(&mut b);
        let b_norm = krylov::dot(&b, &b).sqrt();
        // size of delta^*-adjoint applied to h, bounding what rounding can resolve
        let m_max = self.mass.iter().cloned().fold(0.0, f64::max);
        let inv_h: f64 = self.grid.spacing().iter().map(|h| 1.0 / h).sum();
        let scale = m_max * inv_h * krylov::dot(&h.data, &h.data).sqrt();
        let tol = (SLICE_TOL * b_norm).max(SLICE_FLOOR * scale);
        let zero = vec![0.0; b.len()];
        let w = if b_norm <= tol {
            zero
        } else {
            let apply = |w: &[f64]| {
                let mut out = self.adjoint(&self.sym_grad(w));
                self.remove_mean(&mut out);
                out
            };
            let precondition = |r: &[f64]| {
                let mut z = self.precond.solve(r);
                self.remove_mean(&mut z);
                z
            };
            let solve = krylov::pcg(
                apply,
                precondition,
                |r| krylov::dot(r, r).sqrt(),
                &b,
                zero,
                tol,
                SLICE_MAX_ITERATIONS,
            );
            if !solve.converged {
                return Err(Error::SolverStall {
                    iterations: solve.iterations,
                    residual: solve.residual / b_norm,
                });
            }
            solve.x
        };
        let dw = self.sym_grad(&w);
        let data = h.data.iter().zip(&dw).map(|(a, b)| a - b).collect();
        Ok((
            SymTensorField {
                grid: self.grid.clone(),
                data,
            },
            VectorField {
                grid: self.grid.clone(),
                data: w,
            },
        ))
    }
}

/// Splits `h` into a divergence-free part and a pure-gauge part `delta^* w`.
pub fn slice_project(h: &SymTensorField, background: &MetricField) -> Result<(SymTensorField, VectorField)> {
    SliceProjector::new(background)?.project(h)
}

/// `L^2` norm of the covariant divergence, a convenience for checks.
pub fn divergence_norm(h: &SymTensorField, g: &MetricField) -> Result<f64> {
    let div = geometry::divergence_sym(h, g)?;
    let cell = g.grid().cell_volume();
    Ok((krylov::dot(&div.data, &div.data) * cell).sqrt())
}
