//! Discrete tensor calculus on a periodic grid.
//!
//! All derivatives are second-order: central differences for first
//! derivatives, the compact three-point stencil for pure second derivatives
//! and products of central differences for mixed ones. The scalar Laplacian is
//! assembled in divergence form with face-averaged coefficients so that it is
//! exactly symmetric in the discrete `L^2(dV_g)` inner product.

use crate::error::{Error, Result};
use crate::exec;
use crate::grid::{
    sym_index, ChristoffelField, MetricField, ScalarField, SymTensorField, TorusGrid, VectorField,
};
use crate::nodal::{self, Mat};

pub(crate) type Tensor3 = [[[f64; 3]; 3]; 3];

/// Metric data and connection at a single node.
pub(crate) struct NodeFrame {
    pub g: Mat,
    pub ginv: Mat,
    /// `dg[a][i][j] = d_a g_ij`
    pub dg: Tensor3,
    /// `gamma[k][i][j] = Gamma^k_ij`
    pub gamma: Tensor3,
}

impl NodeFrame {
    pub fn new(metric: &MetricField, p: usize) -> Result<Self> {
        let grid = metric.grid();
        let dim = grid.dim();
        let m = grid.sym_components();
        let data = &metric.tensor().data;
        let g = metric.mat(p);
        let ginv = nodal::spd_inverse(dim, &g).ok_or_else(|| spd_error(metric, p))?;
        let mut dg = [[[0.0; 3]; 3]; 3];
        for a in 0..dim {
            for i in 0..dim {
                for j in i..dim {
                    let v = grid.d1(data, m, sym_index(dim, i, j), p, a);
                    dg[a][i][j] = v;
                    dg[a][j][i] = v;
                }
            }
        }
        let lower = lower_christoffel(dim, &dg);
        let gamma = raise_first(dim, &ginv, &lower);
        Ok(Self { g, ginv, dg, gamma })
    }
}

pub(crate) fn spd_error(metric: &MetricField, p: usize) -> Error {
    let dim = metric.grid().dim();
    Error::SpdViolation {
        node: p,
        min_eigenvalue: nodal::min_eigenvalue(dim, &metric.mat(p)),
        floor: metric.spd_floor(),
    }
}

/// `Gamma_{l,ij} = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)`, indexed `[l][i][j]`.
#[inline]
fn lower_christoffel(dim: usize, dg: &Tensor3) -> Tensor3 {
    let mut out = [[[0.0; 3]; 3]; 3];
    for l in 0..dim {
        for i in 0..dim {
            for j in 0..dim {
                out[l][i][j] = 0.5 * (dg[i][j][l] + dg[j][i][l] - dg[l][i][j]);
            }
        }
    }
    out
}

#[inline]
fn raise_first(dim: usize, ginv: &Mat, lower: &Tensor3) -> Tensor3 {
    let mut out = [[[0.0; 3]; 3]; 3];
    for k in 0..dim {
        for i in 0..dim {
            for j in 0..dim {
                let mut s = 0.0;
                for l in 0..dim {
                    s += ginv[k][l] * lower[l][i][j];
                }
                out[k][i][j] = s;
            }
        }
    }
    out
}

/// Ricci tensor at one node from the metric, its first and second
/// differences. The derivatives of the Christoffel symbols are expanded
/// analytically so that pure second derivatives of `g` use the compact
/// stencil.
fn ricci_at(metric: &MetricField, p: usize) -> Result<(NodeFrame, Mat)> {
    let frame = NodeFrame::new(metric, p)?;
    let grid = metric.grid();
    let dim = grid.dim();
    let m = grid.sym_components();
    let data = &metric.tensor().data;

    // ddg[a][b][i][j] = d_a d_b g_ij
    let mut ddg = [[[[0.0; 3]; 3]; 3]; 3];
    for a in 0..dim {
        for b in a..dim {
            for i in 0..dim {
                for j in i..dim {
                    let v = grid.d2(data, m, sym_index(dim, i, j), p, a, b);
                    ddg[a][b][i][j] = v;
                    ddg[a][b][j][i] = v;
                    ddg[b][a][i][j] = v;
                    ddg[b][a][j][i] = v;
                }
            }
        }
    }
    let NodeFrame { ginv, dg, gamma, .. } = &frame;
    let lower = lower_christoffel(dim, dg);

    // d_a g^{kl} = -g^{kc} g^{ld} d_a g_cd
    let mut dginv = [[[0.0; 3]; 3]; 3];
    for a in 0..dim {
        let t = nodal::matmul(dim, ginv, &dg[a]);
        let t = nodal::matmul(dim, &t, ginv);
        for k in 0..dim {
            for l in 0..dim {
                dginv[a][k][l] = -t[k][l];
            }
        }
    }

    // d_a Gamma^k_ij
    let d_gamma = |a: usize, k: usize, i: usize, j: usize| -> f64 {
        let mut s = 0.0;
        for l in 0..dim {
            let d_lower = 0.5 * (ddg[a][i][j][l] + ddg[a][j][i][l] - ddg[a][l][i][j]);
            s += ginv[k][l] * d_lower + dginv[a][k][l] * lower[l][i][j];
        }
        s
    };

    let mut ric = [[0.0; 3]; 3];
    for i in 0..dim {
        for j in i..dim {
            let mut s = 0.0;
            for k in 0..dim {
                s += d_gamma(k, k, i, j) - d_gamma(i, k, k, j);
                for l in 0..dim {
                    s += gamma[k][k][l] * gamma[l][i][j] - gamma[k][i][l] * gamma[l][k][j];
                }
            }
            ric[i][j] = s;
            ric[j][i] = s;
        }
    }
    Ok((frame, ric))
}

/// Fills a freshly allocated array of `stride` values per node, propagating
/// the first nodal error.
pub(crate) fn nodewise<F>(grid: &TorusGrid, stride: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync + Send,
{
    let mut out = vec![0.0; grid.node_count() * stride];
    let failure = std::sync::Mutex::new(None::<(usize, Error)>);
    exec::fill_nodes(&mut out, stride, |p, chunk| {
        if let Err(e) = f(p, chunk) {
            let mut slot = failure.lock().unwrap();
            // keep the lowest node index so the reported error is deterministic
            if slot.as_ref().is_none_or(|(q, _)| p < *q) {
                *slot = Some((p, e));
            }
        }
    });
    match failure.into_inner().unwrap() {
        Some((_, e)) => Err(e),
        None => Ok(out),
    }
}

pub fn metric_inverse(g: &MetricField) -> Result<SymTensorField> {
    let grid = g.grid();
    let dim = grid.dim();
    let data = nodewise(grid, grid.sym_components(), |p, out| {
        let inv = nodal::spd_inverse(dim, &g.mat(p)).ok_or_else(|| spd_error(g, p))?;
        nodal::to_sym(dim, &inv, out);
        Ok(())
    })?;
    Ok(SymTensorField {
        grid: grid.clone(),
        data,
    })
}

/// `sqrt(det g)` at every node.
pub fn volume_density(g: &MetricField) -> ScalarField {
    let grid = g.grid();
    let dim = grid.dim();
    ScalarField {
        grid: grid.clone(),
        values: exec::map_nodes(grid.node_count(), |p| nodal::det(dim, &g.mat(p)).sqrt()),
    }
}

pub fn christoffel(g: &MetricField) -> Result<ChristoffelField> {
    let grid = g.grid();
    let dim = grid.dim();
    let m = grid.sym_components();
    let data = nodewise(grid, ChristoffelField::stride(grid), |p, out| {
        let frame = NodeFrame::new(g, p)?;
        for k in 0..dim {
            for i in 0..dim {
                for j in i..dim {
                    out[k * m + sym_index(dim, i, j)] = frame.gamma[k][i][j];
                }
            }
        }
        Ok(())
    })?;
    Ok(ChristoffelField {
        grid: grid.clone(),
        data,
    })
}

pub fn ricci(g: &MetricField) -> Result<SymTensorField> {
    let grid = g.grid();
    let dim = grid.dim();
    let data = nodewise(grid, grid.sym_components(), |p, out| {
        let (_, ric) = ricci_at(g, p)?;
        nodal::to_sym(dim, &ric, out);
        Ok(())
    })?;
    Ok(SymTensorField {
        grid: grid.clone(),
        data,
    })
}

pub fn scalar_curvature(g: &MetricField) -> Result<ScalarField> {
    let grid = g.grid();
    let dim = grid.dim();
    let values = nodewise(grid, 1, |p, out| {
        let (frame, ric) = ricci_at(g, p)?;
        out[0] = nodal::contract(dim, &frame.ginv, &ric);
        Ok(())
    })?;
    Ok(ScalarField {
        grid: grid.clone(),
        values,
    })
}

/// Largest pointwise norm `|Ric|_g` over the grid.
pub fn max_tensor_norm(t: &SymTensorField, g: &MetricField) -> Result<f64> {
    t.grid.check_same(g.grid())?;
    let dim = t.grid.dim();
    let ginv = metric_inverse(g)?;
    let norms = exec::map_nodes(t.grid.node_count(), |p| {
        let a = t.mat(p);
        nodal::metric_pair(dim, &ginv.mat(p), &a, &a).max(0.0).sqrt()
    });
    Ok(norms.into_iter().fold(0.0, f64::max))
}

/// `Hess_ij f = d_i d_j f - Gamma^k_ij d_k f`.
pub fn hessian(f: &ScalarField, g: &MetricField) -> Result<SymTensorField> {
    f.grid.check_same(g.grid())?;
    let grid = g.grid();
    let dim = grid.dim();
    let data = nodewise(grid, grid.sym_components(), |p, out| {
        let frame = NodeFrame::new(g, p)?;
        let mut df = [0.0; 3];
        for k in 0..dim {
            df[k] = grid.d1(&f.values, 1, 0, p, k);
        }
        for i in 0..dim {
            for j in i..dim {
                let mut s = grid.d2(&f.values, 1, 0, p, i, j);
                for k in 0..dim {
                    s -= frame.gamma[k][i][j] * df[k];
                }
                out[sym_index(dim, i, j)] = s;
            }
        }
        Ok(())
    })?;
    Ok(SymTensorField {
        grid: grid.clone(),
        data,
    })
}

/// Gradient `g^{ij} d_j f` (contravariant).
pub fn gradient(f: &ScalarField, g: &MetricField) -> Result<VectorField> {
    f.grid.check_same(g.grid())?;
    let grid = g.grid();
    let dim = grid.dim();
    let data = nodewise(grid, dim, |p, out| {
        let ginv = nodal::spd_inverse(dim, &g.mat(p)).ok_or_else(|| spd_error(g, p))?;
        let mut df = [0.0; 3];
        for k in 0..dim {
            df[k] = grid.d1(&f.values, 1, 0, p, k);
        }
        for i in 0..dim {
            out[i] = (0..dim).map(|j| ginv[i][j] * df[j]).sum();
        }
        Ok(())
    })?;
    Ok(VectorField {
        grid: grid.clone(),
        data,
    })
}

/// `(div h)_j = g^{ik} nabla_i h_kj`, a covariant vector field.
pub fn divergence_sym(h: &SymTensorField, g: &MetricField) -> Result<VectorField> {
    h.grid.check_same(g.grid())?;
    let grid = g.grid();
    let dim = grid.dim();
    let m = grid.sym_components();
    let data = nodewise(grid, dim, |p, out| {
        let frame = NodeFrame::new(g, p)?;
        let hm = h.mat(p);
        for j in 0..dim {
            let mut s = 0.0;
            for i in 0..dim {
                for k in 0..dim {
                    let gik = frame.ginv[i][k];
                    if gik == 0.0 {
                        continue;
                    }
                    let mut cov = grid.d1(&h.data, m, sym_index(dim, k, j), p, i);
                    for l in 0..dim {
                        cov -= frame.gamma[l][i][k] * hm[l][j] + frame.gamma[l][i][j] * hm[k][l];
                    }
                    s += gik * cov;
                }
            }
            out[j] = s;
        }
        Ok(())
    })?;
    Ok(VectorField {
        grid: grid.clone(),
        data,
    })
}

/// Symmetrized covariant derivative `(delta^* w)_ij = 1/2 (nabla_i w_j + nabla_j w_i)`
/// of a covariant vector field.
pub fn sym_gradient(w: &VectorField, g: &MetricField) -> Result<SymTensorField> {
    w.grid.check_same(g.grid())?;
    let grid = g.grid();
    let dim = grid.dim();
    let data = nodewise(grid, grid.sym_components(), |p, out| {
        let frame = NodeFrame::new(g, p)?;
        let wp = w.at(p);
        for i in 0..dim {
            for j in i..dim {
                let mut s = 0.5 * (grid.d1(&w.data, dim, j, p, i) + grid.d1(&w.data, dim, i, p, j));
                for k in 0..dim {
                    s -= frame.gamma[k][i][j] * wp[k];
                }
                out[sym_index(dim, i, j)] = s;
            }
        }
        Ok(())
    })?;
    Ok(SymTensorField {
        grid: grid.clone(),
        data,
    })
}

/// Divergence-form Laplacian coefficients `a^{ij} = sqrt(g) g^{ij}` and the
/// density `sqrt(g)`, reusable across many applications.
#[derive(Clone, Debug)]
pub(crate) struct DivergenceLaplacian {
    pub grid: TorusGrid,
    pub coef: Vec<f64>,
    pub density: Vec<f64>,
}

impl DivergenceLaplacian {
    pub fn new(g: &MetricField) -> Result<Self> {
        let grid = g.grid();
        let dim = grid.dim();
        let m = grid.sym_components();
        let both = nodewise(grid, m + 1, |p, out| {
            let gm = g.mat(p);
            let ginv = nodal::spd_inverse(dim, &gm).ok_or_else(|| spd_error(g, p))?;
            let sq = nodal::det(dim, &gm).sqrt();
            for i in 0..dim {
                for j in i..dim {
                    out[sym_index(dim, i, j)] = sq * ginv[i][j];
                }
            }
            out[m] = sq;
            Ok(())
        })?;
        let mut coef = Vec::with_capacity(grid.node_count() * m);
        let mut density = Vec::with_capacity(grid.node_count());
        for chunk in both.chunks(m + 1) {
            coef.extend_from_slice(&chunk[..m]);
            density.push(chunk[m]);
        }
        Ok(Self {
            grid: grid.clone(),
            coef,
            density,
        })
    }

    /// `sum_i D_i^-(abar^ii D_i^+ u) + sum_{i!=j} Dc_i(a^ij Dc_j u)`, i.e.
    /// `sqrt(g) Lap_g u`.
    pub fn divergence_term(&self, u: &[f64]) -> Vec<f64> {
        let grid = &self.grid;
        let dim = grid.dim();
        let m = grid.sym_components();
        let h = grid.spacing();
        let coef = &self.coef;
        // F_i = sum_{j != i} a^ij Dc_j u
        let flux = {
            let mut flux = vec![0.0; grid.node_count() * dim];
            exec::fill_nodes(&mut flux, dim, |p, out| {
                for i in 0..dim {
                    let mut s = 0.0;
                    for j in 0..dim {
                        if j != i {
                            s += coef[p * m + sym_index(dim, i, j)] * grid.d1(u, 1, 0, p, j);
                        }
                    }
                    out[i] = s;
                }
            });
            flux
        };
        let mut out = vec![0.0; grid.node_count()];
        exec::fill_nodes(&mut out, 1, |p, o| {
            let mut s = 0.0;
            for i in 0..dim {
                let c = sym_index(dim, i, i);
                let pp = grid.plus(p, i);
                let pm = grid.minus(p, i);
                let a_plus = 0.5 * (coef[p * m + c] + coef[pp * m + c]);
                let a_minus = 0.5 * (coef[p * m + c] + coef[pm * m + c]);
                s += (a_plus * (u[pp] - u[p]) - a_minus * (u[p] - u[pm])) / (h[i] * h[i]);
                if dim > 1 {
                    s += (flux[pp * dim + i] - flux[pm * dim + i]) / (2.0 * h[i]);
                }
            }
            o[0] = s;
        });
        out
    }

    pub fn laplacian(&self, u: &[f64]) -> Vec<f64> {
        let mut out = self.divergence_term(u);
        for (o, d) in out.iter_mut().zip(&self.density) {
            *o /= d;
        }
        out
    }
}

pub fn laplace_beltrami(u: &ScalarField, g: &MetricField) -> Result<ScalarField> {
    u.grid.check_same(g.grid())?;
    let lap = DivergenceLaplacian::new(g)?;
    Ok(ScalarField {
        grid: g.grid().clone(),
        values: lap.laplacian(&u.values),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LichnerowiczVariant {
    /// `Lap + 2 Rm`
    Lichnerowicz,
    /// `1/2 Lap + Rm`, the linearization of the lambda-gradient.
    HalfLinearization,
}

/// Rough Laplacian plus curvature action on symmetric 2-tensors.
///
/// The rough Laplacian is the scalar divergence-form Laplacian applied to each
/// component plus connection corrections; on a flat background only the
/// componentwise part survives.
pub fn lichnerowicz_apply(
    h: &SymTensorField,
    g: &MetricField,
    variant: LichnerowiczVariant,
) -> Result<SymTensorField> {
    h.grid.check_same(g.grid())?;
    let grid = g.grid();
    let dim = grid.dim();
    let m = grid.sym_components();
    let n = grid.node_count();
    let lap = DivergenceLaplacian::new(g)?;

    // componentwise scalar Laplacian
    let mut comp = vec![0.0; n];
    let mut rough = vec![0.0; n * m];
    for c in 0..m {
        for p in 0..n {
            comp[p] = h.data[p * m + c];
        }
        let lc = lap.laplacian(&comp);
        for p in 0..n {
            rough[p * m + c] = lc[p];
        }
    }

    let gamma = christoffel(g)?;
    let curved = gamma.max_abs() > 0.0;
    let ric = ricci(g)?;
    let has_curvature = ric.max_abs() > 0.0;

    // C_lij = Gamma^q_li h_qj + Gamma^q_lj h_iq, stored [l][sym(i,j)]
    let corr_c = if curved {
        Some(nodewise(grid, dim * m, |p, out| {
            let hm = h.mat(p);
            for l in 0..dim {
                for i in 0..dim {
                    for j in i..dim {
                        let mut s = 0.0;
                        for q in 0..dim {
                            s += gamma.get(p, q, l, i) * hm[q][j] + gamma.get(p, q, l, j) * hm[i][q];
                        }
                        out[l * m + sym_index(dim, i, j)] = s;
                    }
                }
            }
            Ok(())
        })?)
    } else {
        None
    };

    let scale = match variant {
        LichnerowiczVariant::Lichnerowicz => 1.0,
        LichnerowiczVariant::HalfLinearization => 0.5,
    };

    let data = nodewise(grid, m, |p, out| {
        let hm = h.mat(p);
        let mut total = [[0.0; 3]; 3];
        for i in 0..dim {
            for j in 0..dim {
                total[i][j] = rough[p * m + sym_index(dim, i, j)];
            }
        }
        if let Some(cc) = &corr_c {
            let frame = NodeFrame::new(g, p)?;
            let ginv = &frame.ginv;
            let gam = &frame.gamma;
            let stride = dim * m;
            // nabla_l h_ij
            let mut cov = [[[0.0; 3]; 3]; 3];
            for l in 0..dim {
                for i in 0..dim {
                    for j in 0..dim {
                        let c = sym_index(dim, i, j);
                        cov[l][i][j] = grid.d1(&h.data, m, c, p, l) - cc[p * stride + l * m + c];
                    }
                }
            }
            for i in 0..dim {
                for j in 0..dim {
                    let c = sym_index(dim, i, j);
                    let mut s = 0.0;
                    for k in 0..dim {
                        for l in 0..dim {
                            let gkl = ginv[k][l];
                            if gkl == 0.0 {
                                continue;
                            }
                            let mut t = -grid.d1(cc, stride, l * m + c, p, k);
                            for q in 0..dim {
                                t += gam[q][k][l] * cc[p * stride + q * m + c];
                                t -= gam[q][k][i] * cov[l][q][j] + gam[q][k][j] * cov[l][i][q];
                            }
                            s += gkl * t;
                        }
                    }
                    total[i][j] += s;
                }
            }
        }
        let mut result = [[0.0; 3]; 3];
        for i in 0..dim {
            for j in 0..dim {
                result[i][j] = scale * total[i][j];
            }
        }
        if has_curvature {
            let rm = curvature_action(dim, &g.mat(p), &ric.mat(p), &hm)?;
            for i in 0..dim {
                for j in 0..dim {
                    result[i][j] += 2.0 * scale * rm[i][j];
                }
            }
        }
        nodal::to_sym(dim, &result, out);
        Ok(())
    })?;
    Ok(SymTensorField {
        grid: grid.clone(),
        data,
    })
}

/// `Rm(h)_ij = R_ikjl h^kl`, with the Riemann tensor rebuilt from Ricci
/// (exact in dimensions 2 and 3, where the Weyl tensor vanishes).
fn curvature_action(dim: usize, g: &Mat, ric: &Mat, h: &Mat) -> Result<Mat> {
    let ginv = nodal::spd_inverse(dim, g).ok_or(Error::SpdViolation {
        node: 0,
        min_eigenvalue: nodal::min_eigenvalue(dim, g),
        floor: 0.0,
    })?;
    let scal = nodal::contract(dim, &ginv, ric);
    let h_up = nodal::matmul(dim, &nodal::matmul(dim, &ginv, h), &ginv);
    let tr_h = nodal::contract(dim, &ginv, h);
    let mut out = [[0.0; 3]; 3];
    if dim == 2 {
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = 0.5 * scal * (g[i][j] * tr_h - h[i][j]);
            }
        }
        return Ok(out);
    }
    let ric_h = nodal::contract(dim, ric, &h_up);
    let hgr = nodal::matmul(dim, &nodal::matmul(dim, h, &ginv), ric);
    let rgh = nodal::matmul(dim, &nodal::matmul(dim, ric, &ginv), h);
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = g[i][j] * ric_h - hgr[i][j] - rgh[i][j] + tr_h * ric[i][j]
                - 0.5 * scal * (g[i][j] * tr_h - h[i][j]);
        }
    }
    Ok(out)
}

/// Fields that can be paired pointwise with a metric.
pub trait MetricPairing: Sync {
    fn grid(&self) -> &TorusGrid;
    fn pair_at(&self, other: &Self, p: usize, ginv: &Mat) -> f64;
}

impl MetricPairing for ScalarField {
    fn grid(&self) -> &TorusGrid {
        &self.grid
    }
    fn pair_at(&self, other: &Self, p: usize, _ginv: &Mat) -> f64 {
        self.values[p] * other.values[p]
    }
}

impl MetricPairing for SymTensorField {
    fn grid(&self) -> &TorusGrid {
        &self.grid
    }
    fn pair_at(&self, other: &Self, p: usize, ginv: &Mat) -> f64 {
        nodal::metric_pair(self.grid.dim(), ginv, &self.mat(p), &other.mat(p))
    }
}

/// `sum_p <a,b>_g e^{-f} sqrt(det g) prod h_i`, summed in node order.
pub fn inner_weighted<T: MetricPairing>(
    a: &T,
    b: &T,
    g: &MetricField,
    f: Option<&ScalarField>,
) -> Result<f64> {
    a.grid().check_same(g.grid())?;
    b.grid().check_same(g.grid())?;
    if let Some(f) = f {
        f.grid.check_same(g.grid())?;
    }
    let grid = g.grid();
    let dim = grid.dim();
    let terms = exec::map_nodes(grid.node_count(), |p| {
        let gm = g.mat(p);
        let ginv = nodal::spd_inverse(dim, &gm)?;
        let w = f.map_or(1.0, |f| (-f.values[p]).exp());
        Some(a.pair_at(b, p, &ginv) * w * nodal::det(dim, &gm).sqrt())
    });
    let mut s = 0.0;
    for (p, t) in terms.into_iter().enumerate() {
        s += t.ok_or_else(|| spd_error(g, p))?;
    }
    Ok(s * grid.cell_volume())
}

pub fn norm_weighted<T: MetricPairing>(
    a: &T,
    g: &MetricField,
    f: Option<&ScalarField>,
) -> Result<f64> {
    Ok(inner_weighted(a, a, g, f)?.max(0.0).sqrt())
}

/// Discrete stand-in for a `C^k` norm: the sum over orders `0..=k` of the
/// largest absolute central-difference derivative of any component.
pub fn norm_ck_proxy(a: &SymTensorField, k: usize) -> f64 {
    let grid = &a.grid;
    let dim = grid.dim();
    let m = grid.sym_components();
    // derivative fields of the current order, each tagged with the last axis
    // differentiated so every unordered multi-index appears once
    let mut level: Vec<(usize, Vec<f64>)> = vec![(0, a.data.clone())];
    let mut total = a.max_abs();
    for _ in 0..k {
        let mut next = Vec::new();
        for (first_axis, field) in &level {
            for axis in *first_axis..dim {
                let mut d = vec![0.0; field.len()];
                exec::fill_nodes(&mut d, m, |p, out| {
                    for (c, o) in out.iter_mut().enumerate() {
                        *o = grid.d1(field, m, c, p, axis);
                    }
                });
                next.push((axis, d));
            }
        }
        let order_max = next
            .iter()
            .flat_map(|(_, f)| f.iter())
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        total += order_max;
        level = next;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn conformal_metric(n: usize, amp: f64) -> (TorusGrid, ScalarField, MetricField) {
        let grid = TorusGrid::unit(2, n).unwrap();
        let u = ScalarField::from_fn(&grid, |x| amp * (2.0 * PI * x[0]).sin());
        let g = MetricField::conformal(&u).unwrap();
        (grid, u, g)
    }

    fn wavy_metric(grid: &TorusGrid) -> MetricField {
        MetricField::new(SymTensorField::from_fn(grid, |x| {
            let (s, c) = ((2.0 * PI * x[0]).sin(), (2.0 * PI * x[1]).cos());
            vec![1.0 + 0.1 * s * c, 0.05 * (2.0 * PI * (x[0] + x[1])).sin(), 1.0 - 0.08 * c]
        }))
        .unwrap()
    }

    #[test]
    fn inverse_identity_and_scaling() {
        let grid = TorusGrid::unit(2, 8).unwrap();
        let flat = MetricField::flat(&grid);
        assert_eq!(metric_inverse(&flat).unwrap(), SymTensorField::identity(&grid));
        let four = flat.scaled(4.0).unwrap();
        let inv = metric_inverse(&four).unwrap();
        assert!(inv.data.iter().zip(&SymTensorField::identity(&grid).data).all(|(a, b)| *a == b / 4.0));
    }

    #[test]
    fn flat_and_constant_metrics_have_no_connection_or_curvature() {
        let grid = TorusGrid::unit(2, 8).unwrap();
        for comps in [[1.0, 0.0, 1.0], [2.0, 0.0, 0.5], [1.5, 0.3, 0.7]] {
            let g = MetricField::new(SymTensorField::uniform(&grid, &comps)).unwrap();
            assert_eq!(christoffel(&g).unwrap().max_abs(), 0.0);
            assert_eq!(ricci(&g).unwrap().max_abs(), 0.0);
            assert_eq!(scalar_curvature(&g).unwrap().max_abs(), 0.0);
        }
    }

    #[test]
    fn conformal_christoffel_converges_at_second_order() {
        let err = |n: usize| {
            let (grid, _, g) = conformal_metric(n, 0.1);
            let gam = christoffel(&g).unwrap();
            let mut e = 0.0f64;
            for p in 0..grid.node_count() {
                let x = grid.position(p)[0];
                let du = 0.1 * 2.0 * PI * (2.0 * PI * x).cos();
                e = e
                    .max((gam.get(p, 0, 0, 0) - du).abs())
                    .max((gam.get(p, 0, 1, 1) + du).abs())
                    .max((gam.get(p, 1, 0, 1) - du).abs())
                    .max(gam.get(p, 1, 0, 0).abs());
            }
            e
        };
        let (e1, e2) = (err(16), err(32));
        let order = (e1 / e2).log2();
        assert!(order > 1.9, "order {order}");
    }

    #[test]
    fn conformal_scalar_curvature_matches_closed_form() {
        // R = -2 e^{-2u} Lap u for g = e^{2u} delta
        let err = |n: usize| {
            let (grid, u, g) = conformal_metric(n, 0.1);
            let r = scalar_curvature(&g).unwrap();
            let ric = ricci(&g).unwrap();
            let mut e = 0.0f64;
            for p in 0..grid.node_count() {
                let x = grid.position(p)[0];
                let lap_u = -0.1 * 4.0 * PI * PI * (2.0 * PI * x).sin();
                let exact = -2.0 * (-2.0 * u.values[p]).exp() * lap_u;
                e = e.max((r.values[p] - exact).abs());
                // Ric = -(Lap u) delta
                e = e.max((ric.get(p, 0, 0) + lap_u).abs()).max(ric.get(p, 0, 1).abs());
            }
            e
        };
        let order = (err(16) / err(32)).log2();
        assert!(order > 1.9, "order {order}");
    }

    #[test]
    fn ricci_is_scale_invariant() {
        let grid = TorusGrid::unit(2, 16).unwrap();
        let g = wavy_metric(&grid);
        let r1 = ricci(&g).unwrap();
        let r2 = ricci(&g.scaled(3.7).unwrap()).unwrap();
        let scale = r1.max_abs();
        for (a, b) in r1.data.iter().zip(&r2.data) {
            assert!((a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn hessian_flat_is_plain_second_difference() {
        let grid = TorusGrid::unit(2, 16).unwrap();
        let flat = MetricField::flat(&grid);
        let f = ScalarField::from_fn(&grid, |x| (2.0 * PI * x[0]).sin());
        let hess = hessian(&f, &flat).unwrap();
        let h = grid.spacing()[0];
        for p in 0..grid.node_count() {
            let (pp, pm) = (grid.plus(p, 0), grid.minus(p, 0));
            let expect = (f.values[pp] - 2.0 * f.values[p] + f.values[pm]) / (h * h);
            assert_eq!(hess.get(p, 0, 0), expect);
            assert_eq!(hess.get(p, 0, 1), 0.0);
            assert_eq!(hess.get(p, 1, 1), 0.0);
        }
        let c = ScalarField::constant(&grid, 2.5);
        assert_eq!(hessian(&c, &wavy_metric(&grid)).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn laplacian_fourier_symbol() {
        let grid = TorusGrid::unit(2, 32).unwrap();
        let flat = MetricField::flat(&grid);
        let u = ScalarField::from_fn(&grid, |x| (2.0 * PI * x[0]).sin());
        let lu = laplace_beltrami(&u, &flat).unwrap();
        let h = grid.spacing()[0];
        let symbol = -(2.0 / h).powi(2) * (PI * h).sin().powi(2);
        for p in 0..grid.node_count() {
            assert!((lu.values[p] - symbol * u.values[p]).abs() < 1e-10);
        }
        assert!((symbol + 4.0 * PI * PI).abs() < 0.02 * 4.0 * PI * PI);
        let c = ScalarField::constant(&grid, 3.0);
        assert_eq!(laplace_beltrami(&c, &wavy_metric(&grid)).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn curvature_action_traces_to_ricci() {
        // contracting R_ikjl with g^{kl}, i.e. Rm(g) = Ric
        let g = [[1.2, 0.1, 0.05], [0.1, 0.9, 0.02], [0.05, 0.02, 1.1]];
        let ric = [[0.3, -0.1, 0.2], [-0.1, 0.5, 0.0], [0.2, 0.0, -0.4]];
        let out = curvature_action(3, &g, &ric, &g).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((out[i][j] - ric[i][j]).abs() < 1e-14);
            }
        }
        let g2 = [[1.2, 0.1, 0.0], [0.1, 0.9, 0.0], [0.0; 3]];
        let ric2 = [[0.6, 0.05, 0.0], [0.05, 0.45, 0.0], [0.0; 3]]; // = (R/2) g with R=1
        let out = curvature_action(2, &g2, &ric2, &g2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((out[i][j] - ric2[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn norm_ck_ladder() {
        let grid = TorusGrid::unit(2, 16).unwrap();
        assert_eq!(norm_ck_proxy(&SymTensorField::zeros(&grid), 3), 0.0);
        let c = SymTensorField::uniform(&grid, &[0.5, -2.0, 1.0]);
        for k in 0..=3 {
            assert_eq!(norm_ck_proxy(&c, k), 2.0);
        }
    }
}
