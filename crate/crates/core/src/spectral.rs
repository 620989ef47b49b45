//! Perelman's lambda as the ground state of `-4 Lap_g + R_g`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fft::SymbolSolver;
use crate::geometry::{self, DivergenceLaplacian};
use crate::grid::{sym_index, MetricField, ScalarField, SymTensorField};
use crate::krylov;

pub const DEFAULT_TOL: f64 = 1e-10;
const MAX_OUTER: usize = 200;
const MAX_INNER: usize = 4000;
const POSITIVITY_FLOOR: f64 = 1e-12;

/// The operator `A = -4 Lap_g + R_g` together with the lumped mass
/// `m = sqrt(det g) * cell volume`. `M A` is symmetric, so `A` is self-adjoint
/// in the discrete `L^2(dV_g)` inner product.
pub struct SchrodingerOperator {
    lap: DivergenceLaplacian,
    curvature: Vec<f64>,
    mass: Vec<f64>,
}

impl SchrodingerOperator {
    pub fn new(g: &MetricField) -> Result<Self> {
        let lap = DivergenceLaplacian::new(g)?;
        let curvature = geometry::scalar_curvature(g)?.values;
        let cell = g.grid().cell_volume();
        let mass = lap.density.iter().map(|d| d * cell).collect();
        Ok(Self {
            lap,
            curvature,
            mass,
        })
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    /// `A u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = self.lap.laplacian(u);
        for ((o, r), ui) in out.iter_mut().zip(&self.curvature).zip(u) {
            *o = -4.0 * *o + r * ui;
        }
        out
    }

    /// `M A u`, the symmetric form.
    pub fn weighted_apply(&self, u: &[f64]) -> Vec<f64> {
        let cell = self.lap.grid.cell_volume();
        let mut out = self.lap.divergence_term(u);
        for (((o, r), ui), m) in out.iter_mut().zip(&self.curvature).zip(u).zip(&self.mass) {
            *o = -4.0 * cell * *o + m * r * ui;
        }
        out
    }

    /// `<u, v>_{dV_g}`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).zip(&self.mass).map(|((a, b), m)| a * b * m).sum()
    }

    /// Rayleigh quotient and `L^2(dV_g)` residual norm of `(A - lambda) u`.
    pub fn rayleigh(&self, u: &[f64]) -> (f64, f64) {
        let ku = self.weighted_apply(u);
        let norm2 = self.inner(u, u);
        let lambda = krylov::dot(u, &ku) / norm2;
        let res2: f64 = ku
            .iter()
            .zip(u)
            .zip(&self.mass)
            .map(|((k, ui), m)| {
                let r = k / m - lambda * ui;
                r * r * m
            })
            .sum();
        (lambda, (res2 / norm2).sqrt())
    }

    /// Spectral preconditioner for `M(A - sigma)`: the same operator with
    /// coefficients frozen at their grid averages.
    fn preconditioner(&self, sigma: f64) -> SymbolSolver {
        let grid = &self.lap.grid;
        let dim = grid.dim();
        let m = grid.sym_components();
        let n = grid.node_count() as f64;
        let cell = grid.cell_volume();
        let mut diag_mean = [0.0; 3];
        for i in 0..dim {
            let c = sym_index(dim, i, i);
            diag_mean[i] = self.lap.coef.iter().skip(c).step_by(m).sum::<f64>() / n;
        }
        let shift = self
            .mass
            .iter()
            .zip(&self.curvature)
            .map(|(mi, r)| mi * (r - sigma))
            .sum::<f64>()
            / n;
        let h = grid.spacing().to_vec();
        let res = grid.resolution().to_vec();
        SymbolSolver::new(grid, |k| {
            let mut s = shift;
            for i in 0..dim {
                let sn = (PI * k[i] as f64 / res[i] as f64).sin();
                s += 4.0 * cell * diag_mean[i] * 4.0 * sn * sn / (h[i] * h[i]);
            }
            s
        })
    }
}

/// `-4 Lap_g u + R_g u`.
pub fn schrodinger_apply(u: &ScalarField, g: &MetricField) -> Result<ScalarField> {
    u.grid.check_same(g.grid())?;
    let op = SchrodingerOperator::new(g)?;
    Ok(ScalarField {
        grid: g.grid().clone(),
        values: op.apply(&u.values),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralResult {
    pub lambda: f64,
    /// Positive ground state with `int w^2 dV_g = 1`.
    pub w: ScalarField,
    /// `f = -2 ln w`, so that `int e^{-f} dV_g = 1`.
    pub f: ScalarField,
    pub residual: f64,
    pub iterations: usize,
}

pub fn lambda_of(g: &MetricField, tol: f64) -> Result<SpectralResult> {
    lambda_of_warm(g, tol, None)
}

/// As [`lambda_of`], starting inverse iteration from `initial` when given.
pub fn lambda_of_warm(
    g: &MetricField,
    tol: f64,
    initial: Option<&ScalarField>,
) -> Result<SpectralResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let grid = g.grid();
    if let Some(w0) = initial {
        w0.grid.check_same(grid)?;
    }
    let op = SchrodingerOperator::new(g)?;
    let n = op.len();

    let mut x = match initial {
        Some(w0) if w0.values.iter().any(|v| *v != 0.0) => w0.values.clone(),
        _ => vec![1.0; n],
    };
    let norm = op.inner(&x, &x).sqrt();
    x.iter_mut().for_each(|v| *v /= norm);
    let (mut lambda, mut residual) = op.rayleigh(&x);
    let target = |l: f64| tol * l.abs().max(1.0);

    let r_min = op.curvature.iter().cloned().fold(f64::INFINITY, f64::min);
    let l_max = grid.periods().iter().cloned().fold(0.0, f64::max);
    let sigma = r_min - 1.0 / (l_max * l_max);
    let precond = op.preconditioner(sigma);
    let mass = op.mass.clone();
    let shifted = |y: &[f64]| {
        let mut out = op.weighted_apply(y);
        for ((o, m), yi) in out.iter_mut().zip(&mass).zip(y) {
            *o -= sigma * m * yi;
        }
        out
    };
    let dual_norm = |r: &[f64]| r.iter().zip(&mass).map(|(ri, m)| ri * ri / m).sum::<f64>().sqrt();

    let mut iterations = 0;
    let mut best = (residual, lambda, x.clone());
    while residual > target(lambda) {
        if iterations == MAX_OUTER {
            return Err(Error::NoConvergence {
                iterations,
                best_residual: best.0,
            });
        }
        iterations += 1;
        let rhs: Vec<f64> = x.iter().zip(&mass).map(|(xi, m)| xi * m).collect();
        let guess: Vec<f64> = x.iter().map(|xi| xi / (lambda - sigma)).collect();
        let inner_tol = 0.1 * target(lambda) / (lambda - sigma);
        let solve = krylov::pcg(
            shifted,
            |r| precond.solve(r),
            dual_norm,
            &rhs,
            guess,
            inner_tol,
            MAX_INNER,
        );
        x = solve.x;
        let norm = op.inner(&x, &x).sqrt();
        x.iter_mut().for_each(|v| *v /= norm);
        (lambda, residual) = op.rayleigh(&x);
        if residual < best.0 {
            best = (residual, lambda, x.clone());
        }
    }

    let sum: f64 = x.iter().sum();
    if sum < 0.0 {
        x.iter_mut().for_each(|v| *v = -*v);
    }
    let (node, min_w) = x
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (p, &v)| if v < acc.1 { (p, v) } else { acc });
    if !(min_w > POSITIVITY_FLOOR) {
        return Err(Error::PositivityFailure { node, min_w });
    }
    let f = x.iter().map(|v| -2.0 * v.ln()).collect();
    Ok(SpectralResult {
        lambda,
        w: ScalarField {
            grid: grid.clone(),
            values: x,
        },
        f: ScalarField {
            grid: grid.clone(),
            values: f,
        },
        residual,
        iterations,
    })
}

/// `grad lambda(g) = -(Ric + Hess f_g)`, the gradient in `L^2(e^{-f} dV_g)`.
pub fn lambda_gradient(g: &MetricField, spec: &SpectralResult) -> Result<SymTensorField> {
    let ric = geometry::ricci(g)?;
    let hess = geometry::hessian(&spec.f, g)?;
    let mut out = ric;
    for (o, h) in out.data.iter_mut().zip(&hess.data) {
        *o = -(*o + h);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use nalgebra::DMatrix;

    fn conformal(n: usize, amp: f64) -> MetricField {
        let grid = TorusGrid::unit(2, n).unwrap();
        let u = ScalarField::from_fn(&grid, |x| {
            amp * ((2.0 * PI * x[0]).sin() + 0.5 * (2.0 * PI * (x[0] + x[1])).cos())
        });
        MetricField::conformal(&u).unwrap()
    }

    fn dense_smallest(op: &SchrodingerOperator) -> f64 {
        let n = op.len();
        let sq: Vec<f64> = op.mass().iter().map(|m| m.sqrt()).collect();
        let mut a = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = op.weighted_apply(&e);
            for i in 0..n {
                a[(i, j)] = col[i] / (sq[i] * sq[j]);
            }
            e[j] = 0.0;
        }
        let sym = (&a + a.transpose()) * 0.5;
        sym.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn flat_torus_has_constant_ground_state() {
        let grid = TorusGrid::unit(2, 16).unwrap();
        let spec = lambda_of(&MetricField::flat(&grid), DEFAULT_TOL).unwrap();
        assert!(spec.lambda.abs() < 1e-12);
        assert!(spec.w.values.iter().all(|w| (w - 1.0).abs() < 1e-12));
        assert!(spec.f.max_abs() < 1e-12);
    }

    #[test]
    fn schrodinger_symbol_on_flat_torus() {
        let grid = TorusGrid::unit(2, 32).unwrap();
        let u = ScalarField::from_fn(&grid, |x| (2.0 * PI * x[0]).sin());
        let au = schrodinger_apply(&u, &MetricField::flat(&grid)).unwrap();
        let h = grid.spacing()[0];
        let symbol = 4.0 * (2.0 / h).powi(2) * (PI * h).sin().powi(2);
        for p in 0..grid.node_count() {
            assert!((au.values[p] - symbol * u.values[p]).abs() < 1e-9);
        }
    }

    #[test]
    fn matches_dense_eigensolver() {
        let g = conformal(12, 0.1);
        let spec = lambda_of(&g, DEFAULT_TOL).unwrap();
        let dense = dense_smallest(&SchrodingerOperator::new(&g).unwrap());
        assert!((spec.lambda - dense).abs() < 1e-9, "{} vs {}", spec.lambda, dense);
        assert!(spec.lambda < 0.0);
    }

    #[test]
    fn result_invariants() {
        let g = conformal(16, 0.08);
        let spec = lambda_of(&g, DEFAULT_TOL).unwrap();
        let op = SchrodingerOperator::new(&g).unwrap();
        assert!((op.inner(&spec.w.values, &spec.w.values) - 1.0).abs() < 1e-12);
        let (rq, res) = op.rayleigh(&spec.w.values);
        assert!((rq - spec.lambda).abs() < 1e-12);
        assert!(res <= DEFAULT_TOL);
        let weight: f64 = spec
            .f
            .values
            .iter()
            .zip(op.mass())
            .map(|(f, m)| (-f).exp() * m)
            .sum();
        assert!((weight - 1.0).abs() < 1e-10);
    }

    #[test]
    fn warm_start_converges_immediately() {
        let g = conformal(16, 0.05);
        let spec = lambda_of(&g, DEFAULT_TOL).unwrap();
        let again = lambda_of_warm(&g, DEFAULT_TOL, Some(&spec.w)).unwrap();
        assert!(again.iterations <= 1);
        assert!((again.lambda - spec.lambda).abs() < 1e-12);
    }

    #[test]
    fn flat_gradient_vanishes() {
        let grid = TorusGrid::unit(3, 8).unwrap();
        let g = MetricField::flat(&grid);
        let spec = lambda_of(&g, DEFAULT_TOL).unwrap();
        assert_eq!(lambda_gradient(&g, &spec).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn rejects_bad_tolerance() {
        let grid = TorusGrid::unit(2, 8).unwrap();
        assert!(matches!(
            lambda_of(&MetricField::flat(&grid), 0.0),
            Err(Error::InvalidArgument(_))
        ));
    }
}
