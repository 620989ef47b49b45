//! Preconditioned conjugate gradients for symmetric positive (semi)definite
//! systems given as closures.

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub(crate) struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Solves `A x = b` starting from `x0`. Stops once `norm(residual) <= tol`.
pub(crate) fn pcg(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precondition: impl Fn(&[f64]) -> Vec<f64>,
    norm: impl Fn(&[f64]) -> f64,
    b: &[f64],
    x0: Vec<f64>,
    tol: f64,
    max_iterations: usize,
) -> CgOutcome {
    let mut x = x0;
    let ax = apply(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut res = norm(&r);
    let mut best = (res, x.clone());
    if res <= tol {
        return CgOutcome {
            x,
            iterations: 0,
            residual: res,
            converged: true,
        };
    }
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iterations {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &ap);
        res = norm(&r);
        if res < best.0 {
            best = (res, x.clone());
        }
        if res <= tol {
            return CgOutcome {
                x,
                iterations: it,
                residual: res,
                converged: true,
            };
        }
        z = precondition(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    CgOutcome {
        x: best.1,
        iterations: max_iterations,
        residual: best.0,
        converged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_spd_system() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]];
        let apply = |x: &[f64]| (0..3).map(|i| dot(&a[i], x)).collect::<Vec<_>>();
        let b = [1.0, 2.0, 3.0];
        let out = pcg(
            apply,
            |r| r.to_vec(),
            |r| dot(r, r).sqrt(),
            &b,
            vec![0.0; 3],
            1e-14,
            50,
        );
        assert!(out.converged);
        let ax = apply(&out.x);
        for i in 0..3 {
            assert!((ax[i] - b[i]).abs() < 1e-13);
        }
    }
}
