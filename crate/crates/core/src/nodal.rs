//! Dense algebra on the 2x2 / 3x3 symmetric matrices living at one node.

pub type Mat = [[f64; 3]; 3];

use crate::grid::sym_index;

#[inline]
pub fn from_sym(dim: usize, c: &[f64]) -> Mat {
    let mut m = [[0.0; 3]; 3];
    for i in 0..dim {
        for j in 0..dim {
            m[i][j] = c[sym_index(dim, i, j)];
        }
    }
    m
}

#[inline]
pub fn to_sym(dim: usize, m: &Mat, out: &mut [f64]) {
    for i in 0..dim {
        for j in i..dim {
            out[sym_index(dim, i, j)] = m[i][j];
        }
    }
}

#[inline]
pub fn det(dim: usize, m: &Mat) -> f64 {
    if dim == 2 {
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    } else {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
}

/// Inverse of an SPD matrix through its Cholesky factor. Returns `None` when
/// a pivot is not strictly positive.
pub fn spd_inverse(dim: usize, m: &Mat) -> Option<Mat> {
    let mut l = [[0.0; 3]; 3];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = m[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    // L^{-1}, lower triangular
    let mut li = [[0.0; 3]; 3];
    for i in 0..dim {
        li[i][i] = 1.0 / l[i][i];
        for j in 0..i {
            let mut s = 0.0;
            for k in j..i {
                s -= l[i][k] * li[k][j];
            }
            li[i][j] = s / l[i][i];
        }
    }
    let mut inv = [[0.0; 3]; 3];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i.max(j)..dim {
                s += li[k][i] * li[k][j];
            }
            inv[i][j] = s;
            inv[j][i] = s;
        }
    }
    Some(inv)
}

/// Eigenvalues of a symmetric matrix in ascending order (only the first
/// `dim` entries are meaningful).
pub fn sym_eigenvalues(dim: usize, m: &Mat) -> [f64; 3] {
    if dim == 2 {
        let tr = 0.5 * (m[0][0] + m[1][1]);
        let d = 0.5 * (m[0][0] - m[1][1]);
        let r = (d * d + m[0][1] * m[0][1]).sqrt();
        return [tr - r, tr + r, 0.0];
    }
    let p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    if p1 == 0.0 {
        let mut e = [m[0][0], m[1][1], m[2][2]];
        e.sort_by(|a, b| a.total_cmp(b));
        return e;
    }
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            b[i][j] = (m[i][j] - if i == j { q } else { 0.0 }) / p;
        }
    }
    let r = (det(3, &b) / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    let mut e = [e1, e2, e3];
    e.sort_by(|a, b| a.total_cmp(b));
    e
}

#[inline]
pub fn min_eigenvalue(dim: usize, m: &Mat) -> f64 {
    sym_eigenvalues(dim, m)[0]
}

#[inline]
pub fn max_eigenvalue(dim: usize, m: &Mat) -> f64 {
    sym_eigenvalues(dim, m)[dim - 1]
}

#[inline]
pub fn matmul(dim: usize, a: &Mat, b: &Mat) -> Mat {
    let mut c = [[0.0; 3]; 3];
    for i in 0..dim {
        for j in 0..dim {
            let mut s = 0.0;
            for k in 0..dim {
                s += a[i][k] * b[k][j];
            }
            c[i][j] = s;
        }
    }
    c
}

/// Full contraction `a^{ij} b_ij` of two matrices.
#[inline]
pub fn contract(dim: usize, a: &Mat, b: &Mat) -> f64 {
    let mut s = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

/// `<a, b>_g = g^{ik} g^{jl} a_ij b_kl`.
#[inline]
pub fn metric_pair(dim: usize, ginv: &Mat, a: &Mat, b: &Mat) -> f64 {
    let ga = matmul(dim, ginv, a);
    let gb = matmul(dim, ginv, b);
    // tr(g^-1 a g^-1 b)
    let mut s = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            s += ga[i][j] * gb[j][i];
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_2x2_and_3x3() {
        let m2 = [[2.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0; 3]];
        let i2 = spd_inverse(2, &m2).unwrap();
        let p = matmul(2, &m2, &i2);
        assert!((p[0][0] - 1.0).abs() < 1e-15 && p[0][1].abs() < 1e-15);
        let m3 = [[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let i3 = spd_inverse(3, &m3).unwrap();
        let p = matmul(3, &m3, &i3);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((p[i][j] - e).abs() < 1e-14);
            }
        }
        assert!(spd_inverse(2, &[[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0; 3]]).is_none());
    }

    #[test]
    fn eigenvalues_match_characteristic_polynomial() {
        let m = [[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let e = sym_eigenvalues(3, &m);
        assert!(e[0] <= e[1] && e[1] <= e[2]);
        for &l in &e {
            let mut s = m;
            for i in 0..3 {
                s[i][i] -= l;
            }
            assert!(det(3, &s).abs() < 1e-12);
        }
        assert!((e.iter().sum::<f64>() - 9.0).abs() < 1e-13);
        let e2 = sym_eigenvalues(2, &[[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0; 3]]);
        assert!((e2[0] - 1.0).abs() < 1e-15 && (e2[1] - 3.0).abs() < 1e-15);
    }
}
