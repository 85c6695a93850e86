//! Small dense matrices and symmetric eigen-calculus.
//!
//! 2×2 symmetric matrices are diagonalised in closed form; larger ones by
//! cyclic Jacobi rotations. Fractional powers of one matrix always reuse the
//! same orthogonal factor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SYMMETRY_TOL: f64 = 1e-12;
const JACOBI_TOL: f64 = 1e-12;
const JACOBI_SWEEPS: usize = 100;

/// Square matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub d: usize,
    pub a: Vec<f64>,
}

impl Mat {
    pub fn zeros(d: usize) -> Self {
        Mat { d, a: vec![0.0; d * d] }
    }
    pub fn identity(d: usize) -> Self {
        let mut m = Mat::zeros(d);
        for i in 0..d {
            m.a[i * d + i] = 1.0;
        }
        m
    }
    pub fn diag(v: &[f64]) -> Self {
        let mut m = Mat::zeros(v.len());
        for (i, x) in v.iter().enumerate() {
            m.a[i * v.len() + i] = *x;
        }
        m
    }
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let d = rows.len();
        let mut a = Vec::with_capacity(d * d);
        for r in rows {
            assert_eq!(r.len(), d, "matrix must be square");
            a.extend_from_slice(r);
        }
        Mat { d, a }
    }
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.d + j]
    }
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.d + j] = v;
    }
    pub fn transpose(&self) -> Mat {
        let d = self.d;
        let mut t = Mat::zeros(d);
        for i in 0..d {
            for j in 0..d {
                t.a[j * d + i] = self.a[i * d + j];
            }
        }
        t
    }
    pub fn mul(&self, o: &Mat) -> Mat {
        let d = self.d;
        let mut r = Mat::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let x = self.a[i * d + k];
                for j in 0..d {
                    r.a[i * d + j] += x * o.a[k * d + j];
                }
            }
        }
        r
    }
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.d).map(|i| (0..self.d).map(|j| self.get(i, j) * v[j]).sum()).collect()
    }
    pub fn scale(&self, s: f64) -> Mat {
        Mat { d: self.d, a: self.a.iter().map(|x| x * s).collect() }
    }
    pub fn trace(&self) -> f64 {
        (0..self.d).map(|i| self.get(i, i)).sum()
    }
    pub fn max_abs(&self) -> f64 {
        self.a.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
    pub fn asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.d {
            for j in 0..i {
                m = m.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        m
    }
    pub fn frobenius_dist(&self, o: &Mat) -> f64 {
        self.a.iter().zip(&o.a).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }
    pub fn det(&self) -> f64 {
        match self.d {
            1 => self.a[0],
            2 => self.a[0] * self.a[3] - self.a[1] * self.a[2],
            _ => lu_det(self),
        }
    }
    pub fn inverse(&self) -> Option<Mat> {
        let d = self.d;
        if d == 1 {
            return (self.a[0] != 0.0).then(|| Mat { d, a: vec![1.0 / self.a[0]] });
        }
        if d == 2 {
            let det = self.det();
            if det == 0.0 || !det.is_finite() {
                return None;
            }
            return Some(Mat { d, a: vec![self.a[3] / det, -self.a[1] / det, -self.a[2] / det, self.a[0] / det] });
        }
        gauss_jordan_inverse(self)
    }
}

fn lu_det(m: &Mat) -> f64 {
    let d = m.d;
    let mut a = m.a.clone();
    let mut det = 1.0;
    for c in 0..d {
        let p = (c..d).max_by(|&i, &j| a[i * d + c].abs().total_cmp(&a[j * d + c].abs())).unwrap();
        if a[p * d + c] == 0.0 {
            return 0.0;
        }
        if p != c {
            for j in 0..d {
                a.swap(p * d + j, c * d + j);
            }
            det = -det;
        }
        det *= a[c * d + c];
        for i in c + 1..d {
            let f = a[i * d + c] / a[c * d + c];
            for j in c..d {
                a[i * d + j] -= f * a[c * d + j];
            }
        }
    }
    det
}

fn gauss_jordan_inverse(m: &Mat) -> Option<Mat> {
    let d = m.d;
    let mut a = m.a.clone();
    let mut inv = Mat::identity(d).a;
    for c in 0..d {
        let p = (c..d).max_by(|&i, &j| a[i * d + c].abs().total_cmp(&a[j * d + c].abs())).unwrap();
        if a[p * d + c] == 0.0 {
            return None;
        }
        for j in 0..d {
            a.swap(p * d + j, c * d + j);
            inv.swap(p * d + j, c * d + j);
        }
        let piv = a[c * d + c];
        for j in 0..d {
            a[c * d + j] /= piv;
            inv[c * d + j] /= piv;
        }
        for i in 0..d {
            if i != c {
                let f = a[i * d + c];
                for j in 0..d {
                    a[i * d + j] -= f * a[c * d + j];
                    inv[i * d + j] -= f * inv[c * d + j];
                }
            }
        }
    }
    Some(Mat { d, a: inv })
}

/// Eigenvalues (descending) and eigenvectors (columns of `u`, row-major).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub u: Mat,
}

impl Eigen {
    /// `U diag(f(λ)) Uᵗ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        let d = self.u.d;
        let fl: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut r = Mat::zeros(d);
        for i in 0..d {
            for j in 0..=i {
                let mut s = 0.0;
                for k in 0..d {
                    s += self.u.get(i, k) * fl[k] * self.u.get(j, k);
                }
                r.set(i, j, s);
                r.set(j, i, s);
            }
        }
        r
    }

    pub fn power(&self, s: f64) -> Result<Mat> {
        self.check_positive(0)?;
        Ok(self.map(|l| l.powf(s)))
    }

    pub fn reconstruct(&self) -> Mat {
        self.map(|l| l)
    }

    pub fn check_positive(&self, cell: usize) -> Result<()> {
        let min = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) || !self.values.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularWeight { cell, eigenvalue: min });
        }
        Ok(())
    }
}

/// Symmetric eigendecomposition with descending eigenvalues.
pub fn spd_decompose(m: &Mat) -> Result<Eigen> {
    let asym = m.asymmetry();
    if asym > SYMMETRY_TOL * m.max_abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(match m.d {
        1 => Eigen { values: vec![m.a[0]], u: Mat::identity(1) },
        2 => {
            let (l1, l2, c, s) = sym2_eigen(m.a[0], m.a[1], m.a[3]);
            Eigen { values: vec![l1, l2], u: Mat { d: 2, a: vec![c, -s, s, c] } }
        }
        _ => jacobi(m),
    })
}

/// Closed-form eigen pair of `[[a, b], [b, c]]`: `(λ1 ≥ λ2, cos θ, sin θ)`
/// with `(cos θ, sin θ)` the eigenvector of λ1.
#[inline]
pub fn sym2_eigen(a: f64, b: f64, c: f64) -> (f64, f64, f64, f64) {
    let m = 0.5 * (a + c);
    let r = (0.5 * (a - c)).hypot(b);
    let l1 = m + r;
    let l2 = if r < 0.5 * m.abs() || l1 == 0.0 { m - r } else { (a * c - b * b) / l1 };
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    (l1, l2, theta.cos(), theta.sin())
}

/// Largest eigenvalue of a symmetric 2×2 matrix.
#[inline]
pub fn sym2_lmax(a: f64, b: f64, c: f64) -> f64 {
    0.5 * (a + c) + (0.5 * (a - c)).hypot(b)
}

fn jacobi(m: &Mat) -> Eigen {
    let d = m.d;
    let mut a = m.a.clone();
    let mut v = Mat::identity(d).a;
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..JACOBI_SWEEPS {
        let off: f64 = (0..d).flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * d + j] * a[i * d + j])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * norm || off == 0.0 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[j * d + j].total_cmp(&a[i * d + i]));
    let values = order.iter().map(|&i| a[i * d + i]).collect();
    let mut u = Mat::zeros(d);
    for (col, &i) in order.iter().enumerate() {
        for k in 0..d {
            u.set(k, col, v[k * d + i]);
        }
    }
    Eigen { values, u }
}

/// `M^s` for symmetric positive definite `M`.
pub fn matrix_power(m: &Mat, s: f64) -> Result<Mat> {
    spd_decompose(m)?.power(s)
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix.
pub fn operator_norm(m: &Mat) -> Result<f64> {
    let e = spd_decompose(m)?;
    Ok(e.values[0].max(0.0))
}

/// Spectral norm of an arbitrary square matrix.
pub fn spectral_norm(m: &Mat) -> f64 {
    let g = m.transpose().mul(m);
    if m.d == 2 {
        return sym2_lmax(g.a[0], 0.5 * (g.a[1] + g.a[2]), g.a[3]).max(0.0).sqrt();
    }
    let sym = symmetrize(&g);
    jacobi_or_small(&sym).values[0].max(0.0).sqrt()
}

fn jacobi_or_small(m: &Mat) -> Eigen {
    match m.d {
        1 => Eigen { values: vec![m.a[0]], u: Mat::identity(1) },
        _ => jacobi(m),
    }
}

pub fn symmetrize(m: &Mat) -> Mat {
    let mut s = m.clone();
    for i in 0..m.d {
        for j in 0..i {
            let v = 0.5 * (m.get(i, j) + m.get(j, i));
            s.set(i, j, v);
            s.set(j, i, v);
        }
    }
    s
}

/// Real eigenvalues of a general 2×2 matrix from its characteristic
/// polynomial, descending; a negative discriminant is clamped to zero.
pub fn eig2_general(m: &Mat) -> (f64, f64) {
    let tr = m.a[0] + m.a[3];
    let det = m.det();
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    let l1 = 0.5 * tr + disc;
    let l2 = if l1 != 0.0 && disc > 0.25 * tr.abs() { 0.5 * tr - disc } else { det / l1 };
    (l1, l2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> Mat {
        let mut b = Mat::zeros(d);
        for x in b.a.iter_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
        let mut m = b.transpose().mul(&b);
        for i in 0..d {
            m.a[i * d + i] += 0.1;
        }
        symmetrize(&m)
    }

    fn orth_err(u: &Mat) -> f64 {
        u.transpose().mul(u).frobenius_dist(&Mat::identity(u.d))
    }

    #[test]
    fn identity_and_diagonal() {
        let e = spd_decompose(&Mat::identity(2)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0]);
        assert_eq!(e.u, Mat::identity(2));
        let e = spd_decompose(&Mat::diag(&[9.0, 4.0])).unwrap();
        assert_eq!(e.values, vec![9.0, 4.0]);
        let e = spd_decompose(&Mat::diag(&[4.0, 9.0])).unwrap();
        assert_eq!(e.values, vec![9.0, 4.0]);
    }

    #[test]
    fn rejects_asymmetric() {
        let m = Mat::from_rows(&[&[1.0, 0.5], &[0.2, 1.0]]);
        match spd_decompose(&m) {
            Err(Error::NotSymmetric { asymmetry }) => assert!((asymmetry - 0.3).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn quadratic_formula_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let (a, b, c) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let tr: f64 = a + c;
            let det = a * c - b * b;
            let disc = (tr * tr - 4.0 * det).sqrt();
            let (r1, r2) = ((tr + disc) / 2.0, (tr - disc) / 2.0);
            let e = spd_decompose(&Mat::from_rows(&[&[a, b], &[b, c]])).unwrap();
            let scale = r1.abs().max(r2.abs()).max(1.0);
            assert!((e.values[0] - r1).abs() <= 1e-10 * scale);
            assert!((e.values[1] - r2).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn reconstruction_and_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 1..=5 {
            for _ in 0..50 {
                let m = random_spd(&mut rng, d);
                let e = spd_decompose(&m).unwrap();
                assert!(orth_err(&e.u) <= 1e-10, "d={d}");
                let rel = e.reconstruct().frobenius_dist(&m) / m.max_abs();
                assert!(rel <= 1e-10, "d={d} rel={rel}");
                assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }

    #[test]
    fn powers() {
        assert_eq!(matrix_power(&Mat::identity(3), 0.37).unwrap().frobenius_dist(&Mat::identity(3)) < 1e-14, true);
        let r = matrix_power(&Mat::diag(&[4.0, 9.0]), 0.5).unwrap();
        assert!(r.frobenius_dist(&Mat::diag(&[2.0, 3.0])) < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in 2..=4 {
            let m = random_spd(&mut rng, d);
            let h = matrix_power(&m, 0.5).unwrap();
            assert!(h.mul(&h).frobenius_dist(&m) <= 1e-10 * m.max_abs());
            let e = spd_decompose(&m).unwrap();
            let c = e.power(0.3).unwrap().mul(&e.power(0.45).unwrap());
            assert!(c.frobenius_dist(&e.power(0.75).unwrap()) <= 1e-10 * m.max_abs());
        }
    }

    #[test]
    fn singular_power_rejected() {
        let m = Mat::diag(&[1.0, 0.0]);
        assert!(matches!(matrix_power(&m, 0.5), Err(Error::SingularWeight { .. })));
    }

    #[test]
    fn operator_norm_random_vector_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(operator_norm(&Mat::identity(2)).unwrap(), 1.0);
        assert_eq!(operator_norm(&Mat::diag(&[4.0, 9.0])).unwrap(), 9.0);
        for d in [2usize, 3] {
            let m = random_spd(&mut rng, d);
            let op = operator_norm(&m).unwrap();
            let mut best: f64 = 0.0;
            for _ in 0..10_000 {
                let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let mv = m.apply(&v);
                best = best.max(mv.iter().map(|x| x * x).sum::<f64>().sqrt() / n);
            }
            // random directions approach the top eigenvector from below
            assert!(best <= op * (1.0 + 1e-12));
            assert!(d > 2 || (op - best) / op < 1e-6, "d={d} op={op} best={best}");
            assert!(op <= m.trace() && m.trace() <= d as f64 * op);
        }
    }

    #[test]
    fn submultiplicative() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let a = random_spd(&mut rng, 2);
            let b = random_spd(&mut rng, 2);
            let ab = spectral_norm(&a.mul(&b));
            assert!(ab <= operator_norm(&a).unwrap() * operator_norm(&b).unwrap() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn general_inverse_and_det() {
        let m = Mat::from_rows(&[&[2.0, 1.0, 0.0], &[1.0, 3.0, 1.0], &[0.0, 1.0, 4.0]]);
        assert!((m.det() - 18.0).abs() < 1e-12);
        let inv = m.inverse().unwrap();
        assert!(inv.mul(&m).frobenius_dist(&Mat::identity(3)) < 1e-12);
    }
}
