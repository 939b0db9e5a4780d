//! Dense complex matrices and the Hermitian Cholesky factorization used by
//! the mixture densities.

use faer::{Mat, Side};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Square complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CMat {
    pub n: usize,
    pub data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![Complex64::default(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = Complex64::new(s, 0.0);
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn add_diagonal(&mut self, s: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += s;
        }
    }

    pub fn with_diagonal_shift(&self, s: f64) -> Self {
        let mut m = self.clone();
        m.add_diagonal(s);
        m
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.n, |i, j| self.get(j, i).conj())
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Largest `|A - A^H|` entry.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.n {
            for j in i..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    /// True when `A = A^H` up to `tol` relative to the largest entry.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        let scale = self.data.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
        self.hermitian_defect() <= tol * scale.max(f64::MIN_POSITIVE)
    }

    pub fn to_faer(&self) -> Mat<Complex64> {
        Mat::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Eigenvalues of a Hermitian matrix in ascending order.
    pub fn hermitian_eigenvalues(&self) -> Result<Vec<f64>> {
        let mut ev = self
            .to_faer()
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::Numeric(format!("eigenvalue iteration failed: {e:?}")))?;
        ev.sort_by(f64::total_cmp);
        Ok(ev)
    }

    pub fn determinant(&self) -> Complex64 {
        self.to_faer().determinant()
    }
}

/// Lower Cholesky factor `L` with `A = L L^H`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    /// Row-major lower triangle; the diagonal is real and positive.
    l: Vec<Complex64>,
}

impl Cholesky {
    /// Factorizes a Hermitian positive definite matrix; only the lower triangle is read.
    pub fn new(a: &CMat) -> Result<Self> {
        let n = a.n;
        let mut l = vec![Complex64::default(); n * n];
        for j in 0..n {
            let mut d = a.get(j, j).re;
            for k in 0..j {
                d -= l[j * n + k].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Numeric(format!(
                    "matrix is not positive definite: Cholesky pivot {j} of {n} is {d:.3e}"
                )));
            }
            let d = d.sqrt();
            l[j * n + j] = Complex64::new(d, 0.0);
            for i in j + 1..n {
                let mut s = a.get(i, j);
                let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
                for k in 0..j {
                    s -= ri[k] * rj[k].conj();
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `ln det A = 2 sum ln L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l[i * self.n + i].re.ln()).sum::<f64>()
    }

    /// Solves `L y = b`.
    pub fn forward(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let mut s = y[i];
            for (k, lk) in row.iter().enumerate() {
                s -= lk * y[k];
            }
            y[i] = s / self.l[i * n + i].re;
        }
        y
    }

    /// Solves `L^H x = y`.
    pub fn backward(&self, y: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            let xi = x[i] / self.l[i * n + i].re;
            x[i] = xi;
            let row = &self.l[i * n..i * n + i];
            for (xk, lik) in x[..i].iter_mut().zip(row) {
                *xk -= lik.conj() * xi;
            }
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        self.backward(&self.forward(b))
    }

    /// `b^H A^{-1} b`.
    pub fn quad_form(&self, b: &[Complex64]) -> f64 {
        self.forward(b).iter().map(|z| z.norm_sqr()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_hpd(n: usize, rng: &mut impl Rng) -> CMat {
        let b = CMat::from_fn(n, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let mut a = CMat::from_fn(n, |i, j| (0..n).map(|k| b.get(i, k) * b.get(j, k).conj()).sum());
        a.add_diagonal(0.5);
        a
    }

    #[test]
    fn cholesky_reconstructs_and_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1, 2, 5, 9] {
            let a = random_hpd(n, &mut rng);
            let c = Cholesky::new(&a).unwrap();
            let x: Vec<Complex64> = (0..n).map(|k| Complex64::new(k as f64, 1.0)).collect();
            let b = a.matvec(&x);
            for (u, v) in c.solve(&b).iter().zip(&x) {
                assert!((u - v).norm() < 1e-10);
            }
            let det = a.determinant();
            assert!((c.log_det() - det.re.ln()).abs() < 1e-10);
            assert!(det.im.abs() < 1e-8 * det.re);
            let q: Complex64 = x.iter().zip(&b).map(|(xi, bi)| xi.conj() * bi).sum();
            assert!((c.quad_form(&b) - q.re).abs() < 1e-9 * q.re);
        }
    }

    #[test]
    fn cholesky_names_failing_pivot() {
        let mut a = CMat::identity(3);
        a.set(2, 2, Complex64::new(-1.0, 0.0));
        let err = Cholesky::new(&a).unwrap_err();
        assert!(err.to_string().contains("pivot 2"), "{err}");
    }

    #[test]
    fn eigenvalues_of_diagonal() {
        let mut a = CMat::zeros(3);
        for (i, v) in [3.0, 1.0, 2.0].into_iter().enumerate() {
            a.set(i, i, Complex64::new(v, 0.0));
        }
        let ev = a.hermitian_eigenvalues().unwrap();
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[2] - 3.0).abs() < 1e-14);
        assert!(a.is_hermitian(0.0));
    }
}
