//! Dense complex Hermitian linear algebra backed by LAPACK.
//!
//! Only the handful of routines the plane-wave solver needs are wrapped:
//! Cholesky inversion of a positive-definite Hermitian matrix (`zpotrf` +
//! `zpotri`) and the lowest eigenpairs of a Hermitian matrix (`zheevr` with
//! an index range, so only the requested eigenvectors are back-transformed).

use num_complex::Complex64;
use std::os::raw::c_char;

use crate::{Error, Result};

/// Square complex matrix in column-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    n: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for col in 0..n {
            for row in 0..n {
                data.push(f(row, col));
            }
        }
        Self { n, data }
    }

    /// Builds a Hermitian matrix from its lower triangle; the upper triangle
    /// is filled with conjugates and the diagonal is made exactly real.
    pub fn hermitian_from_lower(n: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(n);
        for col in 0..n {
            for row in col..n {
                let v = f(row, col);
                if row == col {
                    m.data[col * n + row] = Complex64::new(v.re, 0.0);
                } else {
                    m.data[col * n + row] = v;
                    m.data[row * n + col] = v.conj();
                }
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[col * self.n + row]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: Complex64) {
        self.data[col * self.n + row] = v;
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    /// Largest |A_ij - conj(A_ji)| relative to the largest |A_ij|.
    pub fn hermitian_defect(&self) -> f64 {
        let mut scale: f64 = 0.0;
        let mut defect: f64 = 0.0;
        for col in 0..self.n {
            for row in 0..self.n {
                let a = self.get(row, col);
                scale = scale.max(a.norm());
                defect = defect.max((a - self.get(col, row).conj()).norm());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            defect / scale
        }
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.n, "dimension mismatch in matvec");
        let mut y = vec![Complex64::new(0.0, 0.0); self.n];
        for (col, &xc) in x.iter().enumerate() {
            if xc == Complex64::new(0.0, 0.0) {
                continue;
            }
            let column = &self.data[col * self.n..(col + 1) * self.n];
            for (yi, &a) in y.iter_mut().zip(column) {
                *yi += a * xc;
            }
        }
        y
    }

    /// In-place inverse of a Hermitian positive-definite matrix.
    ///
    /// The result is exactly Hermitian (the upper triangle is rebuilt from the
    /// lower one). Fails when the matrix is not positive definite.
    pub fn invert_hpd(&mut self) -> Result<()> {
        let n = self.n as i32;
        if n == 0 {
            return Ok(());
        }
        let mut info = 0;
        let uplo = b'L' as c_char;
        unsafe {
            lapack_sys::zpotrf_(&uplo, &n, self.data.as_mut_ptr() as *mut _, &n, &mut info);
        }
        if info != 0 {
            return Err(Error::Numerical(format!(
                "Cholesky factorization failed (zpotrf info = {info}); matrix is not positive definite"
            )));
        }
        unsafe {
            lapack_sys::zpotri_(&uplo, &n, self.data.as_mut_ptr() as *mut _, &n, &mut info);
        }
        if info != 0 {
            return Err(Error::Numerical(format!(
                "inverse from Cholesky factor failed (zpotri info = {info})"
            )));
        }
        let n = self.n;
        for col in 0..n {
            let d = self.data[col * n + col];
            self.data[col * n + col] = Complex64::new(d.re, 0.0);
            for row in col + 1..n {
                self.data[row * n + col] = self.data[col * n + row].conj();
            }
        }
        Ok(())
    }
}

/// Eigenpairs returned by [`lowest_eigenpairs`], ascending in eigenvalue.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    /// One normalised eigenvector per eigenvalue.
    pub vectors: Vec<Vec<Complex64>>,
}

/// Lowest `count` eigenpairs of a Hermitian matrix (only the lower triangle
/// is read). The matrix is consumed as LAPACK workspace.
pub fn lowest_eigenpairs(mut a: CMatrix, count: usize) -> Result<EigenPairs> {
    let n = a.n;
    let count = count.min(n);
    if count == 0 {
        return Ok(EigenPairs {
            values: Vec::new(),
            vectors: Vec::new(),
        });
    }
    let ni = n as i32;
    let il = 1i32;
    let iu = count as i32;
    let jobz = b'V' as c_char;
    let range = b'I' as c_char;
    let uplo = b'L' as c_char;
    let abstol = 0.0f64;
    let (vl, vu) = (0.0f64, 0.0f64);
    let mut m = 0i32;
    let mut w = vec![0.0f64; n];
    let mut z = vec![Complex64::new(0.0, 0.0); n * count];
    let ldz = ni;
    let mut isuppz = vec![0i32; 2 * count.max(1)];
    let mut info = 0i32;

    // Workspace query.
    let mut work = vec![Complex64::new(0.0, 0.0); 1];
    let mut rwork = vec![0.0f64; 1];
    let mut iwork = vec![0i32; 1];
    let query = -1i32;
    unsafe {
        lapack_sys::zheevr_(
            &jobz,
            &range,
            &uplo,
            &ni,
            a.data.as_mut_ptr() as *mut _,
            &ni,
            &vl,
            &vu,
            &il,
            &iu,
            &abstol,
            &mut m,
            w.as_mut_ptr(),
            z.as_mut_ptr() as *mut _,
            &ldz,
            isuppz.as_mut_ptr(),
            work.as_mut_ptr() as *mut _,
            &query,
            rwork.as_mut_ptr(),
            &query,
            iwork.as_mut_ptr(),
            &query,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Numerical(format!(
            "zheevr workspace query failed (info = {info})"
        )));
    }
    let lwork = work[0].re as i32;
    let lrwork = rwork[0] as i32;
    let liwork = iwork[0];
    let mut work = vec![Complex64::new(0.0, 0.0); lwork.max(1) as usize];
    let mut rwork = vec![0.0f64; lrwork.max(1) as usize];
    let mut iwork = vec![0i32; liwork.max(1) as usize];
    unsafe {
        lapack_sys::zheevr_(
            &jobz,
            &range,
            &uplo,
            &ni,
            a.data.as_mut_ptr() as *mut _,
            &ni,
            &vl,
            &vu,
            &il,
            &iu,
            &abstol,
            &mut m,
            w.as_mut_ptr(),
            z.as_mut_ptr() as *mut _,
            &ldz,
            isuppz.as_mut_ptr(),
            work.as_mut_ptr() as *mut _,
            &lwork,
            rwork.as_mut_ptr(),
            &lrwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Numerical(format!("zheevr did not converge (info = {info})")));
    }
    let m = m as usize;
    let values = w[..m].to_vec();
    let vectors = (0..m).map(|j| z[j * n..(j + 1) * n].to_vec()).collect();
    Ok(EigenPairs { values, vectors })
}

/// Hermitian inner product ⟨x, y⟩ = Σ conj(x_i) y_i.
pub fn dot(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn test_matrix(n: usize) -> CMatrix {
        CMatrix::hermitian_from_lower(n, |i, j| {
            if i == j {
                c(4.0 + i as f64, 0.0)
            } else {
                c(1.0 / (1.0 + (i - j) as f64), 0.3 / (1.0 + (i + j) as f64))
            }
        })
    }

    #[test]
    fn eigenpairs_satisfy_definition() {
        let a = test_matrix(12);
        let pairs = lowest_eigenpairs(a.clone(), 4).unwrap();
        assert_eq!(pairs.values.len(), 4);
        for w in pairs.values.windows(2) {
            assert!(w[0] <= w[1]);
        }
        for (lambda, v) in pairs.values.iter().zip(&pairs.vectors) {
            let av = a.matvec(v);
            let resid: f64 = av
                .iter()
                .zip(v)
                .map(|(x, y)| (x - y * lambda).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(resid < 1e-12, "residual {resid}");
            assert!((dot(v, v).re - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hpd_inverse_is_inverse_and_hermitian() {
        let a = test_matrix(9);
        let mut inv = a.clone();
        inv.invert_hpd().unwrap();
        assert_eq!(inv.hermitian_defect(), 0.0);
        for col in 0..9 {
            let mut e = vec![c(0.0, 0.0); 9];
            e[col] = c(1.0, 0.0);
            let x = a.matvec(&inv.matvec(&e));
            for (row, v) in x.iter().enumerate() {
                let expect = if row == col { 1.0 } else { 0.0 };
                assert!((v - c(expect, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn eigenvectors_stay_accurate_at_blocked_sizes() {
        let n = 400;
        let f = |i: usize, j: usize| {
            if i == j {
                c(4.0 + (i % 7) as f64, 0.0)
            } else {
                c(
                    ((i * 31 + j * 17) % 13) as f64 / 13.0 - 0.5,
                    ((i + 2 * j) % 5) as f64 * 0.01,
                )
            }
        };
        let a = CMatrix::hermitian_from_lower(n, f);
        let eig = lowest_eigenpairs(a.clone(), 5).unwrap();
        for (l, v) in eig.values.iter().zip(&eig.vectors) {
            let av = a.matvec(v);
            let resid = av.iter().zip(v).map(|(x, y)| (x - y * *l).norm()).fold(0.0, f64::max);
            assert!(resid < 1e-10, "residual {resid}");
        }
        let b = CMatrix::hermitian_from_lower(n, |i, j| if i == j { f(i, j) } else { f(i, j) / n as f64 });
        let mut inv = b.clone();
        inv.invert_hpd().unwrap();
        for col in [0, 199, 399] {
            let e: Vec<Complex64> = (0..n).map(|r| inv.get(r, col)).collect();
            let be = b.matvec(&e);
            for (r, x) in be.iter().enumerate() {
                let target = if r == col { 1.0 } else { 0.0 };
                assert!((x - target).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = CMatrix::hermitian_from_lower(2, |i, j| if i == j { c(1.0, 0.0) } else { c(3.0, 0.0) });
        assert!(matches!(a.invert_hpd(), Err(Error::Numerical(_))));
    }
}
