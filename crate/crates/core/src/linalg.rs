//! Complex vectors and Hermitian matrices.
//!
//! Everything downstream (channels, covariances, LMI blocks) is expressed in
//! terms of these two newtypes. `HermitianMatrix` is validated on construction;
//! matrices that fail the Hermiticity test are rejected rather than
//! symmetrized.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub use nalgebra::Complex;

pub type C64 = Complex<f64>;

/// Relative tolerance on `max |H - H^†|` used by [`HermitianMatrix::new`].
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Eigenvalues in `[-PSD_TOL * lambda_max, 0)` are treated as zero.
pub const PSD_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexVector(DVector<C64>);

impl ComplexVector {
    pub fn new(entries: Vec<C64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, found: 0 });
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("complex vector"));
        }
        Ok(Self(DVector::from_vec(entries)))
    }

    pub fn from_dvector(v: DVector<C64>) -> Result<Self> {
        Self::new(v.as_slice().to_vec())
    }

    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    /// Real-valued vector lifted to the complex field.
    pub fn from_real(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_dvector(&self) -> &DVector<C64> {
        &self.0
    }

    pub fn entries(&self) -> &[C64] {
        self.0.as_slice()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `self^† other`
    pub fn inner(&self, other: &ComplexVector) -> Result<C64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self.0.dotc(&other.0))
    }

    pub fn scaled(&self, s: f64) -> ComplexVector {
        Self(&self.0 * C64::new(s, 0.0))
    }

    pub fn add(&self, other: &ComplexVector) -> Result<ComplexVector> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self(&self.0 + &other.0))
    }

    pub fn sub(&self, other: &ComplexVector) -> Result<ComplexVector> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self(&self.0 - &other.0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix(DMatrix<C64>);

impl HermitianMatrix {
    /// Validates squareness, finiteness and Hermiticity.
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        if m.nrows() == 0 {
            return Err(Error::DimensionMismatch { expected: 1, found: 0 });
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("hermitian matrix"));
        }
        let deviation = hermitian_deviation(&m);
        if deviation > HERMITIAN_TOL {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(Self(m))
    }

    /// Takes the Hermitian part of a matrix that is Hermitian in exact
    /// arithmetic (products such as `O^† X O`), absorbing rounding only.
    pub(crate) fn from_rounded(m: DMatrix<C64>) -> Self {
        debug_assert!(hermitian_deviation(&m) < 1e-9, "not Hermitian up to rounding");
        let h = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        Self(h)
    }

    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn from_real_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self(DMatrix::from_fn(n, n, |i, j| if i == j { C64::new(d[i], 0.0) } else { C64::new(0.0, 0.0) }))
    }

    /// `v v^†`
    pub fn outer(v: &ComplexVector) -> Self {
        let v = v.as_dvector();
        Self::from_rounded(v * v.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.0[(i, i)].re).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(&self.0 * C64::new(s, 0.0))
    }

    pub fn add(&self, other: &HermitianMatrix) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self(&self.0 + &other.0))
    }

    pub fn sub(&self, other: &HermitianMatrix) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self(&self.0 - &other.0))
    }

    /// `add(self, s * other)` without the intermediate allocation.
    pub fn axpy(&mut self, s: f64, other: &HermitianMatrix) {
        assert_eq!(self.dim(), other.dim());
        self.0.zip_apply(&other.0, |a, b| *a += b * s);
    }

    /// Real trace inner product `Tr(self * other)`.
    pub fn trace_product(&self, other: &HermitianMatrix) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += (self.0[(i, j)] * other.0[(j, i)]).re;
            }
        }
        Ok(acc)
    }

    /// `B^† self B` for a rectangular `B` with `self.dim()` rows.
    pub fn congruence(&self, b: &DMatrix<C64>) -> Result<HermitianMatrix> {
        check_dim(self.dim(), b.nrows())?;
        Ok(Self::from_rounded(b.adjoint() * &self.0 * b))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        eig_hermitian(self).eigenvalues[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *eig_hermitian(self).eigenvalues.last().expect("non-empty")
    }
}

fn hermitian_deviation(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev / scale
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `Re(v^† H v)`.
pub fn quadratic_form(h: &HermitianMatrix, v: &ComplexVector) -> Result<f64> {
    check_dim(h.dim(), v.dim())?;
    let v = v.as_dvector();
    Ok(v.dotc(&(h.as_matrix() * v)).re)
}

#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal, paired with `eigenvalues`.
    pub eigenvectors: Vec<ComplexVector>,
}

impl EigenDecomposition {
    /// `sum_i lambda_i u_i u_i^†`
    pub fn reconstruct(&self) -> HermitianMatrix {
        let n = self.eigenvalues.len();
        let mut acc = HermitianMatrix::zeros(n);
        for (lam, u) in self.eigenvalues.iter().zip(&self.eigenvectors) {
            acc.axpy(*lam, &HermitianMatrix::outer(u));
        }
        acc
    }

    pub fn largest(&self) -> (f64, &ComplexVector) {
        let i = self.eigenvalues.len() - 1;
        (self.eigenvalues[i], &self.eigenvectors[i])
    }
}

pub fn eig_hermitian(h: &HermitianMatrix) -> EigenDecomposition {
    let n = h.dim();
    let eig = SymmetricEigen::new(h.as_matrix().clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors = order
        .iter()
        .map(|&i| ComplexVector(eig.eigenvectors.column(i).into_owned()))
        .collect();
    EigenDecomposition { eigenvalues, eigenvectors }
}

/// Second-largest over largest eigenvalue. Zero (or numerically zero)
/// matrices return 1.
pub fn rank_ratio(h: &HermitianMatrix) -> Result<f64> {
    let eig = eig_hermitian(h);
    let n = eig.eigenvalues.len();
    let lmax = eig.eigenvalues[n - 1];
    if lmax <= 0.0 {
        if lmax < 0.0 && eig.eigenvalues[0] < -PSD_TOL * h.max_abs() {
            return Err(Error::NotPsd { min_eigenvalue: eig.eigenvalues[0] });
        }
        return Ok(1.0);
    }
    if eig.eigenvalues[0] < -PSD_TOL * lmax {
        return Err(Error::NotPsd { min_eigenvalue: eig.eigenvalues[0] });
    }
    if n == 1 {
        return Ok(0.0);
    }
    Ok(eig.eigenvalues[n - 2].max(0.0) / lmax)
}

/// `[[Re H, -Im H], [Im H, Re H]]`, symmetric of size `2n`.
pub fn real_embedding(h: &HermitianMatrix) -> DMatrix<f64> {
    let n = h.dim();
    let m = h.as_matrix();
    DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let z = m[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> ComplexVector {
        ComplexVector::new((0..n).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect())
            .unwrap()
    }

    fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> HermitianMatrix {
        let a = DMatrix::from_fn(n, n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        HermitianMatrix::from_rounded(&a + a.adjoint())
    }

    fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> HermitianMatrix {
        let a = DMatrix::from_fn(n, n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        HermitianMatrix::from_rounded(&a * a.adjoint())
    }

    #[test]
    fn quadratic_form_identity_and_zero() {
        let v = ComplexVector::new(vec![c(1.0, 0.0), c(0.0, 1.0)]).unwrap();
        assert_eq!(quadratic_form(&HermitianMatrix::identity(2), &v).unwrap(), 2.0);
        assert_eq!(quadratic_form(&HermitianMatrix::zeros(2), &v).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_form_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let h = random_psd(&mut rng, 3);
            let v = random_vector(&mut rng, 3);
            let mut acc = c(0.0, 0.0);
            for i in 0..3 {
                for j in 0..3 {
                    acc += v.entries()[i].conj() * h.get(i, j) * v.entries()[j];
                }
            }
            let q = quadratic_form(&h, &v).unwrap();
            assert!((q - acc.re).abs() < 1e-12 * (1.0 + acc.re.abs()));
            assert!(acc.im.abs() < 1e-10 * (1.0 + acc.re.abs()));
            assert!(q >= -1e-12);
        }
    }

    #[test]
    fn quadratic_form_dimension_mismatch() {
        let v = ComplexVector::zeros(3);
        assert!(matches!(
            quadratic_form(&HermitianMatrix::identity(2), &v),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(HermitianMatrix::new(m), Err(Error::NotHermitian { .. })));
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 1.0), c(0.0, 1.0), c(1.0, 0.0)]);
        assert!(HermitianMatrix::new(m).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(1.0, 0.0)]);
        assert!(HermitianMatrix::new(m).is_ok());
    }

    #[test]
    fn eig_diagonal_sorted() {
        let e = eig_hermitian(&HermitianMatrix::from_real_diagonal(&[1.0, 3.0, 2.0]));
        assert_eq!(e.eigenvalues, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn eig_rank_one_outer_product() {
        let w = ComplexVector::new(vec![c(1.0, 0.0), c(0.0, 2.0)]).unwrap();
        let e = eig_hermitian(&HermitianMatrix::outer(&w));
        assert!(e.eigenvalues[0].abs() < 1e-12);
        assert!((e.eigenvalues[1] - 5.0).abs() < 1e-12);
        let (_, u) = e.largest();
        let overlap = u.inner(&w).unwrap().norm() / w.norm();
        assert!((overlap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eig_two_by_two_matches_characteristic_roots() {
        // [[a, z], [z*, d]] has roots (a+d)/2 -+ sqrt(((a-d)/2)^2 + |z|^2)
        let cases = [(1.0, 2.0, c(0.5, -0.25)), (3.0, -1.0, c(0.0, 2.0)), (0.0, 0.0, c(1.0, 1.0))];
        for (a, d, z) in cases {
            let m = DMatrix::from_row_slice(2, 2, &[c(a, 0.0), z, z.conj(), c(d, 0.0)]);
            let e = eig_hermitian(&HermitianMatrix::new(m).unwrap());
            let mid = (a + d) / 2.0;
            let rad = (((a - d) / 2.0).powi(2) + z.norm_sqr()).sqrt();
            assert!((e.eigenvalues[0] - (mid - rad)).abs() < 1e-12);
            assert!((e.eigenvalues[1] - (mid + rad)).abs() < 1e-12);
        }
    }

    #[test]
    fn eig_reconstruction_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let h = random_hermitian(&mut rng, 4);
            let e = eig_hermitian(&h);
            let err = e.reconstruct().sub(&h).unwrap().frobenius_norm();
            assert!(err <= 1e-9 * h.frobenius_norm());
            for (i, u) in e.eigenvectors.iter().enumerate() {
                for (j, v) in e.eigenvectors.iter().enumerate() {
                    let g = u.inner(v).unwrap();
                    let target = if i == j { 1.0 } else { 0.0 };
                    assert!((g - c(target, 0.0)).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn rank_ratio_cases() {
        let w = ComplexVector::new(vec![c(1.0, 0.5), c(-0.3, 2.0), c(0.1, 0.0)]).unwrap();
        let ww = HermitianMatrix::outer(&w);
        assert!(rank_ratio(&ww).unwrap() < 1e-15);
        assert_eq!(rank_ratio(&HermitianMatrix::identity(3)).unwrap(), 1.0);
        assert_eq!(rank_ratio(&HermitianMatrix::zeros(3)).unwrap(), 1.0);

        // rank one plus 1e-7 I: eigenvalues |w|^2 + 1e-7 and 1e-7 (twice)
        let mut perturbed = ww.clone();
        perturbed.axpy(1e-7, &HermitianMatrix::identity(3));
        let expected = 1e-7 / (w.norm_squared() + 1e-7);
        let got = rank_ratio(&perturbed).unwrap();
        assert!((got - expected).abs() < 1e-6 * expected);
    }

    #[test]
    fn rank_ratio_rejects_indefinite() {
        let h = HermitianMatrix::from_real_diagonal(&[1.0, -0.5]);
        assert!(matches!(rank_ratio(&h), Err(Error::NotPsd { .. })));
        // tiny negative eigenvalues are clamped
        let h = HermitianMatrix::from_real_diagonal(&[1.0, -1e-10]);
        assert_eq!(rank_ratio(&h).unwrap(), 0.0);
    }

    #[test]
    fn rank_ratio_random_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let w = random_vector(&mut rng, 4);
            assert!(rank_ratio(&HermitianMatrix::outer(&w)).unwrap() < 1e-12);
        }
    }

    #[test]
    fn real_embedding_small_cases() {
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(1.0, 0.0)]);
        let emb = real_embedding(&HermitianMatrix::new(m).unwrap());
        let ev = SymmetricEigen::new(emb.clone()).eigenvalues;
        let mut ev: Vec<f64> = ev.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        for (got, want) in ev.iter().zip([0.0, 0.0, 2.0, 2.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(emb, emb.transpose());

        let real = HermitianMatrix::from_real_diagonal(&[2.0, 5.0]);
        let emb = real_embedding(&real);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(emb[(i, j + 2)], 0.0);
                assert_eq!(emb[(i + 2, j)], 0.0);
            }
        }
        assert!(real_embedding(&HermitianMatrix::zeros(3)).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn real_embedding_preserves_min_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..100 {
            let n = 1 + trial % 6;
            let h = random_hermitian(&mut rng, n);
            let emb = real_embedding(&h);
            let min_emb = SymmetricEigen::new(emb).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            assert!((min_emb - h.min_eigenvalue()).abs() < 1e-10);
        }
    }
}
