//! Dense linear-algebra kernels shared by the solver, estimator and
//! strategy layers: eigenvalues and spectral abscissa, matrix exponential,
//! finite-horizon controllability Gramian, Kalman controllability test and
//! the SPD square root.
//!
//! All routines target small dense systems (n up to about 20).

use nalgebra::{ComplexField, DMatrix, DVector, Schur, SymmetricEigen, SVD};
use num_complex::Complex64;

use crate::error::{contract, numerical, Result};

pub type Mat = DMatrix<f64>;
pub type CMat = DMatrix<Complex64>;

/// Complex square matrix stored as separate real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    pub re: Mat,
    pub im: Mat,
}

impl ComplexMatrix {
    pub fn new(re: Mat, im: Mat) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(contract(format!(
                "real part {:?} and imaginary part {:?} differ in shape",
                re.shape(),
                im.shape()
            )));
        }
        Ok(Self { re, im })
    }

    pub fn from_real(re: Mat) -> Self {
        let im = Mat::zeros(re.nrows(), re.ncols());
        Self { re, im }
    }

    pub fn from_complex(m: &CMat) -> Self {
        Self {
            re: m.map(|z| z.re),
            im: m.map(|z| z.im),
        }
    }

    pub fn to_complex(&self) -> CMat {
        self.re.zip_map(&self.im, Complex64::new)
    }

    pub fn nrows(&self) -> usize {
        self.re.nrows()
    }

    pub fn frobenius_norm(&self) -> f64 {
        (self.re.norm_squared() + self.im.norm_squared()).sqrt()
    }

    /// Distance from Hermitian symmetry, relative to the matrix norm.
    pub fn hermitian_defect(&self) -> f64 {
        let re_defect = (&self.re - self.re.transpose()).norm_squared();
        let im_defect = (&self.im + self.im.transpose()).norm_squared();
        (re_defect + im_defect).sqrt() / self.frobenius_norm().max(f64::MIN_POSITIVE)
    }
}

pub fn complexify(m: &Mat) -> CMat {
    m.map(|x| Complex64::new(x, 0.0))
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Scales rows and columns by powers of two so that their off-diagonal
/// norms are comparable. Returns the diagonal `d` with
/// `balanced = diag(d)^-1 * m * diag(d)`.
pub fn balance<T>(m: &mut DMatrix<T>) -> DVector<f64>
where
    T: ComplexField<RealField = f64>,
{
    const RADIX: f64 = 2.0;
    const RADIX_SQ: f64 = RADIX * RADIX;
    let n = m.nrows();
    let mut scale = DVector::from_element(n, 1.0);
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += m[(j, i)].clone().norm1();
                    r += m[(i, j)].clone().norm1();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / RADIX;
            while c < g {
                f *= RADIX;
                c *= RADIX_SQ;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= RADIX_SQ;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                scale[i] *= f;
                let inv = T::from_real(1.0 / f);
                let fwd = T::from_real(f);
                for j in 0..n {
                    m[(i, j)] *= inv.clone();
                    m[(j, i)] *= fwd.clone();
                }
            }
        }
    }
    scale
}

fn check_square<T>(m: &DMatrix<T>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(contract(format!(
            "{what}: expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn max_schur_iterations(n: usize) -> usize {
    100 * n.max(1) * n.max(1) + 1000
}

/// Matrices whose eigenvalues can be computed by a dense decomposition.
pub trait Spectrum {
    fn spectrum(&self) -> Result<Vec<Complex64>>;
}

impl Spectrum for Mat {
    fn spectrum(&self) -> Result<Vec<Complex64>> {
        check_square(self, "eigenvalues")?;
        if !self.iter().all(|x| x.is_finite()) {
            return Err(numerical("eigenvalues of a non-finite matrix"));
        }
        if self.nrows() == 0 {
            return Ok(Vec::new());
        }
        let mut m = self.clone();
        balance(&mut m);
        let n = m.nrows();
        let schur = Schur::try_new(m, f64::EPSILON, max_schur_iterations(n))
            .ok_or_else(|| numerical("real Schur iteration did not converge"))?;
        Ok(schur.complex_eigenvalues().iter().copied().collect())
    }
}

impl Spectrum for CMat {
    fn spectrum(&self) -> Result<Vec<Complex64>> {
        check_square(self, "eigenvalues")?;
        if !self.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(numerical("eigenvalues of a non-finite matrix"));
        }
        if self.nrows() == 0 {
            return Ok(Vec::new());
        }
        let mut m = self.clone();
        balance(&mut m);
        let n = m.nrows();
        let schur = Schur::try_new(m, f64::EPSILON, max_schur_iterations(n))
            .ok_or_else(|| numerical("complex Schur iteration did not converge"))?;
        let (_, t) = schur.unpack();
        Ok((0..n).map(|i| t[(i, i)]).collect())
    }
}

impl Spectrum for ComplexMatrix {
    fn spectrum(&self) -> Result<Vec<Complex64>> {
        if self.im.iter().all(|&x| x == 0.0) {
            self.re.spectrum()
        } else {
            self.to_complex().spectrum()
        }
    }
}

/// Largest real part over the eigenvalues of `m`.
pub fn spectral_abscissa<M: Spectrum + ?Sized>(m: &M) -> Result<f64> {
    let eig = m.spectrum()?;
    Ok(eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

/// `exp(m * t)` by Padé scaling and squaring.
pub fn matrix_exponential(m: &Mat, t: f64) -> Result<Mat> {
    check_square(m, "matrix_exponential")?;
    if !t.is_finite() || !m.iter().all(|x| x.is_finite()) {
        return Err(numerical("matrix exponential of non-finite input"));
    }
    let scaled = m * t;
    let e = scaled.exp();
    if !e.iter().all(|x| x.is_finite()) {
        return Err(numerical(format!(
            "matrix exponential overflowed (|Mt|_F = {:.3e})",
            scaled.norm()
        )));
    }
    Ok(e)
}

// Gauss-Kronrod 7/15 abscissae and weights on [-1, 1].
const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS_KRONROD: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5, 7).
const GK_WEIGHTS_GAUSS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F>(f: &mut F, lo: f64, hi: f64) -> Result<(Mat, f64)>
where
    F: FnMut(f64) -> Result<Mat>,
{
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center)?;
    let mut kronrod = &fc * GK_WEIGHTS_KRONROD[7];
    let mut gauss = &fc * GK_WEIGHTS_GAUSS[3];
    for (i, &node) in GK_NODES.iter().enumerate().take(7) {
        let dx = half * node;
        let sum = f(center - dx)? + f(center + dx)?;
        kronrod += &sum * GK_WEIGHTS_KRONROD[i];
        if i % 2 == 1 {
            gauss += &sum * GK_WEIGHTS_GAUSS[i / 2];
        }
    }
    kronrod *= half;
    gauss *= half;
    let err = (&kronrod - &gauss).norm();
    Ok((kronrod, err))
}

/// Adaptive Gauss-Kronrod quadrature of a matrix-valued integrand.
fn integrate_matrix<F>(mut f: F, lo: f64, hi: f64, rel_tol: f64) -> Result<Mat>
where
    F: FnMut(f64) -> Result<Mat>,
{
    const MAX_INTERVALS: usize = 20_000;
    let (whole, whole_err) = gk15(&mut f, lo, hi)?;
    let (rows, cols) = whole.shape();
    let mut pieces = vec![(lo, hi, whole, whole_err)];
    for _ in 0..MAX_INTERVALS {
        let total: Mat = pieces.iter().fold(Mat::zeros(rows, cols), |acc, p| acc + &p.2);
        let err: f64 = pieces.iter().map(|p| p.3).sum();
        let scale = total.norm();
        if err <= rel_tol * scale || err <= f64::MIN_POSITIVE {
            return Ok(total);
        }
        let (idx, _) = pieces
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .3.total_cmp(&b.1 .3))
            .expect("at least one interval");
        let (a, b, _, _) = pieces.swap_remove(idx);
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            return Err(numerical("Gramian quadrature interval collapsed"));
        }
        let (left, left_err) = gk15(&mut f, a, mid)?;
        let (right, right_err) = gk15(&mut f, mid, b)?;
        pieces.push((a, mid, left, left_err));
        pieces.push((mid, b, right, right_err));
    }
    Err(numerical("Gramian quadrature did not converge"))
}

/// Finite-horizon Gramian `W(0, T0) = ∫_0^T0 e^{-Aτ} B Bᵀ e^{-Aᵀτ} dτ`.
///
/// Uses `e^{-Aτ}` directly so the integral stays well defined for
/// unstable `A`.
pub fn controllability_gramian(a: &Mat, b: &Mat, t0: f64) -> Result<Mat> {
    check_square(a, "controllability_gramian")?;
    if b.nrows() != a.nrows() {
        return Err(contract(format!(
            "B has {} rows, A is {}x{}",
            b.nrows(),
            a.nrows(),
            a.ncols()
        )));
    }
    if !(t0 > 0.0 && t0.is_finite()) {
        return Err(contract(format!("Gramian horizon must be positive, got {t0}")));
    }
    let neg_a = -a;
    let integrand = |tau: f64| -> Result<Mat> {
        let g = matrix_exponential(&neg_a, tau)? * b;
        Ok(&g * g.transpose())
    };
    let w = integrate_matrix(integrand, 0.0, t0, 1e-12)?;
    Ok(symmetrize(&w))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllabilityReport {
    /// Numerical rank of `[B, AB, ..., A^{n-1}B]`.
    pub rank: usize,
    /// n-th largest singular value of the controllability matrix.
    pub min_sv: f64,
    /// `det(Σ Aⁱ B Bᵀ (Aⁱ)ᵀ)`.
    pub y: f64,
    pub controllable: bool,
}

pub fn controllability_threshold(a: &Mat, b: &Mat) -> f64 {
    1e-8 * (1.0 + a.norm() + b.norm())
}

pub fn kalman_controllability(a: &Mat, b: &Mat) -> Result<ControllabilityReport> {
    check_square(a, "kalman_controllability")?;
    let n = a.nrows();
    if b.nrows() != n {
        return Err(contract(format!("B has {} rows, A is {n}x{n}", b.nrows())));
    }
    let m = b.ncols();
    if n == 0 {
        return Ok(ControllabilityReport {
            rank: 0,
            min_sv: f64::INFINITY,
            y: 1.0,
            controllable: true,
        });
    }
    let mut block = Mat::zeros(n, n * m);
    let mut gram_sum = Mat::zeros(n, n);
    let mut power = b.clone();
    for i in 0..n {
        if m > 0 {
            block.columns_mut(i * m, m).copy_from(&power);
        }
        gram_sum += &power * power.transpose();
        power = a * power;
    }
    let tol = controllability_threshold(a, b);
    let (rank, min_sv) = if m == 0 {
        (0, 0.0)
    } else {
        let svd = SVD::try_new(block, false, false, f64::EPSILON, 0)
            .ok_or_else(|| numerical("SVD of controllability matrix did not converge"))?;
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|x, y| y.total_cmp(x));
        let min_sv = sv.get(n - 1).copied().unwrap_or(0.0);
        (sv.iter().filter(|&&s| s > tol).count().min(n), min_sv)
    };
    let y = symmetrize(&gram_sum).determinant();
    Ok(ControllabilityReport {
        rank,
        min_sv,
        y,
        controllable: rank == n && min_sv > tol,
    })
}

/// Symmetric positive-definite square root.
pub fn matrix_sqrt_spd(m: &Mat) -> Result<Mat> {
    check_square(m, "matrix_sqrt_spd")?;
    let norm = m.norm();
    if (m - m.transpose()).norm() > 1e-8 * norm.max(f64::MIN_POSITIVE) {
        return Err(contract("matrix_sqrt_spd: input is not symmetric"));
    }
    let eig = SymmetricEigen::try_new(symmetrize(m), f64::EPSILON, 0)
        .ok_or_else(|| numerical("symmetric eigen-decomposition did not converge"))?;
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(contract("matrix_sqrt_spd: input is not positive definite"));
    }
    let roots = eig.eigenvalues.map(f64::sqrt);
    let s = &eig.eigenvectors * Mat::from_diagonal(&roots) * eig.eigenvectors.transpose();
    Ok(symmetrize(&s))
}

pub fn min_symmetric_eigenvalue(m: &Mat) -> Result<f64> {
    let eig = SymmetricEigen::try_new(symmetrize(m), f64::EPSILON, 0)
        .ok_or_else(|| numerical("symmetric eigen-decomposition did not converge"))?;
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Solves `r * x = rhs` for symmetric positive-definite `r`.
pub fn spd_solve(r: &Mat, rhs: &Mat) -> Result<Mat> {
    let chol = r
        .clone()
        .cholesky()
        .ok_or_else(|| contract("weight matrix is not positive definite"))?;
    Ok(chol.solve(rhs))
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    let svd = SVD::try_new(m.clone(), false, false, f64::EPSILON, 0)
        .ok_or_else(|| numerical("SVD did not converge"))?;
    Ok(svd.singular_values.iter().copied().fold(0.0, f64::max))
}

/// 2-norm condition number of a complex matrix.
pub fn condition_number(m: &CMat) -> Result<f64> {
    let svd = SVD::try_new(m.clone(), false, false, f64::EPSILON, 0)
        .ok_or_else(|| numerical("SVD did not converge"))?;
    let max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let min = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(if min > 0.0 { max / min } else { f64::INFINITY })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Mat {
        Mat::from_row_slice(rows, cols, data)
    }

    #[test]
    fn abscissa_examples() {
        assert_relative_eq!(spectral_abscissa(&(-Mat::identity(2, 2))).unwrap(), -1.0, epsilon = 1e-12);
        assert!(spectral_abscissa(&m(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap().abs() < 1e-12);
        assert_relative_eq!(spectral_abscissa(&m(2, 2, &[1.0, 2.0, 0.0, -3.0])).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn abscissa_of_complex_matrix() {
        let c = ComplexMatrix::new(m(2, 2, &[-1.0, 0.0, 0.0, -2.0]), m(2, 2, &[3.0, 0.0, 0.0, 1.0])).unwrap();
        assert_relative_eq!(spectral_abscissa(&c).unwrap(), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn exponential_examples() {
        let e = matrix_exponential(&Mat::zeros(3, 3), 7.0).unwrap();
        assert_relative_eq!(e, Mat::identity(3, 3), epsilon = 1e-15);
        let e = matrix_exponential(&m(2, 2, &[1.0, 0.0, 0.0, -1.0]), 1.0).unwrap();
        let want = m(2, 2, &[std::f64::consts::E, 0.0, 0.0, 1.0 / std::f64::consts::E]);
        assert_relative_eq!(e, want, max_relative = 1e-12);
        let e = matrix_exponential(&m(2, 2, &[0.0, 1.0, 0.0, 0.0]), 2.0).unwrap();
        assert_relative_eq!(e, m(2, 2, &[1.0, 2.0, 0.0, 1.0]), epsilon = 1e-14);
    }

    #[test]
    fn exponential_overflow_is_numerical_error() {
        let err = matrix_exponential(&m(1, 1, &[1.0]), 1e6).unwrap_err();
        assert!(matches!(err, crate::GameError::Numerical(_)));
    }

    #[test]
    fn gramian_examples() {
        let w = controllability_gramian(&m(1, 1, &[0.0]), &m(1, 1, &[1.0]), 1.0).unwrap();
        assert_relative_eq!(w[(0, 0)], 1.0, max_relative = 1e-12);
        let w = controllability_gramian(&m(1, 1, &[1.0]), &m(1, 1, &[1.0]), 1.0).unwrap();
        let closed_form = (1.0 - (-2.0f64).exp()) / 2.0;
        assert_relative_eq!(w[(0, 0)], closed_form, max_relative = 1e-10);
        assert_relative_eq!(w[(0, 0)], 0.432_332, epsilon = 1e-6);
        let w = controllability_gramian(&Mat::zeros(2, 2), &Mat::identity(2, 2), 2.0).unwrap();
        assert_relative_eq!(w, Mat::identity(2, 2) * 2.0, max_relative = 1e-12);
    }

    #[test]
    fn gramian_rejects_nonpositive_horizon() {
        assert!(controllability_gramian(&m(1, 1, &[0.0]), &m(1, 1, &[1.0]), 0.0).is_err());
    }

    #[test]
    fn kalman_examples() {
        let r = kalman_controllability(&m(1, 1, &[0.5]), &m(1, 2, &[1.0, 2.0])).unwrap();
        assert_eq!(r.rank, 1);
        assert_relative_eq!(r.y, 5.0, epsilon = 1e-12);
        assert!(r.controllable);

        let r = kalman_controllability(&Mat::identity(2, 2), &m(2, 1, &[1.0, 0.0])).unwrap();
        assert_eq!(r.rank, 1);
        assert!(r.y.abs() < 1e-12);
        assert!(!r.controllable);

        let r = kalman_controllability(&m(2, 2, &[0.0, 1.0, 0.0, 0.0]), &m(2, 1, &[0.0, 1.0])).unwrap();
        assert_eq!(r.rank, 2);
        assert_relative_eq!(r.y, 1.0, epsilon = 1e-12);
        assert!(r.min_sv > 0.0);
    }

    #[test]
    fn sqrt_examples() {
        assert_relative_eq!(matrix_sqrt_spd(&Mat::identity(3, 3)).unwrap(), Mat::identity(3, 3), epsilon = 1e-14);
        let s = matrix_sqrt_spd(&m(2, 2, &[4.0, 0.0, 0.0, 9.0])).unwrap();
        assert_relative_eq!(s, m(2, 2, &[2.0, 0.0, 0.0, 3.0]), epsilon = 1e-14);
        let spd = m(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let s = matrix_sqrt_spd(&spd).unwrap();
        assert!((&s * &s - &spd).norm() <= 1e-10 * spd.norm());
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let err = matrix_sqrt_spd(&m(2, 2, &[1.0, 0.0, 0.0, -1.0])).unwrap_err();
        assert!(matches!(err, crate::GameError::Contract(_)));
    }

    #[test]
    fn balancing_is_a_similarity() {
        let orig = m(3, 3, &[1.0, 1e6, 0.0, 1e-6, 2.0, 1e4, 0.0, 1e-4, 3.0]);
        let mut b = orig.clone();
        let d = balance(&mut b);
        let dm = Mat::from_diagonal(&d);
        let back = &dm * &b * dm.try_inverse().unwrap();
        assert_relative_eq!(back, orig, max_relative = 1e-12);
    }
}
