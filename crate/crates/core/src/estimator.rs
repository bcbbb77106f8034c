//! Weighted least-squares identification of `θ = [A, B1, B2]ᵀ` from the
//! observed state increments, and the random regularization that keeps the
//! estimated pair uniformly controllable.
//!
//! The continuous-time recursion
//!
//! ```text
//! dθ = a Q φ (dxᵀ − φᵀ θ dt),   dQ = −a Q φ φᵀ Q dt,   a = 1 / f(r)
//! ```
//!
//! is integrated with explicit Euler steps at the plant step. Here the gain
//! matrix `Q` is called `cov_gain` to keep it apart from the state weight.

use log::debug;
use nalgebra::SymmetricEigen;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, numerical, Result};
use crate::linalg::{kalman_controllability, matrix_sqrt_spd, spectral_norm, symmetrize, Mat};
use crate::model::{hcat, split_theta, GameDims, GameModel};

/// Smallest eigenvalue kept in `cov_gain` after each Euler step.
pub const COV_FLOOR: f64 = 1e-12;
/// Largest `a·h·φᵀ Q φ` integrated in one Euler step; larger steps are
/// split so the explicit update cannot overshoot.
pub const MAX_STEP_GAIN: f64 = 0.5;
/// Default acceptance factor of the regularization recursion.
pub const DEFAULT_GAMMA_REG: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightFamily {
    /// `f(x) = (log x)^{1+δ}`.
    #[default]
    LogPower,
    /// `f(x) = log x · (log log x)^{1+δ}`.
    LogLogPower,
}

/// Slowly increasing weight function `f`, clamped so that `f >= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightFunction {
    pub family: WeightFamily,
    pub delta: f64,
}

impl Default for WeightFunction {
    fn default() -> Self {
        Self { family: WeightFamily::LogPower, delta: 1.0 }
    }
}

impl WeightFunction {
    pub fn new(family: WeightFamily, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(contract(format!("weight exponent delta must be positive, got {delta}")));
        }
        Ok(Self { family, delta })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let e = std::f64::consts::E;
        match self.family {
            WeightFamily::LogPower => x.max(e).ln().powf(1.0 + self.delta),
            WeightFamily::LogLogPower => {
                let x = x.max(e.powf(e));
                x.ln() * x.ln().ln().powf(1.0 + self.delta)
            }
        }
    }
}

/// Running state of the weighted least-squares estimator.
#[derive(Debug, Clone)]
pub struct WlsState {
    pub dims: GameDims,
    /// `(n + m1 + m2) × n`.
    pub theta: Mat,
    pub cov_gain: Mat,
    /// Cumulative excitation `|cov_gain(0)⁻¹| + ∫|φ|² dt`.
    pub r: f64,
    /// Current weight `1 / f(r)`.
    pub a: f64,
    pub t: f64,
    pub weight: WeightFunction,
    /// Number of steps where the positive-definite floor had to be applied.
    pub floor_activations: u64,
    /// Number of steps split into sub-steps.
    pub split_steps: u64,
    gain: Vec<f64>,
    dx_part: Vec<f64>,
    innovation: Vec<f64>,
    chol: Vec<f64>,
}

/// Builds the estimator state. `theta0` must describe a controllable pair
/// and `cov0` must be symmetric positive definite.
pub fn wls_init(dims: GameDims, theta0: Mat, cov0: Mat, weight: WeightFunction) -> Result<WlsState> {
    let d = dims.regressor_len();
    if theta0.shape() != (d, dims.n) {
        return Err(contract(format!(
            "theta0 must be {}x{}, got {}x{}",
            d,
            dims.n,
            theta0.nrows(),
            theta0.ncols()
        )));
    }
    if cov0.shape() != (d, d) {
        return Err(contract(format!("cov0 must be {d}x{d}")));
    }
    if (&cov0 - cov0.transpose()).norm() > 1e-12 * cov0.norm() {
        return Err(contract("cov0 is not symmetric"));
    }
    let inv = cov0
        .clone()
        .cholesky()
        .ok_or_else(|| contract("cov0 is not positive definite"))?
        .inverse();
    let (a0, b10, b20) = split_theta(&theta0, dims);
    if !kalman_controllability(&a0, &hcat(&b10, &b20))?.controllable {
        return Err(contract("initial estimate (A(0), B(0)) is not controllable"));
    }
    let r = spectral_norm(&inv)?;
    Ok(WlsState {
        dims,
        theta: theta0,
        cov_gain: cov0,
        r,
        a: 1.0 / weight.eval(r),
        t: 0.0,
        weight,
        floor_activations: 0,
        split_steps: 0,
        gain: vec![0.0; d],
        dx_part: vec![0.0; dims.n],
        innovation: vec![0.0; dims.n],
        chol: vec![0.0; d * d],
    })
}

impl WlsState {
    /// Advances the estimator over a step of length `h` with regressor
    /// `phi = [x; u1; u2]` and observed increment `dx`.
    ///
    /// This is one explicit Euler step unless `a·h·φᵀ Q φ` exceeds
    /// [`MAX_STEP_GAIN`]; then the step is split into equal Euler sub-steps
    /// with `φ` held fixed and `dx` spread evenly.
    pub fn step(&mut self, phi: &[f64], dx: &[f64], h: f64) {
        let d = self.dims.regressor_len();
        debug_assert_eq!(phi.len(), d);
        debug_assert_eq!(dx.len(), self.dims.n);
        let cov = self.cov_gain.as_slice();
        let mut quad = 0.0;
        for j in 0..d {
            let mut col = 0.0;
            for i in 0..d {
                col += cov[i + j * d] * phi[i];
            }
            quad += col * phi[j];
        }
        let c = self.a * h * quad;
        if !(c > MAX_STEP_GAIN) {
            self.euler_step(phi, dx, h);
            return;
        }
        let parts = (c / MAX_STEP_GAIN).ceil().min(1e6) as usize;
        self.split_steps += 1;
        let mut dx_part = std::mem::take(&mut self.dx_part);
        for (p, v) in dx_part.iter_mut().zip(dx) {
            *p = v / parts as f64;
        }
        for _ in 0..parts {
            self.euler_step(phi, &dx_part, h / parts as f64);
        }
        self.dx_part = dx_part;
    }

    fn euler_step(&mut self, phi: &[f64], dx: &[f64], h: f64) {
        let d = self.dims.regressor_len();
        let n = self.dims.n;
        let cov = self.cov_gain.as_mut_slice();
        let theta = self.theta.as_mut_slice();

        for i in 0..d {
            let mut acc = 0.0;
            for (j, &p) in phi.iter().enumerate() {
                acc += cov[i + j * d] * p;
            }
            self.gain[i] = acc;
        }
        for j in 0..n {
            let mut pred = 0.0;
            for (i, &p) in phi.iter().enumerate() {
                pred += theta[i + j * d] * p;
            }
            self.innovation[j] = dx[j] - pred * h;
        }
        let a = self.a;
        for j in 0..n {
            let e = a * self.innovation[j];
            for i in 0..d {
                theta[i + j * d] += self.gain[i] * e;
            }
        }
        let c = a * h;
        for j in 0..d {
            for i in 0..d {
                cov[i + j * d] -= c * (self.gain[i] * self.gain[j]);
            }
        }
        for j in 0..d {
            for i in 0..j {
                let avg = 0.5 * (cov[i + j * d] + cov[j + i * d]);
                cov[i + j * d] = avg;
                cov[j + i * d] = avg;
            }
        }
        if !cholesky_above_floor(cov, d, &mut self.chol) {
            self.apply_floor();
        }

        self.r += phi.iter().map(|p| p * p).sum::<f64>() * h;
        self.a = 1.0 / self.weight.eval(self.r);
        self.t += h;
    }

    fn apply_floor(&mut self) {
        self.floor_activations += 1;
        debug!("cov_gain floor applied at t = {:.4}", self.t);
        let eig = SymmetricEigen::new(symmetrize(&self.cov_gain));
        let clamped = eig.eigenvalues.map(|l| l.max(COV_FLOOR));
        let rebuilt = &eig.eigenvectors * Mat::from_diagonal(&clamped) * eig.eigenvectors.transpose();
        self.cov_gain = symmetrize(&rebuilt);
    }

    /// Unregularized estimate `(A, B1, B2)`.
    pub fn estimate(&self) -> (Mat, Mat, Mat) {
        split_theta(&self.theta, self.dims)
    }
}

/// Whether `cov − COV_FLOOR·I` admits a Cholesky factorization.
fn cholesky_above_floor(cov: &[f64], d: usize, work: &mut [f64]) -> bool {
    work.copy_from_slice(cov);
    for i in 0..d {
        work[i + i * d] -= COV_FLOOR;
    }
    for j in 0..d {
        let mut diag = work[j + j * d];
        for k in 0..j {
            diag -= work[j + k * d] * work[j + k * d];
        }
        if !(diag > 0.0) {
            return false;
        }
        let root = diag.sqrt();
        work[j + j * d] = root;
        for i in j + 1..d {
            let mut v = work[i + j * d];
            for k in 0..j {
                v -= work[i + k * d] * work[j + k * d];
            }
            work[i + j * d] = v / root;
        }
    }
    true
}

/// Acceptance rule of the regularization recursion.
pub fn accepts_candidate(y_candidate: f64, y_incumbent: f64, gamma_reg: f64) -> bool {
    y_candidate >= (1.0 + gamma_reg) * y_incumbent
}

/// Uniform draw from the Frobenius unit ball of `rows × cols` matrices.
pub fn sample_unit_ball<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    let dim = (rows * cols) as f64;
    loop {
        let g = Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut *rng));
        let norm = g.norm();
        if norm > 0.0 {
            let radius = rng.random::<f64>().powf(1.0 / dim);
            return g * (radius / norm);
        }
    }
}

/// Piecewise-constant estimate used on the epoch `(k, k+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedEstimate {
    pub epoch: u64,
    pub a_hat: Mat,
    pub b1_hat: Mat,
    pub b2_hat: Mat,
    /// `θ(k) − cov_gain(k)^{1/2} β_k`.
    pub theta_bar: Mat,
    pub y_value: f64,
    pub beta_accepted: bool,
    pub cov_trace: f64,
}

impl RegularizedEstimate {
    pub fn b_hat(&self) -> Mat {
        hcat(&self.b1_hat, &self.b2_hat)
    }
}

#[derive(Debug, Clone)]
pub struct RegularizationState {
    pub beta: Mat,
    pub y_current: f64,
    pub gamma_reg: f64,
    /// Next epoch to be regularized.
    pub k: u64,
    pub acceptances: u64,
    rng: ChaCha8Rng,
}

impl RegularizationState {
    pub fn new(dims: GameDims, gamma_reg: f64, rng: ChaCha8Rng) -> Result<Self> {
        if !(gamma_reg > 0.0 && gamma_reg < 2f64.sqrt() - 1.0) {
            return Err(contract(format!(
                "regularization factor must lie in (0, sqrt(2) - 1), got {gamma_reg}"
            )));
        }
        Ok(Self {
            beta: Mat::zeros(dims.regressor_len(), dims.n),
            y_current: 0.0,
            gamma_reg,
            k: 0,
            acceptances: 0,
            rng,
        })
    }

    /// Regularizes the estimate at the current epoch. Epoch 0 keeps
    /// `β_0 = 0`; later epochs draw a fresh candidate from the unit ball.
    pub fn regularize(&mut self, wls: &WlsState) -> Result<RegularizedEstimate> {
        let candidate = if self.k == 0 {
            None
        } else {
            let dims = wls.dims;
            Some(sample_unit_ball(&mut self.rng, dims.regressor_len(), dims.n))
        };
        self.regularize_with(wls, candidate)
    }

    /// As [`Self::regularize`] with an explicit candidate `η_k` (`None`
    /// keeps the incumbent without comparison).
    pub fn regularize_with(&mut self, wls: &WlsState, candidate: Option<Mat>) -> Result<RegularizedEstimate> {
        let root = matrix_sqrt_spd(&wls.cov_gain)
            .map_err(|e| numerical(format!("square root of cov_gain failed: {e}")))?;
        let incumbent_theta = &wls.theta - &root * &self.beta;
        let y_incumbent = controllability_measure(&incumbent_theta, wls.dims)?;
        let mut accepted = false;
        let mut theta_bar = incumbent_theta;
        let mut y_value = y_incumbent;
        if let Some(eta) = candidate {
            let candidate_theta = &wls.theta - &root * &eta;
            let y_candidate = controllability_measure(&candidate_theta, wls.dims)?;
            if accepts_candidate(y_candidate, y_incumbent, self.gamma_reg) {
                self.beta = eta;
                self.acceptances += 1;
                accepted = true;
                theta_bar = candidate_theta;
                y_value = y_candidate;
            }
        }
        self.y_current = y_value;
        let (a_hat, b1_hat, b2_hat) = split_theta(&theta_bar, wls.dims);
        let est = RegularizedEstimate {
            epoch: self.k,
            a_hat,
            b1_hat,
            b2_hat,
            theta_bar,
            y_value,
            beta_accepted: accepted,
            cov_trace: wls.cov_gain.trace(),
        };
        self.k += 1;
        Ok(est)
    }
}

/// `Y = det(Σ Āⁱ B̄ B̄ᵀ Āⁱᵀ)` for the pair encoded in `theta`.
pub fn controllability_measure(theta: &Mat, dims: GameDims) -> Result<f64> {
    let (a, b1, b2) = split_theta(theta, dims);
    Ok(kalman_controllability(&a, &hcat(&b1, &b2))?.y)
}

/// Frobenius distance between an estimated `θ` and the true parameters.
pub fn estimate_error(theta_hat: &Mat, truth: &GameModel) -> f64 {
    (theta_hat - truth.theta()).norm()
}

/// Default initial estimate: `A(0)` the upper shift matrix and the last
/// basis vector as Player 1's first input column, which is controllable
/// for every `n`.
pub fn default_theta0(dims: GameDims) -> Mat {
    let n = dims.n;
    let a0 = Mat::from_fn(n, n, |i, j| if j == i + 1 { 1.0 } else { 0.0 });
    let mut b10 = Mat::zeros(n, dims.m1);
    let mut b20 = Mat::zeros(n, dims.m2);
    if dims.m1 > 0 {
        b10[(n - 1, 0)] = 1.0;
    } else if dims.m2 > 0 {
        b20[(n - 1, 0)] = 1.0;
    }
    crate::model::stack_theta(&a0, &b10, &b20)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn dims(n: usize, m1: usize, m2: usize) -> GameDims {
        GameDims { n, m1, m2, p: 1 }
    }

    fn scalar_theta(a: f64, b1: f64, b2: f64) -> Mat {
        Mat::from_column_slice(3, 1, &[a, b1, b2])
    }

    #[test]
    fn weight_function_clamps_and_grows_slowly() {
        let f = WeightFunction::default();
        assert_eq!(f.eval(0.5), 1.0);
        assert_eq!(f.eval(1.0), 1.0);
        assert_relative_eq!(f.eval(std::f64::consts::E.powi(3)), 9.0, epsilon = 1e-12);
        let mut prev = 1.0;
        for i in 0..60 {
            let x = 10f64.powf(i as f64 * 0.25);
            let fx = f.eval(x);
            assert!(fx >= prev && fx >= 1.0);
            // f(x^2) = 4 f(x) once x >= e for the log² member
            assert!(f.eval(x * x) <= 4.0 * fx + 1e-9);
            prev = fx;
        }
        let ll = WeightFunction::new(WeightFamily::LogLogPower, 0.5).unwrap();
        assert!(ll.eval(1.0) >= 1.0);
        assert!(WeightFunction::new(WeightFamily::LogPower, 0.0).is_err());
    }

    #[test]
    fn init_examples() {
        let s = wls_init(dims(1, 1, 1), scalar_theta(0.0, 1.0, 1.0), Mat::identity(3, 3), WeightFunction::default())
            .unwrap();
        assert_relative_eq!(s.r, 1.0, epsilon = 1e-14);
        assert_eq!(s.a, 1.0);

        let s = wls_init(
            dims(1, 1, 1),
            scalar_theta(0.0, 1.0, 1.0),
            Mat::identity(3, 3) * 2.0,
            WeightFunction::default(),
        )
        .unwrap();
        assert_relative_eq!(s.r, 0.5, epsilon = 1e-14);
        assert_eq!(s.a, 1.0);

        let err = wls_init(dims(1, 1, 1), scalar_theta(0.3, 0.0, 0.0), Mat::identity(3, 3), WeightFunction::default())
            .unwrap_err();
        assert!(matches!(err, crate::GameError::Contract(_)));
    }

    #[test]
    fn init_rejects_indefinite_cov() {
        let mut cov = Mat::identity(3, 3);
        cov[(2, 2)] = -1.0;
        assert!(wls_init(dims(1, 1, 1), scalar_theta(0.0, 1.0, 1.0), cov, WeightFunction::default()).is_err());
    }

    #[test]
    fn zero_regressor_only_advances_time() {
        let mut s = wls_init(dims(1, 1, 1), scalar_theta(0.0, 1.0, 1.0), Mat::identity(3, 3), WeightFunction::default())
            .unwrap();
        let before = s.clone();
        s.step(&[0.0, 0.0, 0.0], &[0.3], 0.01);
        assert_eq!(s.theta, before.theta);
        assert_eq!(s.cov_gain, before.cov_gain);
        assert_eq!(s.r, before.r);
        assert_relative_eq!(s.t, 0.01);
    }

    #[test]
    fn single_scalar_euler_step() {
        // one-dimensional regressor: θ = 0, cov = 1, φ = 1, a = 1
        let d = GameDims { n: 1, m1: 0, m2: 0, p: 1 };
        let mut s = WlsState {
            dims: d,
            theta: Mat::zeros(1, 1),
            cov_gain: Mat::identity(1, 1),
            r: 1.0,
            a: 1.0,
            t: 0.0,
            weight: WeightFunction::default(),
            floor_activations: 0,
            split_steps: 0,
            gain: vec![0.0; 1],
            dx_part: vec![0.0; 1],
            innovation: vec![0.0; 1],
            chol: vec![0.0; 1],
        };
        s.step(&[1.0], &[0.01], 0.01);
        assert_relative_eq!(s.theta[(0, 0)], 0.01, epsilon = 1e-15);
        assert_relative_eq!(s.cov_gain[(0, 0)], 0.99, epsilon = 1e-15);
        assert_relative_eq!(s.r, 1.01, epsilon = 1e-15);
    }

    #[test]
    fn cov_gain_is_loewner_decreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = wls_init(dims(2, 1, 1), default_theta0(dims(2, 1, 1)), Mat::identity(4, 4), WeightFunction::default())
            .unwrap();
        let probes: Vec<Mat> = (0..8).map(|_| Mat::from_fn(4, 1, |_, _| rng.random_range(-1.0..1.0))).collect();
        for _ in 0..1000 {
            let phi: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let dx: Vec<f64> = (0..2).map(|_| rng.random_range(-0.1..0.1)).collect();
            let before = s.cov_gain.clone();
            s.step(&phi, &dx, 0.01);
            for v in &probes {
                let q_before = (v.transpose() * &before * v)[(0, 0)];
                let q_after = (v.transpose() * &s.cov_gain * v)[(0, 0)];
                assert!(q_after <= q_before + 1e-12);
            }
            assert!(s.cov_gain.trace() <= before.trace() + 1e-12);
        }
        assert!(crate::linalg::min_symmetric_eigenvalue(&s.cov_gain).unwrap() > 0.0);
    }

    #[test]
    fn floor_restores_positive_definiteness() {
        let d = dims(1, 1, 1);
        let mut s = wls_init(d, scalar_theta(0.0, 1.0, 1.0), Mat::identity(3, 3), WeightFunction::default()).unwrap();
        // a*h*|φ|^2 = 2 overshoots a single Euler update of cov_gain
        s.euler_step(&[2.0, 0.0, 0.0], &[0.0], 0.5);
        assert_eq!(s.floor_activations, 1);
        assert!(crate::linalg::min_symmetric_eigenvalue(&s.cov_gain).unwrap() >= COV_FLOOR * 0.5);
    }

    #[test]
    fn large_steps_are_split_and_stay_bounded() {
        let d = dims(1, 1, 1);
        let truth = scalar_theta(0.5, 1.0, -1.0);
        let mut s = wls_init(d, scalar_theta(0.0, 1.0, 1.0), Mat::identity(3, 3), WeightFunction::default()).unwrap();
        let phi = [40.0, -3.0, 5.0];
        let dx = [(truth.transpose() * Mat::from_column_slice(3, 1, &phi))[(0, 0)] * 0.01];
        s.step(&phi, &dx, 0.01);
        assert_eq!(s.split_steps, 1);
        assert_eq!(s.floor_activations, 0);
        // the innovation along φ is removed, not amplified
        let pred = (s.theta.transpose() * Mat::from_column_slice(3, 1, &phi))[(0, 0)] * 0.01;
        assert!((pred - dx[0]).abs() < 0.5 * dx[0].abs());
        assert!(s.theta.norm() < 10.0);
        assert_relative_eq!(s.t, 0.01, epsilon = 1e-15);
        assert_relative_eq!(s.r, 1.0 + (1600.0 + 9.0 + 25.0) * 0.01, epsilon = 1e-9);
    }

    #[test]
    fn acceptance_rule_examples() {
        assert!(accepts_candidate(6.0, 4.0, 0.2));
        assert!(!accepts_candidate(4.7, 4.0, 0.2));
    }

    #[test]
    fn regularization_rejects_bad_gamma() {
        let rng = ChaCha8Rng::seed_from_u64(0);
        assert!(RegularizationState::new(dims(1, 1, 1), 0.5, rng.clone()).is_err());
        assert!(RegularizationState::new(dims(1, 1, 1), 0.0, rng).is_err());
    }

    #[test]
    fn regularization_follows_acceptance_rule() {
        let d = dims(1, 1, 1);
        let s = wls_init(d, scalar_theta(0.0, 1.0, 1.0), Mat::identity(3, 3), WeightFunction::default()).unwrap();
        let mut reg = RegularizationState::new(d, 0.2, ChaCha8Rng::seed_from_u64(1)).unwrap();
        let e0 = reg.regularize(&s).unwrap();
        assert_eq!(e0.epoch, 0);
        assert!(!e0.beta_accepted);
        assert_relative_eq!(e0.y_value, 2.0, epsilon = 1e-12);

        // candidate shrinking B: Y drops, incumbent kept
        let shrink = Mat::from_column_slice(3, 1, &[0.0, 0.5, 0.5]);
        let e1 = reg.regularize_with(&s, Some(shrink)).unwrap();
        assert!(!e1.beta_accepted);
        assert_eq!(reg.beta, Mat::zeros(3, 1));

        // candidate growing B: Y = 2 * 1.5^2 = 4.5 >= 1.2 * 2
        let grow = Mat::from_column_slice(3, 1, &[0.0, -0.5, -0.5]);
        let e2 = reg.regularize_with(&s, Some(grow.clone())).unwrap();
        assert!(e2.beta_accepted);
        assert_relative_eq!(e2.y_value, 4.5, epsilon = 1e-12);
        assert_eq!(reg.beta, grow);
        assert_eq!(reg.acceptances, 1);
    }

    #[test]
    fn vanishing_cov_gain_removes_modification() {
        let d = dims(1, 1, 1);
        let mut s = wls_init(d, scalar_theta(0.0, 1.0, 1.0), Mat::identity(3, 3), WeightFunction::default()).unwrap();
        s.cov_gain = Mat::identity(3, 3) * 1e-20;
        let mut reg = RegularizationState::new(d, 0.2, ChaCha8Rng::seed_from_u64(1)).unwrap();
        reg.beta = Mat::from_column_slice(3, 1, &[0.5, 0.5, 0.5]);
        reg.k = 3;
        let est = reg.regularize(&s).unwrap();
        assert!((&est.theta_bar - &s.theta).norm() < 1e-9);
    }

    #[test]
    fn unit_ball_samples_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut max_norm: f64 = 0.0;
        let mut mean_norm = 0.0;
        for _ in 0..2000 {
            let m = sample_unit_ball(&mut rng, 4, 2);
            max_norm = max_norm.max(m.norm());
            mean_norm += m.norm() / 2000.0;
        }
        assert!(max_norm <= 1.0);
        // E|η| = d / (d + 1) for the uniform ball in d = 8 dimensions
        assert!((mean_norm - 8.0 / 9.0).abs() < 0.02);
    }

    #[test]
    fn error_examples() {
        let truth = GameModel {
            a: Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            b1: Mat::from_row_slice(2, 1, &[0.0, 1.0]),
            b2: Mat::from_row_slice(2, 1, &[1.0, 0.0]),
            d: Mat::zeros(2, 1),
            q: Mat::identity(2, 2),
            r1: Mat::identity(1, 1),
            r2: Mat::identity(1, 1),
        };
        assert_eq!(estimate_error(&truth.theta(), &truth), 0.0);
        let shifted = crate::model::stack_theta(&(&truth.a + Mat::identity(2, 2)), &truth.b1, &truth.b2);
        assert_relative_eq!(estimate_error(&shifted, &truth), 2f64.sqrt(), epsilon = 1e-14);
        let e = Mat::from_fn(4, 2, |i, j| (i as f64) - 0.5 * j as f64);
        assert_relative_eq!(estimate_error(&(truth.theta() + &e), &truth), e.norm(), epsilon = 1e-14);
    }

    #[test]
    fn default_initial_estimate_is_controllable() {
        for n in 1..6 {
            let d = dims(n, 1, 1);
            let (a, b1, b2) = split_theta(&default_theta0(d), d);
            assert!(kalman_controllability(&a, &hcat(&b1, &b2)).unwrap().controllable);
        }
    }
}
