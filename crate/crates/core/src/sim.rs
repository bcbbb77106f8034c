//! Euler–Maruyama integration of the closed loop
//! `dx = (A x + B1 u1 + B2 u2) dt + D dw`.
//!
//! Gains are refreshed at the start of every integer epoch from the data
//! observed up to that instant and held on `(k, k+1]`; the step that lands
//! on `k` still uses the previous gains. The estimator is fed the same
//! increment the plant produced.

use serde::{Deserialize, Serialize};

use crate::error::{contract, GameError, Result};
use crate::estimator::{
    default_theta0, estimate_error, wls_init, RegularizationState, WeightFunction, WlsState, DEFAULT_GAMMA_REG,
};
use crate::linalg::{spectral_abscissa, Mat};
use crate::model::{validate_model, GameDims, GameModel};
use crate::rng::WienerStreams;
use crate::strategy::{apply_gain, select_gains, DitherState, GainMode, StrategyGains, DEFAULT_T0};

/// Norm beyond which the state is declared divergent.
pub const BLOWUP_NORM: f64 = 1e9;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    pub h: f64,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub dither_enabled: bool,
    /// Lower bound on the dither amplitude (zero: plain schedule).
    pub gamma_floor: f64,
    /// One trajectory row every `record_stride` steps.
    pub record_stride: usize,
}

impl SimConfig {
    pub fn steps_per_epoch(&self) -> usize {
        (1.0 / self.h).round() as usize
    }

    pub fn total_steps(&self) -> usize {
        (self.horizon / self.h).round() as usize
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.h > 0.0 && self.h <= 0.1) {
            return Err(contract(format!("step h must lie in (0, 0.1], got {}", self.h)));
        }
        let per_epoch = 1.0 / self.h;
        if (per_epoch - per_epoch.round()).abs() > 1e-9 * per_epoch {
            return Err(contract(format!("epoch length 1 is not a multiple of h = {}", self.h)));
        }
        if !(self.horizon >= 1.0 && self.horizon.is_finite()) {
            return Err(contract(format!("horizon must be at least 1, got {}", self.horizon)));
        }
        let steps = self.horizon / self.h;
        if (steps - steps.round()).abs() > 1e-6 {
            return Err(contract(format!("horizon {} is not a multiple of h = {}", self.horizon, self.h)));
        }
        if self.x0.len() != n {
            return Err(contract(format!("x0 has length {}, state dimension is {n}", self.x0.len())));
        }
        if self.record_stride == 0 {
            return Err(contract("record_stride must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSettings {
    /// Initial estimate; `None` selects [`default_theta0`].
    pub theta0: Option<Mat>,
    pub cov0_scale: f64,
    pub weight: WeightFunction,
    pub gamma_reg: f64,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            theta0: None,
            cov0_scale: 1.0,
            weight: WeightFunction::default(),
            gamma_reg: DEFAULT_GAMMA_REG,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategySettings {
    pub t0: f64,
}

impl Default for StrategySettings {
    fn default() -> Self {
        Self { t0: DEFAULT_T0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Player {
    One,
    Two,
}

/// Optional additions to a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// `(player, K̃)`: the player applies `u_i + K̃ x` instead of `u_i`.
    pub deviation: Option<(Player, Mat)>,
    /// Reference gains `(L1*, L2*)`; when set the run integrates
    /// `|u_i − L_i* x|²_{R_i}` for both players.
    pub reference_gains: Option<(Mat, Mat)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    pub t: f64,
    pub mode: GainMode,
    pub gamma_k: f64,
    pub l1_norm: f64,
    pub l2_norm: f64,
    /// Spectral abscissa of the estimated closed loop.
    pub closed_loop_abscissa: f64,
    pub y_value: f64,
    pub beta_accepted: bool,
    pub acceptances: u64,
    /// `‖θ̂(k) − θ‖_F` of the least-squares estimate.
    pub estimate_error: f64,
    /// `‖θ̄(k) − θ‖_F` of the regularized estimate.
    pub regularized_error: f64,
    pub cov_trace: f64,
    pub x_norm_sq: f64,
    /// `(1/k) ∫_0^k` of the running cost.
    pub payoff_avg: f64,
    /// `(1/k) ∫_0^k (|x|² + |u1|² + |u2|²)`.
    pub stability_avg: f64,
    /// `∫_{k−1}^k γ² |v_i(t) − v_i(k−1)|² dt` of the epoch just finished.
    pub dither_energy1: f64,
    pub dither_energy2: f64,
}

/// Recorded trajectory. Per-row data is stored flat, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dims: GameDims,
    pub h: f64,
    pub seed: u64,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub running_payoff: Vec<f64>,
    pub estimate_error: Vec<f64>,
    pub modes: Vec<GainMode>,
    pub gamma: Vec<f64>,
    pub stability_stat: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Time actually integrated (shorter than the horizon on divergence).
    pub t_end: f64,
    /// `∫ (xᵀQx + u1ᵀR1u1 − u2ᵀR2u2) dt`, left-endpoint over every step.
    pub payoff_integral: f64,
    pub stability_integral: f64,
    pub deviation_energy1: f64,
    pub deviation_energy2: f64,
    pub floor_activations: u64,
    pub final_theta: Option<Mat>,
}

impl Trajectory {
    fn new(dims: GameDims, h: f64, seed: u64) -> Self {
        Self {
            dims,
            h,
            seed,
            times: Vec::new(),
            states: Vec::new(),
            u1: Vec::new(),
            u2: Vec::new(),
            running_payoff: Vec::new(),
            estimate_error: Vec::new(),
            modes: Vec::new(),
            gamma: Vec::new(),
            stability_stat: Vec::new(),
            epochs: Vec::new(),
            t_end: 0.0,
            payoff_integral: 0.0,
            stability_integral: 0.0,
            deviation_energy1: 0.0,
            deviation_energy2: 0.0,
            floor_activations: 0,
            final_theta: None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, row: usize) -> &[f64] {
        let n = self.dims.n;
        &self.states[row * n..(row + 1) * n]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// `φ = [xᵀ, u1ᵀ, u2ᵀ]ᵀ` at a recorded row.
    pub fn regressor(&self, row: usize) -> Vec<f64> {
        let GameDims { m1, m2, .. } = self.dims;
        let mut phi = self.state(row).to_vec();
        phi.extend_from_slice(&self.u1[row * m1..(row + 1) * m1]);
        phi.extend_from_slice(&self.u2[row * m2..(row + 1) * m2]);
        phi
    }

    /// Prefix average of the stability statistic at epoch `k`.
    pub fn stability_at(&self, k: u64) -> Option<f64> {
        self.epochs.iter().find(|e| e.epoch == k).map(|e| e.stability_avg)
    }

    pub fn estimate_error_at(&self, k: u64) -> Option<f64> {
        self.epochs.iter().find(|e| e.epoch == k).map(|e| e.estimate_error)
    }

    /// `(1/N) Σ_{k<N} |x(k)|²` over the recorded epochs.
    pub fn mean_epoch_state_energy(&self) -> f64 {
        let n = self.epochs.len().max(1) as f64;
        self.epochs.iter().map(|e| e.x_norm_sq).sum::<f64>() / n
    }

    pub fn mode_count(&self, mode: GainMode) -> usize {
        self.epochs.iter().filter(|e| e.mode == mode).count()
    }
}

/// Finite-horizon payoff `(1/T) ∫_0^T (xᵀQx + u1ᵀR1u1 − u2ᵀR2u2) dt`.
pub fn payoff_estimate(traj: &Trajectory) -> f64 {
    if traj.t_end > 0.0 {
        traj.payoff_integral / traj.t_end
    } else {
        0.0
    }
}

/// Gain selection and bookkeeping behind one trajectory.
pub trait Controller {
    /// Gains for `(k, k+1]` from the data observed up to time `k`.
    fn epoch_gains(&mut self, k: u64) -> Result<(StrategyGains, EpochEstimate)>;
    /// Consumes the regressor and increment of one step.
    fn observe(&mut self, phi: &[f64], dx: &[f64], h: f64);
    /// Current `‖θ̂ − θ‖_F`, `NaN` when nothing is estimated.
    fn estimate_error(&self) -> f64;
    fn floor_activations(&self) -> u64 {
        0
    }
    fn theta(&self) -> Option<Mat> {
        None
    }
}

/// Estimator-side data attached to an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochEstimate {
    pub y_value: f64,
    pub beta_accepted: bool,
    pub acceptances: u64,
    pub estimate_error: f64,
    pub regularized_error: f64,
    pub cov_trace: f64,
}

impl EpochEstimate {
    fn none() -> Self {
        Self {
            y_value: f64::NAN,
            beta_accepted: false,
            acceptances: 0,
            estimate_error: f64::NAN,
            regularized_error: f64::NAN,
            cov_trace: f64::NAN,
        }
    }
}

pub struct AdaptiveController<'m> {
    model: &'m GameModel,
    wls: WlsState,
    reg: RegularizationState,
    t0: f64,
    truth: Mat,
}

impl<'m> AdaptiveController<'m> {
    pub fn new(model: &'m GameModel, seed: u64, est: &EstimatorSettings, strat: &StrategySettings) -> Result<Self> {
        let dims = model.dims();
        let d = dims.regressor_len();
        let theta0 = est.theta0.clone().unwrap_or_else(|| default_theta0(dims));
        if !(est.cov0_scale > 0.0) {
            return Err(contract("cov0 scale must be positive"));
        }
        let wls = wls_init(dims, theta0, Mat::identity(d, d) * est.cov0_scale, est.weight)?;
        let reg = RegularizationState::new(dims, est.gamma_reg, WienerStreams::regularization_rng(seed))?;
        Ok(Self {
            model,
            wls,
            reg,
            t0: strat.t0,
            truth: model.theta(),
        })
    }
}

impl Controller for AdaptiveController<'_> {
    fn epoch_gains(&mut self, _k: u64) -> Result<(StrategyGains, EpochEstimate)> {
        let est = self.reg.regularize(&self.wls)?;
        let gains = select_gains(&est, &self.model.q, &self.model.r1, &self.model.r2, self.t0)?;
        let info = EpochEstimate {
            y_value: est.y_value,
            beta_accepted: est.beta_accepted,
            acceptances: self.reg.acceptances,
            estimate_error: (&self.wls.theta - &self.truth).norm(),
            regularized_error: (&est.theta_bar - &self.truth).norm(),
            cov_trace: est.cov_trace,
        };
        Ok((gains, info))
    }

    fn observe(&mut self, phi: &[f64], dx: &[f64], h: f64) {
        self.wls.step(phi, dx, h);
    }

    fn estimate_error(&self) -> f64 {
        estimate_error(&self.wls.theta, self.model)
    }

    fn floor_activations(&self) -> u64 {
        self.wls.floor_activations
    }

    fn theta(&self) -> Option<Mat> {
        Some(self.wls.theta.clone())
    }
}

pub struct FixedController {
    gains: StrategyGains,
}

impl FixedController {
    pub fn new(model: &GameModel, l1: Mat, l2: Mat) -> Result<Self> {
        let dims = model.dims();
        if l1.shape() != (dims.m1, dims.n) || l2.shape() != (dims.m2, dims.n) {
            return Err(contract("fixed gains do not match the model dimensions"));
        }
        let a_cl = &model.a + &model.b1 * &l1 + &model.b2 * &l2;
        let closed_loop_abscissa = spectral_abscissa(&a_cl)?;
        Ok(Self {
            gains: StrategyGains {
                l1,
                l2,
                mode: GainMode::Fixed,
                epoch: 0,
                p1_used: None,
                closed_loop_abscissa,
            },
        })
    }
}

impl Controller for FixedController {
    fn epoch_gains(&mut self, k: u64) -> Result<(StrategyGains, EpochEstimate)> {
        let mut g = self.gains.clone();
        g.epoch = k;
        Ok((g, EpochEstimate::none()))
    }

    fn observe(&mut self, _phi: &[f64], _dx: &[f64], _h: f64) {}

    fn estimate_error(&self) -> f64 {
        f64::NAN
    }
}

pub fn simulate_adaptive(
    model: &GameModel,
    cfg: &SimConfig,
    est: &EstimatorSettings,
    strat: &StrategySettings,
) -> Result<Trajectory> {
    simulate_adaptive_with(model, cfg, est, strat, &RunOptions::default())
}

pub fn simulate_adaptive_with(
    model: &GameModel,
    cfg: &SimConfig,
    est: &EstimatorSettings,
    strat: &StrategySettings,
    opts: &RunOptions,
) -> Result<Trajectory> {
    check_model(model)?;
    let mut ctl = AdaptiveController::new(model, cfg.seed, est, strat)?;
    simulate(model, cfg, &mut ctl, opts)
}

pub fn simulate_fixed_gains(model: &GameModel, cfg: &SimConfig, l1: &Mat, l2: &Mat) -> Result<Trajectory> {
    simulate_fixed_gains_with(model, cfg, l1, l2, &RunOptions::default())
}

pub fn simulate_fixed_gains_with(
    model: &GameModel,
    cfg: &SimConfig,
    l1: &Mat,
    l2: &Mat,
    opts: &RunOptions,
) -> Result<Trajectory> {
    check_model(model)?;
    let mut ctl = FixedController::new(model, l1.clone(), l2.clone())?;
    simulate(model, cfg, &mut ctl, opts)
}

fn check_model(model: &GameModel) -> Result<()> {
    let issues = validate_model(model);
    if issues.is_empty() {
        Ok(())
    } else {
        let text: Vec<String> = issues.iter().map(|i| i.to_string()).collect();
        Err(contract(format!("invalid model: {}", text.join("; "))))
    }
}

/// Row-major copy of `m` for the inner loop.
fn flat(m: &Mat) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// `out += M v` with `M` row-major `rows × v.len()`.
#[inline]
fn mat_vec_add(m: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    if cols == 0 {
        return;
    }
    for (row, o) in m.chunks_exact(cols).zip(out.iter_mut()) {
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(v) {
            acc += a * b;
        }
        *o += acc;
    }
}

#[inline]
fn quad_form(m: &[f64], v: &[f64]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += m[i * n + j] * v[j];
        }
        acc += v[i] * row;
    }
    acc
}

/// Shared integrator behind every run.
pub fn simulate<C: Controller>(model: &GameModel, cfg: &SimConfig, ctl: &mut C, opts: &RunOptions) -> Result<Trajectory> {
    let dims = model.dims();
    cfg.validate(dims.n)?;
    let GameDims { n, m1, m2, p } = dims;
    let h = cfg.h;
    let per_epoch = cfg.steps_per_epoch();
    let steps = cfg.total_steps();

    let (a, b1, b2, dm) = (flat(&model.a), flat(&model.b1), flat(&model.b2), flat(&model.d));
    let (q, r1, r2) = (flat(&model.q), flat(&model.r1), flat(&model.r2));
    let (dev1, dev2) = match &opts.deviation {
        Some((Player::One, k)) if k.shape() == (m1, n) => (Some(k.clone()), None),
        Some((Player::Two, k)) if k.shape() == (m2, n) => (None, Some(k.clone())),
        Some(_) => return Err(contract("deviation gain has the wrong shape")),
        None => (None, None),
    };
    let reference = match &opts.reference_gains {
        Some((l1, l2)) if l1.shape() == (m1, n) && l2.shape() == (m2, n) => Some((l1.clone(), l2.clone())),
        Some(_) => return Err(contract("reference gains have the wrong shape")),
        None => None,
    };

    let mut streams = WienerStreams::new(cfg.seed, h);
    let mut dither = DitherState::new(m1, m2, cfg.dither_enabled);
    dither.floor = cfg.gamma_floor;
    let mut traj = Trajectory::new(dims, h, cfg.seed);

    let mut x = cfg.x0.clone();
    let mut u1 = vec![0.0; m1];
    let mut u2 = vec![0.0; m2];
    let mut phi = vec![0.0; n + m1 + m2];
    let mut drift = vec![0.0; n];
    let mut dw = vec![0.0; p];
    let mut dv1 = vec![0.0; m1];
    let mut dv2 = vec![0.0; m2];
    let mut ref_u1 = vec![0.0; m1];
    let mut ref_u2 = vec![0.0; m2];
    let zeros1 = vec![0.0; m1];
    let zeros2 = vec![0.0; m2];

    let mut gains = StrategyGains {
        l1: Mat::zeros(m1, n),
        l2: Mat::zeros(m2, n),
        mode: GainMode::Fixed,
        epoch: 0,
        p1_used: None,
        closed_loop_abscissa: f64::NAN,
    };
    let (mut eff_l1, mut eff_l2) = (gains.l1.clone(), gains.l2.clone());

    for i in 0..=steps {
        let t = i as f64 * h;
        if i % per_epoch == 0 {
            let k = (i / per_epoch) as u64;
            let (e1, e2) = (dither.energy1, dither.energy2);
            let (g, info) = ctl.epoch_gains(k)?;
            gains = g;
            eff_l1 = match &dev1 {
                Some(d) => &gains.l1 + d,
                None => gains.l1.clone(),
            };
            eff_l2 = match &dev2 {
                Some(d) => &gains.l2 + d,
                None => gains.l2.clone(),
            };
            dither.start_epoch(k);
            traj.epochs.push(EpochRecord {
                epoch: k,
                t,
                mode: gains.mode,
                gamma_k: dither.gamma_k,
                l1_norm: gains.l1.norm(),
                l2_norm: gains.l2.norm(),
                closed_loop_abscissa: gains.closed_loop_abscissa,
                y_value: info.y_value,
                beta_accepted: info.beta_accepted,
                acceptances: info.acceptances,
                estimate_error: info.estimate_error,
                regularized_error: info.regularized_error,
                cov_trace: info.cov_trace,
                x_norm_sq: x.iter().map(|v| v * v).sum(),
                payoff_avg: prefix_average(traj.payoff_integral, t),
                stability_avg: prefix_average(traj.stability_integral, t),
                dither_energy1: e1,
                dither_energy2: e2,
            });
        }

        apply_gain(&eff_l1, &x, &dither.acc1, dither.gamma_k, &mut u1);
        apply_gain(&eff_l2, &x, &dither.acc2, dither.gamma_k, &mut u2);

        if i % cfg.record_stride == 0 || i == steps {
            traj.times.push(t);
            traj.states.extend_from_slice(&x);
            traj.u1.extend_from_slice(&u1);
            traj.u2.extend_from_slice(&u2);
            traj.running_payoff.push(prefix_average(traj.payoff_integral, t));
            traj.estimate_error.push(ctl.estimate_error());
            traj.modes.push(gains.mode);
            traj.gamma.push(dither.gamma_k);
            traj.stability_stat.push(prefix_average(traj.stability_integral, t));
        }
        if i == steps {
            break;
        }

        let cost = quad_form(&q, &x) + quad_form(&r1, &u1) - quad_form(&r2, &u2);
        let energy: f64 = x.iter().chain(&u1).chain(&u2).map(|v| v * v).sum();
        traj.payoff_integral += cost * h;
        traj.stability_integral += energy * h;
        if let Some((l1s, l2s)) = &reference {
            apply_gain(l1s, &x, &zeros1, 0.0, &mut ref_u1);
            apply_gain(l2s, &x, &zeros2, 0.0, &mut ref_u2);
            for (r, u) in ref_u1.iter_mut().zip(&u1) {
                *r = u - *r;
            }
            for (r, u) in ref_u2.iter_mut().zip(&u2) {
                *r = u - *r;
            }
            traj.deviation_energy1 += quad_form(&r1, &ref_u1) * h;
            traj.deviation_energy2 += quad_form(&r2, &ref_u2) * h;
        }

        streams.w.fill(&mut dw);
        if cfg.dither_enabled {
            streams.v1.fill(&mut dv1);
            streams.v2.fill(&mut dv2);
        }

        drift.fill(0.0);
        mat_vec_add(&a, &x, &mut drift);
        mat_vec_add(&b1, &u1, &mut drift);
        mat_vec_add(&b2, &u2, &mut drift);
        for v in drift.iter_mut() {
            *v *= h;
        }
        mat_vec_add(&dm, &dw, &mut drift);

        phi[..n].copy_from_slice(&x);
        phi[n..n + m1].copy_from_slice(&u1);
        phi[n + m1..].copy_from_slice(&u2);
        ctl.observe(&phi, &drift, h);

        for (xv, d) in x.iter_mut().zip(&drift) {
            *xv += d;
        }
        dither.accumulate(&dv1, &dv2, h);
        traj.t_end = (i + 1) as f64 * h;

        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= BLOWUP_NORM) {
            traj.times.push(traj.t_end);
            traj.states.extend_from_slice(&x);
            traj.u1.extend_from_slice(&u1);
            traj.u2.extend_from_slice(&u2);
            traj.running_payoff.push(prefix_average(traj.payoff_integral, traj.t_end));
            traj.estimate_error.push(ctl.estimate_error());
            traj.modes.push(gains.mode);
            traj.gamma.push(dither.gamma_k);
            traj.stability_stat.push(prefix_average(traj.stability_integral, traj.t_end));
            traj.floor_activations = ctl.floor_activations();
            return Err(GameError::Divergence {
                t: traj.t_end,
                norm,
                partial: Box::new(traj),
            });
        }
    }
    traj.floor_activations = ctl.floor_activations();
    traj.final_theta = ctl.theta();
    Ok(traj)
}

fn prefix_average(integral: f64, t: f64) -> f64 {
    if t > 0.0 {
        integral / t
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matrix_exponential;
    use crate::riccati::{nash_gains, solve_model_are};
    use approx::assert_relative_eq;

    fn scalar(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    fn scalar_game(d: f64) -> GameModel {
        GameModel {
            a: scalar(0.0),
            b1: scalar(1.0),
            b2: scalar(1.0),
            d: scalar(d),
            q: scalar(1.0),
            r1: scalar(1.0),
            r2: scalar(2.0),
        }
    }

    fn cfg(horizon: f64, h: f64, x0: Vec<f64>) -> SimConfig {
        SimConfig {
            horizon,
            h,
            seed: 7,
            x0,
            dither_enabled: false,
            gamma_floor: 0.0,
            record_stride: 1,
        }
    }

    fn true_gains(m: &GameModel) -> (Mat, Mat) {
        let sol = solve_model_are(m).unwrap().into_solution().unwrap();
        nash_gains(&sol, &m.b1, &m.b2, &m.r1, &m.r2).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(cfg(10.0, 0.005, vec![0.0]).validate(1).is_ok());
        assert!(cfg(10.0, 0.2, vec![0.0]).validate(1).is_err());
        assert!(cfg(10.0, 0.003, vec![0.0]).validate(1).is_err());
        assert!(cfg(0.5, 0.005, vec![0.0]).validate(1).is_err());
        assert!(cfg(10.0, 0.005, vec![0.0, 1.0]).validate(1).is_err());
    }

    #[test]
    fn deterministic_run_matches_exponential() {
        let m = scalar_game(0.0);
        let (l1, l2) = true_gains(&m);
        let phi = &m.a + &m.b1 * &l1 + &m.b2 * &l2;
        let exact = matrix_exponential(&phi, 10.0).unwrap()[(0, 0)];
        let mut errors = Vec::new();
        for h in [0.01, 0.005, 0.0025] {
            let traj = simulate_fixed_gains(&m, &cfg(10.0, h, vec![1.0]), &l1, &l2).unwrap();
            assert_relative_eq!(traj.t_end, 10.0, epsilon = 1e-9);
            errors.push((traj.final_state()[0] - exact).abs());
        }
        assert!(errors[0] < 0.01 * exact.abs().max(1e-3) + 1e-4);
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.7..=2.3).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn equilibrium_stays_at_rest() {
        let m = scalar_game(0.0);
        let traj = simulate_adaptive(&m, &cfg(5.0, 0.01, vec![0.0]), &EstimatorSettings::default(), &StrategySettings::default())
            .unwrap();
        assert!(traj.states.iter().all(|&v| v == 0.0));
        assert_eq!(payoff_estimate(&traj), 0.0);
        assert_eq!(traj.epochs.len(), 6);
    }

    #[test]
    fn open_loop_decay() {
        let mut m = scalar_game(0.0);
        m.a = scalar(-1.0);
        let traj = simulate_fixed_gains(&m, &cfg(2.0, 0.001, vec![1.0]), &scalar(0.0), &scalar(0.0)).unwrap();
        assert_relative_eq!(traj.final_state()[0], (-2f64).exp(), epsilon = 1e-3);
    }

    #[test]
    fn destabilizing_gains_diverge() {
        let m = scalar_game(0.0);
        let err = simulate_fixed_gains(&m, &cfg(20.0, 0.01, vec![1.0]), &scalar(3.0), &scalar(0.0)).unwrap_err();
        match err {
            GameError::Divergence { t, partial, .. } => {
                assert!(t < 20.0);
                assert!(!partial.is_empty());
                assert_relative_eq!(partial.times.last().copied().unwrap(), t);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn constant_state_payoff() {
        // x stays at [1, 0] with A = 0, no inputs and no noise
        let m = GameModel {
            a: Mat::zeros(2, 2),
            b1: Mat::zeros(2, 1),
            b2: Mat::zeros(2, 1),
            d: Mat::zeros(2, 1),
            q: Mat::identity(2, 2),
            r1: scalar(1.0),
            r2: scalar(1.0),
        };
        let traj =
            simulate_fixed_gains(&m, &cfg(3.0, 0.01, vec![1.0, 0.0]), &Mat::zeros(1, 2), &Mat::zeros(1, 2)).unwrap();
        assert_relative_eq!(payoff_estimate(&traj), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn runs_are_reproducible() {
        let m = scalar_game(1.0);
        let mut c = cfg(20.0, 0.01, vec![0.5]);
        c.dither_enabled = true;
        let est = EstimatorSettings::default();
        let strat = StrategySettings::default();
        let a = simulate_adaptive(&m, &c, &est, &strat).unwrap();
        let b = simulate_adaptive(&m, &c, &est, &strat).unwrap();
        assert_eq!(a, b);
        c.seed = 8;
        let other = simulate_adaptive(&m, &c, &est, &strat).unwrap();
        assert_ne!(a.states, other.states);
    }

    #[test]
    fn ornstein_uhlenbeck_variance() {
        let m = GameModel {
            a: scalar(-1.0),
            b1: Mat::zeros(1, 0),
            b2: Mat::zeros(1, 0),
            d: scalar(1.0),
            q: scalar(1.0),
            r1: Mat::zeros(0, 0),
            r2: Mat::zeros(0, 0),
        };
        let mut vars = Vec::new();
        for seed in 0..20 {
            let mut c = cfg(500.0, 0.01, vec![0.0]);
            c.seed = seed;
            let traj = simulate_fixed_gains(&m, &c, &Mat::zeros(0, 1), &Mat::zeros(0, 1)).unwrap();
            // payoff with q = 1 and no inputs is the time average of x²
            vars.push(payoff_estimate(&traj));
        }
        vars.sort_by(f64::total_cmp);
        let median = 0.5 * (vars[9] + vars[10]);
        assert!((median - 0.5).abs() < 0.05, "median variance {median}");
    }

    #[test]
    fn gains_refresh_at_epoch_start() {
        let m = scalar_game(1.0);
        let mut c = cfg(3.0, 0.1, vec![1.0]);
        c.dither_enabled = true;
        let traj = simulate_adaptive(&m, &c, &EstimatorSettings::default(), &StrategySettings::default()).unwrap();
        let epochs: Vec<u64> = traj.epochs.iter().map(|e| e.epoch).collect();
        assert_eq!(epochs, vec![0, 1, 2, 3]);
        assert_eq!(traj.len(), 31);
        // the row at t = 1 already carries the epoch-1 schedule value
        assert_eq!(traj.gamma[10], crate::strategy::gamma_schedule(1));
        assert!(traj.epochs[1].dither_energy1 > 0.0);
        assert_eq!(traj.epochs[0].dither_energy1, 0.0);
    }

    #[test]
    fn regressor_is_stacked_state_and_inputs() {
        let m = scalar_game(1.0);
        let (l1, l2) = true_gains(&m);
        let traj = simulate_fixed_gains(&m, &cfg(1.0, 0.1, vec![2.0]), &l1, &l2).unwrap();
        let phi = traj.regressor(0);
        assert_eq!(phi.len(), 3);
        assert_eq!(phi[0], 2.0);
        assert_relative_eq!(phi[1], -2.0 * 2f64.sqrt(), epsilon = 1e-9);
        assert_relative_eq!(phi[2], 2f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn reference_gains_measure_deviation_energy() {
        let m = scalar_game(1.0);
        let (l1, l2) = true_gains(&m);
        let c = cfg(50.0, 0.01, vec![1.0]);
        let opts = RunOptions {
            deviation: Some((Player::One, scalar(0.3))),
            reference_gains: Some((l1.clone(), l2.clone())),
        };
        let traj = simulate_fixed_gains_with(&m, &c, &l1, &l2, &opts).unwrap();
        assert_eq!(traj.deviation_energy2, 0.0);
        // |u1 − L1 x|² = 0.09 x², and the stability integral dominates ∫ x²
        assert!(traj.deviation_energy1 > 0.0 && traj.deviation_energy1 < 0.09 * traj.stability_integral);
    }
}
