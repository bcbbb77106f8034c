//! Certainty-equivalent feedback gains and the diminishing dither.
//!
//! At every integer epoch the players solve the game Riccati equation of
//! the regularized estimate. When it has a solution whose real part is
//! stabilizing they use the Nash gains; otherwise both fall back to the
//! finite-horizon Gramian stabilizer `−B̂ᵀ W⁻¹(0, T0)`.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{contract, numerical, Result};
use crate::estimator::RegularizedEstimate;
use crate::linalg::{controllability_gramian, kalman_controllability, spectral_abscissa, Mat};
use crate::riccati::{gains_from_p1, solve_game_are, AreOutcome};

pub const DEFAULT_T0: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainMode {
    RiccatiNash,
    GramianFallback,
    /// Gains supplied by the caller (non-adaptive runs).
    Fixed,
}

impl GainMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            GainMode::RiccatiNash => "riccati",
            GainMode::GramianFallback => "gramian",
            GainMode::Fixed => "fixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyGains {
    pub l1: Mat,
    pub l2: Mat,
    pub mode: GainMode,
    pub epoch: u64,
    pub p1_used: Option<Mat>,
    /// Spectral abscissa of `Â + B̂1 L1 + B̂2 L2`.
    pub closed_loop_abscissa: f64,
}

/// Gains for the epoch of `est`, with `q`, `r1`, `r2` the known payoff
/// weights.
pub fn select_gains(est: &RegularizedEstimate, q: &Mat, r1: &Mat, r2: &Mat, t0: f64) -> Result<StrategyGains> {
    let (a, b1, b2) = (&est.a_hat, &est.b1_hat, &est.b2_hat);
    match solve_game_are(a, b1, b2, q, r1, r2) {
        Ok(AreOutcome::Solved(sol)) if sol.stabilizing_p && sol.stabilizing_p1 => {
            let (l1, l2) = gains_from_p1(&sol.p1, b1, b2, r1, r2)?;
            return Ok(StrategyGains {
                l1,
                l2,
                mode: GainMode::RiccatiNash,
                epoch: est.epoch,
                p1_used: Some(sol.p1),
                closed_loop_abscissa: sol.abscissa_p1,
            });
        }
        Ok(AreOutcome::Solved(_)) => debug!("epoch {}: Riccati solution not stabilizing", est.epoch),
        Ok(AreOutcome::NoStabilizingSolution(reason)) => debug!("epoch {}: no solution ({reason})", est.epoch),
        Err(e) => debug!("epoch {}: Riccati solve failed: {e}", est.epoch),
    }
    let b = est.b_hat();
    let stacked = gramian_gains(a, &b, t0).map_err(|e| match e {
        crate::GameError::Contract(msg) => numerical(format!("Gramian fallback at epoch {}: {msg}", est.epoch)),
        other => other,
    })?;
    let m1 = b1.ncols();
    let l1 = stacked.rows(0, m1).into_owned();
    let l2 = stacked.rows(m1, b2.ncols()).into_owned();
    let closed_loop_abscissa = spectral_abscissa(&(a + &b * &stacked))?;
    Ok(StrategyGains {
        l1,
        l2,
        mode: GainMode::GramianFallback,
        epoch: est.epoch,
        p1_used: None,
        closed_loop_abscissa,
    })
}

/// Stabilizing gain `−Bᵀ W(0, T0)⁻¹` of a controllable pair.
pub fn gramian_gains(a: &Mat, b: &Mat, t0: f64) -> Result<Mat> {
    if !kalman_controllability(a, b)?.controllable {
        return Err(contract("gramian_gains: (A, B) is not controllable"));
    }
    let w = controllability_gramian(a, b, t0)?;
    let chol = w
        .cholesky()
        .ok_or_else(|| numerical("controllability Gramian is numerically singular"))?;
    // Bᵀ W⁻¹ = (W⁻¹ B)ᵀ since W is symmetric
    Ok(-chol.solve(b).transpose())
}

/// Dither amplitude `γ_k = (log k / √k)^{1/2}`; epochs 0 and 1 reuse the
/// value at `k = 2`.
pub fn gamma_schedule(k: u64) -> f64 {
    let k = k.max(2) as f64;
    (k.ln() / k.sqrt()).sqrt()
}

/// Accumulated dither `v_i(t) − v_i(k)` of the current epoch.
#[derive(Debug, Clone)]
pub struct DitherState {
    pub enabled: bool,
    /// Amplitude never drops below this value while enabled.
    pub floor: f64,
    pub gamma_k: f64,
    pub epoch: u64,
    pub acc1: Vec<f64>,
    pub acc2: Vec<f64>,
    /// `∫_k^t γ_k² |v_i(s) − v_i(k)|² ds` for each player, left-endpoint.
    pub energy1: f64,
    pub energy2: f64,
}

impl DitherState {
    pub fn new(m1: usize, m2: usize, enabled: bool) -> Self {
        let mut d = Self {
            enabled,
            floor: 0.0,
            gamma_k: 0.0,
            epoch: 0,
            acc1: vec![0.0; m1],
            acc2: vec![0.0; m2],
            energy1: 0.0,
            energy2: 0.0,
        };
        d.start_epoch(0);
        d
    }

    pub fn start_epoch(&mut self, k: u64) {
        self.epoch = k;
        self.gamma_k = if self.enabled { gamma_schedule(k).max(self.floor) } else { 0.0 };
        self.acc1.fill(0.0);
        self.acc2.fill(0.0);
        self.energy1 = 0.0;
        self.energy2 = 0.0;
    }

    /// Advances the accumulators by one step of length `h` with the
    /// increments `dv1`, `dv2`.
    pub fn accumulate(&mut self, dv1: &[f64], dv2: &[f64], h: f64) {
        let g2 = self.gamma_k * self.gamma_k;
        self.energy1 += g2 * sq_norm(&self.acc1) * h;
        self.energy2 += g2 * sq_norm(&self.acc2) * h;
        for (a, d) in self.acc1.iter_mut().zip(dv1) {
            *a += d;
        }
        for (a, d) in self.acc2.iter_mut().zip(dv2) {
            *a += d;
        }
    }
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// `u1 = L1 x + γ_k (v1(t) − v1(k))`, `u2 = L2 x + γ_k (v2(t) − v2(k))`.
pub fn apply_strategy(g: &StrategyGains, d: &DitherState, x: &[f64], u1: &mut [f64], u2: &mut [f64]) {
    apply_gain(&g.l1, x, &d.acc1, d.gamma_k, u1);
    apply_gain(&g.l2, x, &d.acc2, d.gamma_k, u2);
}

pub(crate) fn apply_gain(l: &Mat, x: &[f64], acc: &[f64], gamma: f64, out: &mut [f64]) {
    let rows = l.nrows();
    let data = l.as_slice();
    for (i, o) in out.iter_mut().enumerate() {
        let mut v = gamma * acc[i];
        for (j, &xj) in x.iter().enumerate() {
            v += data[i + j * rows] * xj;
        }
        *o = v;
    }
}
