//! Seeded ensemble experiments for the stability, consistency and
//! Nash-equilibrium properties of the adaptive strategies.
//!
//! Every verdict is taken on ensemble medians; seeds run concurrently on a
//! dedicated thread pool and results are collected in seed order, so a
//! report does not depend on the thread count.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::config::Experiment;
use crate::error::{contract, numerical, GameError, Result};
use crate::linalg::{spectral_abscissa, Mat};
use crate::output::fmt_g12;
use crate::riccati::{nash_gains, nash_value, solve_model_are, AreOutcome};
use crate::rng::{ensemble_seed, WienerStreams};
use crate::sim::{simulate_adaptive_with, simulate_fixed_gains, Player, RunOptions, SimConfig, Trajectory};
use crate::strategy::{gamma_schedule, DitherState};

/// Smallest admissible Y over the epochs of a run.
pub const Y_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Criterion {
    /// Acceptance criterion number.
    pub id: u8,
    pub name: String,
    pub passed: bool,
    /// Reported but not counted in the overall verdict (ablations).
    pub informational: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    /// Aligned with [`DiagnosticsReport::metric_names`]; `NaN` if missing.
    pub metrics: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub experiment: String,
    pub metric_names: Vec<String>,
    pub seeds: Vec<SeedResult>,
    pub medians: Vec<f64>,
    pub iqrs: Vec<f64>,
    pub references: Vec<(String, f64)>,
    pub criteria: Vec<Criterion>,
    pub notes: Vec<String>,
}

impl DiagnosticsReport {
    fn new(experiment: &str, metric_names: Vec<String>, seeds: Vec<SeedResult>) -> Self {
        let mut medians = Vec::new();
        let mut iqrs = Vec::new();
        for j in 0..metric_names.len() {
            let col: Vec<f64> = seeds.iter().map(|s| s.metrics[j]).collect();
            medians.push(median(&col));
            iqrs.push(iqr(&col));
        }
        Self {
            experiment: experiment.into(),
            metric_names,
            seeds,
            medians,
            iqrs,
            references: Vec::new(),
            criteria: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn median_of(&self, name: &str) -> f64 {
        self.metric_index(name).map_or(f64::NAN, |j| self.medians[j])
    }

    pub fn iqr_of(&self, name: &str) -> f64 {
        self.metric_index(name).map_or(f64::NAN, |j| self.iqrs[j])
    }

    pub fn column(&self, name: &str) -> Vec<f64> {
        self.metric_index(name)
            .map(|j| self.seeds.iter().map(|s| s.metrics[j]).collect())
            .unwrap_or_default()
    }

    fn metric_index(&self, name: &str) -> Option<usize> {
        self.metric_names.iter().position(|m| m == name)
    }

    /// True iff every counted criterion passed.
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed || c.informational)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "experiment: {}", self.experiment);
        let failed = self.seeds.iter().filter(|r| r.error.is_some()).count();
        let _ = writeln!(s, "seeds: {} ({} failed)", self.seeds.len(), failed);
        for (name, value) in &self.references {
            let _ = writeln!(s, "reference {name} = {}", fmt_g12(*value));
        }
        for (j, name) in self.metric_names.iter().enumerate() {
            let _ = writeln!(
                s,
                "median {name} = {}  (iqr {})",
                fmt_g12(self.medians[j]),
                fmt_g12(self.iqrs[j])
            );
        }
        for c in &self.criteria {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            let tag = if c.informational { " [informational]" } else { "" };
            let _ = writeln!(s, "AC-{} {verdict} {}{tag}: {}", c.id, c.name, c.detail);
        }
        for note in &self.notes {
            let _ = writeln!(s, "note: {note}");
        }
        let _ = writeln!(s, "overall: {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }

    pub fn per_seed_csv(&self) -> String {
        let mut s = String::from("seed,");
        s.push_str(&self.metric_names.join(","));
        s.push_str(",error\n");
        for r in &self.seeds {
            let mut fields = vec![r.seed.to_string()];
            fields.extend(r.metrics.iter().map(|&v| fmt_g12(v)));
            fields.push(r.error.clone().unwrap_or_default().replace([',', '\n'], ";"));
            s.push_str(&fields.join(","));
            s.push('\n');
        }
        s
    }
}

/// Median of the finite entries; `NaN` if there are none.
pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Interquartile range of the finite entries.
pub fn iqr(values: &[f64]) -> f64 {
    quantile(values, 0.75) - quantile(values, 0.25)
}

/// Linear-interpolation quantile of the finite entries.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Runs `f` for every seed on a pool of `threads` workers (0: all cores)
/// and returns the results in seed order.
pub fn run_seeds<T, F>(seeds: &[u64], threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| numerical(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(|| seeds.par_iter().map(|&s| f(s)).collect()))
}

pub fn ensemble_seeds(master: u64, n: usize) -> Vec<u64> {
    (0..n).map(|i| ensemble_seed(master, i)).collect()
}

/// Gains that replace the adaptive strategy on selected seeds (all seeds
/// when `seeds` is `None`). Used to exercise failure paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcedGains {
    pub seeds: Option<Vec<u64>>,
    pub l1: Mat,
    pub l2: Mat,
}

impl ForcedGains {
    /// Gains that make `A + B1 L1 + B2 L2` strongly unstable.
    pub fn destabilizing(exp: &Experiment, seeds: Option<Vec<u64>>) -> Result<Self> {
        let m = &exp.model;
        let (l1, l2) = if m.b1.ncols() > 0 {
            (m.b1.transpose() * 50.0, Mat::zeros(m.b2.ncols(), m.a.nrows()))
        } else if m.b2.ncols() > 0 {
            (Mat::zeros(0, m.a.nrows()), m.b2.transpose() * 50.0)
        } else {
            return Err(contract("model has no inputs to destabilize"));
        };
        Ok(Self { seeds, l1, l2 })
    }

    fn applies_to(&self, seed: u64) -> bool {
        self.seeds.as_ref().is_none_or(|s| s.contains(&seed))
    }
}

/// One ensemble member with the experiment's settings, the given seed and
/// horizon. Only the end points are recorded unless `full_record` is set.
pub fn run_member(
    exp: &Experiment,
    seed: u64,
    horizon: f64,
    opts: &RunOptions,
    forced: Option<&ForcedGains>,
    full_record: bool,
) -> Result<Trajectory> {
    let mut cfg: SimConfig = exp.sim.clone();
    cfg.seed = seed;
    cfg.horizon = horizon;
    if !full_record {
        cfg.record_stride = cfg.total_steps().max(1);
    }
    match forced {
        Some(f) if f.applies_to(seed) => simulate_fixed_gains(&exp.model, &cfg, &f.l1, &f.l2),
        _ => simulate_adaptive_with(&exp.model, &cfg, &exp.estimator, &exp.strategy, opts),
    }
}

/// Full-record runs for `n` ensemble members starting at the experiment's
/// master seed.
pub fn run_ensemble(
    exp: &Experiment,
    n: usize,
    threads: usize,
    forced: Option<&ForcedGains>,
) -> Result<Vec<(u64, Result<Trajectory>)>> {
    let seeds = ensemble_seeds(exp.sim.seed, n);
    run_seeds(&seeds, threads, |seed| {
        (seed, run_member(exp, seed, exp.sim.horizon, &RunOptions::default(), forced, true))
    })
}

fn threads(exp: &Experiment) -> usize {
    exp.diagnostics.threads
}

fn describe(err: &GameError) -> String {
    match err {
        GameError::Divergence { t, norm, .. } => format!("diverged at t = {t} (|x| = {norm:.3e})"),
        other => other.to_string(),
    }
}

/// Regularization invariants over a set of runs: the smallest `Y` stays
/// above [`Y_FLOOR`] and the number of accepted draws is bounded by
/// `log(Y_max / Y_min) / log(1 + γ) + 1`.
fn regularization_criterion(runs: &[&Trajectory], gamma_reg: f64) -> Criterion {
    let mut min_y = f64::INFINITY;
    let mut worst_margin = f64::INFINITY;
    let mut violations = 0;
    for traj in runs {
        let ys: Vec<f64> = traj.epochs.iter().map(|e| e.y_value).filter(|y| y.is_finite()).collect();
        if ys.is_empty() {
            continue;
        }
        let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        min_y = min_y.min(lo);
        let accepted = traj.epochs.last().map_or(0, |e| e.acceptances) as f64;
        let bound = if lo > 0.0 { (hi / lo).ln() / (1.0 + gamma_reg).ln() + 1.0 } else { f64::NAN };
        let margin = bound - accepted;
        if !(margin >= 0.0) {
            violations += 1;
        }
        worst_margin = worst_margin.min(margin);
    }
    let passed = !runs.is_empty() && min_y >= Y_FLOOR && violations == 0;
    Criterion {
        id: 9,
        name: "regularization invariants".into(),
        passed,
        informational: false,
        detail: format!(
            "min Y = {} over {} runs (floor {Y_FLOOR:e}); acceptance bound violated in {violations} runs, \
             smallest slack {}",
            fmt_g12(min_y),
            runs.len(),
            fmt_g12(worst_margin)
        ),
    }
}

/// Epoch-record prefix average of the stability statistic at time `t`.
fn stability_prefix(traj: &Trajectory, t: f64) -> f64 {
    let k = t.floor() as u64;
    traj.stability_at(k).unwrap_or(f64::NAN)
}

/// Bounded-growth statistics of one run: the stability statistic at
/// `T/4`, `T/2`, `T`, and the ratio of the final epoch-state average
/// `(1/N) Σ |x(k)|²` to the median of its running curve.
fn stability_metrics(traj: &Trajectory, horizon: f64) -> Vec<f64> {
    let s_final = traj.stability_integral / traj.t_end;
    let mut running = Vec::with_capacity(traj.epochs.len());
    let mut acc = 0.0;
    for (i, e) in traj.epochs.iter().enumerate() {
        acc += e.x_norm_sq;
        running.push(acc / (i + 1) as f64);
    }
    let energy_ratio = running.last().copied().unwrap_or(f64::NAN) / median(&running);
    vec![
        stability_prefix(traj, horizon / 4.0),
        stability_prefix(traj, horizon / 2.0),
        s_final,
        s_final / stability_prefix(traj, horizon / 2.0),
        energy_ratio,
    ]
}

/// Global stability of the adaptive closed loop: the time average of
/// `|x|² + |u1|² + |u2|²` must not grow between `T/2` and `T`.
pub fn check_stability(exp: &Experiment, n_seeds: usize, forced: Option<&ForcedGains>) -> Result<DiagnosticsReport> {
    let horizon = exp.sim.horizon;
    let seeds = ensemble_seeds(exp.sim.seed, n_seeds);
    let runs = run_seeds(&seeds, threads(exp), |seed| {
        run_member(exp, seed, horizon, &RunOptions::default(), forced, false)
    })?;
    let names = ["stat_quarter", "stat_half", "stat_final", "growth_ratio", "epoch_energy_ratio", "diverged"];
    let mut rows = Vec::new();
    let mut diverged = 0;
    for (seed, run) in seeds.iter().zip(&runs) {
        rows.push(match run {
            Ok(traj) => {
                let mut m = stability_metrics(traj, horizon);
                m.push(0.0);
                SeedResult { seed: *seed, metrics: m, error: None }
            }
            Err(e) => {
                diverged += 1;
                let mut m = vec![f64::NAN; names.len()];
                m[5] = 1.0;
                SeedResult { seed: *seed, metrics: m, error: Some(describe(e)) }
            }
        });
    }
    let mut report = DiagnosticsReport::new("stability", names.map(String::from).to_vec(), rows);
    let growth = exp.diagnostics.stability_growth;
    let (half, fin) = (report.median_of("stat_half"), report.median_of("stat_final"));
    report.criteria.push(Criterion {
        id: 4,
        name: "stability statistic bounded".into(),
        passed: diverged == 0 && fin <= growth * half,
        informational: false,
        detail: format!(
            "median at T = {} vs {growth} x median at T/2 = {}; {diverged} of {n_seeds} seeds failed",
            fmt_g12(fin),
            fmt_g12(growth * half)
        ),
    });
    let energy = report.median_of("epoch_energy_ratio");
    report.criteria.push(Criterion {
        id: 4,
        name: "epoch state energy bounded".into(),
        passed: diverged == 0 && energy <= 2.0,
        informational: false,
        detail: format!("median final/running-median ratio of (1/N) sum |x(k)|^2 = {}", fmt_g12(energy)),
    });
    let ok: Vec<&Trajectory> = runs.iter().filter_map(|r| r.as_ref().ok()).collect();
    if forced.is_none() {
        report.criteria.push(regularization_criterion(&ok, exp.estimator.gamma_reg));
    } else {
        report.notes.push("gain selection overridden by forced gains".into());
    }
    Ok(report)
}

/// Consistency of the least-squares estimate: median estimate error
/// strictly decreasing over the checkpoints and small at the last one.
pub fn check_consistency(exp: &Experiment, n_seeds: usize, checkpoints: &[u64]) -> Result<DiagnosticsReport> {
    if checkpoints.is_empty() || checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(contract("checkpoints must be nonempty and strictly increasing"));
    }
    let horizon = *checkpoints.last().expect("nonempty") as f64;
    let seeds = ensemble_seeds(exp.sim.seed, n_seeds);
    let runs = run_seeds(&seeds, threads(exp), |seed| {
        run_member(exp, seed, horizon, &RunOptions::default(), None, false)
    })?;
    let names: Vec<String> = checkpoints.iter().map(|c| format!("error_at_{c}")).collect();
    let rows = seeds
        .iter()
        .zip(&runs)
        .map(|(seed, run)| match run {
            Ok(traj) => SeedResult {
                seed: *seed,
                metrics: checkpoints
                    .iter()
                    .map(|&c| traj.estimate_error_at(c).unwrap_or(f64::NAN))
                    .collect(),
                error: None,
            },
            Err(e) => SeedResult {
                seed: *seed,
                metrics: vec![f64::NAN; checkpoints.len()],
                error: Some(describe(e)),
            },
        })
        .collect();
    let mut report = DiagnosticsReport::new("consistency", names, rows);
    let theta_norm = exp.model.theta().norm();
    let threshold = exp.diagnostics.consistency_fraction * theta_norm;
    report.references.push(("theta_norm".into(), theta_norm));
    let decreasing = report.medians.windows(2).all(|w| w[1] < w[0]);
    let last = *report.medians.last().expect("nonempty");
    let failed = report.seeds.iter().filter(|s| s.error.is_some()).count();
    let ablation = !exp.sim.dither_enabled;
    report.criteria.push(Criterion {
        id: 5,
        name: "estimate consistency".into(),
        passed: failed == 0 && decreasing && last <= threshold,
        informational: ablation,
        detail: format!(
            "medians [{}] {}; final {} vs threshold {}",
            report.medians.iter().map(|&m| fmt_g12(m)).collect::<Vec<_>>().join(", "),
            if decreasing { "strictly decreasing" } else { "not strictly decreasing" },
            fmt_g12(last),
            fmt_g12(threshold)
        ),
    });
    if ablation {
        report
            .notes
            .push("dither disabled: excitation removed, the consistency verdict is allowed to fail".into());
    }
    let ok: Vec<&Trajectory> = runs.iter().filter_map(|r| r.as_ref().ok()).collect();
    report.criteria.push(regularization_criterion(&ok, exp.estimator.gamma_reg));
    Ok(report)
}

/// True-model Nash gains and value `tr(Dᵀ P1 D)`.
pub fn nash_reference(exp: &Experiment) -> Result<(Mat, Mat, f64)> {
    let m = &exp.model;
    match solve_model_are(m)? {
        AreOutcome::Solved(sol) if sol.stabilizing_p && sol.stabilizing_p1 => {
            let (l1, l2) = nash_gains(&sol, &m.b1, &m.b2, &m.r1, &m.r2)?;
            let value = nash_value(&sol.p1, &m.d);
            Ok((l1, l2, value))
        }
        AreOutcome::Solved(_) => Err(GameError::Inapplicable(
            "true-model Riccati solution is not stabilizing".into(),
        )),
        AreOutcome::NoStabilizingSolution(reason) => Err(GameError::Inapplicable(format!(
            "true model has no stabilizing Riccati solution ({reason})"
        ))),
    }
}

/// Finite-horizon payoff of the adaptive strategies against the value of
/// the game.
pub fn check_nash_value(exp: &Experiment, n_seeds: usize) -> Result<DiagnosticsReport> {
    let (_, _, value) = nash_reference(exp)?;
    let horizon = exp.diagnostics.nash_value_horizon;
    let seeds = ensemble_seeds(exp.sim.seed, n_seeds);
    let runs = run_seeds(&seeds, threads(exp), |seed| {
        run_member(exp, seed, horizon, &RunOptions::default(), None, false)
    })?;
    let rows = seeds
        .iter()
        .zip(&runs)
        .map(|(seed, run)| match run {
            Ok(traj) => {
                let j = crate::sim::payoff_estimate(traj);
                let rel = if value != 0.0 { (j - value).abs() / value.abs() } else { f64::NAN };
                SeedResult { seed: *seed, metrics: vec![j, rel], error: None }
            }
            Err(e) => SeedResult {
                seed: *seed,
                metrics: vec![f64::NAN; 2],
                error: Some(describe(e)),
            },
        })
        .collect();
    let mut report = DiagnosticsReport::new("nash-value", vec!["payoff".into(), "relative_error".into()], rows);
    report.references.push(("value".into(), value));
    let j = report.median_of("payoff");
    let failed = report.seeds.iter().filter(|s| s.error.is_some()).count();
    let d = &exp.diagnostics;
    let (passed, detail) = if value == 0.0 {
        let ok = j.abs() <= d.zero_value_tolerance;
        (ok, format!("median payoff {} vs zero value (tolerance {})", fmt_g12(j), d.zero_value_tolerance))
    } else {
        let rel = (j - value).abs() / value.abs();
        (
            rel <= d.nash_value_tolerance,
            format!(
                "median payoff {} vs value {}: relative error {} (tolerance {})",
                fmt_g12(j),
                fmt_g12(value),
                fmt_g12(rel),
                d.nash_value_tolerance
            ),
        )
    };
    report.criteria.push(Criterion {
        id: 6,
        name: "payoff approaches the value".into(),
        passed: passed && failed == 0,
        informational: false,
        detail,
    });
    let ok: Vec<&Trajectory> = runs.iter().filter_map(|r| r.as_ref().ok()).collect();
    if exp.model.d.norm() > 0.0 || exp.sim.dither_enabled {
        report.criteria.push(regularization_criterion(&ok, exp.estimator.gamma_reg));
    }
    Ok(report)
}

/// Unilateral deviations `u_i + δ·𝟙 x` (all gain entries shifted by `δ`)
/// against the adaptive strategy of the other player.
///
/// Player 1 minimizes, so its deviations must raise the median payoff;
/// Player 2 maximizes, so its deviations must lower it. Each shift has to
/// exceed the slack `max(slack_fraction·|value|, slack_iqr_factor·IQR)` of
/// the undeviated ensemble. The finite deviation set is a spot check, not a
/// proof of the equilibrium property.
pub fn check_nash_gap(exp: &Experiment, deviations: &[f64], n_seeds: usize) -> Result<DiagnosticsReport> {
    let (l1s, l2s, value) = nash_reference(exp)?;
    let m = &exp.model;
    let dims = m.dims();
    let mut variants: Vec<(String, Option<(Player, Mat)>)> = vec![("null".into(), None)];
    for &delta in deviations {
        for (player, rows, tag) in [(Player::One, dims.m1, 1), (Player::Two, dims.m2, 2)] {
            if rows == 0 {
                continue;
            }
            let k = Mat::from_element(rows, dims.n, delta);
            let (l1, l2) = match player {
                Player::One => (&l1s + &k, l2s.clone()),
                Player::Two => (l1s.clone(), &l2s + &k),
            };
            let abscissa = spectral_abscissa(&(&m.a + &m.b1 * l1 + &m.b2 * l2))?;
            if abscissa >= 0.0 {
                return Err(contract(format!(
                    "deviation {delta} of player {tag} is inadmissible: closed-loop abscissa {abscissa:.4}"
                )));
            }
            variants.push((format!("p{tag}_{}", fmt_g12(delta)), Some((player, k))));
        }
    }
    let horizon = exp.diagnostics.nash_gap_horizon;
    let seeds = ensemble_seeds(exp.sim.seed, n_seeds);
    let jobs: Vec<(usize, u64)> = (0..variants.len()).flat_map(|v| seeds.iter().map(move |&s| (v, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads(exp))
        .build()
        .map_err(|e| numerical(format!("cannot build thread pool: {e}")))?;
    let results: Vec<Result<(f64, f64)>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(v, seed)| {
                let opts = RunOptions {
                    deviation: variants[v].1.clone(),
                    reference_gains: Some((l1s.clone(), l2s.clone())),
                };
                let traj = run_member(exp, seed, horizon, &opts, None, false)?;
                let excess = (traj.deviation_energy1 - traj.deviation_energy2) / traj.t_end;
                Ok((crate::sim::payoff_estimate(&traj), excess))
            })
            .collect()
    });

    let mut names = Vec::new();
    for (label, _) in &variants {
        names.push(format!("payoff_{label}"));
        names.push(format!("predicted_excess_{label}"));
    }
    let rows = seeds
        .iter()
        .enumerate()
        .map(|(i, &seed)| {
            let mut metrics = Vec::new();
            let mut error = None;
            for v in 0..variants.len() {
                match &results[v * seeds.len() + i] {
                    Ok((j, e)) => metrics.extend([*j, *e]),
                    Err(err) => {
                        metrics.extend([f64::NAN, f64::NAN]);
                        error.get_or_insert_with(|| format!("{}: {}", variants[v].0, describe(err)));
                    }
                }
            }
            SeedResult { seed, metrics, error }
        })
        .collect();
    let mut report = DiagnosticsReport::new("nash-gap", names, rows);
    // variants are compared on common seeds, so a seed that failed in any
    // variant is left out of every median
    let complete: Vec<&SeedResult> = report.seeds.iter().filter(|s| s.error.is_none()).collect();
    let (medians, iqrs): (Vec<f64>, Vec<f64>) = (0..report.metric_names.len())
        .map(|j| {
            let col: Vec<f64> = complete.iter().map(|s| s.metrics[j]).collect();
            (median(&col), iqr(&col))
        })
        .unzip();
    report.medians = medians;
    report.iqrs = iqrs;
    let failed = report.seeds.len() - complete.len();
    let enough = complete.len() * 4 >= report.seeds.len() * 3 && !complete.is_empty();
    if failed > 0 {
        report.notes.push(format!(
            "{failed} seed(s) failed in some variant and are excluded from all medians; \
             verdicts need at least 75% of seeds complete"
        ));
    }
    report.references.push(("value".into(), value));
    let d = &exp.diagnostics;
    let null = report.median_of("payoff_null");
    let slack = (d.slack_fraction * value.abs()).max(d.slack_iqr_factor * report.iqr_of("payoff_null"));
    report.references.push(("slack".into(), slack));
    for (label, dev) in variants.iter().skip(1) {
        let player = dev.as_ref().map(|(p, _)| *p).expect("deviation variant");
        let j = report.median_of(&format!("payoff_{label}"));
        let predicted = report.median_of(&format!("predicted_excess_{label}"));
        // signed improvement for the deviating player's opponent
        let shift = match player {
            Player::One => j - null,
            Player::Two => null - j,
        };
        let direction = match player {
            Player::One => "raises",
            Player::Two => "lowers",
        };
        report.criteria.push(Criterion {
            id: 7,
            name: format!("deviation {label} {direction} payoff beyond noise band"),
            passed: enough && shift > slack,
            informational: false,
            detail: format!(
                "median {} vs null {}: shift {} vs slack {}; completed-square prediction {}",
                fmt_g12(j),
                fmt_g12(null),
                fmt_g12(shift),
                fmt_g12(slack),
                fmt_g12(predicted)
            ),
        });
        report.criteria.push(Criterion {
            id: 7,
            name: format!("deviation {label} does not profit"),
            passed: enough && shift >= -slack,
            informational: false,
            detail: format!("shift {} >= -{}", fmt_g12(shift), fmt_g12(slack)),
        });
    }
    Ok(report)
}

/// Per-epoch dither energies `∫_k^{k+1} γ_k² |v_i(t) − v_i(k)|² dt` for
/// epochs `0..=n_epochs`, generated from the same streams a simulation
/// with this seed uses.
pub fn dither_energies(cfg: &SimConfig, m1: usize, m2: usize, n_epochs: u64) -> (Vec<f64>, Vec<f64>) {
    let mut streams = WienerStreams::new(cfg.seed, cfg.h);
    let mut dither = DitherState::new(m1, m2, cfg.dither_enabled);
    dither.floor = cfg.gamma_floor;
    let per_epoch = cfg.steps_per_epoch();
    let (mut dv1, mut dv2) = (vec![0.0; m1], vec![0.0; m2]);
    let (mut e1, mut e2) = (Vec::new(), Vec::new());
    for k in 0..=n_epochs {
        dither.start_epoch(k);
        for _ in 0..per_epoch {
            if cfg.dither_enabled {
                streams.v1.fill(&mut dv1);
                streams.v2.fill(&mut dv2);
            }
            dither.accumulate(&dv1, &dv2, cfg.h);
        }
        e1.push(dither.energy1);
        e2.push(dither.energy2);
    }
    (e1, e2)
}

/// `(1/N) Σ_{k=1}^{N} γ_k² · m / 2`, the expected dither statistic.
pub fn dither_expectation(n: u64, m: usize, floor: f64) -> f64 {
    (1..=n).map(|k| gamma_schedule(k).max(floor).powi(2)).sum::<f64>() * m as f64 / (2.0 * n as f64)
}

/// Dither energy: `(1/N) Σ_{k≤N} ∫ γ_k² |v_i(t) − v_i(k)|² dt` against its
/// expectation, and its decrease from `N = 50` to `N = n_epochs`.
pub fn check_dither_energy(exp: &Experiment, n_epochs: u64, n_seeds: usize) -> Result<DiagnosticsReport> {
    const EARLY: u64 = 50;
    if n_epochs < EARLY {
        return Err(contract(format!("dither check needs at least {EARLY} epochs, got {n_epochs}")));
    }
    let dims = exp.model.dims();
    let seeds = ensemble_seeds(exp.sim.seed, n_seeds);
    let stats = run_seeds(&seeds, threads(exp), |seed| {
        let mut cfg = exp.sim.clone();
        cfg.seed = seed;
        let (e1, e2) = dither_energies(&cfg, dims.m1, dims.m2, n_epochs);
        let avg = |e: &[f64], n: u64| e[1..=n as usize].iter().sum::<f64>() / n as f64;
        vec![avg(&e1, EARLY), avg(&e1, n_epochs), avg(&e2, EARLY), avg(&e2, n_epochs)]
    })?;
    let names = vec![
        format!("p1_stat_{EARLY}"),
        format!("p1_stat_{n_epochs}"),
        format!("p2_stat_{EARLY}"),
        format!("p2_stat_{n_epochs}"),
    ];
    let rows = seeds
        .iter()
        .zip(stats)
        .map(|(&seed, metrics)| SeedResult { seed, metrics, error: None })
        .collect();
    let mut report = DiagnosticsReport::new("dither", names, rows);
    let band = exp.diagnostics.dither_band;
    let disabled = !exp.sim.dither_enabled;
    let floor = exp.sim.gamma_floor;
    for (tag, m) in [(1, dims.m1), (2, dims.m2)] {
        if m == 0 {
            continue;
        }
        let (early_ref, late_ref) = if disabled {
            (0.0, 0.0)
        } else {
            (dither_expectation(EARLY, m, floor), dither_expectation(n_epochs, m, floor))
        };
        report.references.push((format!("p{tag}_expected_{EARLY}"), early_ref));
        report.references.push((format!("p{tag}_expected_{n_epochs}"), late_ref));
        let early = report.median_of(&format!("p{tag}_stat_{EARLY}"));
        let late = report.median_of(&format!("p{tag}_stat_{n_epochs}"));
        let close = (late - late_ref).abs() <= band * late_ref;
        report.criteria.push(Criterion {
            id: 8,
            name: format!("player {tag} dither energy matches expectation"),
            passed: close,
            informational: disabled,
            detail: format!(
                "median at N = {n_epochs}: {} vs expected {} (band {band})",
                fmt_g12(late),
                fmt_g12(late_ref)
            ),
        });
        report.criteria.push(Criterion {
            id: 8,
            name: format!("player {tag} dither energy decreases"),
            passed: late < early,
            informational: disabled,
            detail: format!(
                "median N = {EARLY}: {}, N = {n_epochs}: {} (ratio {}, expected ratio {})",
                fmt_g12(early),
                fmt_g12(late),
                fmt_g12(late / early),
                fmt_g12(late_ref / early_ref)
            ),
        });
    }
    if disabled {
        report.notes.push("dither disabled: the statistic is identically zero".into());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use approx::assert_relative_eq;

    fn scalar_experiment(horizon: f64) -> Experiment {
        let text = format!(
            r#"
[model]
a = [[0.0]]
b1 = [[1.0]]
b2 = [[1.0]]
d = [[1.0]]
q = [[1.0]]
r1 = [[1.0]]
r2 = [[2.0]]

[sim]
horizon = {horizon}
h = 0.01
seed = 3

[diagnostics]
threads = 2
"#
        );
        ExperimentConfig::from_toml_str(&text).unwrap().experiment().unwrap()
    }

    #[test]
    fn quantiles_interpolate_and_skip_nan() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[f64::NAN, 1.0, 3.0]), 2.0);
        assert!(median(&[f64::NAN]).is_nan());
        assert_eq!(iqr(&[1.0, 2.0, 3.0, 4.0, 5.0]), 2.0);
    }

    #[test]
    fn seed_order_does_not_depend_on_threads() {
        let seeds = ensemble_seeds(10, 16);
        let one = run_seeds(&seeds, 1, |s| s * 2).unwrap();
        let four = run_seeds(&seeds, 4, |s| s * 2).unwrap();
        assert_eq!(one, four);
        assert_eq!(one[3], 26);
    }

    #[test]
    fn dither_energy_matches_simulation_records() {
        let exp = scalar_experiment(20.0);
        let traj = run_member(&exp, exp.sim.seed, 20.0, &RunOptions::default(), None, false).unwrap();
        let (e1, e2) = dither_energies(&exp.sim, 1, 1, 19);
        for k in 0..19usize {
            assert_relative_eq!(traj.epochs[k + 1].dither_energy1, e1[k], max_relative = 1e-12);
            assert_relative_eq!(traj.epochs[k + 1].dither_energy2, e2[k], max_relative = 1e-12);
        }
    }

    #[test]
    fn zero_dither_gives_zero_statistic() {
        let mut exp = scalar_experiment(10.0);
        exp.sim.dither_enabled = false;
        let report = check_dither_energy(&exp, 50, 2).unwrap();
        assert!(report.seeds.iter().all(|s| s.metrics.iter().all(|&v| v == 0.0)));
        assert!(report.passed());
        assert!(check_dither_energy(&exp, 20, 2).is_err());
    }

    #[test]
    fn dither_expectation_per_epoch() {
        // constant amplitude one: E ∫_0^1 |v(t)|² dt = 1/2 per input
        assert_relative_eq!(dither_expectation(10, 1, 10.0), 50.0);
        assert_relative_eq!(dither_expectation(1, 2, 0.0), gamma_schedule(2).powi(2));
    }

    #[test]
    fn forced_unstable_gains_fail_stability() {
        let exp = scalar_experiment(20.0);
        let forced = ForcedGains::destabilizing(&exp, None).unwrap();
        let report = check_stability(&exp, 3, Some(&forced)).unwrap();
        assert!(!report.passed());
        assert!(report.seeds.iter().all(|s| s.error.as_deref().unwrap_or("").contains("diverged")));
    }

    #[test]
    fn short_stability_run_passes() {
        let report = check_stability(&scalar_experiment(40.0), 4, None).unwrap();
        assert!(report.passed(), "{}", report.to_text());
        assert!(report.to_text().contains("AC-4 PASS"));
    }

    #[test]
    fn unsolvable_true_model_is_inapplicable() {
        let mut exp = scalar_experiment(10.0);
        exp.model.r2 = Mat::from_element(1, 1, 1.0);
        assert!(matches!(check_nash_value(&exp, 2), Err(GameError::Inapplicable(_))));
    }

    #[test]
    fn inadmissible_deviation_is_rejected() {
        let exp = scalar_experiment(10.0);
        // closed loop −√2/2 + 1 is unstable
        assert!(matches!(check_nash_gap(&exp, &[1.0], 2), Err(GameError::Contract(_))));
    }

    #[test]
    fn consistency_rejects_unordered_checkpoints() {
        let exp = scalar_experiment(10.0);
        assert!(check_consistency(&exp, 2, &[10, 5]).is_err());
    }
}
