//! CSV and text artifacts. Numbers are written with 12 significant digits
//! in the style of C's `%.12g`, so identical runs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::sim::{payoff_estimate, Trajectory};
use crate::strategy::GainMode;

/// `%.12g` formatting.
pub fn fmt_g12(x: f64) -> String {
    fmt_g(x, 12)
}

pub fn fmt_g(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let digits = digits.max(1);
    // the exponent after rounding to `digits` significant digits
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_fraction(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn trajectory_header(traj: &Trajectory) -> String {
    let d = traj.dims;
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=d.n).map(|i| format!("x_{i}")));
    cols.extend((1..=d.m1).map(|i| format!("u1_{i}")));
    cols.extend((1..=d.m2).map(|i| format!("u2_{i}")));
    cols.extend(["running_payoff", "estimate_error", "mode", "gamma_k", "stability_stat"].map(String::from));
    cols.join(",")
}

/// One row per recorded sample; `running_payoff` and `stability_stat` are
/// prefix time averages up to the row's time.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let d = traj.dims;
    let mut out = trajectory_header(traj);
    out.push('\n');
    for row in 0..traj.len() {
        let mut fields = vec![fmt_g12(traj.times[row])];
        fields.extend(traj.state(row).iter().map(|&v| fmt_g12(v)));
        fields.extend(traj.u1[row * d.m1..(row + 1) * d.m1].iter().map(|&v| fmt_g12(v)));
        fields.extend(traj.u2[row * d.m2..(row + 1) * d.m2].iter().map(|&v| fmt_g12(v)));
        fields.push(fmt_g12(traj.running_payoff[row]));
        fields.push(fmt_g12(traj.estimate_error[row]));
        fields.push(traj.modes[row].as_str().to_string());
        fields.push(fmt_g12(traj.gamma[row]));
        fields.push(fmt_g12(traj.stability_stat[row]));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn epochs_csv(traj: &Trajectory) -> String {
    let mut out = String::from(
        "epoch,t,mode,gamma_k,l1_norm,l2_norm,closed_loop_abscissa,y_value,beta_accepted,acceptances,\
         estimate_error,regularized_error,cov_trace,x_norm_sq,payoff_avg,stability_avg,dither_energy1,dither_energy2\n",
    );
    for e in &traj.epochs {
        let fields = [
            e.epoch.to_string(),
            fmt_g12(e.t),
            e.mode.as_str().to_string(),
            fmt_g12(e.gamma_k),
            fmt_g12(e.l1_norm),
            fmt_g12(e.l2_norm),
            fmt_g12(e.closed_loop_abscissa),
            fmt_g12(e.y_value),
            u8::from(e.beta_accepted).to_string(),
            e.acceptances.to_string(),
            fmt_g12(e.estimate_error),
            fmt_g12(e.regularized_error),
            fmt_g12(e.cov_trace),
            fmt_g12(e.x_norm_sq),
            fmt_g12(e.payoff_avg),
            fmt_g12(e.stability_avg),
            fmt_g12(e.dither_energy1),
            fmt_g12(e.dither_energy2),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Scalar summary of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub t_end: f64,
    pub h: f64,
    pub payoff: f64,
    pub estimate_error: f64,
    pub stability: f64,
    pub riccati_epochs: usize,
    pub gramian_epochs: usize,
    pub fixed_epochs: usize,
    pub min_y: f64,
    pub acceptances: u64,
    pub floor_activations: u64,
}

impl RunSummary {
    pub fn of(traj: &Trajectory) -> Self {
        let last = traj.epochs.last();
        Self {
            seed: traj.seed,
            t_end: traj.t_end,
            h: traj.h,
            payoff: payoff_estimate(traj),
            estimate_error: traj.estimate_error.last().copied().unwrap_or(f64::NAN),
            stability: if traj.t_end > 0.0 { traj.stability_integral / traj.t_end } else { 0.0 },
            riccati_epochs: traj.mode_count(GainMode::RiccatiNash),
            gramian_epochs: traj.mode_count(GainMode::GramianFallback),
            fixed_epochs: traj.mode_count(GainMode::Fixed),
            min_y: traj.epochs.iter().map(|e| e.y_value).fold(f64::NAN, f64::min),
            acceptances: last.map_or(0, |e| e.acceptances),
            floor_activations: traj.floor_activations,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "t_end = {}", fmt_g12(self.t_end));
        let _ = writeln!(s, "h = {}", fmt_g12(self.h));
        let _ = writeln!(s, "payoff_average = {}", fmt_g12(self.payoff));
        let _ = writeln!(s, "final_estimate_error = {}", fmt_g12(self.estimate_error));
        let _ = writeln!(s, "stability_statistic = {}", fmt_g12(self.stability));
        let _ = writeln!(
            s,
            "modes = riccati:{} gramian:{} fixed:{}",
            self.riccati_epochs, self.gramian_epochs, self.fixed_epochs
        );
        let _ = writeln!(s, "min_y_value = {}", fmt_g12(self.min_y));
        let _ = writeln!(s, "acceptances = {}", self.acceptances);
        let _ = writeln!(s, "cov_floor_activations = {}", self.floor_activations);
        s
    }
}

pub const ENSEMBLE_HEADER: &str = "seed,status,t_end,payoff,estimate_error,stability,riccati_epochs,gramian_epochs,min_y_value,acceptances";

pub fn ensemble_row(seed: u64, status: &str, s: Option<&RunSummary>) -> String {
    match s {
        Some(s) => format!(
            "{seed},{status},{},{},{},{},{},{},{},{}",
            fmt_g12(s.t_end),
            fmt_g12(s.payoff),
            fmt_g12(s.estimate_error),
            fmt_g12(s.stability),
            s.riccati_epochs,
            s.gramian_epochs,
            fmt_g12(s.min_y),
            s.acceptances
        ),
        None => format!("{seed},{status},nan,nan,nan,nan,0,0,nan,0"),
    }
}

/// Writes `trajectory.csv`, `epochs.csv` and `summary.txt` under `dir`
/// (the stem is prefixed to every file name).
pub fn write_run(dir: &Path, stem: &str, traj: &Trajectory) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{stem}trajectory.csv")), trajectory_csv(traj))?;
    fs::write(dir.join(format!("{stem}epochs.csv")), epochs_csv(traj))?;
    fs::write(dir.join(format!("{stem}summary.txt")), RunSummary::of(traj).to_text())?;
    Ok(())
}

pub const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plots running payoff and estimate error from the CSV files next to it."""
import csv
import glob
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
files = sorted(glob.glob(os.path.join(here, "*trajectory*.csv")))
if not files:
    sys.exit("no trajectory CSV found")

fig, (ax_pay, ax_err) = plt.subplots(2, 1, sharex=True, figsize=(8, 6))
for path in files:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    t = [float(r["t"]) for r in rows]
    label = os.path.basename(path)
    ax_pay.plot(t, [float(r["running_payoff"]) for r in rows], label=label)
    err = [float(r["estimate_error"]) for r in rows]
    if any(e == e for e in err):
        ax_err.plot(t, err, label=label)
ax_pay.set_ylabel("running payoff")
ax_err.set_ylabel("estimate error")
ax_err.set_yscale("log")
ax_err.set_xlabel("t")
ax_pay.legend(fontsize="small")
fig.tight_layout()
fig.savefig(os.path.join(here, "curves.png"), dpi=120)
"#;

pub fn write_plot_script(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("plot.py"), PLOT_SCRIPT)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g12_matches_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (1.0 / 3.0, "0.333333333333"),
            (2f64.sqrt(), "1.41421356237"),
            (123456789012.0, "123456789012"),
            (1234567890123.0, "1.23456789012e+12"),
            (1e-5, "1e-05"),
            (0.0001, "0.0001"),
            (1.5e-7, "1.5e-07"),
            (999999999999.5, "1e+12"),
            (1e300, "1e+300"),
            (f64::NAN, "nan"),
        ];
        for (x, s) in cases {
            assert_eq!(fmt_g12(x), s, "formatting {x:e}");
        }
    }

    #[test]
    fn g12_round_trips_to_twelve_digits() {
        for &x in &[std::f64::consts::PI, -1.0e-3 / 7.0, 6.02214076e23, 0.1 + 0.2] {
            let back: f64 = fmt_g12(x).parse().unwrap();
            assert!(((back - x) / x).abs() < 1e-11);
        }
    }
}
