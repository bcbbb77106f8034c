//! `lqgame`: simulate, solve and diagnose adaptive zero-sum LQ games.
//!
//! Exit codes: 0 success, 1 criteria failed (or experiment inapplicable),
//! 2 configuration error, 3 divergence, 4 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lqgame::config::{Experiment, ExperimentConfig};
use lqgame::diagnostics::{
    check_consistency, check_dither_energy, check_nash_gap, check_nash_value, check_stability, median, iqr,
    run_ensemble, DiagnosticsReport, ForcedGains,
};
use lqgame::linalg::{Mat, Spectrum};
use lqgame::output::{ensemble_row, write_plot_script, write_run, RunSummary, ENSEMBLE_HEADER};
use lqgame::riccati::{game_are_residual, nash_value, solve_model_are, AreOutcome};
use lqgame::sim::simulate_adaptive;
use lqgame::GameError;

/// Output directory used when `--output-dir` is absent.
const OUTPUT_ENV: &str = "LQGAME_OUTPUT_DIR";
/// Comma-separated ensemble seeds that get destabilizing gains (test hook).
const FORCE_DIVERGE_ENV: &str = "LQGAME_FORCE_DIVERGE_SEEDS";

#[derive(Parser)]
#[command(name = "lqgame", version, about = "Adaptive strategies for zero-sum LQ stochastic games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one adaptive trajectory and write CSV artifacts.
    Simulate(RunArgs),
    /// Solve the game Riccati equation of the configured model.
    Riccati(ConfigArgs),
    /// Run one diagnostic experiment over a seeded ensemble.
    Diagnose {
        experiment: ExperimentId,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run an ensemble of adaptive trajectories.
    Ensemble(RunArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// `section.key=value`, applied after the file is read.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    emit_plot_script: bool,
    /// Number of ensemble members.
    #[arg(long)]
    seeds: Option<usize>,
    /// Worker threads (0: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    no_dither: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentId {
    Stability,
    Consistency,
    NashValue,
    NashGap,
    Dither,
}

impl ExperimentId {
    fn name(self) -> &'static str {
        match self {
            ExperimentId::Stability => "stability",
            ExperimentId::Consistency => "consistency",
            ExperimentId::NashValue => "nash-value",
            ExperimentId::NashGap => "nash-gap",
            ExperimentId::Dither => "dither",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Riccati(args) => cmd_riccati(&args),
        Command::Diagnose { experiment, run } => cmd_diagnose(experiment, &run),
        Command::Ensemble(args) => cmd_ensemble(&args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<GameError>() {
        Some(GameError::Config(_)) | Some(GameError::Contract(_)) => 2,
        Some(GameError::Divergence { .. }) => 3,
        Some(GameError::Numerical(_)) => 4,
        _ => 1,
    }
}

struct Loaded {
    config: ExperimentConfig,
    exp: Experiment,
}

fn load(args: &ConfigArgs) -> anyhow::Result<Loaded> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| GameError::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let config = ExperimentConfig::from_toml_with_overrides(&text, &args.overrides).map_err(|e| match e {
        GameError::Config(msg) => GameError::Config(format!("{}: {msg}", args.config.display())),
        other => other,
    })?;
    let exp = config.experiment()?;
    Ok(Loaded { config, exp })
}

fn load_run(args: &RunArgs) -> anyhow::Result<Loaded> {
    let mut loaded = load(&args.cfg)?;
    if let Some(seed) = args.seed {
        loaded.exp.sim.seed = seed;
        loaded.config.sim.seed = seed;
    }
    if args.no_dither {
        loaded.exp.sim.dither_enabled = false;
        loaded.config.strategy.dither = false;
    }
    if let Some(t) = args.threads {
        loaded.exp.diagnostics.threads = t;
    }
    Ok(loaded)
}

fn output_dir(args: &RunArgs, config: &ExperimentConfig) -> PathBuf {
    args.output_dir
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&config.output.directory))
}

fn write_config(dir: &Path, config: &ExperimentConfig) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    match config.to_toml_string() {
        Ok(text) => fs::write(dir.join("config.toml"), text)?,
        Err(e) => log::warn!("resolved configuration not written: {e}"),
    }
    Ok(())
}

fn cmd_simulate(args: &RunArgs) -> anyhow::Result<ExitCode> {
    let Loaded { config, exp } = load_run(args)?;
    let dir = output_dir(args, &config);
    write_config(&dir, &config)?;
    if args.emit_plot_script || config.output.plot_script {
        write_plot_script(&dir)?;
    }
    match simulate_adaptive(&exp.model, &exp.sim, &exp.estimator, &exp.strategy) {
        Ok(traj) => {
            write_run(&dir, "", &traj)?;
            print!("{}", RunSummary::of(&traj).to_text());
            println!("output = {}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Err(GameError::Divergence { t, norm, partial }) => {
            write_run(&dir, "", &partial)?;
            Err(GameError::Divergence { t, norm, partial }.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn format_matrix(m: &Mat) -> String {
    if m.is_empty() {
        return format!("  [] ({}x{})\n", m.nrows(), m.ncols());
    }
    let mut s = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:>12.6}")).collect();
        s.push_str(&format!("  [{}]\n", row.join(" ")));
    }
    s
}

fn cmd_riccati(args: &ConfigArgs) -> anyhow::Result<ExitCode> {
    let Loaded { exp, .. } = load(args)?;
    let m = &exp.model;
    match solve_model_are(m)? {
        AreOutcome::NoStabilizingSolution(reason) => {
            println!("NoStabilizingSolution({reason})");
        }
        AreOutcome::Solved(sol) => {
            let usable = sol.stabilizing_p && sol.stabilizing_p1;
            println!(
                "solution: stabilizing_P = {}, stabilizing_P1 = {}",
                sol.stabilizing_p, sol.stabilizing_p1
            );
            print!("P1 =\n{}", format_matrix(&sol.p1));
            print!("P2 =\n{}", format_matrix(&sol.p2));
            if usable {
                let (l1, l2) = lqgame::riccati::nash_gains(&sol, &m.b1, &m.b2, &m.r1, &m.r2)?;
                print!("L1 =\n{}", format_matrix(&l1));
                print!("L2 =\n{}", format_matrix(&l2));
            }
            let mut eig = sol.a_cl_p1.spectrum()?;
            eig.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
            let eig: Vec<String> = eig
                .iter()
                .map(|z| {
                    if z.im == 0.0 {
                        format!("{:.6}", z.re)
                    } else {
                        format!("{:.6}{:+.6}i", z.re, z.im)
                    }
                })
                .collect();
            println!("closed-loop eigenvalues = [{}]", eig.join(", "));
            let residual = game_are_residual(&m.a, &m.b1, &m.b2, &m.q, &m.r1, &m.r2, &sol.p1)?;
            println!("residual = {residual:.3e}");
            println!("value = {:.6}", nash_value(&sol.p1, &m.d));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_diagnose(id: ExperimentId, args: &RunArgs) -> anyhow::Result<ExitCode> {
    let Loaded { config, exp } = load_run(args)?;
    let n = args.seeds.unwrap_or(exp.diagnostics.n_seeds).max(1);
    let d = &exp.diagnostics;
    let report: DiagnosticsReport = match id {
        ExperimentId::Stability => check_stability(&exp, n, None)?,
        ExperimentId::Consistency => check_consistency(&exp, n, &d.checkpoints)?,
        ExperimentId::NashValue => check_nash_value(&exp, n)?,
        ExperimentId::NashGap => check_nash_gap(&exp, &d.deviations, n)?,
        ExperimentId::Dither => check_dither_energy(&exp, d.dither_epochs, n)?,
    };
    let dir = output_dir(args, &config);
    fs::create_dir_all(&dir)?;
    let text = report.to_text();
    fs::write(dir.join(format!("diagnose_{}.txt", id.name())), &text)?;
    fs::write(dir.join(format!("diagnose_{}.csv", id.name())), report.per_seed_csv())?;
    print!("{text}");
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn forced_seeds() -> anyhow::Result<Option<Vec<u64>>> {
    match std::env::var(FORCE_DIVERGE_ENV) {
        Ok(list) if !list.trim().is_empty() => {
            let seeds = list
                .split(',')
                .map(|s| s.trim().parse::<u64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| GameError::Config(format!("{FORCE_DIVERGE_ENV}: {e}")))?;
            Ok(Some(seeds))
        }
        _ => Ok(None),
    }
}

fn cmd_ensemble(args: &RunArgs) -> anyhow::Result<ExitCode> {
    let Loaded { config, exp } = load_run(args)?;
    let n = args.seeds.unwrap_or(exp.diagnostics.n_seeds);
    if n == 0 {
        return Err(GameError::Config("--seeds must be at least 1".into()).into());
    }
    let forced = match forced_seeds()? {
        Some(seeds) => Some(ForcedGains::destabilizing(&exp, Some(seeds))?),
        None => None,
    };
    let dir = output_dir(args, &config);
    write_config(&dir, &config)?;
    if args.emit_plot_script || config.output.plot_script {
        write_plot_script(&dir)?;
    }
    let runs = run_ensemble(&exp, n, exp.diagnostics.threads, forced.as_ref())?;

    let mut csv = format!("{ENSEMBLE_HEADER}\n");
    let mut summaries = Vec::new();
    let mut diverged = 0;
    let mut failed = 0;
    for (seed, run) in &runs {
        let stem = format!("seed_{seed}_");
        match run {
            Ok(traj) => {
                write_run(&dir, &stem, traj)?;
                let s = RunSummary::of(traj);
                csv.push_str(&ensemble_row(*seed, "ok", Some(&s)));
                summaries.push(s);
            }
            Err(GameError::Divergence { partial, .. }) => {
                diverged += 1;
                write_run(&dir, &stem, partial)?;
                csv.push_str(&ensemble_row(*seed, "diverged", Some(&RunSummary::of(partial))));
            }
            Err(e) => {
                failed += 1;
                log::warn!("seed {seed}: {e}");
                csv.push_str(&ensemble_row(*seed, "failed", None));
            }
        }
        csv.push('\n');
    }
    fs::write(dir.join("ensemble.csv"), &csv)?;

    let columns: [(&str, fn(&RunSummary) -> f64); 5] = [
        ("payoff", |s| s.payoff),
        ("estimate_error", |s| s.estimate_error),
        ("stability", |s| s.stability),
        ("min_y_value", |s| s.min_y),
        ("acceptances", |s| s.acceptances as f64),
    ];
    let mut summary = String::from("metric,median,iqr\n");
    for (name, get) in columns {
        let values: Vec<f64> = summaries.iter().map(get).collect();
        summary.push_str(&format!(
            "{name},{},{}\n",
            lqgame::output::fmt_g12(median(&values)),
            lqgame::output::fmt_g12(iqr(&values))
        ));
    }
    fs::write(dir.join("ensemble_summary.csv"), &summary)?;
    println!("runs = {n} (ok {}, diverged {diverged}, failed {failed})", summaries.len());
    print!("{summary}");
    println!("output = {}", dir.display());
    Ok(if diverged > 0 {
        ExitCode::from(3)
    } else if failed > 0 {
        ExitCode::from(4)
    } else {
        ExitCode::SUCCESS
    })
}
