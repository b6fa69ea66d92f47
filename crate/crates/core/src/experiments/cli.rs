//! `dna` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid configuration,
//! 3 runtime fault.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use super::interference::{run_interference, write_csv, InterferenceSpec};
use super::manifest::RunManifest;
use super::plots::{self, emit_plot_data, read_csv, SWEEP_BARS};
use super::sweeps::{lambda_trend, run_epoch_sweep, run_lambda_sweep, EpochGrids, EpochSweepRow, LambdaSweepRow, LAMBDA_GRID};
use crate::error::{Error, Result};
use crate::trainer::{read_jsonl, DnaConfig, FileSink, MetricRecord, MetricsSink, TrainerState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dna", version, about = "Dual-network PPO training and experiment harness")]
pub struct Cli {
    /// TOML file overriding the preset's fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base configuration: dna, coarse, ppo, ppo_original, gridworld, cartpole.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "runs")]
    pub out_dir: PathBuf,
    /// Single-threaded, fixed reduction order. Always the case in this build;
    /// recorded in the manifest.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one configuration; writes metrics and checkpoints.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint.
    Evaluate(EvaluateArgs),
    /// Joint vs dual network interference study.
    Interference(InterferenceArgs),
    /// λ_π / λ_V grid sweep with noise-scale readings.
    SweepLambda(SweepArgs),
    /// One-at-a-time E_π / E_V / E_D sweep.
    SweepEpochs(SweepArgs),
    /// Train and export the per-iteration noise-scale table.
    NoiseProbe(TrainArgs),
    /// Turn a run directory's metric stream into plot tables.
    EmitPlots(EmitArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Continue from a checkpoint; its stored config is used.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub total_interactions: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InterferenceArgs {
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub train_steps: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub sigma1: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 3)]
    pub seeds: usize,
    #[arg(long)]
    pub total_interactions: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub grid_pi: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub grid_v: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct EmitArgs {
    /// Run directory holding `metrics.jsonl` (and optionally sweep CSVs).
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    pub decay: f64,
}

fn read_config_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Preset (default `dna`) overlaid with the config file and CLI overrides.
pub fn load_train_config(cli: &Cli) -> Result<DnaConfig> {
    let base = DnaConfig::preset(cli.preset.as_deref().unwrap_or("dna"))?;
    let mut cfg = match &cli.config {
        None => base,
        Some(path) => {
            let text = read_config_text(path)?;
            let over: toml::Table = text
                .parse()
                .map_err(|e: toml::de::Error| Error::config("--config", e.to_string().trim().to_string()))?;
            let mut table: toml::Table = base.to_toml_string().parse().expect("preset serializes to a table");
            merge(&mut table, over);
            DnaConfig::from_toml_str(&toml::to_string(&table).expect("table serializes"))?
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_interference_spec(cli: &Cli, args: &InterferenceArgs) -> Result<InterferenceSpec> {
    let mut spec = match &cli.config {
        None => InterferenceSpec::default(),
        Some(path) => toml::from_str(&read_config_text(path)?)
            .map_err(|e: toml::de::Error| Error::config("--config", e.to_string().trim().to_string()))?,
    };
    if let Some(s) = args.seeds {
        spec.seeds = s;
    }
    if let Some(s) = args.train_steps {
        spec.train_steps = s;
    }
    if let Some(g) = &args.sigma1 {
        spec.sigma1_grid = g.clone();
    }
    if let Some(seed) = cli.seed {
        spec.first_seed = seed;
    }
    spec.validate()?;
    Ok(spec)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Forwards to a file sink and keeps a copy in memory.
struct Tee<'a> {
    file: &'a mut dyn MetricsSink,
    records: Vec<MetricRecord>,
}

impl MetricsSink for Tee<'_> {
    fn record(&mut self, rec: &MetricRecord) -> Result<()> {
        self.records.push(rec.clone());
        self.file.record(rec)
    }

    fn flush(&mut self) -> Result<()> {
        self.file.flush()
    }
}

#[derive(Debug, Serialize)]
struct NoiseRow {
    iteration: usize,
    interactions: u64,
    probe: String,
    ema_g2: f64,
    ema_s: f64,
    b_simple: Option<f64>,
    sigma: Option<f64>,
}

fn noise_table(records: &[MetricRecord]) -> Vec<NoiseRow> {
    let mut rows: Vec<NoiseRow> = Vec::new();
    for r in records {
        let Some(rest) = r.metric.strip_prefix("noise_") else { continue };
        let Some((probe, field)) = rest.rsplit_once('_') else { continue };
        let pos = rows
            .iter()
            .position(|x| x.iteration == r.iteration && x.probe == probe)
            .unwrap_or_else(|| {
                rows.push(NoiseRow {
                    iteration: r.iteration,
                    interactions: r.interactions,
                    probe: probe.to_string(),
                    ema_g2: f64::NAN,
                    ema_s: f64::NAN,
                    b_simple: None,
                    sigma: None,
                });
                rows.len() - 1
            });
        let row = &mut rows[pos];
        match field {
            "g2" => row.ema_g2 = r.value,
            "s" => row.ema_s = r.value,
            "b" => row.b_simple = Some(r.value),
            "sigma" => row.sigma = Some(r.value),
            _ => {}
        }
    }
    rows
}

fn train_command(cli: &Cli, args: &TrainArgs, noise_only: bool) -> Result<()> {
    let mut state = match &args.resume {
        Some(path) => {
            let s = TrainerState::load_checkpoint(path)
                .map_err(|e| Error::config("--resume", e.to_string()))?;
            if args.total_interactions.is_some() || cli.seed.is_some() {
                log::warn!("--seed and --total-interactions are ignored when resuming");
            }
            s
        }
        None => {
            let mut cfg = load_train_config(cli)?;
            if let Some(n) = args.total_interactions {
                cfg.total_interactions = n;
            }
            if noise_only {
                cfg.noise.enabled = true;
            }
            cfg.validate()?;
            TrainerState::new(cfg)?
        }
    };
    let out = &cli.out_dir;
    let config_text = state.config().to_toml_string();
    let mut outputs: Vec<PathBuf> = vec![
        "config.toml".into(),
        "metrics.jsonl".into(),
        "metrics.csv".into(),
        "checkpoints/final.bin".into(),
        "eval.json".into(),
    ];
    if noise_only {
        outputs.push("noise_probe.csv".into());
    }
    let experiment = if noise_only { "noise-probe" } else { "train" };
    RunManifest::new(experiment, config_text.clone(), vec![state.config().seed], outputs).write(out)?;
    std::fs::write(out.join("config.toml"), &config_text)?;

    let mut file = FileSink::open(out, args.resume.is_some())?;
    let mut tee = Tee {
        file: &mut file,
        records: Vec::new(),
    };
    state.run(&mut tee, Some(&out.join("checkpoints")))?;
    let report = state.evaluate(state.config().eval_episodes.max(1))?;
    log::info!(
        "finished {} iterations ({} interactions): eval return {:.3}, discounted {:.4}",
        state.iteration(),
        state.interactions(),
        report.mean_return,
        report.mean_discounted_return
    );
    write_json(&out.join("eval.json"), &report)?;
    if noise_only {
        write_csv(&out.join("noise_probe.csv"), &noise_table(&tee.records))?;
    }
    Ok(())
}

fn evaluate_command(cli: &Cli, args: &EvaluateArgs) -> Result<()> {
    let state = TrainerState::load_checkpoint(&args.checkpoint)
        .map_err(|e| Error::config("--checkpoint", e.to_string()))?;
    let episodes = args.episodes.unwrap_or(state.config().eval_episodes).max(1);
    let report = match cli.seed {
        Some(seed) => state.evaluate_with_seed(episodes, seed)?,
        None => state.evaluate(episodes)?,
    };
    std::fs::create_dir_all(&cli.out_dir)?;
    write_json(&cli.out_dir.join("eval.json"), &report)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn interference_command(cli: &Cli, args: &InterferenceArgs) -> Result<()> {
    let spec = load_interference_spec(cli, args)?;
    let out = &cli.out_dir;
    let text = toml::to_string(&spec).expect("spec serializes");
    RunManifest::new(
        "interference",
        text,
        spec.seed_list(),
        vec!["interference.csv".into(), "interference_runs.csv".into()],
    )
    .write(out)?;
    let (rows, runs) = run_interference(&spec)?;
    write_csv(&out.join("interference.csv"), &rows)?;
    write_csv(&out.join("interference_runs.csv"), &runs)?;
    Ok(())
}

fn sweep_base(cli: &Cli, args: &SweepArgs) -> Result<(DnaConfig, Vec<u64>)> {
    let preset_given = cli.preset.is_some();
    let mut base = load_train_config(cli)?;
    if !preset_given && cli.config.is_none() {
        base = DnaConfig {
            seed: base.seed,
            ..DnaConfig::cartpole_desk()
        };
    }
    if let Some(n) = args.total_interactions {
        base.total_interactions = n;
    }
    if args.seeds == 0 {
        return Err(Error::config("--seeds", "must be positive"));
    }
    base.validate()?;
    let seeds = (0..args.seeds as u64).map(|i| base.seed + i).collect();
    Ok((base, seeds))
}

fn sweep_lambda_command(cli: &Cli, args: &SweepArgs) -> Result<()> {
    let (base, seeds) = sweep_base(cli, args)?;
    let grid_pi = args.grid_pi.clone().unwrap_or(LAMBDA_GRID.to_vec());
    let grid_v = args.grid_v.clone().unwrap_or(LAMBDA_GRID.to_vec());
    for &l in grid_pi.iter().chain(&grid_v) {
        if !(0.0..=1.0).contains(&l) {
            return Err(Error::config("--grid", format!("lambda {l} not in [0, 1]")));
        }
    }
    let out = &cli.out_dir;
    RunManifest::new(
        "sweep-lambda",
        base.to_toml_string(),
        seeds.clone(),
        vec!["lambda_sweep.csv".into(), "lambda_trend.json".into(), SWEEP_BARS.into()],
    )
    .write(out)?;
    let rows = run_lambda_sweep(&base, &grid_pi, &grid_v, &seeds)?;
    write_csv(&out.join("lambda_sweep.csv"), &rows)?;
    write_json(&out.join("lambda_trend.json"), &lambda_trend(&rows))?;
    write_csv(&out.join(SWEEP_BARS), &plots::lambda_bars(&rows))?;
    Ok(())
}

fn sweep_epochs_command(cli: &Cli, args: &SweepArgs) -> Result<()> {
    let (base, seeds) = sweep_base(cli, args)?;
    let out = &cli.out_dir;
    RunManifest::new(
        "sweep-epochs",
        base.to_toml_string(),
        seeds.clone(),
        vec!["epoch_sweep.csv".into(), SWEEP_BARS.into()],
    )
    .write(out)?;
    let rows = run_epoch_sweep(&base, &EpochGrids::default(), &seeds)?;
    write_csv(&out.join("epoch_sweep.csv"), &rows)?;
    write_csv(&out.join(SWEEP_BARS), &plots::epoch_bars(&rows))?;
    Ok(())
}

fn emit_plots_command(cli: &Cli, args: &EmitArgs) -> Result<()> {
    let dir = &args.metrics;
    let metrics_path = dir.join("metrics.jsonl");
    let lambda_path = dir.join("lambda_sweep.csv");
    let epoch_path = dir.join("epoch_sweep.csv");
    if !metrics_path.exists() && !lambda_path.exists() && !epoch_path.exists() {
        return Err(Error::config(
            "--metrics",
            format!("{} holds no metrics.jsonl or sweep CSV", dir.display()),
        ));
    }
    let seed = match cli.seed {
        Some(s) => s,
        None => RunManifest::read(dir).ok().and_then(|m| m.seeds.first().copied()).unwrap_or(0),
    };
    let out = &cli.out_dir;
    std::fs::create_dir_all(out)?;
    if metrics_path.exists() {
        emit_plot_data(&read_jsonl(&metrics_path)?, seed, args.decay, out)?;
    }
    if lambda_path.exists() {
        let rows: Vec<LambdaSweepRow> = read_csv(&lambda_path)?;
        write_csv(&out.join(SWEEP_BARS), &plots::lambda_bars(&rows))?;
    } else if epoch_path.exists() {
        let rows: Vec<EpochSweepRow> = read_csv(&epoch_path)?;
        write_csv(&out.join(SWEEP_BARS), &plots::epoch_bars(&rows))?;
    }
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Parse `argv` (program name first), run the command and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(a) => train_command(&cli, a, false),
        Command::NoiseProbe(a) => train_command(&cli, a, true),
        Command::Evaluate(a) => evaluate_command(&cli, a),
        Command::Interference(a) => interference_command(&cli, a),
        Command::SweepLambda(a) => sweep_lambda_command(&cli, a),
        Command::SweepEpochs(a) => sweep_epochs_command(&cli, a),
        Command::EmitPlots(a) => emit_plots_command(&cli, a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run(["dna", "train", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["dna"]), EXIT_USAGE);
    }

    #[test]
    fn missing_config_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let code = run([
            "dna",
            "train",
            "--config",
            dir.path().join("nope.toml").to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_CONFIG);
        assert!(!out.exists());
    }

    #[test]
    fn invalid_field_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "lambda_v = 2.0\n").unwrap();
        let out = dir.path().join("out");
        let code = run([
            "dna",
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_CONFIG);
        assert!(!out.exists());
    }

    #[test]
    fn config_file_overlays_preset() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "e_d = 0\n[env]\nsticky_p = 0.25\n").unwrap();
        let cli = Cli::try_parse_from([
            "dna",
            "--preset",
            "gridworld",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "9",
            "train",
        ])
        .unwrap();
        let c = load_train_config(&cli).unwrap();
        assert_eq!((c.e_d, c.seed, c.env.sticky_p), (0, 9, 0.25));
        assert_eq!(c.env.kind, crate::env::EnvKind::Gridworld);
        assert_eq!(c.total_interactions, 200_000);
    }
}
