use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use esgan_core::gan::{default_windows, TrainConfig, Window};
use esgan_core::models::{ModelId, ModelParams};
use esgan_core::pipeline::{
    generate, kl_cmd, read_dataset, resolve_data_path, scan_cmd, stability_cmd, towers_cmd, train_cmd, Grid,
    PipelineError, ScanRequest, StabilityRequest, SweepConfig, TrainRequest, EXIT_CONFIG, EXIT_NOT_CONVERGED,
    EXIT_SOLVER,
};
use esgan_core::spectra::{Slice, DEFAULT_N_FEAT};

/// Entanglement-spectrum anomaly detection for one-dimensional lattice models.
///
/// Relative data paths resolve against $ESGAN_DATA_DIR when it is set.
#[derive(Parser, Debug)]
#[command(name = "esgan", version)]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps and scans.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML file with defaults for any flag: global keys at the top level,
    /// subcommand keys in a table named after the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute ground-state entanglement spectra over a control-parameter grid.
    Generate(GenerateOpts),
    /// Train a detector inside a known phase.
    Train(TrainOpts),
    /// Score a dataset with a trained detector.
    Scan(ScanOpts),
    /// Train one detector per training window and score the dataset with each.
    Stability(StabilityOpts),
    /// Kullback-Leibler divergence of every spectrum from the origin spectrum.
    Kl(KlOpts),
    /// Conformal-tower tables of rescaled entanglement levels.
    Towers(TowersOpts),
}

#[derive(Deserialize, Default, Debug)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    threads: Option<usize>,
    generate: Option<GenerateOpts>,
    train: Option<TrainOpts>,
    scan: Option<ScanOpts>,
    stability: Option<StabilityOpts>,
    kl: Option<KlOpts>,
    towers: Option<TowersOpts>,
}

/// Fills every unset field of `$a` from `$b`.
macro_rules! merge {
    ($a:expr, $b:expr; $($f:ident),*) => {
        $( if $a.$f.is_none() { $a.$f = $b.$f.take(); } )*
    };
}

#[derive(Args, Deserialize, Default, Debug)]
#[serde(deny_unknown_fields)]
struct GenerateOpts {
    /// xxz, bh or bh2s.
    #[arg(long)]
    model: Option<String>,
    /// Chain length.
    #[arg(long)]
    len: Option<usize>,
    /// Lower end of the control-parameter grid.
    #[arg(long, allow_hyphen_values = true)]
    min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    max: Option<f64>,
    #[arg(long, conflicts_with = "count")]
    step: Option<f64>,
    #[arg(long)]
    count: Option<usize>,
    /// Hopping J (xxz, bh) or t (bh2s).
    #[arg(long)]
    j: Option<f64>,
    /// Intra-species repulsion U of the two-species model.
    #[arg(long)]
    u: Option<f64>,
    /// Occupation cutoff of the bosonic models.
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    chi: Option<usize>,
    #[arg(long)]
    cutoff: Option<f64>,
    #[arg(long)]
    energy_tol: Option<f64>,
    #[arg(long)]
    max_sweeps: Option<usize>,
    /// Points computed between two file writes.
    #[arg(long)]
    chunk: Option<usize>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Deserialize, Default, Debug, Clone)]
#[serde(deny_unknown_fields)]
struct TrainingFlags {
    #[arg(long)]
    n_feat: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_g: Option<f64>,
    #[arg(long)]
    lr_d: Option<f64>,
    /// Weight of the adversarial loss.
    #[arg(long)]
    lambda: Option<f64>,
    /// Weight of the reconstruction loss.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    threshold_train: Option<f64>,
    #[arg(long)]
    threshold_val: Option<f64>,
    /// Train the plain autoencoder without the discriminator.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    no_adversarial: Option<bool>,
}

impl TrainingFlags {
    fn merge(&mut self, mut o: TrainingFlags) {
        merge!(self, o; n_feat, epochs, batch_size, lr_g, lr_d, lambda, epsilon, threshold_train, threshold_val, no_adversarial);
    }

    fn config(&self, model: ModelId, seed: u64) -> TrainConfig {
        let mut c = TrainConfig::for_model(model);
        c.seed = seed;
        c.epochs_max = self.epochs.unwrap_or(c.epochs_max);
        c.batch_size = self.batch_size.unwrap_or(c.batch_size);
        c.lr_g = self.lr_g.unwrap_or(c.lr_g);
        c.lr_d = self.lr_d.unwrap_or(c.lr_d);
        c.lambda_adv = self.lambda.unwrap_or(c.lambda_adv);
        c.epsilon_rec = self.epsilon.unwrap_or(c.epsilon_rec);
        c.thresholds.train = self.threshold_train.unwrap_or(c.thresholds.train);
        c.thresholds.val = self.threshold_val.unwrap_or(c.thresholds.val);
        c.adversarial = !self.no_adversarial.unwrap_or(false);
        c
    }
}

#[derive(Args, Deserialize, Default, Debug)]
#[serde(deny_unknown_fields)]
struct TrainOpts {
    #[arg(long, short)]
    dataset: Option<PathBuf>,
    /// Training window, e.g. "[-0.65,0]".
    #[arg(long, allow_hyphen_values = true)]
    train_window: Option<String>,
    /// Validation window, e.g. "[-0.8,-0.65)".
    #[arg(long, allow_hyphen_values = true)]
    val_window: Option<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Training-log CSV (default: checkpoint path with .log.csv).
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    training: TrainingFlags,
}

#[derive(Args, Deserialize, Default, Debug)]
#[serde(deny_unknown_fields)]
struct ScanOpts {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, short)]
    dataset: Option<PathBuf>,
    /// Append the KL divergence from the origin spectrum.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    kl: Option<bool>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Deserialize, Default, Debug)]
#[serde(deny_unknown_fields)]
struct StabilityOpts {
    #[arg(long, short)]
    dataset: Option<PathBuf>,
    /// Training window; repeat for each detector.
    #[arg(long = "window", allow_hyphen_values = true)]
    #[serde(default)]
    windows: Vec<String>,
    #[arg(long, allow_hyphen_values = true)]
    val_window: Option<String>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    training: TrainingFlags,
}

#[derive(Args, Deserialize, Default, Debug)]
#[serde(deny_unknown_fields)]
struct KlOpts {
    #[arg(long, short)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    n_feat: Option<usize>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Deserialize, Default, Debug)]
#[serde(deny_unknown_fields)]
struct TowersOpts {
    #[arg(long, short)]
    dataset: Option<PathBuf>,
    /// Control value; the nearest record is used. Repeatable.
    #[arg(long = "control", allow_hyphen_values = true)]
    #[serde(default)]
    controls: Vec<f64>,
    /// all, density or spin.
    #[arg(long)]
    slice: Option<String>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: i32,
    error: anyhow::Error,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure { code: e.exit_code(), error: e.into() }
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure { code: EXIT_CONFIG, error: anyhow::anyhow!(msg.into()) }
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, Failure> {
    v.ok_or_else(|| config_error(format!("missing --{flag}")))
}

fn window(s: &str) -> Result<Window, Failure> {
    s.parse::<Window>().map_err(|e| config_error(e.to_string()))
}

fn data_path(p: PathBuf) -> PathBuf {
    resolve_data_path(&p)
}

fn load_config(path: &Path) -> Result<FileConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(|error| Failure { code: EXIT_CONFIG, error })?;
    toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<i32, Failure> {
    let mut file = match &cli.config {
        Some(p) => load_config(p)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let threads = cli.threads.or(file.threads).unwrap_or(1).max(1);
    match cli.command {
        Command::Generate(mut o) => {
            if let Some(f) = file.generate.take() {
                let mut f = f;
                merge!(o, f; model, len, min, max, step, count, j, u, n_max, chi, cutoff, energy_tol, max_sweeps, chunk, output);
            }
            run_generate(o, seed, threads)
        }
        Command::Train(mut o) => {
            if let Some(mut f) = file.train.take() {
                merge!(o, f; dataset, train_window, val_window, checkpoint, log);
                o.training.merge(f.training);
            }
            run_train(o, seed)
        }
        Command::Scan(mut o) => {
            if let Some(mut f) = file.scan.take() {
                merge!(o, f; checkpoint, dataset, kl, output);
            }
            install_threads(threads)?;
            let req = ScanRequest {
                checkpoint: data_path(required(o.checkpoint, "checkpoint")?),
                dataset: data_path(required(o.dataset, "dataset")?),
                kl: o.kl.unwrap_or(false),
                output: data_path(required(o.output, "output")?),
            };
            let rows = scan_cmd(&req)?;
            log::info!("{} rows written to {}", rows.len(), req.output.display());
            Ok(0)
        }
        Command::Stability(mut o) => {
            if let Some(mut f) = file.stability.take() {
                merge!(o, f; dataset, val_window, output);
                if o.windows.is_empty() {
                    o.windows = f.windows;
                }
                o.training.merge(f.training);
            }
            install_threads(threads)?;
            let dataset = data_path(required(o.dataset, "dataset")?);
            let model = read_dataset(&dataset)?.header.model;
            let windows = o.windows.iter().map(|w| window(w)).collect::<Result<Vec<_>, _>>()?;
            let val_window = match &o.val_window {
                Some(w) => window(w)?,
                None => default_windows(model).1,
            };
            let req = StabilityRequest {
                dataset,
                windows,
                val_window,
                config: o.training.config(model, seed),
                n_feat: o.training.n_feat.unwrap_or(DEFAULT_N_FEAT),
                output: data_path(required(o.output, "output")?),
            };
            let columns = stability_cmd(&req)?;
            let failed = columns.iter().filter(|c| c.is_err()).count();
            for e in columns.iter().filter_map(|c| c.as_ref().err()) {
                log::error!("window failed: {e}");
            }
            Ok(if failed > 0 { EXIT_NOT_CONVERGED } else { 0 })
        }
        Command::Kl(mut o) => {
            if let Some(mut f) = file.kl.take() {
                merge!(o, f; dataset, n_feat, output);
            }
            let curve = kl_cmd(
                &data_path(required(o.dataset, "dataset")?),
                o.n_feat.unwrap_or(DEFAULT_N_FEAT),
                &data_path(required(o.output, "output")?),
            )?;
            log::info!("{} KL values written", curve.len());
            Ok(0)
        }
        Command::Towers(mut o) => {
            if let Some(mut f) = file.towers.take() {
                merge!(o, f; dataset, slice, output);
                if o.controls.is_empty() {
                    o.controls = f.controls;
                }
            }
            let slice = match o.slice.as_deref().unwrap_or("all") {
                "all" => Slice::All,
                "density" => Slice::Density,
                "spin" => Slice::Spin,
                other => return Err(config_error(format!("unknown slice {other:?} (all, density, spin)"))),
            };
            let n = towers_cmd(
                &data_path(required(o.dataset, "dataset")?),
                &o.controls,
                slice,
                &data_path(required(o.output, "output")?),
            )?;
            log::info!("{n} levels written");
            Ok(0)
        }
    }
}

fn install_threads(threads: usize) -> Result<(), Failure> {
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn run_generate(o: GenerateOpts, seed: u64, threads: usize) -> Result<i32, Failure> {
    let model: ModelId = required(o.model, "model")?.parse().map_err(config_error)?;
    let len = required(o.len, "len")?;
    let mut params = ModelParams::default_for(model);
    match &mut params {
        ModelParams::Xxz(p) => p.j = o.j.unwrap_or(p.j),
        ModelParams::Bh(p) => {
            p.j = o.j.unwrap_or(p.j);
            p.n_max = o.n_max.unwrap_or(p.n_max);
        }
        ModelParams::Bh2s(p) => {
            p.t = o.j.unwrap_or(p.t);
            p.u = o.u.unwrap_or(p.u);
            p.n_max = o.n_max.unwrap_or(p.n_max);
        }
    }
    let default = Grid::default_for(model);
    let min = o.min.unwrap_or(default.min);
    let max = o.max.unwrap_or(default.max);
    let grid = match (o.step, o.count) {
        (Some(step), _) => Grid::with_step(min, max, step)?,
        (None, Some(count)) => Grid::with_count(min, max, count)?,
        (None, None) if o.min.is_none() && o.max.is_none() => default,
        (None, None) => Grid::with_step(min, max, (default.max - default.min) / (default.count - 1) as f64)?,
    };
    let mut cfg = SweepConfig::new(params, len, grid, data_path(required(o.output, "output")?));
    cfg.seed = seed;
    cfg.threads = threads;
    cfg.chunk = o.chunk.unwrap_or(cfg.chunk);
    cfg.dmrg.chi_max = o.chi.unwrap_or(cfg.dmrg.chi_max);
    cfg.dmrg.svd_cutoff = o.cutoff.unwrap_or(cfg.dmrg.svd_cutoff);
    cfg.dmrg.energy_tol = o.energy_tol.unwrap_or(cfg.dmrg.energy_tol);
    cfg.dmrg.max_sweeps = o.max_sweeps.unwrap_or(cfg.dmrg.max_sweeps);
    let report = generate(&cfg)?;
    log::info!(
        "{}: {} computed, {} already present, {} failed, {} unconverged",
        cfg.output.display(),
        report.computed,
        report.skipped,
        report.failed.len(),
        report.unconverged.len()
    );
    Ok(if report.failed.is_empty() { 0 } else { EXIT_SOLVER })
}

fn run_train(o: TrainOpts, seed: u64) -> Result<i32, Failure> {
    let dataset = data_path(required(o.dataset, "dataset")?);
    let model = read_dataset(&dataset)?.header.model;
    let (dt, dv) = default_windows(model);
    let train_window = o.train_window.as_deref().map(window).transpose()?.unwrap_or(dt);
    let val_window = o.val_window.as_deref().map(window).transpose()?.unwrap_or(dv);
    let checkpoint = data_path(required(o.checkpoint, "checkpoint")?);
    let log = match o.log {
        Some(p) => data_path(p),
        None => checkpoint.with_extension("log.csv"),
    };
    let req = TrainRequest {
        dataset,
        train_window,
        val_window,
        config: o.training.config(model, seed),
        n_feat: o.training.n_feat.unwrap_or(DEFAULT_N_FEAT),
        checkpoint,
        log,
    };
    let det = train_cmd(&req)?;
    log::info!(
        "{} epochs, mean training loss {}, converged {}",
        det.epochs_run,
        det.mean_train_loss,
        det.converged
    );
    Ok(if det.converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code as u8)
        }
    }
}
