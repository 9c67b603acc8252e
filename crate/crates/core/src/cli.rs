//! Command-line front end. Numeric settings live in JSON config files; flags
//! select paths, seeds and a few overrides.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, LevelFilter};
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covert_eval::{
    mean_error, monte_carlo, prediction_error, run_rng, write_aggregate_csv, CovertConfig, DetectionReport,
    NetworkParams, NominalMode, Predictor, ScenarioConfig,
};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::gkae::{load_checkpoint, train, GkaeDims, GkaeModel, TrainConfig};
use crate::graph::{GraphSequence, NormalizationSpec, DEFAULT_D_TILDE};
use crate::swarm_sim::{fmt_f64, simulate, steps_for, SwarmConfig, Trajectory, UavState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => EXIT_IO,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

#[derive(Debug, Parser)]
#[command(name = "gkae-covert", version, about = "UAV swarm prediction and covert power-control experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Only log warnings and errors.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one swarm trajectory to CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate many trajectories and write train/test graph sequences.
    Dataset {
        #[command(flatten)]
        common: Common,
        /// Number of trajectories (overrides the config).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Two-phase training on a dataset directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory produced by `dataset`.
        #[arg(long)]
        dataset: PathBuf,
        /// Loss history CSV (default: next to the checkpoint).
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        /// Continue from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Roll a model out from the first frame of a trajectory.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// True trajectory CSV.
        #[arg(long)]
        trajectory: PathBuf,
        /// Prediction horizon (s).
        #[arg(long, default_value_t = 10.0)]
        horizon: f64,
        /// Spacing of the error report (s).
        #[arg(long, default_value_t = 1.0)]
        report_interval: f64,
        /// Error report CSV (default: `<stem>.eps.csv` next to `--out`).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Add a constant-velocity baseline column to the report.
        #[arg(long)]
        baseline: bool,
        /// Score an existing prediction CSV instead of running a model.
        #[arg(long, conflicts_with = "checkpoint")]
        against: Option<PathBuf>,
    },
    /// Monte-Carlo detection probability over a parameter grid.
    EvalCovert {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Predictor to evaluate.
        #[arg(long, value_enum, default_value_t = PredictorKind::Gkae)]
        predictor: PredictorKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Gkae,
    ConstantVelocity,
    Oracle,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate { common }
            | Command::Dataset { common, .. }
            | Command::Train { common, .. }
            | Command::Predict { common, .. }
            | Command::EvalCovert { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Dataset { .. } => "dataset",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::EvalCovert { .. } => "eval-covert",
        }
    }
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_unix_s: u64,
    pub duration_s: f64,
    #[serde(default)]
    pub summary: serde_json::Value,
}

/// Output files of a command; everything is removed unless `commit` is
/// called.
struct Outputs {
    paths: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    fn new() -> Self {
        Outputs {
            paths: Vec::new(),
            dirs: Vec::new(),
            committed: false,
        }
    }

    fn create_dir(&mut self, dir: &Path) -> Result<()> {
        if !dir.exists() {
            fs::create_dir_all(dir)?;
            self.dirs.push(dir.to_path_buf());
        }
        Ok(())
    }

    /// Writes `path` through a sibling temporary file and a rename.
    fn write<F>(&mut self, path: &Path, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            self.create_dir(parent)?;
        }
        let tmp = temp_path(path);
        let result = (|| {
            let mut w = BufWriter::new(File::create(&tmp)?);
            f(&mut w)?;
            w.flush()?;
            w.get_ref().sync_all()?;
            drop(w);
            fs::rename(&tmp, path)?;
            Ok(())
        })();
        if result.is_err() {
            let _ = fs::remove_file(&tmp);
            return result;
        }
        self.paths.push(path.to_path_buf());
        Ok(())
    }

    fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.paths)
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in &self.paths {
            let _ = fs::remove_file(p);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir_all(d);
        }
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(OsString::from).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Raw config bytes and their digest; a missing or unreadable config is a
/// configuration error.
struct ConfigFile {
    path: Option<PathBuf>,
    bytes: Option<Vec<u8>>,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<Self> {
        let bytes = path
            .map(|p| fs::read(p).map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display()))))
            .transpose()?;
        Ok(ConfigFile {
            path: path.map(Path::to_path_buf),
            bytes,
        })
    }

    fn parse<T: DeserializeOwned + Default>(&self) -> Result<T> {
        match &self.bytes {
            None => Ok(T::default()),
            Some(b) => serde_json::from_slice(b).map_err(|e| Error::Config(format!("config: {e}"))),
        }
    }

    fn digest(&self) -> Option<String> {
        self.bytes.as_ref().map(|b| hex::encode(Sha256::digest(b)))
    }
}

fn required_out(common: &Common) -> Result<PathBuf> {
    common
        .out
        .clone()
        .ok_or_else(|| Error::Config("--out is required".into()))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

struct Finished {
    outputs: Outputs,
    inputs: Vec<PathBuf>,
    seed: Option<u64>,
    summary: serde_json::Value,
    manifest_path: PathBuf,
}

/// Entry point used by the binary; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let level = if cli.command.common().quiet {
        LevelFilter::Warn
    } else {
        LevelFilter::Info
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("RUST_LOG")
        .format_timestamp(None)
        .try_init();
    match run(&cli, &args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli, args: &[OsString]) -> Result<()> {
    let started = Instant::now();
    let started_unix_s = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let common = cli.command.common();
    let config = ConfigFile::load(common.config.as_deref())?;
    let done = match &cli.command {
        Command::Simulate { common } => cmd_simulate(common, &config)?,
        Command::Dataset { common, n } => cmd_dataset(common, &config, *n)?,
        Command::Train {
            common,
            dataset,
            loss_csv,
            resume,
        } => cmd_train(common, &config, dataset, loss_csv.as_deref(), resume.as_deref())?,
        Command::Predict {
            common,
            checkpoint,
            trajectory,
            horizon,
            report_interval,
            report,
            baseline,
            against,
        } => cmd_predict(
            common,
            &PredictArgs {
                checkpoint: checkpoint.as_deref(),
                trajectory,
                horizon_s: *horizon,
                report_interval_s: *report_interval,
                report: report.as_deref(),
                baseline: *baseline,
                against: against.as_deref(),
            },
        )?,
        Command::EvalCovert {
            common,
            checkpoint,
            predictor,
        } => cmd_eval_covert(common, &config, checkpoint.as_deref(), *predictor)?,
    };
    let Finished {
        mut outputs,
        inputs,
        seed,
        summary,
        manifest_path,
    } = done;
    let mut manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: cli.command.name().to_string(),
        args: args.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
        config_path: config.path.clone(),
        config_sha256: config.digest(),
        seed,
        inputs,
        outputs: outputs.paths.clone(),
        started_unix_s,
        duration_s: 0.0,
        summary,
    };
    manifest.duration_s = started.elapsed().as_secs_f64();
    outputs.write(&manifest_path, |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        Ok(())
    })?;
    for p in outputs.commit() {
        info!("wrote {}", p.display());
    }
    Ok(())
}

/// `dir/stem.ext` becomes `dir/stem<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().map(OsString::from).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn cmd_simulate(common: &Common, config: &ConfigFile) -> Result<Finished> {
    let mut cfg: SwarmConfig = config.parse()?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let out = required_out(common)?;
    let traj = simulate(&cfg)?;
    let mut outputs = Outputs::new();
    outputs.write(&out, |w| traj.write_csv(w))?;
    Ok(Finished {
        outputs,
        inputs: Vec::new(),
        seed: Some(cfg.seed),
        summary: serde_json::json!({ "frames": traj.len(), "L": traj.num_uavs() }),
        manifest_path: sibling(&out, ".manifest.json"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub swarm: SwarmConfig,
    #[serde(rename = "D_tilde")]
    pub d_tilde: f64,
    pub n_trajectories: usize,
    pub train_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            swarm: SwarmConfig::default(),
            d_tilde: DEFAULT_D_TILDE,
            n_trajectories: 100,
            train_fraction: 0.8,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.swarm.validate()?;
        if !(self.d_tilde >= 0.0 && self.d_tilde.is_finite()) {
            return Err(Error::Config(format!("D_tilde must be finite and >= 0, got {}", self.d_tilde)));
        }
        if self.n_trajectories == 0 || !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config("need n_trajectories >= 1 and 0 <= train_fraction <= 1".into()));
        }
        Ok(())
    }

    /// Trajectories `0..train_count()` are training data, the rest test.
    pub fn train_count(&self) -> usize {
        ((self.n_trajectories as f64 * self.train_fraction) + 1e-9).floor() as usize
    }
}

/// Seed of trajectory `k` in a dataset built from `seed`.
pub fn dataset_trajectory_seed(seed: u64, k: usize) -> u64 {
    run_rng(seed, k).random()
}

pub const TRAIN_DIR: &str = "train";
pub const TEST_DIR: &str = "test";

fn cmd_dataset(common: &Common, config: &ConfigFile, n: Option<usize>) -> Result<Finished> {
    let mut cfg: DatasetConfig = config.parse()?;
    if let Some(s) = common.seed {
        cfg.swarm.seed = s;
    }
    if let Some(n) = n {
        cfg.n_trajectories = n;
    }
    cfg.validate()?;
    let out = required_out(common)?;
    let norm = NormalizationSpec::for_area(cfg.swarm.x_size)?;
    let n_train = cfg.train_count();
    let mut outputs = Outputs::new();
    outputs.create_dir(&out)?;
    for k in 0..cfg.n_trajectories {
        let swarm = SwarmConfig {
            seed: dataset_trajectory_seed(cfg.swarm.seed, k),
            ..cfg.swarm.clone()
        };
        let traj = simulate(&swarm)?;
        let seq = GraphSequence::from_trajectory(&traj, cfg.d_tilde, norm)?;
        let split = if k < n_train { TRAIN_DIR } else { TEST_DIR };
        let dir = out.join(split);
        outputs.write(&dir.join(format!("seq_{k:05}.json")), |w| seq.write_json(w))?;
        outputs.write(&dir.join(format!("traj_{k:05}.csv")), |w| traj.write_csv(w))?;
    }
    info!("{} train and {} test trajectories", n_train, cfg.n_trajectories - n_train);
    Ok(Finished {
        outputs,
        inputs: Vec::new(),
        seed: Some(cfg.swarm.seed),
        summary: serde_json::json!({ "train": n_train, "test": cfg.n_trajectories - n_train }),
        manifest_path: out.join("manifest.json"),
    })
}

/// Sorted graph-sequence files in `dir`.
pub fn sequence_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != "manifest.json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Training settings file: the [`TrainConfig`] fields plus `d_out`.
fn parse_train_config(config: &ConfigFile) -> Result<(TrainConfig, usize)> {
    let Some(bytes) = &config.bytes else {
        return Ok((TrainConfig::default(), 3));
    };
    let mut value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| Error::Config(format!("config: {e}")))?;
    let d_out = match value.as_object_mut().and_then(|o| o.remove("d_out")) {
        None => 3,
        Some(v) => v
            .as_u64()
            .ok_or_else(|| Error::Config("d_out must be 2 or 3".into()))? as usize,
    };
    let cfg = serde_json::from_value(value).map_err(|e| Error::Config(format!("config: {e}")))?;
    Ok((cfg, d_out))
}

fn cmd_train(
    common: &Common,
    config: &ConfigFile,
    dataset: &Path,
    loss_csv: Option<&Path>,
    resume: Option<&Path>,
) -> Result<Finished> {
    let (mut cfg, d_out) = parse_train_config(config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let out = required_out(common)?;
    let train_dir = dataset.join(TRAIN_DIR);
    let files = sequence_files(&train_dir)?;
    if files.is_empty() {
        return Err(Error::Input(format!("no training sequences in {}", train_dir.display())));
    }
    let data = files
        .iter()
        .map(|f| GraphSequence::read_json(open(f)?))
        .collect::<Result<Vec<_>>>()?;
    let first = &data[0];
    let model = match resume {
        Some(path) => {
            let m = load_checkpoint(path)?;
            if m.dims.num_uavs != first.num_nodes() || m.dims.d_out != d_out {
                return Err(Error::Config(format!(
                    "checkpoint dims (L={}, d_out={}) do not match dataset L={} and d_out={d_out}",
                    m.dims.num_uavs,
                    m.dims.d_out,
                    first.num_nodes()
                )));
            }
            m
        }
        None => {
            let dims = GkaeDims::new(first.num_nodes(), d_out)?.with_threshold(first.threshold());
            GkaeModel::new(dims, first.norm, cfg.seed)?
        }
    };
    info!(
        "training on {} sequences, {} parameters, {}+{} epochs",
        data.len(),
        crate::nn::Parameters::num_params(&model),
        cfg.epochs_phase1,
        cfg.epochs_phase2
    );
    let (model, history) = train(model, &data, &cfg)?;
    let loss_path = loss_csv.map_or_else(|| sibling(&out, ".loss.csv"), Path::to_path_buf);
    let mut outputs = Outputs::new();
    outputs.write(&out, |w| model.write_checkpoint(w))?;
    outputs.write(&loss_path, |w| history.write_csv(w))?;
    let mut inputs = files;
    inputs.extend(resume.map(Path::to_path_buf));
    Ok(Finished {
        outputs,
        inputs,
        seed: Some(cfg.seed),
        summary: serde_json::json!({
            "params": crate::nn::Parameters::num_params(&model),
            "final_L_grec": model.meta.final_l_grec,
            "final_L_rec": model.meta.final_l_rec,
            "final_L_pred": model.meta.final_l_pred,
        }),
        manifest_path: sibling(&out, ".manifest.json"),
    })
}

struct PredictArgs<'a> {
    checkpoint: Option<&'a Path>,
    trajectory: &'a Path,
    horizon_s: f64,
    report_interval_s: f64,
    report: Option<&'a Path>,
    baseline: bool,
    against: Option<&'a Path>,
}

fn positions(traj: &Trajectory) -> Vec<Vec<Vec3>> {
    (0..traj.len()).map(|k| traj.positions(k)).collect()
}

/// Frame 0 of `truth` followed by `pred`, with backward-difference velocities.
fn as_trajectory(first: &[UavState], pred: &[Vec<Vec3>], dt: f64) -> Trajectory {
    let mut frames = vec![first.to_vec()];
    let mut prev: Vec<Vec3> = first.iter().map(|u| u.position).collect();
    for f in pred {
        frames.push(
            f.iter()
                .zip(&prev)
                .map(|(&p, &q)| UavState {
                    position: p,
                    velocity: (p - q) * (1.0 / dt),
                })
                .collect(),
        );
        prev.clone_from(f);
    }
    Trajectory {
        frames,
        dt,
        config: None,
    }
}

fn cmd_predict(common: &Common, a: &PredictArgs<'_>) -> Result<Finished> {
    let out = required_out(common)?;
    let truth = Trajectory::read_csv(open(a.trajectory)?)?;
    if truth.is_empty() {
        return Err(Error::Input("trajectory has no frames".into()));
    }
    if !(a.horizon_s > 0.0 && a.report_interval_s > 0.0 && a.report_interval_s <= a.horizon_s) {
        return Err(Error::Config("need 0 < report interval <= horizon".into()));
    }
    let checks = CovertConfig {
        horizon_s: a.horizon_s,
        report_interval_s: a.report_interval_s,
        ..CovertConfig::default()
    }
    .check_steps(truth.dt)?;
    let steps = steps_for(a.horizon_s, truth.dt);
    if truth.len() < steps + 1 {
        return Err(Error::Input(format!(
            "trajectory has {} frames, horizon needs {}",
            truth.len(),
            steps + 1
        )));
    }
    let truth_pos = positions(&truth);
    let mut inputs = vec![a.trajectory.to_path_buf()];
    let (pred, norm) = match (a.checkpoint, a.against) {
        (Some(ck), None) => {
            let model = load_checkpoint(ck)?;
            inputs.push(ck.to_path_buf());
            if model.dims.num_uavs != truth.num_uavs() {
                return Err(Error::Config(format!(
                    "model expects {} UAVs, trajectory has {}",
                    model.dims.num_uavs,
                    truth.num_uavs()
                )));
            }
            (Predictor::Gkae(&model).predict(&truth_pos, steps)?, model.norm)
        }
        (None, Some(other)) => {
            let p = Trajectory::read_csv(open(other)?)?;
            inputs.push(other.to_path_buf());
            if p.num_uavs() != truth.num_uavs() || p.len() < steps + 1 {
                return Err(Error::Input("prediction file does not cover the horizon for the same UAVs".into()));
            }
            let scale = truth.config.as_ref().map_or(SwarmConfig::default().x_size, |c| c.x_size);
            (positions(&p)[1..=steps].to_vec(), NormalizationSpec::for_area(scale)?)
        }
        _ => return Err(Error::Config("give exactly one of --checkpoint or --against".into())),
    };
    let cv = if a.baseline {
        Some(Predictor::ConstantVelocity.predict(&truth_pos, steps)?)
    } else {
        None
    };
    let eps_at = |series: &[Vec<Vec3>], k: usize| -> Result<f64> {
        let t: Vec<Vec3> = truth_pos[k].iter().map(|&p| norm.apply(p)).collect();
        let p: Vec<Vec3> = series[k - 1].iter().map(|&p| norm.apply(p)).collect();
        prediction_error(&t, &p)
    };
    let eps: Vec<f64> = checks.iter().map(|&k| eps_at(&pred, k)).collect::<Result<_>>()?;
    let eps_cv: Option<Vec<f64>> = cv
        .as_ref()
        .map(|c| checks.iter().map(|&k| eps_at(c, k)).collect::<Result<_>>())
        .transpose()?;
    let report_path = a.report.map_or_else(|| sibling(&out, ".eps.csv"), Path::to_path_buf);
    let mut outputs = Outputs::new();
    outputs.write(&out, |w| as_trajectory(&truth.frames[0], &pred, truth.dt).write_csv(w))?;
    outputs.write(&report_path, |w| {
        let mut c = csv::Writer::from_writer(w);
        let mut header = vec!["delta_t", "eps_pred"];
        if eps_cv.is_some() {
            header.push("eps_pred_cv");
        }
        c.write_record(&header)?;
        for (j, e) in eps.iter().enumerate() {
            let mut row = vec![fmt_f64((j + 1) as f64 * a.report_interval_s), fmt_f64(*e)];
            if let Some(cv) = &eps_cv {
                row.push(fmt_f64(cv[j]));
            }
            c.write_record(&row)?;
        }
        c.flush()?;
        Ok(())
    })?;
    let eps_mean = mean_error(&eps)?;
    let cv_mean = eps_cv.as_deref().map(mean_error).transpose()?;
    info!("eps_mean {eps_mean:.6e}");
    Ok(Finished {
        outputs,
        inputs,
        seed: None,
        summary: serde_json::json!({ "eps_mean": eps_mean, "eps_mean_cv": cv_mean }),
        manifest_path: sibling(&out, ".manifest.json"),
    })
}

/// Detection-evaluation settings: one scenario and the grids swept over it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub swarm: SwarmConfig,
    pub network: NetworkParams,
    pub covert: CovertConfig,
    pub nominal: NominalMode,
    /// Defaults to `covert.lambda`.
    pub lambdas: Option<Vec<f64>>,
    #[serde(rename = "N")]
    pub node_counts: Vec<usize>,
    /// Defaults to `swarm.L`.
    #[serde(rename = "L")]
    pub uav_counts: Option<Vec<usize>>,
    /// Defaults to `covert.horizon_s`.
    pub horizons_s: Option<Vec<f64>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            swarm: SwarmConfig::default(),
            network: NetworkParams::default(),
            covert: CovertConfig::default(),
            nominal: NominalMode::default(),
            lambdas: None,
            node_counts: vec![25],
            uav_counts: None,
            horizons_s: None,
        }
    }
}

impl EvalConfig {
    /// Every scenario of the grid, ordered by `L`, `N`, `H`, then `lambda`.
    pub fn scenarios(&self) -> Vec<ScenarioConfig> {
        let lambdas = self.lambdas.clone().unwrap_or_else(|| vec![self.covert.lambda]);
        let uavs = self.uav_counts.clone().unwrap_or_else(|| vec![self.swarm.num_uavs]);
        let horizons = self.horizons_s.clone().unwrap_or_else(|| vec![self.covert.horizon_s]);
        let mut out = Vec::new();
        for &l in &uavs {
            for &n in &self.node_counts {
                for &h in &horizons {
                    for &lambda in &lambdas {
                        out.push(ScenarioConfig {
                            swarm: SwarmConfig {
                                num_uavs: l,
                                ..self.swarm.clone()
                            },
                            network: self.network,
                            covert: CovertConfig {
                                lambda,
                                horizon_s: h,
                                ..self.covert.clone()
                            },
                            num_nodes: n,
                            nominal: self.nominal,
                        });
                    }
                }
            }
        }
        out
    }
}

fn fmt_key(v: f64) -> String {
    format!("{v}").replace('.', "p")
}

fn cmd_eval_covert(
    common: &Common,
    config: &ConfigFile,
    checkpoint: Option<&Path>,
    kind: PredictorKind,
) -> Result<Finished> {
    let mut cfg: EvalConfig = config.parse()?;
    if let Some(s) = common.seed {
        cfg.covert.seed = s;
    }
    let out = required_out(common)?;
    let scenarios = cfg.scenarios();
    if scenarios.is_empty() {
        return Err(Error::Config("empty evaluation grid".into()));
    }
    for s in &scenarios {
        s.validate()?;
    }
    let mut inputs = Vec::new();
    let model = match (kind, checkpoint) {
        (PredictorKind::Gkae, Some(ck)) => {
            inputs.push(ck.to_path_buf());
            Some(load_checkpoint(ck)?)
        }
        (PredictorKind::Gkae, None) => return Err(Error::Config("--checkpoint is required for the gkae predictor".into())),
        _ => None,
    };
    let predictor = match (&model, kind) {
        (Some(m), _) => Predictor::Gkae(m),
        (None, PredictorKind::ConstantVelocity) => Predictor::ConstantVelocity,
        _ => Predictor::Oracle,
    };
    let norm = match &model {
        Some(m) => m.norm,
        None => NormalizationSpec::for_area(cfg.swarm.x_size)?,
    };
    let reports: Vec<DetectionReport> = scenarios
        .iter()
        .map(|s| {
            let r = monte_carlo(s, &predictor, &norm)?;
            info!(
                "L={} N={} H={} lambda={}: P_det={:.4} eps_mean={:.4e}",
                s.swarm.num_uavs, s.num_nodes, s.covert.horizon_s, s.covert.lambda, r.p_det, r.eps_mean
            );
            Ok(r)
        })
        .collect::<Result<_>>()?;
    let mut outputs = Outputs::new();
    outputs.create_dir(&out)?;
    outputs.write(&out.join("aggregate.csv"), |w| write_aggregate_csv(&reports, w))?;
    outputs.write(&out.join("report.json"), |w| {
        serde_json::to_writer(&mut *w, &reports)?;
        Ok(())
    })?;
    for r in &reports {
        let name = format!(
            "audit_L{}_N{}_H{}_lambda{}.csv",
            r.num_uavs,
            r.num_nodes,
            fmt_key(r.horizon_s),
            fmt_key(r.lambda)
        );
        outputs.write(&out.join(name), |w| r.write_audit_csv(w))?;
    }
    let summary: Vec<serde_json::Value> = reports
        .iter()
        .map(|r| serde_json::json!({"lambda": r.lambda, "N": r.num_nodes, "L": r.num_uavs, "H": r.horizon_s, "P_det": r.p_det, "eps_mean": r.eps_mean}))
        .collect();
    Ok(Finished {
        outputs,
        inputs,
        seed: Some(cfg.covert.seed),
        summary: serde_json::Value::Array(summary),
        manifest_path: out.join("manifest.json"),
    })
}
