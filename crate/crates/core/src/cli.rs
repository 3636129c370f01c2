//! Command-line front end: `gen-data`, `train`, `eval`, `jacobian`,
//! `pipeline`.
//!
//! Every command can also read its settings from a TOML file passed with
//! `--config`, one table per command (`[gen-data]`, `[train]`, ...), with
//! keys spelled like the long flags but with underscores. Flags given on
//! the command line win. The fully resolved settings are written next to
//! the command's outputs in the same format, so they can be fed back in.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cv::{CvFunction, CvKind};
use crate::datagen::{gen_structured, gen_uniform, StructuredParams};
use crate::dataset::{split_indices, LabeledDataset};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, fd_crosscheck};
use crate::free_energy::{icf_to_text, run_pipeline, BiasHills, MassMatrix, Trajectory};
use crate::geometry::{SimBox, DEFAULT_BOX_LENGTH};
use crate::surrogate::{read_checkpoint, write_checkpoint, Mlp, MlpSpec, SplitInfo, DEFAULT_DROPOUT, DEFAULT_HIDDEN};
use crate::training::{train, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "cvsurrogate", version, about = "Neural-network surrogates for collective variables")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled dataset of configurations, CV values and Jacobians.
    GenData(GenDataArgs),
    /// Train a surrogate on a dataset file.
    Train(TrainArgs),
    /// Score a checkpoint (or the analytical CV) against a dataset.
    Eval(EvalArgs),
    /// Dump per-row CV values and Jacobians.
    Jacobian(JacobianArgs),
    /// Metric tensor and instantaneous collective force along a trajectory.
    Pipeline(PipelineArgs),
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    /// TOML file supplying any of these settings under [gen-data]
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Collective variable: distance | coordination
    #[arg(long)]
    pub cv: Option<String>,
    /// Sampler: uniform | structured
    #[arg(long)]
    pub generator: Option<String>,
    /// Number of rows [count]
    #[arg(long)]
    pub n: Option<usize>,
    /// RNG seed [integer]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Periodic box edge length [nm]
    #[arg(long)]
    pub box_length: Option<f64>,
    /// Output dataset file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub cv: Option<CvKind>,
    pub generator: Option<Generator>,
    pub n: Option<usize>,
    pub seed: u64,
    pub box_length: f64,
    pub out: Option<PathBuf>,
    pub structured: StructuredParams,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        GenDataConfig {
            cv: None,
            generator: None,
            n: None,
            seed: 0,
            box_length: DEFAULT_BOX_LENGTH,
            out: None,
            structured: StructuredParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Uniform,
    Structured,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// TOML file supplying any of these settings under [train]
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dataset file
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory for the checkpoint, report and resolved config
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Expected CV of the dataset: distance | coordination
    #[arg(long)]
    pub cv: Option<String>,
    /// Seed for initialisation, split, shuffling and dropout [integer]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hidden layer widths, comma separated [units]
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Dropout rate after each hidden layer [probability]
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Adam step size [1/loss-unit]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// L2 coefficient added to each gradient [dimensionless]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Mini-batch size [rows]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Epoch budget [epochs]
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Fraction of rows used for training; the rest is held out [fraction]
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Plateau scheduler reduction factor [dimensionless]
    #[arg(long)]
    pub scheduler_factor: Option<f64>,
    /// Epochs without improvement before a reduction [epochs]
    #[arg(long)]
    pub scheduler_patience: Option<usize>,
    /// Relative improvement that counts as progress [fraction]
    #[arg(long)]
    pub scheduler_threshold: Option<f64>,
    /// Learning-rate floor [1/loss-unit]
    #[arg(long)]
    pub min_learning_rate: Option<f64>,
    /// Adam denominator guard [dimensionless]
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Record wall-clock time in the report (breaks byte-identical reruns)
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(skip_serializing_if = "is_false")]
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub data: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub cv: Option<CvKind>,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub train_fraction: f64,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    pub scheduler_threshold: f64,
    pub min_learning_rate: f64,
    pub epsilon: f64,
    pub timing: bool,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainRunConfig {
            data: None,
            out_dir: None,
            cv: None,
            seed: t.seed,
            hidden: DEFAULT_HIDDEN.to_vec(),
            dropout: DEFAULT_DROPOUT,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            train_fraction: t.train_fraction,
            scheduler_factor: t.scheduler_factor,
            scheduler_patience: t.scheduler_patience,
            scheduler_threshold: t.scheduler_threshold,
            min_learning_rate: t.min_learning_rate,
            epsilon: t.epsilon,
            timing: false,
        }
    }
}

impl TrainRunConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            scheduler_factor: self.scheduler_factor,
            scheduler_patience: self.scheduler_patience,
            scheduler_threshold: self.scheduler_threshold,
            min_learning_rate: self.min_learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            train_fraction: self.train_fraction,
            seed: self.seed,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitChoice {
    /// Rows held out during training.
    Test,
    All,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// TOML file supplying any of these settings under [eval]
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Trained checkpoint
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Score the analytical CV instead of a checkpoint (self-test)
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(skip_serializing_if = "is_false")]
    pub oracle: bool,
    /// Dataset file
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory for the report and data files
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Rows to score: test | all
    #[arg(long)]
    pub split: Option<String>,
    /// Bins per axis for histograms and heatmaps [count]
    #[arg(long)]
    pub bins: Option<usize>,
    /// Rows for the finite-difference Jacobian check [count]
    #[arg(long)]
    pub fd_samples: Option<usize>,
    /// Finite-difference step [nm]
    #[arg(long)]
    pub fd_step: Option<f64>,
    /// Seed for the finite-difference row draw and, with --oracle, the split [integer]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub checkpoint: Option<PathBuf>,
    pub oracle: bool,
    pub data: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub split: SplitChoice,
    pub bins: usize,
    pub fd_samples: usize,
    pub fd_step: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            checkpoint: None,
            oracle: false,
            data: None,
            out_dir: None,
            split: SplitChoice::Test,
            bins: 100,
            fd_samples: 100,
            fd_step: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct JacobianArgs {
    /// TOML file supplying any of these settings under [jacobian]
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Trained checkpoint
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Use the analytical Jacobian instead of a checkpoint
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(skip_serializing_if = "is_false")]
    pub analytical: bool,
    /// Dataset file
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output file
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Rows to dump: test | all
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JacobianConfig {
    pub checkpoint: Option<PathBuf>,
    pub analytical: bool,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub split: SplitChoice,
}

impl Default for JacobianConfig {
    fn default() -> Self {
        JacobianConfig {
            checkpoint: None,
            analytical: false,
            data: None,
            out: None,
            split: SplitChoice::All,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct PipelineArgs {
    /// TOML file supplying any of these settings under [pipeline]
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Trajectory file (frames every dt ps)
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Hills file: time [ps], center [CV unit], height [kJ/mol], sigma [CV unit]
    #[arg(long)]
    pub hills: Option<PathBuf>,
    /// Trained checkpoint supplying ξ and its Jacobian
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Use the analytical CV instead of a checkpoint
    #[arg(long, action = ArgAction::SetTrue)]
    #[serde(skip_serializing_if = "is_false")]
    pub analytical: bool,
    /// Per-atom masses in input order, comma separated [amu]
    #[arg(long, value_delimiter = ',')]
    pub masses: Option<Vec<f64>>,
    /// Output file: frame, time [ps], ξ, Z, f [kJ/mol per CV unit], endpoint flag
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub trajectory: Option<PathBuf>,
    pub hills: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub analytical: bool,
    pub masses: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
}

/// Load the `[section]` table of a config file.
fn config_section(path: Option<&Path>, section: &str) -> Result<toml::Table> {
    let Some(path) = path else {
        return Ok(toml::Table::new());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut doc: toml::Table = text
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    match doc.remove(section) {
        None => Ok(toml::Table::new()),
        Some(toml::Value::Table(t)) => Ok(t),
        Some(_) => Err(Error::InvalidArgument(format!(
            "{}: [{section}] must be a table",
            path.display()
        ))),
    }
}

/// Overlay command-line flags on the config file section and deserialize.
pub fn resolve<A: Serialize, R: DeserializeOwned>(section: &str, config: Option<&Path>, args: &A) -> Result<R> {
    let mut table = config_section(config, section)?;
    let flags = toml::Table::try_from(args).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    table.extend(flags);
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::InvalidArgument(format!("[{section}] {e}")))
}

/// Resolved settings as a one-table TOML document.
pub fn resolved_toml<R: Serialize>(section: &str, resolved: &R) -> String {
    let mut doc = toml::Table::new();
    doc.insert(
        section.to_string(),
        toml::Value::try_from(resolved).expect("config serialises"),
    );
    toml::to_string(&doc).expect("config serialises")
}

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone()
        .ok_or_else(|| Error::InvalidArgument(format!("missing required setting --{flag}")))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.toml");
    PathBuf::from(s)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let cfg: GenDataConfig = resolve("gen-data", args.config.as_deref(), args)?;
    let cv = required(&cfg.cv, "cv")?;
    let generator = required(&cfg.generator, "generator")?;
    let n = required(&cfg.n, "n")?;
    let out = required(&cfg.out, "out")?;
    if n == 0 {
        return Err(Error::InvalidArgument("--n must be at least 1".into()));
    }
    let sim_box = SimBox::new(cfg.box_length)?;
    let ds = match generator {
        Generator::Uniform => gen_uniform(cv, n, sim_box, cfg.seed)?,
        Generator::Structured => gen_structured(cv, n, sim_box, cfg.seed, &cfg.structured)?,
    };
    ds.write(&out)?;
    write_file(&sidecar(&out), &resolved_toml("gen-data", &cfg))?;
    println!("wrote {} {} rows to {}", ds.len(), cv, out.display());
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg: TrainRunConfig = resolve("train", args.config.as_deref(), args)?;
    let data = required(&cfg.data, "data")?;
    let out_dir = required(&cfg.out_dir, "out-dir")?;
    let tc = cfg.train_config();
    tc.validate()?;
    let ds = LabeledDataset::read(&data)?;
    if let Some(cv) = cfg.cv {
        if cv.input_dim() != ds.dim() {
            return Err(Error::Dimension {
                expected: cv.input_dim(),
                got: ds.dim(),
            });
        }
        if cv != ds.cv {
            return Err(Error::InvalidArgument(format!(
                "--cv {cv} but {} holds {} data",
                data.display(),
                ds.cv
            )));
        }
    }
    let mut spec = MlpSpec::for_cv(ds.cv, ds.sim_box);
    spec.hidden = cfg.hidden.clone();
    spec.dropout = cfg.dropout;
    let model = Mlp::init(&spec, cfg.seed)?;
    create_dir(&out_dir)?;
    let (model, mut report) = train(model, &ds, &tc)?;
    if !cfg.timing {
        report.wall_time_s = None;
    }
    let split = SplitInfo {
        seed: tc.seed,
        train_fraction: tc.train_fraction,
    };
    write_checkpoint(&out_dir.join("model.ckpt"), &model, split)?;
    write_file(&out_dir.join("training_report.toml"), &report.to_toml())?;
    write_file(&out_dir.join("config.toml"), &resolved_toml("train", &cfg))?;
    println!(
        "{:?} after {} epochs, best validation MSE {:.6e} at epoch {}",
        report.status,
        report.epochs_run,
        report.best_val_loss,
        report.best_epoch.map_or("-".to_string(), |e| e.to_string())
    );
    Ok(())
}

fn parse_split(s: &Option<String>) -> Result<Option<SplitChoice>> {
    match s.as_deref() {
        None => Ok(None),
        Some("test") => Ok(Some(SplitChoice::Test)),
        Some("all") => Ok(Some(SplitChoice::All)),
        Some(o) => Err(Error::InvalidArgument(format!("--split must be test or all, got '{o}'"))),
    }
}

/// A checkpoint or the analytical CV, with the split it was trained on.
enum Scorer {
    Surrogate(Box<Mlp>, SplitInfo),
    Analytical(Box<dyn CvFunction>),
}

impl Scorer {
    fn load(checkpoint: &Option<PathBuf>, analytical: bool, flag: &str, ds_cv: CvKind, sim_box: SimBox) -> Result<Self> {
        match (checkpoint, analytical) {
            (Some(_), true) | (None, false) => Err(Error::InvalidArgument(format!(
                "give exactly one of --checkpoint and --{flag}"
            ))),
            (None, true) => Ok(Scorer::Analytical(ds_cv.oracle(sim_box))),
            (Some(p), false) => {
                let (m, split) = read_checkpoint(p)?;
                if m.input_dim() != ds_cv.input_dim() {
                    return Err(Error::Dimension {
                        expected: ds_cv.input_dim(),
                        got: m.input_dim(),
                    });
                }
                if m.cv_name() != ds_cv.as_str() {
                    log::warn!("checkpoint was trained for '{}' but the data is {}", m.cv_name(), ds_cv);
                }
                Ok(Scorer::Surrogate(Box::new(m), split))
            }
        }
    }

    fn cv(&self) -> &dyn CvFunction {
        match self {
            Scorer::Surrogate(m, _) => m.as_ref(),
            Scorer::Analytical(o) => o.as_ref(),
        }
    }

    fn mode(&self) -> &'static str {
        match self {
            Scorer::Surrogate(..) => "surrogate",
            Scorer::Analytical(_) => "analytical",
        }
    }

    fn rows(&self, n: usize, choice: SplitChoice, default: SplitInfo) -> Vec<usize> {
        let info = match self {
            Scorer::Surrogate(_, s) => *s,
            Scorer::Analytical(_) => default,
        };
        match choice {
            SplitChoice::All => (0..n).collect(),
            SplitChoice::Test => split_indices(n, info.train_fraction, info.seed).test,
        }
    }
}

#[derive(Debug, Serialize)]
struct FdSummary {
    h: f64,
    requested: usize,
    checked: usize,
    skipped: usize,
    max_rel_err: f64,
    worst_row: Option<usize>,
    worst_input: Option<Vec<f64>>,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let mut cfg: EvalConfig = resolve("eval", args.config.as_deref(), args)?;
    if let Some(s) = parse_split(&args.split)? {
        cfg.split = s;
    }
    let data = required(&cfg.data, "data")?;
    let out_dir = required(&cfg.out_dir, "out-dir")?;
    let ds = LabeledDataset::read(&data)?;
    let scorer = Scorer::load(&cfg.checkpoint, cfg.oracle, "oracle", ds.cv, ds.sim_box)?;
    let default_split = SplitInfo {
        seed: cfg.seed,
        ..SplitInfo::default()
    };
    let idx = scorer.rows(ds.len(), cfg.split, default_split);
    let ev = evaluate(scorer.cv(), scorer.mode(), &ds, &idx, cfg.bins)?;
    create_dir(&out_dir)?;
    ev.write(&out_dir)?;
    if let Scorer::Surrogate(m, _) = &scorer {
        let rows: Vec<&[f64]> = idx.iter().map(|&i| ds.input(i)).collect();
        let fd = fd_crosscheck(m, &rows, cfg.fd_step, cfg.fd_samples, cfg.seed)?;
        let summary = FdSummary {
            h: cfg.fd_step,
            requested: cfg.fd_samples.min(rows.len()),
            checked: fd.checked,
            skipped: fd.skipped.len(),
            max_rel_err: fd.max_rel_err,
            worst_row: fd.worst_row.map(|r| idx[r]),
            worst_input: fd.worst_input,
        };
        write_file(
            &out_dir.join("fd_crosscheck.toml"),
            &toml::to_string(&summary).expect("summary serialises"),
        )?;
        println!(
            "finite-difference check: {} rows, {} skipped, max relative error {:.3e}",
            fd.checked,
            fd.skipped.len(),
            fd.max_rel_err
        );
    }
    write_file(&out_dir.join("config.toml"), &resolved_toml("eval", &cfg))?;
    print!("{}", ev.summary());
    Ok(())
}

pub fn cmd_jacobian(args: &JacobianArgs) -> Result<()> {
    let mut cfg: JacobianConfig = resolve("jacobian", args.config.as_deref(), args)?;
    if let Some(s) = parse_split(&args.split)? {
        cfg.split = s;
    }
    let data = required(&cfg.data, "data")?;
    let out = required(&cfg.out, "out")?;
    let ds = LabeledDataset::read(&data)?;
    let scorer = Scorer::load(&cfg.checkpoint, cfg.analytical, "analytical", ds.cv, ds.sim_box)?;
    let idx = scorer.rows(ds.len(), cfg.split, SplitInfo::default());
    let cv = scorer.cv();
    let mut s = format!(
        "# cvsurrogate-jacobian v1 cv={} mode={} D={} rows={}\nrow,value",
        ds.cv,
        scorer.mode(),
        ds.dim(),
        idx.len()
    );
    for d in 0..ds.dim() {
        write!(s, ",j{d}").unwrap();
    }
    s.push('\n');
    for chunk in idx.chunks(4096) {
        let rows: Vec<&[f64]> = chunk.iter().map(|&i| ds.input(i)).collect();
        let vals = cv.values(&rows)?;
        let jacs = cv.jacobians(&rows)?;
        for ((&i, v), j) in chunk.iter().zip(vals).zip(jacs) {
            write!(s, "{i},{v}").unwrap();
            for x in j {
                write!(s, ",{x}").unwrap();
            }
            s.push('\n');
        }
    }
    write_file(&out, &s)?;
    write_file(&sidecar(&out), &resolved_toml("jacobian", &cfg))?;
    println!("wrote {} Jacobians to {}", idx.len(), out.display());
    Ok(())
}

pub fn cmd_pipeline(args: &PipelineArgs) -> Result<()> {
    let cfg: PipelineConfig = resolve("pipeline", args.config.as_deref(), args)?;
    let traj_path = required(&cfg.trajectory, "trajectory")?;
    let out = required(&cfg.out, "out")?;
    let traj = Trajectory::read(&traj_path)?;
    let hills = match &cfg.hills {
        Some(p) => BiasHills::read(p)?,
        None => BiasHills::default(),
    };
    let scorer = Scorer::load(&cfg.checkpoint, cfg.analytical, "analytical", traj.cv, traj.sim_box)?;
    let masses = match &cfg.masses {
        Some(m) => {
            let atoms = traj.cv.input_dim() / 3;
            if m.len() != atoms {
                return Err(Error::InvalidArgument(format!(
                    "--masses needs {atoms} entries for {}, got {}",
                    traj.cv,
                    m.len()
                )));
            }
            MassMatrix::from_atoms(m)?
        }
        None => MassMatrix::for_cv(traj.cv),
    };
    let frames = run_pipeline(&traj, scorer.cv(), &masses, &hills)?;
    write_file(&out, &icf_to_text(&frames, traj.cv, scorer.mode()))?;
    write_file(&sidecar(&out), &resolved_toml("pipeline", &cfg))?;
    println!("wrote {} frames ({} mode) to {}", frames.len(), scorer.mode(), out.display());
    Ok(())
}

pub fn run_command(cmd: &Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Jacobian(a) => cmd_jacobian(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    }
}

/// Parse `argv`, run the command and return the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run_command(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
