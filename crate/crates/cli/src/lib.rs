//! Command-line front end: dataset preparation, training, sweeps, evaluation,
//! model summaries, ANOVA and charts.

pub mod anova_input;
pub mod config;
pub mod curves;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use seiv3::arch::{model_from_checkpoint, ModelConfig};
use seiv3::data::{
    decode_and_normalize, prepare_dataset, read_manifest, resolve, split, write_manifest, write_synth_dataset,
    Dataset, ManifestDataset, SampleRecord,
};
use seiv3::eval::{evaluate, summarize_model};
use seiv3::nn::read_checkpoint;
use seiv3::train::{sweep, train, SweepAxis, TrainOptions, TrainOutcome};
use seiv3::{Error, Result, Tensor};

use config::{parse_override, variant_label, RunConfig};

pub const WORKERS_ENV: &str = "SEIV3_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "seiv3", version, about = "SE-InceptionV3 skin-lesion recognition pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build, split or synthesize image manifests
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train one model with early stopping on validation loss
    Train(TrainArgs),
    /// Train once per value of one hyperparameter
    Sweep(SweepArgs),
    /// Score a checkpoint on a labeled manifest
    Eval(EvalArgs),
    /// Parameter counts and memory estimate of a model configuration
    Summary(SummaryArgs),
    /// One-way ANOVA across models
    Anova(AnovaArgs),
    /// Class scores for unlabeled images
    Predict(PredictArgs),
    /// SVG charts from history or sweep CSVs
    Curves(CurvesArgs),
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Expand every source image into the original plus 13 augmented copies
    Prepare {
        /// Source manifest (`path,label,origin,recipe`); paths relative to its directory
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Stratified, origin-disjoint 4:1 train/test split
    Split {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for `train.csv` and `test.csv` (default: next to the manifest)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Write synthetic two-class images and their manifest
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        per_class: usize,
        #[arg(long, default_value_t = 96)]
        size: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON run configuration
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config field, e.g. `--set model.use_se=false` (repeatable)
    #[arg(long = "set", value_name = "SECTION.FIELD=VALUE")]
    pub sets: Vec<String>,
    /// Output directory (`output.directory`)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda_l2: Option<f64>,
}

impl ConfigArgs {
    /// File, then `--set` entries, then the dedicated flags.
    pub fn load(&self) -> Result<RunConfig> {
        let mut overrides = self.sets.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
        let path = |p: &PathBuf| Value::String(p.to_string_lossy().into_owned());
        let flags: [(&str, Option<Value>); 8] = [
            ("output.directory", self.out.as_ref().map(path)),
            ("data.train_manifest", self.train_manifest.as_ref().map(path)),
            ("data.val_manifest", self.val_manifest.as_ref().map(path)),
            ("train.epochs", self.epochs.map(Value::from)),
            ("train.learning_rate", self.learning_rate.map(Value::from)),
            ("train.batch_size", self.batch_size.map(Value::from)),
            ("train.seed", self.seed.map(Value::from)),
            ("train.lambda_l2", self.lambda_l2.map(Value::from)),
        ];
        overrides.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// lr, batch or epochs
    #[arg(long)]
    pub axis: SweepAxis,
    /// Comma-separated values (default: the axis' standard grid)
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labeled manifest to score
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Metrics CSV (default: standard output)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Confusion counts CSV
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    /// Per-sample predictions CSV
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SummaryArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Plain InceptionV3 with a 1000-class head, ignoring the config's model section
    #[arg(long)]
    pub reference: bool,
}

#[derive(Debug, Args)]
pub struct AnovaArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Metric to test when the table is in long format
    #[arg(long)]
    pub metric: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Score the images listed in this manifest (labels ignored)
    #[arg(long, conflicts_with = "images")]
    pub manifest: Option<PathBuf>,
    /// Image files to score
    pub images: Vec<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Output CSV (default: standard output)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    /// History or sweep CSV (repeatable; each history becomes one series)
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    /// Directory receiving one SVG per metric
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit status for an error: 2 for filesystem failures, 1 for everything else.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_io() {
        2
    } else {
        1
    }
}

/// Caps the global worker pool from `SEIV3_WORKERS`, if set.
fn init_workers() -> Result<()> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else { return Ok(()) };
    let n: usize = raw.trim().parse().ok().filter(|&n| n >= 1).ok_or_else(|| Error::Config {
        field: WORKERS_ENV.into(),
        reason: format!("must be a positive integer, got `{raw}`"),
    })?;
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        log::debug!("worker pool already initialized");
    }
    Ok(())
}

/// Parses `argv` and runs the command; returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match init_workers().and_then(|_| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Dataset(cmd) => dataset(cmd),
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Summary(args) => cmd_summary(args),
        Command::Anova(args) => cmd_anova(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Curves(args) => cmd_curves(args),
    }
}

/// Fails with an I/O error naming `path` when it does not exist.
fn require_file(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} does not exist", path.display()),
        )))
    }
}

fn class_counts(records: &[SampleRecord]) -> (usize, usize) {
    let pos = records.iter().filter(|r| r.label == 1).count();
    (pos, records.len() - pos)
}

fn dataset(cmd: DatasetCommand) -> Result<()> {
    match cmd {
        DatasetCommand::Prepare { manifest, out, seed } => {
            require_file(&manifest)?;
            let sources = read_manifest(&manifest)?;
            let base = manifest.parent().unwrap_or(Path::new(""));
            let report = prepare_dataset(&sources, base, &out, seed)?;
            for (path, reason) in &report.failures {
                log::warn!("skipped {path}: {reason}");
            }
            let (pos, neg) = class_counts(&report.records);
            println!(
                "rows={},label1={pos},label0={neg},failed={}",
                report.records.len(),
                report.failures.len()
            );
        }
        DatasetCommand::Split { manifest, out, seed } => {
            require_file(&manifest)?;
            let records = read_manifest(&manifest)?;
            let src_dir = manifest.parent().unwrap_or(Path::new("")).to_path_buf();
            let out = out.unwrap_or_else(|| src_dir.clone());
            std::fs::create_dir_all(&out)?;
            let (mut tr, mut te) = split(&records, 5, seed)?;
            if std::path::absolute(&out)? != std::path::absolute(&src_dir)? {
                // keep image paths valid from the new location
                let base = std::path::absolute(&src_dir)?;
                for r in tr.iter_mut().chain(te.iter_mut()) {
                    r.path = resolve(&base, &r.path).to_string_lossy().into_owned();
                }
            }
            write_manifest(&out.join("train.csv"), &tr)?;
            write_manifest(&out.join("test.csv"), &te)?;
            println!("train={},test={}", tr.len(), te.len());
        }
        DatasetCommand::Synth { out, per_class, size, seed } => {
            let records = write_synth_dataset(&out, per_class, size, seed)?;
            println!("rows={}", records.len());
        }
    }
    Ok(())
}

fn outcome_summary(label: &str, o: &TrainOutcome) -> Value {
    json!({
        "label": label,
        "epochs_run": o.history.len(),
        "best_epoch": o.best_epoch,
        "best_val_loss": o.best_val_loss,
        "stopped_early": o.stopped_early,
        "steps": o.steps,
        "skipped_train": o.skipped_train,
        "skipped_val": o.skipped_val,
        "final_sum_squares": o.final_sum_squares,
    })
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn open_sets(cfg: &RunConfig) -> Result<(ManifestDataset, ManifestDataset)> {
    let train_path = cfg.require("data.train_manifest", &cfg.data.train_manifest)?;
    let val_path = cfg.require("data.val_manifest", &cfg.data.val_manifest)?;
    require_file(&train_path)?;
    require_file(&val_path)?;
    let size = cfg.target_size();
    Ok((ManifestDataset::open(&train_path, size)?, ManifestDataset::open(&val_path, size)?))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = args.cfg.load()?;
    let (train_set, val_set) = open_sets(&cfg)?;
    let dir = cfg.output.directory.clone();
    cfg.write_resolved(&dir)?;
    let label = variant_label(&cfg.model, &cfg.train);
    log::info!("training {label} on {} samples, validating on {}", train_set.len(), val_set.len());
    let opts = TrainOptions {
        out_dir: Some(dir.clone()),
        record_seconds: cfg.output.wall_clock,
    };
    let (_, outcome) = train(&cfg.model, &cfg.train, &train_set, &val_set, &opts)?;
    if outcome.skipped_train + outcome.skipped_val > 0 {
        log::warn!(
            "{} training and {} validation samples could not be read",
            outcome.skipped_train,
            outcome.skipped_val
        );
    }
    write_json(&dir.join("run_summary.json"), &outcome_summary(&label, &outcome))?;
    if cfg.output.emit_svg {
        curves::emit_curves(&[dir.join("history.csv")], &dir.join("curves"))?;
    }
    println!(
        "label={label},epochs={},best_epoch={},best_val_loss={:.6}",
        outcome.history.len(),
        outcome.best_epoch.map_or("none".into(), |e| e.to_string()),
        outcome.best_val_loss
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let cfg = args.cfg.load()?;
    let (train_set, val_set) = open_sets(&cfg)?;
    let dir = cfg.output.directory.clone();
    cfg.write_resolved(&dir)?;
    let values = if args.values.is_empty() { args.axis.default_values() } else { args.values };
    let runs = sweep(
        &cfg.model,
        &cfg.train,
        args.axis,
        &values,
        &train_set,
        &val_set,
        &dir,
        cfg.output.wall_clock,
    )?;
    if cfg.output.emit_svg {
        curves::emit_curves(&[dir.join("sweep.csv")], &dir.join("curves"))?;
    }
    for r in &runs {
        match &r.outcome {
            Ok(o) => println!(
                "{}={},epochs={},best_val_loss={:.6}",
                args.axis,
                r.value,
                o.history.len(),
                o.best_val_loss
            ),
            Err(msg) => println!("{}={},failed: {msg}", args.axis, r.value),
        }
    }
    let failed = runs.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        return Err(Error::InvalidArgument(format!("{failed} of {} sweep runs failed", runs.len())));
    }
    Ok(())
}

fn output_writer(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn load_model(path: &Path) -> Result<(ModelConfig, seiv3::nn::Network<f32>)> {
    require_file(path)?;
    model_from_checkpoint(&read_checkpoint(path)?)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (model, mut net) = load_model(&args.checkpoint)?;
    require_file(&args.manifest)?;
    let ds = ManifestDataset::open(&args.manifest, model.input_size)?;
    let result = evaluate(&mut net, &ds, args.batch_size)?;
    if result.skipped > 0 {
        log::warn!("{} samples could not be read and were excluded", result.skipped);
    }
    for name in &result.metrics.undefined {
        log::warn!("{name} undefined (zero denominator), reported as 0");
    }
    let m = &result.metrics;
    let mut w = csv::Writer::from_writer(output_writer(&args.out)?);
    w.write_record(["Test_acc(%)", "Test_loss", "Test_Precision", "Test_Recall", "Test_F1"])?;
    w.write_record([
        format!("{:.2}", m.accuracy * 100.0),
        format!("{:.4}", m.loss.unwrap_or(f64::NAN)),
        format!("{:.4}", m.precision),
        format!("{:.4}", m.recall),
        format!("{:.4}", m.f1),
    ])?;
    w.flush()?;
    let cm = &result.confusion;
    log::info!("confusion: tp={} fp={} fn={} tn={}", cm.tp, cm.fp, cm.fn_, cm.tn);
    if let Some(p) = &args.confusion {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["tp", "fp", "fn", "tn"])?;
        w.write_record([cm.tp, cm.fp, cm.fn_, cm.tn].map(|v| v.to_string()))?;
        w.flush()?;
    }
    if let Some(p) = &args.predictions {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["path", "label", "predicted"])?;
        for pr in &result.predictions {
            w.write_record([pr.name.clone(), pr.label.to_string(), pr.predicted.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn cmd_summary(args: SummaryArgs) -> Result<()> {
    let model = if args.reference {
        ModelConfig::reference()
    } else {
        args.cfg.load()?.model
    };
    println!("{}", summarize_model(&model)?);
    Ok(())
}

fn cmd_anova(args: AnovaArgs) -> Result<()> {
    require_file(&args.input)?;
    let (names, res) = anova_input::anova_from_csv(&args.input, args.metric.as_deref())?;
    println!("model,n,mean,sd");
    for (name, g) in names.iter().zip(&res.groups) {
        println!("{name},{},{:.6},{:.6}", g.n, g.mean, g.sd);
    }
    println!("df={},{}", res.df_between, res.df_within);
    let marker = res.marker();
    let sep = if marker.is_empty() { "" } else { " " };
    println!("F={:.4},p={:.4}{sep}{marker}", res.f, res.p);
    if res.degenerate {
        return Err(Error::Degenerate("zero within-group variance".into()));
    }
    Ok(())
}

/// Unlabeled image files, decoded on demand.
struct ImageList {
    paths: Vec<PathBuf>,
    size: usize,
}

impl Dataset for ImageList {
    fn len(&self) -> usize {
        self.paths.len()
    }

    fn label(&self, _index: usize) -> usize {
        0
    }

    fn load(&self, index: usize) -> Result<Tensor<f32>> {
        decode_and_normalize(&self.paths[index], self.size)
    }

    fn name(&self, index: usize) -> String {
        self.paths[index].display().to_string()
    }
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let (model, mut net) = load_model(&args.checkpoint)?;
    let size = model.input_size;
    let ds: Box<dyn Dataset> = match &args.manifest {
        Some(m) => {
            require_file(m)?;
            let mut set = ManifestDataset::open(m, size)?;
            set.records.iter_mut().for_each(|r| r.label = 0);
            Box::new(set)
        }
        None if args.images.is_empty() => {
            return Err(Error::InvalidArgument("give image paths or --manifest".into()));
        }
        None => Box::new(ImageList {
            paths: args.images.clone(),
            size,
        }),
    };
    let result = evaluate(&mut net, ds.as_ref(), args.batch_size)?;
    if result.skipped > 0 {
        log::warn!("{} images could not be read and were skipped", result.skipped);
    }
    let mut w = csv::Writer::from_writer(output_writer(&args.out)?);
    let mut header = vec!["path".to_string()];
    header.extend((0..model.num_classes).map(|k| format!("score_class{k}")));
    header.push("predicted_label".into());
    w.write_record(&header)?;
    for p in &result.predictions {
        let mut row = vec![p.name.clone()];
        row.extend(p.scores.iter().map(|s| format!("{s:.6}")));
        row.push(p.predicted.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_curves(args: CurvesArgs) -> Result<()> {
    for p in &args.input {
        require_file(p)?;
    }
    for path in curves::emit_curves(&args.input, &args.out)? {
        println!("{}", path.display());
    }
    Ok(())
}
