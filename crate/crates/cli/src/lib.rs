//! The `scatclr` command-line tool.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 when a
//! command fails while running.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use scatclr::augment::jigsaw::JigsawTable;
use scatclr::augment::{AugPolicy, PretextTask, ViewGenerator};
use scatclr::datasets::{load_dataset, synth_dataset, ImageSource, SynthKind};
use scatclr::eval::{linear_eval, top1_of_runs, Encoder, ProbeConfig};
use scatclr::featfile::{write_path_manifest, FeatureWriter};
use scatclr::filterbank::{dump_filters, FilterBank, FilterBankConfig};
use scatclr::image::Image;
use scatclr::losses::LambdaSchedule;
use scatclr::rng::{stream_rng, Stream};
use scatclr::scattering::{PadPolicy, ScatterConfig};
use scatclr::trainer::{scatter_images, Checkpoint, Model, TrainConfig, Trainer};
use scatclr::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

const SCATTER_CHUNK: usize = 64;

#[derive(Debug, Parser)]
#[command(name = "scatclr", version, about = "Self-supervised learning on wavelet scattering features")]
pub struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the adapter and heads on an image folder.
    Pretrain(PretrainArgs),
    /// Fit linear probes on a frozen encoder and report top-1 accuracy.
    LinearEval(LinearEvalArgs),
    /// Write scattering coefficients of an image folder to a feature file.
    ScatterExport(ScatterExportArgs),
    /// Render the wavelet filters as PNG images.
    FiltersDump(FiltersDumpArgs),
    /// Save two augmented views of an image with their parameters.
    AugmentPreview(AugmentPreviewArgs),
    /// Train and probe over a grid of scales, orientations or block counts.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Full-size defaults.
    Full,
    /// Small model and images for a laptop.
    Desk,
}

/// Training settings shared by `pretrain` and `sweep`. Flags override the config file.
#[derive(Debug, Args)]
struct TrainFlags {
    /// TOML training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base settings used when no config file is given.
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    preset: Preset,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Seed for every random choice in the run.
    #[arg(long)]
    seed: Option<u64>,
    /// Side of the square grid images are fitted to.
    #[arg(long)]
    image_size: Option<usize>,
    /// Center images on a zero grid instead of resizing them.
    #[arg(long)]
    zero_pad: bool,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    repr_dim: Option<usize>,
    /// Pretext task: rotation, jigsaw or none.
    #[arg(long)]
    pretext: Option<PretextTask>,
    #[arg(long)]
    jigsaw_classes: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Constant pretext weight, replacing the epoch schedule.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Augmentation policy, e.g. `default`, `baseline,-blur` or `crop,color`.
    #[arg(long, value_parser = parse_policy)]
    augment: Option<AugPolicy>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
    /// Save a checkpoint every this many epochs.
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

fn parse_policy(s: &str) -> Result<AugPolicy, String> {
    AugPolicy::parse(s).map_err(|e| e.to_string())
}

impl TrainFlags {
    fn resolve(&self) -> scatclr::Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => match self.preset {
                Preset::Full => TrainConfig::default(),
                Preset::Desk => TrainConfig::desk(),
            },
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { c.$($field).+ = v; })*
            };
        }
        set!(
            epochs => epochs,
            batch_size => batch_size,
            seed => seed,
            image_size => image_size,
            hidden_dim => adapter.hidden_dim,
            repr_dim => adapter.repr_dim,
            pretext => pretext,
            jigsaw_classes => jigsaw_classes,
            temperature => temperature,
            lr => optimizer.lr,
            augment => augment,
            workers => workers,
            checkpoint_every => checkpoint_every,
        );
        if self.max_steps.is_some() {
            c.max_steps = self.max_steps;
        }
        if self.zero_pad {
            c.pad_policy = PadPolicy::ZeroPadToPow2;
        }
        if let Some(value) = self.lambda {
            c.lambda = LambdaSchedule::Constant { value };
        }
        Ok(c)
    }
}

#[derive(Debug, Args)]
struct PretrainArgs {
    /// Image folder (class subfolders, a labels.csv, or flat).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for config, metrics and checkpoints.
    #[arg(long, default_value = "runs/pretrain")]
    out: PathBuf,
    #[arg(long)]
    scales: Option<usize>,
    #[arg(long)]
    orientations: Option<usize>,
    /// Residual blocks in the adapter.
    #[arg(long)]
    blocks: Option<usize>,
    /// Continue from a checkpoint; only --epochs and --max-steps apply.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print trainable parameter totals and exit.
    #[arg(long)]
    report_params: bool,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Debug, Args)]
struct LinearEvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled image folder.
    #[arg(long)]
    data: PathBuf,
    /// Probes fitted on differently seeded splits; the best is reported.
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// Per-run results as CSV.
    #[arg(long, default_value = "linear_eval.csv")]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the representations to this feature file.
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScatterExportArgs {
    /// Image folder.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 2)]
    scales: usize,
    #[arg(long, default_value_t = 16)]
    orientations: usize,
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// Resize every image to this square side; otherwise the grid is the
    /// smallest power of two covering the first image.
    #[arg(long)]
    size: Option<usize>,
    /// Center images on a zero grid instead of resizing them.
    #[arg(long)]
    zero_pad: bool,
    /// Feature file; the path manifest is written beside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FiltersDumpArgs {
    #[arg(long, default_value_t = 2)]
    scales: usize,
    #[arg(long, default_value_t = 16)]
    orientations: usize,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AugmentPreviewArgs {
    #[arg(long)]
    input: PathBuf,
    /// Augmentation policy, e.g. `default`, `baseline` or `crop,color`.
    #[arg(long, default_value = "default")]
    policy: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = PretextTask::Rotation)]
    pretext: PretextTask,
    #[arg(long, default_value_t = 35)]
    jigsaw_classes: usize,
    /// Resize the input to this square side first.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["data", "synth"]))]
struct SweepArgs {
    /// Image folder.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generate a synthetic set instead: oriented-textures, two-blob-separable or noise.
    #[arg(long)]
    synth: Option<SynthKind>,
    #[arg(long, default_value_t = 256)]
    synth_count: usize,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    scales: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "16")]
    orientations: Vec<usize>,
    /// Adapter block counts; the configured count when omitted.
    #[arg(long, value_delimiter = ',')]
    blocks: Vec<usize>,
    /// Optimizer steps per cell (0 probes the untrained encoder).
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 500)]
    probe_steps: usize,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_target(false)
        .try_init();
    let result = match cli.command {
        Command::Pretrain(a) => pretrain(a),
        Command::LinearEval(a) => linear_eval_cmd(a),
        Command::ScatterExport(a) => scatter_export(a),
        Command::FiltersDump(a) => filters_dump(a),
        Command::AugmentPreview(a) => augment_preview(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(Error::Format(format!("{}: {e}", path.display())))
}

/// `foo/results.csv` → `foo/results.config.toml`.
fn sidecar_config(out: &Path) -> PathBuf {
    out.with_extension("config.toml")
}

fn write_toml(path: &Path, value: &impl Serialize) -> CliResult {
    let text = toml::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn ensure_parent(path: &Path) -> CliResult {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| io_err(p, e)),
        _ => Ok(()),
    }
}

fn print_param_report(cfg: &TrainConfig) -> CliResult {
    let model = Model::new(cfg)?;
    println!("trainable parameters (block_count = {}):", cfg.adapter.block_count);
    for (name, count) in model.param_report() {
        println!("  {name:<12}{count:>12}");
    }
    Ok(())
}

fn pretrain(a: PretrainArgs) -> CliResult {
    let mut cfg = a.train.resolve()?;
    if let Some(j) = a.scales {
        cfg.scales = j;
    }
    if let Some(l) = a.orientations {
        cfg.orientations = l;
    }
    if let Some(b) = a.blocks {
        cfg.adapter.block_count = b;
    }
    cfg.validate()?;
    if a.report_params {
        return print_param_report(&cfg);
    }
    let (data, report) = load_dataset(&a.data, Some(cfg.image_size))?;
    log::info!("{}", report.render().trim_end());
    let mut trainer = match &a.resume {
        Some(p) => {
            let mut t = Trainer::from_checkpoint(&Checkpoint::load(p)?)?;
            t.config.epochs = cfg.epochs;
            t.config.max_steps = cfg.max_steps;
            t
        }
        None => Trainer::new(cfg, &data)?,
    };
    trainer.run(&data, Some(&a.out))?;
    if let Some(m) = trainer.epochs.last() {
        println!(
            "epoch {} step {}: contrastive {:.5}{}",
            m.epoch,
            trainer.step,
            m.contrastive_loss,
            m.pretext_loss.map(|p| format!(", pretext {p:.5}")).unwrap_or_default()
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct LinearEvalRecord<'a> {
    checkpoint: &'a Path,
    data: &'a Path,
    runs: usize,
    probe: &'a ProbeConfig,
}

fn linear_eval_cmd(a: LinearEvalArgs) -> CliResult {
    if a.runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    let probe = ProbeConfig {
        steps: a.steps,
        lr: a.lr,
        test_fraction: a.test_fraction,
        seed: a.seed,
        ..ProbeConfig::default()
    };
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let encoder = Encoder::from_checkpoint(&ckpt)?;
    let (data, report) = load_dataset(&a.data, Some(ckpt.config.image_size))?;
    log::info!("{}", report.render().trim_end());
    let results = linear_eval(&encoder, &data, &probe, a.runs)?;

    ensure_parent(&a.out)?;
    let mut w = csv::Writer::from_path(&a.out).map_err(|e| io_err(&a.out, e))?;
    w.write_record(["run", "seed", "train_accuracy", "test_accuracy", "train_count", "test_count"])
        .map_err(|e| io_err(&a.out, e))?;
    for r in &results {
        w.write_record([
            r.run.to_string(),
            r.seed.to_string(),
            r.train_accuracy.to_string(),
            r.test_accuracy.to_string(),
            r.train_count.to_string(),
            r.test_count.to_string(),
        ])
        .map_err(|e| io_err(&a.out, e))?;
    }
    w.flush().map_err(|e| io_err(&a.out, e))?;
    write_toml(
        &sidecar_config(&a.out),
        &LinearEvalRecord {
            checkpoint: &a.checkpoint,
            data: &a.data,
            runs: a.runs,
            probe: &probe,
        },
    )?;
    if let Some(path) = &a.features {
        ensure_parent(path)?;
        let dims = scatclr::eval::extract_features(&encoder, &data, path)?;
        println!("wrote {} representations to {}", dims[0], path.display());
    }
    let accs: Vec<f64> = results.iter().map(|r| r.test_accuracy).collect();
    let best = top1_of_runs(&accs).unwrap_or(0.0);
    println!("top-1 accuracy over {} runs: {:.4}", a.runs, best);
    Ok(())
}

#[derive(Serialize)]
struct ScatterExportRecord<'a> {
    input: &'a Path,
    size: usize,
    scatter: ScatterConfig,
}

fn scatter_export(a: ScatterExportArgs) -> CliResult {
    let scatter = ScatterConfig {
        scales: a.scales,
        orientations: a.orientations,
        order: a.order,
        pad_policy: if a.zero_pad { PadPolicy::ZeroPadToPow2 } else { PadPolicy::ResizeToPow2 },
    };
    scatter.validate()?;
    let (data, report) = load_dataset(&a.input, a.size)?;
    log::info!("{}", report.render().trim_end());
    if data.is_empty() {
        return Err(CliError::Runtime(Error::Dataset(format!("no images in {}", a.input.display()))));
    }
    let size = match a.size {
        Some(s) => s,
        None => {
            let first = data.get(0)?;
            first.height().max(first.width()).next_power_of_two()
        }
    };
    let bank = FilterBank::build(FilterBankConfig::new(a.scales, a.orientations, size))?;
    ensure_parent(&a.out)?;
    let mut writer: Option<FeatureWriter> = None;
    let mut start = 0;
    while start < data.len() {
        let end = (start + SCATTER_CHUNK).min(data.len());
        let images = (start..end).map(|i| data.get(i)).collect::<scatclr::Result<Vec<_>>>()?;
        let coeffs = scatter_images(&images, &bank, &scatter)?;
        if writer.is_none() {
            let (c, h, w) = coeffs[0].shape();
            writer = Some(FeatureWriter::create(&a.out, [data.len(), c, h, w])?);
            let mut manifest = a.out.clone().into_os_string();
            manifest.push(".paths.txt");
            write_path_manifest(Path::new(&manifest), coeffs[0].paths())?;
        }
        let w = writer.as_mut().expect("created above");
        for c in &coeffs {
            w.push_row(c.data())?;
        }
        start = end;
    }
    writer.expect("at least one image").finish()?;
    write_toml(
        &sidecar_config(&a.out),
        &ScatterExportRecord {
            input: &a.input,
            size,
            scatter,
        },
    )?;
    println!("wrote {} rows to {}", data.len(), a.out.display());
    Ok(())
}

fn filters_dump(a: FiltersDumpArgs) -> CliResult {
    let cfg = FilterBankConfig::new(a.scales, a.orientations, a.size);
    let bank = FilterBank::build(cfg)?;
    let report = dump_filters(&bank, &a.out)?;
    write_toml(&a.out.join("config.toml"), &cfg)?;
    println!(
        "wrote {} filter images, mosaic {} and manifest {}",
        report.filter_images.len(),
        report.mosaic.display(),
        report.manifest.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct PreviewRecord<'a> {
    input: &'a Path,
    seed: u64,
    pretext: PretextTask,
    size: Option<usize>,
    policy: &'a AugPolicy,
}

fn augment_preview(a: AugmentPreviewArgs) -> CliResult {
    let policy = AugPolicy::parse(&a.policy).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut img = Image::load(&a.input)?.to_rgb()?;
    if let Some(s) = a.size {
        img = scatclr::augment::lanczos_resize(&img, s, s)?;
    }
    let table = match a.pretext {
        PretextTask::Jigsaw => Some(JigsawTable::build(a.jigsaw_classes, a.seed)?),
        _ => None,
    };
    let generator = ViewGenerator::new(policy.clone()).with_pretext(a.pretext, table);
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let mut rng = stream_rng(a.seed, Stream::Augment, &[0, 0]);
    let mut text = format!("policy: {}\npretext: {}\n", policy.describe(), a.pretext);
    for name in ["view1", "view2"] {
        let t = generator.sample(img.height(), img.width(), &mut rng)?;
        let plain = scatclr::augment::AugParams { pretext: None, ..t.clone() };
        generator.apply(&img, &plain)?.save_png(&a.out.join(format!("{name}.png")))?;
        generator.apply(&img, &t)?.save_png(&a.out.join(format!("{name}_pretext.png")))?;
        text.push_str(&format!("\n[{name}]\n{}", t.describe()));
        if let Some(p) = &t.pretext {
            text.push_str(&format!("pretext_label: {}\n", p.label()));
        }
    }
    let params = a.out.join("params.txt");
    fs::write(&params, text).map_err(|e| io_err(&params, e))?;
    write_toml(
        &a.out.join("config.toml"),
        &PreviewRecord {
            input: &a.input,
            seed: a.seed,
            pretext: a.pretext,
            size: a.size,
            policy: &policy,
        },
    )?;
    println!("wrote views and parameters to {}", a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct SweepRecord<'a> {
    data: Option<&'a Path>,
    synth: Option<String>,
    synth_count: usize,
    scales: &'a [usize],
    orientations: &'a [usize],
    blocks: &'a [usize],
    steps: usize,
    runs: usize,
    probe: &'a ProbeConfig,
    base: &'a TrainConfig,
}

pub const SWEEP_HEADER: [&str; 8] = [
    "scales",
    "orientations",
    "block_count",
    "channels_per_plane",
    "adapter_params",
    "total_params",
    "final_contrastive_loss",
    "probe_accuracy",
];

fn sweep(a: SweepArgs) -> CliResult {
    let mut base = a.train.resolve()?;
    base.max_steps = Some(a.steps);
    base.validate()?;
    let blocks = if a.blocks.is_empty() { vec![base.adapter.block_count] } else { a.blocks.clone() };
    let probe = ProbeConfig {
        steps: a.probe_steps,
        seed: base.seed,
        ..ProbeConfig::default()
    };
    let mut cells = Vec::new();
    for &j in &a.scales {
        for &l in &a.orientations {
            for &b in &blocks {
                let mut c = base.clone();
                c.scales = j;
                c.orientations = l;
                c.adapter.block_count = b;
                c.validate()?;
                FilterBankConfig::new(j, l, c.image_size).validate()?;
                cells.push(c);
            }
        }
    }
    let data: Box<dyn ImageSource> = match (&a.data, a.synth) {
        (Some(dir), _) => {
            let (d, report) = load_dataset(dir, Some(base.image_size))?;
            log::info!("{}", report.render().trim_end());
            Box::new(d)
        }
        (None, Some(kind)) => Box::new(synth_dataset(kind, a.synth_count, base.seed, base.image_size)?),
        (None, None) => unreachable!("clap requires a data source"),
    };
    let probe_ok = data.num_classes() >= 2 && data.labels().is_ok();

    ensure_parent(&a.out)?;
    write_toml(
        &sidecar_config(&a.out),
        &SweepRecord {
            data: a.data.as_deref(),
            synth: a.synth.map(|k| k.to_string()),
            synth_count: a.synth_count,
            scales: &a.scales,
            orientations: &a.orientations,
            blocks: &blocks,
            steps: a.steps,
            runs: a.runs,
            probe: &probe,
            base: &base,
        },
    )?;
    let mut w = csv::Writer::from_path(&a.out).map_err(|e| io_err(&a.out, e))?;
    w.write_record(SWEEP_HEADER).map_err(|e| io_err(&a.out, e))?;
    for c in cells {
        let mut trainer = Trainer::new(c.clone(), data.as_ref())?;
        let (adapter_params, total_params) = {
            let report = trainer.model.param_report();
            (report[0].1, report.last().map_or(0, |r| r.1))
        };
        if a.steps > 0 {
            trainer.run(data.as_ref(), None)?;
        }
        let loss = trainer.steps.last().map(|s| s.contrastive.to_string()).unwrap_or_default();
        let acc = if probe_ok {
            let results = linear_eval(&Encoder::from_trainer(&trainer), data.as_ref(), &probe, a.runs.max(1))?;
            let accs: Vec<f64> = results.iter().map(|r| r.test_accuracy).collect();
            top1_of_runs(&accs).map(|v| v.to_string()).unwrap_or_default()
        } else {
            String::new()
        };
        log::info!(
            "J={} L={} blocks={}: loss {} accuracy {}",
            c.scales,
            c.orientations,
            c.adapter.block_count,
            loss,
            acc
        );
        w.write_record([
            c.scales.to_string(),
            c.orientations.to_string(),
            c.adapter.block_count.to_string(),
            c.scatter_config().channels_per_plane().to_string(),
            adapter_params.to_string(),
            total_params.to_string(),
            loss,
            acc,
        ])
        .map_err(|e| io_err(&a.out, e))?;
        w.flush().map_err(|e| io_err(&a.out, e))?;
    }
    println!("wrote {}", a.out.display());
    Ok(())
}
