//! Command-line harness wiring the engine into reproducible experiments.
//!
//! Subcommands: summary, train, eval, ablate, synth, analyze, visualize.
//! Every command accepts --seed and is fully deterministic given it. A JSON
//! --config file supplies defaults for any flag; explicit flags win.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 data error,
//! 3 numeric error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use ivcn::data::{
    class_mean_images, generate_synthetic, load_directories, prepare_dataset, AugmentMode,
    AugmentSpec, Dataset, Split, SyntheticSpec,
};
use ivcn::model::{
    build_model, load_model, save_model, storage_size_mb, summarize, ModelVariant,
};
use ivcn::rng::{streams, Rng};
use ivcn::train::{epoch_log_csv, evaluate, train_cb, TrainConfig};
use ivcn::viz::{
    export_kernel_grid, export_kernel_norm_map, export_mean_image, export_report, ReportEntry,
};
use ivcn::{Error, Tensor};

#[derive(Parser)]
#[command(name = "ivcn", version, about = "Involution-convolution hybrid image classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the layer-by-layer model summary with parameter totals
    Summary(SummaryArgs),
    /// Train a model and write model.ivcn plus epochs.csv
    Train(TrainArgs),
    /// Evaluate a saved model on the test split, printing metrics as JSON
    Eval(EvalArgs),
    /// Sweep hybrid models with 0..=6 involution layers and write a report
    Ablate(AblateArgs),
    /// Generate a synthetic two-class dataset on disk
    Synth(SynthArgs),
    /// Write per-class mean images and their intensity dispersions
    Analyze(AnalyzeArgs),
    /// Export involution kernel norm maps and kernel grids for an image
    Visualize(VisualizeArgs),
}

/// Flags shared by all subcommands. Optional so a config file can fill them.
#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// JSON config file; explicit flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for all randomness
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for generated files
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SummaryArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Model family: hybrid | conv-only | inv-only
    #[arg(long)]
    variant: Option<String>,
    /// Involution layers for the hybrid variant (0..=6)
    #[arg(long)]
    inv_layers: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset root(s) containing ASD/ and TD/ (repeatable)
    #[arg(long)]
    data: Vec<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    inv_layers: Option<usize>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Augmentation mode: on | off | paper-compat
    #[arg(long)]
    augment: Option<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Saved model file
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Vec<PathBuf>,
    #[arg(long)]
    augment: Option<String>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    data: Vec<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    augment: Option<String>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Images per class
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    data: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct VisualizeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Input image (PNG or PPM); alternatively take the first image of --data
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    data: Vec<PathBuf>,
    /// Kernel-grid sampling resolution (SxS tiles)
    #[arg(long)]
    grid: Option<usize>,
}

// ---------------------------------------------------------------------------
// Config file and resolution
// ---------------------------------------------------------------------------

/// JSON config: any subset of the run parameters.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    variant: Option<String>,
    inv_layers: Option<usize>,
    lr: Option<f64>,
    epochs: Option<usize>,
    batch: Option<usize>,
    seed: Option<u64>,
    data: Option<Vec<PathBuf>>,
    out_dir: Option<PathBuf>,
    augment: Option<String>,
    model: Option<PathBuf>,
    count: Option<usize>,
    grid: Option<usize>,
}

enum CliError {
    Usage(String),
    App(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => CliError::Usage(format!("config error: {msg}")),
            other => CliError::App(other),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::App(Error::Numeric(_)) => 3,
            CliError::App(_) => 2,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::App(e) => e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn load_config(common: &CommonArgs) -> CliResult<FileConfig> {
    match &common.config {
        None => Ok(FileConfig::default()),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
        }
    }
}

fn parse_variant(name: &str, inv_layers: usize) -> CliResult<ModelVariant> {
    match name {
        "hybrid" => Ok(ModelVariant::Hybrid { inv_layers }),
        "conv-only" => Ok(ModelVariant::ConvOnly),
        "inv-only" => Ok(ModelVariant::InvOnly),
        other => Err(CliError::Usage(format!(
            "unknown variant {other:?} (expected hybrid | conv-only | inv-only)"
        ))),
    }
}

fn parse_augment(name: &str) -> CliResult<AugmentMode> {
    match name {
        "on" => Ok(AugmentMode::On),
        "off" => Ok(AugmentMode::Off),
        "paper-compat" => Ok(AugmentMode::PaperCompat),
        other => Err(CliError::Usage(format!(
            "unknown augment mode {other:?} (expected on | off | paper-compat)"
        ))),
    }
}

/// Fully resolved common parameters: flag, else config, else default.
struct Resolved {
    seed: u64,
    out_dir: PathBuf,
    cfg: FileConfig,
}

fn resolve(common: &CommonArgs) -> CliResult<Resolved> {
    let cfg = load_config(common)?;
    Ok(Resolved {
        seed: common.seed.or(cfg.seed).unwrap_or(0),
        out_dir: common
            .out_dir
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out")),
        cfg,
    })
}

fn ensure_out_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| {
        CliError::App(Error::Data(format!(
            "cannot create output directory {}: {e}",
            dir.display()
        )))
    })
}

fn resolve_data(flag: &[PathBuf], cfg: &FileConfig) -> CliResult<Vec<PathBuf>> {
    let roots = if flag.is_empty() {
        cfg.data.clone().unwrap_or_default()
    } else {
        flag.to_vec()
    };
    if roots.is_empty() {
        return Err(CliError::Usage(
            "no dataset given: pass --data <dir> (repeatable) or set \"data\" in the config".into(),
        ));
    }
    Ok(roots)
}

fn load_prepared(roots: &[PathBuf], mode: AugmentMode, seed: u64) -> CliResult<Dataset> {
    let outcome = load_directories(roots)?;
    for (path, reason) in &outcome.skipped {
        eprintln!("warning: skipped {}: {reason}", path.display());
    }
    Ok(prepare_dataset(
        outcome.dataset,
        mode,
        &AugmentSpec::default(),
        seed,
    )?)
}

fn train_config(seed: u64, lr: f64, epochs: usize, batch: usize) -> CliResult<TrainConfig> {
    if lr <= 0.0 || !lr.is_finite() {
        return Err(CliError::Usage(format!("learning rate {lr} must be > 0")));
    }
    let cfg = TrainConfig {
        learning_rate: lr,
        epochs,
        batch_size: batch,
        seed,
        ..Default::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn dataset_label(roots: &[PathBuf]) -> String {
    roots
        .iter()
        .map(|p| {
            p.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string())
        })
        .collect::<Vec<_>>()
        .join("+")
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_summary(args: &SummaryArgs) -> CliResult<()> {
    let r = resolve(&args.common)?;
    let variant_name = args
        .variant
        .clone()
        .or_else(|| r.cfg.variant.clone())
        .unwrap_or_else(|| "hybrid".into());
    let inv_layers = args.inv_layers.or(r.cfg.inv_layers).unwrap_or(3);
    let variant = parse_variant(&variant_name, inv_layers)?;
    let model = build_model(variant, &mut Rng::with_stream(r.seed, streams::INIT))?;
    let text = summarize(&model)?.render();
    print!("{text}");
    if args.common.out_dir.is_some() || r.cfg.out_dir.is_some() {
        ensure_out_dir(&r.out_dir)?;
        fs::write(r.out_dir.join("summary.txt"), &text).map_err(Error::from)?;
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let r = resolve(&args.common)?;
    let roots = resolve_data(&args.data, &r.cfg)?;
    let variant_name = args
        .variant
        .clone()
        .or_else(|| r.cfg.variant.clone())
        .unwrap_or_else(|| "hybrid".into());
    let inv_layers = args.inv_layers.or(r.cfg.inv_layers).unwrap_or(3);
    let variant = parse_variant(&variant_name, inv_layers)?;
    let mode = parse_augment(
        &args
            .augment
            .clone()
            .or_else(|| r.cfg.augment.clone())
            .unwrap_or_else(|| "on".into()),
    )?;
    let cfg = train_config(
        r.seed,
        args.lr.or(r.cfg.lr).unwrap_or(1e-5),
        args.epochs.or(r.cfg.epochs).unwrap_or(30),
        args.batch.or(r.cfg.batch).unwrap_or(32),
    )?;

    let ds = load_prepared(&roots, mode, r.seed)?;
    println!(
        "dataset {}: train {} / val {} / test {}",
        dataset_label(&roots),
        ds.split_len(Split::Train),
        ds.split_len(Split::Val),
        ds.split_len(Split::Test),
    );

    let mut model = build_model(variant, &mut Rng::with_stream(r.seed, streams::INIT))?;
    let log = train_cb(&mut model, &ds, &cfg, |row| {
        println!(
            "epoch {:>3}: train_loss {:.6}  val_accuracy {:.2}  val_recall {:.2}  val_f1 {:.2}",
            row.epoch, row.train_loss, row.val_accuracy, row.val_recall, row.val_f1
        );
    })?;

    ensure_out_dir(&r.out_dir)?;
    let model_path = r.out_dir.join("model.ivcn");
    save_model(&model, &model_path)?;
    fs::write(r.out_dir.join("epochs.csv"), epoch_log_csv(&log)).map_err(Error::from)?;

    let test = evaluate(&mut model, &ds, Split::Test)?;
    println!(
        "test: accuracy {:.2}  recall {:.2}  f1 {:.2}",
        test.accuracy, test.recall, test.f1
    );
    println!("saved {}", model_path.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let r = resolve(&args.common)?;
    let model_path = args
        .model
        .clone()
        .or_else(|| r.cfg.model.clone())
        .ok_or_else(|| CliError::Usage("no model given: pass --model <file>".into()))?;
    let roots = resolve_data(&args.data, &r.cfg)?;
    let mode = parse_augment(
        &args
            .augment
            .clone()
            .or_else(|| r.cfg.augment.clone())
            .unwrap_or_else(|| "on".into()),
    )?;
    // Only the paper-compat order changes which items land in the test
    // split, so the plain modes skip the augmentation work entirely.
    let mode = if mode == AugmentMode::PaperCompat {
        mode
    } else {
        AugmentMode::Off
    };

    let mut model = load_model(&model_path)?;
    let ds = load_prepared(&roots, mode, r.seed)?;
    let metrics = evaluate(&mut model, &ds, Split::Test)?;
    let json = serde_json::to_string_pretty(&metrics)
        .map_err(|e| CliError::App(Error::Data(format!("metrics serialization failed: {e}"))))?;
    println!("{json}");
    Ok(())
}

fn cmd_ablate(args: &AblateArgs) -> CliResult<()> {
    let r = resolve(&args.common)?;
    let roots = resolve_data(&args.data, &r.cfg)?;
    let mode = parse_augment(
        &args
            .augment
            .clone()
            .or_else(|| r.cfg.augment.clone())
            .unwrap_or_else(|| "on".into()),
    )?;
    let cfg = train_config(
        r.seed,
        args.lr.or(r.cfg.lr).unwrap_or(1e-5),
        args.epochs.or(r.cfg.epochs).unwrap_or(30),
        args.batch.or(r.cfg.batch).unwrap_or(32),
    )?;
    let ds = load_prepared(&roots, mode, r.seed)?;
    let label = dataset_label(&roots);

    let mut entries = Vec::new();
    for n in 0..=ivcn::model::MAX_INV_LAYERS {
        let variant = ModelVariant::Hybrid { inv_layers: n };
        let mut model = build_model(variant, &mut Rng::with_stream(r.seed, streams::INIT))?;
        train_cb(&mut model, &ds, &cfg, |_| {})?;
        let metrics = evaluate(&mut model, &ds, Split::Test)?;
        let (total, _, _) = model.param_counts();
        println!(
            "{}: accuracy {:.2}  recall {:.2}  f1 {:.2}  params {}",
            variant.label(),
            metrics.accuracy,
            metrics.recall,
            metrics.f1,
            total
        );
        entries.push(ReportEntry::new(
            &label,
            &variant.label(),
            &metrics,
            total,
            storage_size_mb(&model),
        ));
    }

    ensure_out_dir(&r.out_dir)?;
    export_report(
        &entries,
        &r.out_dir.join("report.json"),
        &r.out_dir.join("report.csv"),
    )?;
    println!("wrote {}", r.out_dir.join("report.json").display());
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let r = resolve(&args.common)?;
    let count = args.count.or(r.cfg.count).unwrap_or(250);
    if count == 0 {
        return Err(CliError::Usage("--count must be >= 1".into()));
    }
    let spec = SyntheticSpec {
        per_class: count,
        ..Default::default()
    };
    let ds = generate_synthetic(&spec, &mut Rng::with_stream(r.seed, streams::SYNTH));
    ensure_out_dir(&r.out_dir)?;
    ivcn::data::export_ppm_dataset(&ds, &r.out_dir)?;
    println!(
        "wrote {} images per class under {}",
        count,
        r.out_dir.display()
    );
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs) -> CliResult<()> {
    let r = resolve(&args.common)?;
    let roots = resolve_data(&args.data, &r.cfg)?;
    let outcome = load_directories(&roots)?;
    for (path, reason) in &outcome.skipped {
        eprintln!("warning: skipped {}: {reason}", path.display());
    }
    let means = class_mean_images(&outcome.dataset)?;
    ensure_out_dir(&r.out_dir)?;
    export_mean_image(&means.mean_asd, &r.out_dir.join("mean_ASD.ppm"))?;
    export_mean_image(&means.mean_td, &r.out_dir.join("mean_TD.ppm"))?;
    let json = serde_json::json!({
        "dispersion_asd": means.dispersion_asd,
        "dispersion_td": means.dispersion_td,
    });
    fs::write(
        r.out_dir.join("dispersion.json"),
        serde_json::to_string_pretty(&json).expect("json") + "\n",
    )
    .map_err(Error::from)?;
    println!(
        "dispersion ASD {:.3}  TD {:.3}",
        means.dispersion_asd, means.dispersion_td
    );
    Ok(())
}

fn first_image(roots: &[PathBuf]) -> CliResult<Tensor> {
    let outcome = load_directories(roots)?;
    outcome
        .dataset
        .items
        .into_iter()
        .next()
        .map(|item| item.image)
        .ok_or_else(|| CliError::App(Error::Data("dataset has no images".into())))
}

fn cmd_visualize(args: &VisualizeArgs) -> CliResult<()> {
    let r = resolve(&args.common)?;
    let model_path = args
        .model
        .clone()
        .or_else(|| r.cfg.model.clone())
        .ok_or_else(|| CliError::Usage("no model given: pass --model <file>".into()))?;
    let grid = args.grid.or(r.cfg.grid).unwrap_or(6);
    let mut model = load_model(&model_path)?;

    let image = match &args.image {
        Some(path) => {
            let img = ivcn::data::decode_image(path)?;
            ivcn::data::resize_bilinear(&img, ivcn::data::IMAGE_SIZE, ivcn::data::IMAGE_SIZE)?
        }
        None => {
            let roots = resolve_data(&args.data, &r.cfg).map_err(|_| {
                CliError::Usage("visualize needs --image <file> or --data <dir>".into())
            })?;
            first_image(&roots)?
        }
    };

    let inv_indices: Vec<usize> = model
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, ivcn::model::Layer::Involution { .. }))
        .map(|(i, _)| i)
        .collect();
    if inv_indices.is_empty() {
        return Err(CliError::Usage(
            "model has no involution layers to visualize".into(),
        ));
    }

    ensure_out_dir(&r.out_dir)?;
    let mut wrote = String::new();
    for i in inv_indices {
        let norm = r.out_dir.join(format!("kernels_L{i}.ppm"));
        let grid_path = r.out_dir.join(format!("kernels_grid_L{i}.ppm"));
        export_kernel_norm_map(&mut model, &image, i, &norm)?;
        export_kernel_grid(&mut model, &image, i, grid, &grid_path)?;
        let _ = write!(wrote, "{} {} ", norm.display(), grid_path.display());
    }
    println!("wrote {}", wrote.trim_end());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::Summary(a) => cmd_summary(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Visualize(a) => cmd_visualize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
