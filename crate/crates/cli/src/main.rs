//! `nbdefect`: one binary for every pipeline stage.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nbdefect::dataset::{load_manifest, save_manifest, split_grouped, Manifest, SplitSpec};
use nbdefect::evalreport::{
    emit_table, load_results, published_results, run_experiment_matrix, ExperimentArm, Layout, MatrixConfig,
    TableFormat,
};
use nbdefect::loader::load_dataset;
use nbdefect::maskproc::Connectivity;
use nbdefect::model::{BackboneName, BackboneSpec, Classifier, ClassifierSpec};
use nbdefect::pipeline::{maskproc_manifest, run_pipeline, ConfigError, PipelineConfig, RunMeta};
use nbdefect::registration::{MatcherConfig, MatcherKind, RegisterOptions};
use nbdefect::seed::derive_seed;
use nbdefect::synthgen::{generate_dataset, FruitsPerClass, GenConfig};
use nbdefect::trainer::{train, TrainConfig};
use nbdefect::{Error, Result};
use serde::de::DeserializeOwned;

#[derive(Debug, Parser)]
#[command(name = "nbdefect", version, about = "Fruit-defect classification from paired visible and 660 nm images")]
struct Cli {
    /// Worker threads for parallel stages (default: number of processors).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic paired dataset with ground-truth masks.
    Synth(SynthArgs),
    /// Align narrowband images to their visible partners.
    Register(RegisterArgs),
    /// Remove small connected regions from defect masks.
    Maskproc(MaskprocArgs),
    /// Fruit-grouped train/validation split.
    Split(SplitArgs),
    /// Train one classifier on one experiment arm.
    Train(TrainArgs),
    /// Run the (model x arm) experiment matrix.
    Eval(EvalArgs),
    /// Render an accuracy table.
    Report(ReportArgs),
    /// synth -> register -> maskproc -> train/eval -> tables, with caching.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Generator config (JSON); flags override its fields.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "N")]
    fruits_per_class: Option<u32>,
    #[arg(long, value_name = "N")]
    views: Option<u32>,
    #[arg(long, value_name = "SIGMA")]
    noise_sigma: Option<f64>,
}

#[derive(Debug, Args)]
struct RegisterArgs {
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value = "builtin", value_parser = parse_from_str::<MatcherKind>)]
    matcher: MatcherKind,
    /// RANSAC inlier threshold in pixels.
    #[arg(long, value_name = "PX")]
    threshold: Option<f64>,
    /// RANSAC seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct MaskprocArgs {
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    #[arg(long, value_name = "N", default_value_t = 20)]
    min_area: usize,
    #[arg(long, default_value = "8", value_parser = parse_connectivity)]
    connectivity: Connectivity,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Receives `train.json` and `val.json`.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    #[arg(long, value_parser = parse_from_str::<ExperimentArm>)]
    arm: ExperimentArm,
    /// Training config (JSON, TrainConfig fields).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value = "tiny", value_parser = parse_from_str::<BackboneName>)]
    model: BackboneName,
    /// Square classifier input size in pixels.
    #[arg(long, default_value_t = 64)]
    input_size: usize,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Pretrained-asset directory (else $NBDEFECT_WEIGHTS_DIR).
    #[arg(long, value_name = "DIR")]
    weights_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Matrix config (JSON, MatrixConfig fields).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    results: PathBuf,
    /// Comma-separated backbones.
    #[arg(long, value_delimiter = ',', value_parser = parse_from_str::<BackboneName>)]
    models: Option<Vec<BackboneName>>,
    /// Comma-separated arms.
    #[arg(long, value_delimiter = ',', value_parser = parse_from_str::<ExperimentArm>)]
    arms: Option<Vec<ExperimentArm>>,
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    weights_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Results directory; without it the published accuracies are shown.
    #[arg(long, value_name = "DIR")]
    results: Option<PathBuf>,
    #[arg(long, default_value = "table1", value_parser = parse_from_str::<Layout>)]
    layout: Layout,
    #[arg(long, default_value = "text", value_parser = parse_from_str::<TableFormat>)]
    format: TableFormat,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Pipeline config (JSON); defaults to the desk-scale preset.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output root; overrides `paths.output_root`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Existing manifest to use instead of synthesizing data.
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    weights_dir: Option<PathBuf>,
}

fn parse_from_str<T>(s: &str) -> std::result::Result<T, String>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

fn parse_connectivity(s: &str) -> std::result::Result<Connectivity, String> {
    let n: u8 = s.parse().map_err(|_| format!("connectivity must be 4 or 8, got {s:?}"))?;
    Connectivity::try_from(n)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Unreadable { path: path.to_path_buf(), message: e.to_string() })?;
    Ok(serde_json::from_str(&text).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?)
}

fn read_json_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg: GenConfig = read_json_or_default(a.config.as_deref())?;
    cfg.output_dir = a.out.clone();
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    if let Some(n) = a.fruits_per_class {
        cfg.fruits_per_class = FruitsPerClass::Uniform(n);
    }
    if let Some(v) = a.views {
        cfg.views_per_fruit = v;
    }
    if let Some(s) = a.noise_sigma {
        cfg.noise_sigma = s;
    }
    let m = generate_dataset(&cfg)?;
    RunMeta::new("synth", cfg.master_seed, &cfg).write(&a.out)?;
    println!("wrote {} records to {}", m.len(), a.out.join("manifest.json").display());
    Ok(())
}

fn register(a: RegisterArgs) -> Result<()> {
    let m = load_manifest(&a.manifest)?;
    let mut config = MatcherConfig::default();
    if let Some(t) = a.threshold {
        config.ransac.inlier_threshold_px = t;
    }
    if let Some(s) = a.seed {
        config.ransac.seed = s;
    }
    let opts = RegisterOptions { matcher: a.matcher, config };
    let (_, report) = nbdefect::registration::register_manifest(&m, &a.out, &opts)?;
    RunMeta::new("register", config.ransac.seed, &opts).write(&a.out)?;
    println!("registered {} of {} records ({} failed)", report.registered, m.len(), report.failed);
    for r in report.records.iter().filter(|r| r.error.is_some()) {
        eprintln!("record {} ({} view {}): {}", r.record, r.fruit_id, r.view_index, r.error.as_deref().unwrap_or(""));
    }
    Ok(())
}

fn maskproc(a: MaskprocArgs) -> Result<()> {
    let m = load_manifest(&a.manifest)?;
    let out = maskproc_manifest(&m, &a.out, a.min_area, a.connectivity)?;
    let params = serde_json::json!({ "min_area": a.min_area, "connectivity": a.connectivity });
    RunMeta::new("maskproc", 0, &params).write(&a.out)?;
    println!("filtered {} masks into {}", out.len(), a.out.display());
    Ok(())
}

fn write_manifest(m: &Manifest, path: &Path) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    Ok(save_manifest(&m.rebased(dir), path)?)
}

fn split(a: SplitArgs) -> Result<()> {
    let m = load_manifest(&a.manifest)?;
    let spec = SplitSpec { val_fraction: a.val_fraction, seed: a.seed };
    let (train_m, val_m) = split_grouped(&m, spec)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(a.out.display().to_string(), e))?;
    write_manifest(&train_m, &a.out.join("train.json"))?;
    write_manifest(&val_m, &a.out.join("val.json"))?;
    RunMeta::new("split", a.seed, &spec).write(&a.out)?;
    println!(
        "train: {} records / {} fruits; val: {} records / {} fruits",
        train_m.len(),
        train_m.fruit_ids().len(),
        val_m.len(),
        val_m.fruit_ids().len()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = read_json_or_default(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let m = load_manifest(&a.manifest)?;
    let (train_m, val_m) = split_grouped(&m, SplitSpec { val_fraction: a.val_fraction, seed: cfg.seed })?;
    let (ma, mb) = a.arm.inputs();
    let n = a.input_size;
    let train_set = load_dataset::<f32>(&train_m, ma, mb, n, n)?;
    let val_set = load_dataset::<f32>(&val_m, ma, mb, n, n)?;
    let backbone = BackboneSpec::new(a.model, a.model != BackboneName::Tiny, n, n);
    let spec = if a.arm.is_multi() { ClassifierSpec::multi(backbone) } else { ClassifierSpec::single(backbone) };
    let init_seed = derive_seed(cfg.seed, &["init"]);
    let mut classifier = Classifier::<f32>::build(&spec, init_seed, a.weights_dir.as_deref())?;
    let outcome = train(&mut classifier, &train_set, &val_set, &cfg, &a.out)?;
    let meta = serde_json::json!({ "train": cfg, "arm": a.arm, "spec": spec, "val_fraction": a.val_fraction });
    RunMeta::new("train", cfg.seed, &meta).write(&a.out)?;
    if let Some(best) = outcome.history.best() {
        println!("best epoch {}: val accuracy {:.2}%", best.epoch, best.val_accuracy);
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut cfg: MatrixConfig = read_json_or_default(a.config.as_deref())?;
    if let Some(models) = a.models {
        cfg.models = models;
    }
    if let Some(arms) = a.arms {
        cfg.arms = arms;
    }
    if let Some(n) = a.input_size {
        cfg.input_size = [n, n];
    }
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    if a.weights_dir.is_some() {
        cfg.weights_dir = a.weights_dir;
    }
    let m = load_manifest(&a.manifest)?;
    let results = run_experiment_matrix::<f32>(&m, &cfg, &a.results)?;
    RunMeta::new("eval", cfg.master_seed, &cfg).write(&a.results)?;
    for r in &results {
        println!("{} {}: {:.2}%", r.model_name, r.arm, r.accuracy_pct);
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let results = match &a.results {
        Some(dir) => load_results(dir)?,
        None => published_results(),
    };
    print!("{}", emit_table(&results, a.layout, a.format));
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::desk_scale("run"),
    };
    if let Some(out) = a.out {
        cfg.paths.output_root = out;
    }
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    if a.manifest.is_some() {
        cfg.paths.manifest = a.manifest;
    }
    if a.weights_dir.is_some() {
        cfg.paths.weights_dir = a.weights_dir;
    }
    let report = run_pipeline(&cfg)?;
    if !report.cached_stages.is_empty() {
        println!("cached stages: {}", report.cached_stages.join(", "));
    }
    for r in &report.results {
        println!("{} {}: {:.2}%", r.model_name, r.arm, r.accuracy_pct);
    }
    println!("tables written to {}", cfg.paths.output_root.join("tables").display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Register(a) => register(a),
        Command::Maskproc(a) => maskproc(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("warning: could not size the thread pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(1)
        }
    }
}
