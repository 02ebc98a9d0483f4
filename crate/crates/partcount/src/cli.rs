//! The `partcount` command line.
//!
//! Exit codes: 0 on success, 1 on a runtime failure (with one
//! `error: <kind>: <detail>` line on stderr), 2 on a usage error. Lines on
//! stdout that start with `#` carry timing only.

use std::ffi::OsString;
use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use partcount_core::classical::{classical_stages, ClassicalConfig, HoughConfig};
use partcount_core::dataset::{grouped_split, Bucket, SplitRatios};
use partcount_core::density::{build_density_map, WindowPolicy, DEFAULT_FALLBACK_WINDOW};
use partcount_core::eval::Aggregation;
use partcount_core::image::{resize_rgb, GrayImage, RgbImage};
use partcount_core::net::{CountingNet, ExemplarSet, FeatureMap, NetConfig};
use partcount_core::synth::SynthConfig;
use partcount_core::BBox;
use serde_json::json;

use crate::checkpoint::load_checkpoint;
use crate::coco::Dataset;
use crate::data::{read_split, write_split, DiskSource};
use crate::densityfile::{write_density, write_false_color};
use crate::error::{Error, Result};
use crate::evaluation::{predict_bucket, write_report, Counter, SummaryJson};
use crate::io::{read_rgb, write_png};
use crate::synthio::generate_dataset;
use crate::training::{run_training, TrainFile};

#[derive(Debug, Parser)]
#[command(name = "partcount", version, about = "Count densely packed circular parts in images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate an annotation file, print dataset statistics and optionally
    /// write a scene-level split.
    Ingest(IngestArgs),
    /// Build ground-truth density maps for every annotated image.
    Density(DensityArgs),
    /// Count parts in one image with the classical pipeline.
    Classical(ClassicalArgs),
    /// Train the density network.
    Train(TrainArgs),
    /// Count parts in one image with a trained network.
    Infer(InferArgs),
    /// Score a counting method on one split.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic multi-view washer dataset.
    Synth(SynthArgs),
    /// Write the command-line reference in Markdown.
    Doc(DocArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Annotation file.
    #[arg(long, default_value = "annotation.json")]
    pub annotations: PathBuf,
    /// Split seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train, dev and test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub ratios: String,
    /// Write the split manifest here.
    #[arg(long)]
    pub split_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    #[arg(long, default_value = "annotation.json")]
    pub annotations: PathBuf,
    /// Output directory for `<image>.dens` files and false-color PNGs.
    #[arg(long)]
    pub out: PathBuf,
    /// Use this window for every image instead of the mean 1-NN spacing.
    #[arg(long)]
    pub fixed_window: Option<f64>,
    /// Window for images with a single annotation.
    #[arg(long, default_value_t = DEFAULT_FALLBACK_WINDOW)]
    pub fallback_window: f64,
    /// Build maps at this square size instead of the native resolution.
    #[arg(long)]
    pub image_size: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ClassicalOptions {
    /// Smallest circle radius searched, in pixels.
    #[arg(long, default_value_t = 15)]
    pub r_min: usize,
    /// Largest circle radius searched, in pixels.
    #[arg(long, default_value_t = 25)]
    pub r_max: usize,
    /// Minimum fraction of a circle's perimeter that must vote for it.
    #[arg(long, default_value_t = 0.8)]
    pub vote_threshold: f64,
    /// Detected centers closer than this are merged.
    #[arg(long, default_value_t = 15.0)]
    pub nms_distance: f64,
    /// Gaussian blur standard deviation.
    #[arg(long, default_value_t = 1.5)]
    pub blur_sigma: f64,
    /// Otsu classes for foreground separation.
    #[arg(long, default_value_t = 2)]
    pub otsu_classes: usize,
    /// Quantile of the edge magnitude above which pixels vote.
    #[arg(long, default_value_t = 0.9)]
    pub edge_percentile: f64,
}

impl ClassicalOptions {
    pub fn config(&self) -> ClassicalConfig {
        ClassicalConfig {
            blur_sigma: self.blur_sigma,
            otsu_classes: self.otsu_classes,
            hough: HoughConfig {
                r_min: self.r_min,
                r_max: self.r_max,
                vote_threshold: self.vote_threshold,
                nms_distance: self.nms_distance,
                edge_percentile: self.edge_percentile,
                ..HoughConfig::default()
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct ClassicalArgs {
    /// Input image.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub options: ClassicalOptions,
    /// Write every intermediate stage as a PNG into this directory.
    #[arg(long)]
    pub debug_stages: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "annotation.json")]
    pub annotations: PathBuf,
    /// Split manifest from `ingest --split-out`.
    #[arg(long, default_value = "split.json")]
    pub split_file: PathBuf,
    /// Output directory for histories and checkpoints.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// TOML file with training settings; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seeds network initialization and the per-epoch shuffle.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight of the mismatch loss.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Square training resolution.
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Cap on the global gradient norm per step.
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Steps over which the learning rate ramps up linearly.
    #[arg(long)]
    pub warmup_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Take exemplar boxes from this annotation file (matched by file name).
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Exemplar box `x,y,w,h` in input pixels; repeatable.
    #[arg(long = "box", value_name = "X,Y,W,H")]
    pub boxes: Vec<String>,
    /// Network resolution; defaults to the checkpoint's training size.
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Write the predicted density map (and a false-color PNG next to it).
    #[arg(long)]
    pub density_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Network,
    Classical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregateArg {
    None,
    Min,
    Max,
    Mean,
}

impl AggregateArg {
    pub fn mode(self) -> Option<Aggregation> {
        match self {
            AggregateArg::None => None,
            AggregateArg::Min => Some(Aggregation::Min),
            AggregateArg::Max => Some(Aggregation::Max),
            AggregateArg::Mean => Some(Aggregation::Mean),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Bucket {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Bucket::Train,
            SplitArg::Dev => Bucket::Dev,
            SplitArg::Test => Bucket::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, default_value = "annotation.json")]
    pub annotations: PathBuf,
    #[arg(long, default_value = "split.json")]
    pub split_file: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Combine the views of each scene before scoring.
    #[arg(long, value_enum, default_value_t = AggregateArg::None)]
    pub aggregate: AggregateArg,
    #[arg(long, value_enum, default_value_t = Method::Network)]
    pub method: Method,
    /// Network checkpoint (required for the network method).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Network resolution; defaults to the checkpoint's training size.
    #[arg(long)]
    pub image_size: Option<usize>,
    #[command(flatten)]
    pub classical: ClassicalOptions,
    /// Output directory for `report.csv` and `summary.json`.
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
    /// Add a rounded-count column to the report.
    #[arg(long)]
    pub round: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub scenes: usize,
    #[arg(long, default_value_t = 9)]
    pub views: usize,
    /// Inclusive object count range `MIN..MAX`.
    #[arg(long, default_value = "5..40")]
    pub count: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Square image size in pixels.
    #[arg(long, default_value_t = 1080)]
    pub size: usize,
    /// Washer radii `INNER,OUTER` in pixels.
    #[arg(long, default_value = "20,45")]
    pub radius: String,
    /// Largest pairwise overlap as a fraction of a washer's disk.
    #[arg(long, default_value_t = 0.1)]
    pub max_overlap: f64,
    /// Strength of the lighting ramp.
    #[arg(long, default_value_t = 0.3)]
    pub lighting: f64,
    /// Per-channel pixel noise amplitude.
    #[arg(long, default_value_t = 4)]
    pub noise: u8,
}

#[derive(Debug, Args)]
pub struct DocArgs {
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Writes one stdout line. A closed pipe surfaces as an `Io` error that
/// `run` treats as a quiet exit.
fn emit(line: impl Display) -> Result<()> {
    writeln!(std::io::stdout().lock(), "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn is_broken_pipe(e: &Error) -> bool {
    matches!(e, Error::Io { source, .. } if source.kind() == std::io::ErrorKind::BrokenPipe)
}

fn usage(message: String) -> Error {
    Error::Config(message)
}

fn parse_list(text: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let vals: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("{what}: cannot parse `{text}`")))?;
    if vals.len() != n {
        return Err(usage(format!("{what}: expected {n} comma-separated numbers, got `{text}`")));
    }
    Ok(vals)
}

fn parse_range(text: &str) -> Result<(usize, usize)> {
    let (lo, hi) = text.split_once("..").ok_or_else(|| usage(format!("count range `{text}` is not MIN..MAX")))?;
    let lo = lo.trim().parse().map_err(|_| usage(format!("count range `{text}`")))?;
    let hi = hi.trim().trim_start_matches('=').parse().map_err(|_| usage(format!("count range `{text}`")))?;
    Ok((lo, hi))
}

fn gray_to_rgb(g: &GrayImage) -> RgbImage {
    let mut img = RgbImage::new(g.width, g.height);
    for (px, v) in img.data.chunks_exact_mut(3).zip(g.to_u8()) {
        px.fill(v);
    }
    img
}

fn median(v: &mut [usize]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

fn ingest(args: &IngestArgs) -> Result<()> {
    let d = Dataset::load(&args.annotations)?;
    let mut counts: Vec<usize> = d.counts().into_values().collect();
    let mean = if counts.is_empty() { 0.0 } else { counts.iter().sum::<usize>() as f64 / counts.len() as f64 };
    let scenes: std::collections::BTreeSet<&str> = d.records.iter().map(|r| r.scene_id.as_str()).collect();
    let mut out = json!({
        "images": d.records.len(),
        "annotations": d.annotations.len(),
        "scenes": scenes.len(),
        "mean_count": mean,
        "median_count": median(&mut counts),
    });
    if let Some(path) = &args.split_out {
        let r = parse_list(&args.ratios, 3, "ratios")?;
        let split = grouped_split(&d.records, SplitRatios { train: r[0], dev: r[1], test: r[2] }, args.seed)?;
        write_split(path, &split)?;
        out["split"] = json!({"train": split.train.len(), "dev": split.dev.len(), "test": split.test.len()});
    }
    emit(out)?;
    Ok(())
}

fn density(args: &DensityArgs) -> Result<()> {
    let d = Dataset::load(&args.annotations)?;
    let policy = match args.fixed_window {
        Some(w) => WindowPolicy::Fixed(w),
        None => WindowPolicy::NearestNeighbor { fallback: args.fallback_window },
    };
    emit("image,annotations,sum,window")?;
    for r in &d.records {
        let (w, h) = match args.image_size {
            Some(s) => (s, s),
            None => (r.width as usize, r.height as usize),
        };
        let (sx, sy) = (w as f64 / f64::from(r.width), h as f64 / f64::from(r.height));
        let anns = d.annotations_for(r.image_id);
        let points = anns
            .iter()
            .map(|a| a.center().map(|c| c.scaled(sx, sy)))
            .collect::<partcount_core::Result<Vec<_>>>()?;
        let build = build_density_map(&points, h, w, policy)?;
        let stem = Path::new(&r.file_name).file_stem().map_or_else(|| r.image_id.to_string(), |s| s.to_string_lossy().into_owned());
        write_density(args.out.join(format!("{stem}.dens")), &build.map)?;
        write_false_color(args.out.join(format!("{stem}.png")), &build.map)?;
        let window = build.window.map(|w| w.to_string()).unwrap_or_default();
        emit(format!("{},{},{},{window}", r.file_name, anns.len(), build.map.sum()))?;
    }
    Ok(())
}

fn classical(args: &ClassicalArgs) -> Result<()> {
    let rgb = read_rgb(&args.input)?;
    let stages = classical_stages(&rgb, &args.options.config())?;
    if let Some(dir) = &args.debug_stages {
        write_png(dir.join("1_saturation.png"), &gray_to_rgb(&stages.saturation))?;
        write_png(dir.join("2_blurred.png"), &gray_to_rgb(&stages.blurred))?;
        write_png(dir.join("3_foreground_mask.png"), &gray_to_rgb(&stages.foreground_mask))?;
        write_png(dir.join("4_foreground.png"), &gray_to_rgb(&stages.foreground))?;
        write_png(dir.join("5_edges.png"), &gray_to_rgb(&stages.edges))?;
        let mut overlay = rgb.clone();
        for c in &stages.circles {
            for k in 0..360 {
                let a = (k as f64).to_radians();
                let x = (c.center.x + c.radius * a.cos()).round();
                let y = (c.center.y + c.radius * a.sin()).round();
                if x >= 0.0 && y >= 0.0 && (x as usize) < overlay.width && (y as usize) < overlay.height {
                    overlay.put(x as usize, y as usize, [0, 255, 0]);
                }
            }
        }
        write_png(dir.join("6_circles.png"), &overlay)?;
    }
    let circles: Vec<_> = stages
        .circles
        .iter()
        .map(|c| json!({"x": c.center.x, "y": c.center.y, "r": c.radius, "support": c.support}))
        .collect();
    emit(json!({"count": stages.circles.len(), "threshold": stages.threshold, "circles": circles}))?;
    Ok(())
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let file = match &args.config {
        Some(p) => TrainFile::load(p)?,
        None => TrainFile::default(),
    };
    let flags = TrainFile {
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        seed: args.seed,
        lambda: args.lambda,
        image_size: args.image_size,
        grad_clip: args.grad_clip,
        warmup_steps: args.warmup_steps,
        ..TrainFile::default()
    };
    let config = file.merged(&flags).resolve();
    let split = read_split(&args.split_file)?;
    let mut source = DiskSource::open(&args.annotations, config.image_size, WindowPolicy::default())?;
    let net_config = NetConfig { seed: config.seed, ..NetConfig::default() };
    let art = run_training(&mut source, &split, &config, net_config, &args.out)?;
    let best = &art.outcome.epochs[art.outcome.best_epoch];
    let last = art.outcome.epochs.last().expect("at least one epoch");
    emit(json!({
        "iterations": art.outcome.history.len(),
        "best_epoch": best.epoch,
        "best_dev_mae": best.dev_mae,
        "final_dev_mae": last.dev_mae,
        "best": art.best,
        "final": art.final_checkpoint,
        "loss_history": art.loss_history,
    }))?;
    Ok(())
}

fn checkpoint_size(manifest: &crate::checkpoint::Manifest) -> Option<usize> {
    manifest.training.get("config")?.get("image_size")?.as_u64().map(|s| s as usize)
}

fn parse_box(text: &str) -> Result<BBox> {
    let v = parse_list(text, 4, "box")?;
    Ok(BBox::new(v[0], v[1], v[2], v[3]))
}

fn infer(args: &InferArgs) -> Result<()> {
    let (net, manifest) = load_checkpoint::<f32>(&args.checkpoint)?;
    let size = args.image_size.or(checkpoint_size(&manifest)).unwrap_or(384);
    let rgb = read_rgb(&args.input)?;
    let mut boxes = args.boxes.iter().map(|b| parse_box(b)).collect::<Result<Vec<_>>>()?;
    if let Some(ann) = &args.annotations {
        let d = Dataset::load(ann)?;
        let name = args.input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let record = d
            .records
            .iter()
            .find(|r| Path::new(&r.file_name).file_name().is_some_and(|f| f.to_string_lossy() == name))
            .ok_or_else(|| partcount_core::Error::Input(format!("{name} is not listed in {}", ann.display())))?;
        boxes.extend(d.annotations_for(record.image_id).iter().map(|a| a.bbox));
    }
    if boxes.is_empty() {
        return Err(partcount_core::Error::Input("no exemplar boxes: pass --box or --annotations".into()).into());
    }
    let (sx, sy) = (size as f64 / rgb.width as f64, size as f64 / rgb.height as f64);
    let boxes = boxes.iter().map(|b| b.scaled(sx, sy)).collect();
    let image = FeatureMap::from_rgb(&resize_rgb(&rgb, size, size)?);
    let fwd = net.forward(&image, &ExemplarSet::new(boxes), false)?;
    if let Some(path) = &args.density_out {
        let map = partcount_core::density::DensityMap::from_raw(
            size,
            size,
            fwd.density.data.iter().map(|v| f64::from(*v)).collect(),
        )?;
        write_density(path, &map)?;
        write_false_color(path.with_extension("png"), &map)?;
    }
    emit(json!({"count": fwd.count(), "degenerate_boxes": fwd.degenerate_boxes}))?;
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let split = read_split(&args.split_file)?;
    let classical_config = args.classical.config();
    let loaded: Option<(CountingNet<f32>, usize)> = match args.method {
        Method::Network => {
            let path = args
                .checkpoint
                .as_ref()
                .ok_or_else(|| usage("the network method needs --checkpoint".into()))?;
            let (net, manifest) = load_checkpoint::<f32>(path)?;
            let size = args.image_size.or(checkpoint_size(&manifest)).unwrap_or(384);
            Some((net, size))
        }
        Method::Classical => None,
    };
    let size = loaded.as_ref().map_or(384, |(_, s)| *s);
    let mut source = DiskSource::open(&args.annotations, size, WindowPolicy::default())?;
    let counter = match &loaded {
        Some((net, _)) => Counter::Network(net),
        None => Counter::Classical(&classical_config),
    };
    let preds = predict_bucket(&mut source, &split, args.split.into(), &counter)?;
    let report = write_report(&preds, args.aggregate.mode(), args.round, &args.out)?;
    emit(serde_json::to_string(&SummaryJson::from(&report)).expect("summary serializes"))?;
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let r = parse_list(&args.radius, 2, "radius")?;
    let config = SynthConfig {
        scenes: args.scenes,
        views_per_scene: args.views,
        count_range: parse_range(&args.count)?,
        radius_range: (r[0], r[1]),
        max_overlap: args.max_overlap,
        lighting_gradient: args.lighting,
        noise: args.noise,
        image_size: args.size,
        seed: args.seed,
    };
    let m = generate_dataset(&config, &args.out)?;
    let images = m.scenes.len() * m.views_per_scene;
    emit(json!({"scenes": m.scenes.len(), "images": images, "mean_count": m.mean_count}))?;
    Ok(())
}

/// Markdown reference for every subcommand, as written by `partcount doc`.
pub fn reference_markdown() -> String {
    let mut cmd = Cli::command().term_width(100);
    cmd.build();
    let mut out = String::from("# partcount command-line reference\n\n");
    out.push_str("```text\n");
    out.push_str(&cmd.render_long_help().to_string());
    out.push_str("```\n");
    for sub in cmd.get_subcommands_mut() {
        if sub.get_name() == "help" {
            continue;
        }
        out.push_str(&format!("\n## partcount {}\n\n```text\n", sub.get_name()));
        out.push_str(&sub.render_long_help().to_string());
        out.push_str("```\n");
    }
    out
}

fn doc(args: &DocArgs) -> Result<()> {
    let text = reference_markdown();
    match &args.out {
        Some(p) => crate::io::atomic_write(p, text.as_bytes()),
        None => {
            emit(text.trim_end())
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let start = Instant::now();
    match &cli.command {
        Command::Ingest(a) => ingest(a)?,
        Command::Density(a) => density(a)?,
        Command::Classical(a) => classical(a)?,
        Command::Train(a) => train_cmd(a)?,
        Command::Infer(a) => infer(a)?,
        Command::Evaluate(a) => evaluate(a)?,
        Command::Synth(a) => synth(a)?,
        Command::Doc(a) => {
            return doc(a);
        }
    }
    emit(format!("# elapsed {:.3}s", start.elapsed().as_secs_f64()))?;
    Ok(())
}

/// Single-line `error: <kind>: <detail>` text for a runtime failure.
pub fn error_line(e: &Error) -> String {
    let detail = match e {
        Error::Core(c) => c.detail().to_string(),
        other => other.to_string(),
    };
    format!("error: {}: {}", e.kind(), detail.replace('\n', " "))
}

/// Parses `args` (including the program name) and runs the command; returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) if is_broken_pipe(&e) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}
