use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use splat_colorize::baseline::{self, HeldOut, Method, OptimizerConfig};
use splat_colorize::io::{self, CameraSet};
use splat_colorize::metrics::format_psnr;
use splat_colorize::solver::DEFAULT_BAND_LAMBDA;
use splat_colorize::synth::{self, SynthConfig};
use splat_colorize::{
    colorize_and_refine, segment, ChannelImage, Frame, ImageMetrics, RasterConfig, SolveConfig,
};

/// Instant SH colorization of frozen Gaussian splat scenes.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Worker threads; defaults to all cores. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve SH coefficients from posed target images.
    Colorize(ColorizeArgs),
    /// Render every view of a manifest.
    Render(RenderArgs),
    /// Lift binary masks onto splats and keep those above the threshold.
    Segment(SegmentArgs),
    /// Fit coefficients by gradient descent and record the loss curve.
    Baseline(BaselineArgs),
    /// Compare two image directories file by file.
    Metrics(MetricsArgs),
    /// Generate a seeded synthetic scene, cameras and target images.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SceneInputs {
    #[arg(long)]
    scene: PathBuf,
    /// Camera manifest (JSON).
    #[arg(long)]
    cameras: PathBuf,
}

#[derive(Args)]
struct ColorizeArgs {
    #[command(flatten)]
    inputs: SceneInputs,
    /// Directory holding the images named in the manifest.
    #[arg(long)]
    targets: PathBuf,
    #[arg(long, default_value_t = 3)]
    sh_order: usize,
    #[arg(long, default_value_t = splat_colorize::solver::DEFAULT_REFINE_STEPS)]
    refine: usize,
    /// Per-band regularization weights, lowest band first.
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
    /// Solve report (JSON); defaults to the output path with `.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ImageFormat {
    /// 16-bit PNG, values must lie in [0, 1] unless clamped.
    Png,
    /// Lossless raw float container.
    Raw,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    inputs: SceneInputs,
    #[arg(long)]
    out: PathBuf,
    /// Clip colors to [0, 1] before writing.
    #[arg(long)]
    clamp: bool,
    #[arg(long, value_enum, default_value = "png")]
    format: ImageFormat,
}

#[derive(Args)]
struct SegmentArgs {
    #[command(flatten)]
    inputs: SceneInputs,
    /// Directory holding single-channel masks named in the manifest.
    #[arg(long)]
    masks: PathBuf,
    #[arg(long, default_value_t = 0.6)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
    /// Per-splat mask values (JSON); defaults to the output path with
    /// `.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    inputs: SceneInputs,
    #[arg(long)]
    targets: PathBuf,
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Defaults to the method's reference learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Stop after this many seconds of optimization.
    #[arg(long)]
    time_budget: Option<f64>,
    #[arg(long, default_value_t = 10)]
    eval_interval: usize,
    /// Held-out manifest; its images are read from `--test-targets`.
    #[arg(long, requires = "test_targets")]
    test_cameras: Option<PathBuf>,
    #[arg(long)]
    test_targets: Option<PathBuf>,
    /// Start from zero coefficients instead of those in the scene file.
    #[arg(long)]
    zero_init: bool,
    #[arg(long, default_value_t = 3)]
    sh_order: usize,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    rendered: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Per-image and mean metrics (JSON).
    #[arg(long, default_value = "metrics.json")]
    report: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    splats: usize,
    #[arg(long, default_value_t = 40)]
    views: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 3)]
    sh_order: usize,
    /// Every n-th view goes to the held-out set; 0 keeps all for training.
    #[arg(long, default_value_t = 5)]
    held_out_stride: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: splat_colorize::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .chain()
                .filter_map(|c| c.downcast_ref::<splat_colorize::Error>())
                .any(|c| c.is_numerical());
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Colorize(a) => run_colorize(a),
        Command::Render(a) => run_render(a),
        Command::Segment(a) => run_segment(a),
        Command::Baseline(a) => run_baseline(a),
        Command::Metrics(a) => run_metrics(a),
        Command::Synth(a) => run_synth(a),
    }
}

fn load_posed(cameras: &Path, images: &Path) -> anyhow::Result<(CameraSet, Vec<ChannelImage>)> {
    let set = io::read_cameras(cameras)?;
    let targets = set.load_images(images)?;
    Ok((set, targets))
}

fn report_path(out: &Path, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| out.with_extension("report.json"))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run_colorize(a: ColorizeArgs) -> anyhow::Result<()> {
    let scene = io::read_ply(&a.inputs.scene)?;
    let (set, targets) = load_posed(&a.inputs.cameras, &a.targets)?;
    let bands = a
        .lambda
        .unwrap_or_else(|| DEFAULT_BAND_LAMBDA[..=a.sh_order.min(3)].to_vec());
    if bands.len() != a.sh_order + 1 {
        bail!("--lambda needs {} values, got {}", a.sh_order + 1, bands.len());
    }
    let config = SolveConfig::new(a.sh_order)
        .with_band_lambda(&bands)
        .with_refine(a.refine);
    let result = colorize_and_refine(&scene, &set.views(), &targets, &config)?;
    io::write_ply(&result.scene, &a.out)?;
    let report = report_path(&a.out, a.report);
    write_text(&report, &result.report.to_json()?)?;
    let mean = result.report.mean.ok_or_else(|| anyhow!("no views evaluated"))?;
    println!(
        "solved {} of {} splats ({} unseen, {} singular) in {:.3}s",
        result.report.solved,
        result.report.gaussians,
        result.report.skipped.len(),
        result.report.failed.len(),
        result.report.timings.total()
    );
    println!(
        "mean L1 {:.6}  L2 {:.6e}  PSNR {} dB",
        mean.l1,
        mean.l2,
        format_psnr(mean.psnr)
    );
    Ok(())
}

fn run_render(a: RenderArgs) -> anyhow::Result<()> {
    let scene = io::read_ply(&a.inputs.scene)?;
    let set = io::read_cameras(&a.inputs.cameras)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let raster = RasterConfig::default();
    for entry in &set.entries {
        let image = Frame::new(&scene, &entry.view, &raster)?.render(&scene)?;
        let ext = match a.format {
            ImageFormat::Png => "png",
            ImageFormat::Raw => io::image::RAW_EXTENSION,
        };
        let path = a.out.join(format!("{}.{ext}", entry.id));
        io::write_image(&image, &path, a.clamp)
            .with_context(|| format!("view {}", entry.id))?;
    }
    println!("rendered {} views to {}", set.len(), a.out.display());
    Ok(())
}

fn run_segment(a: SegmentArgs) -> anyhow::Result<()> {
    let scene = io::read_ply(&a.inputs.scene)?;
    let (set, masks) = load_posed(&a.inputs.cameras, &a.masks)?;
    let result = segment(&scene, &set.views(), &masks, a.threshold, &SolveConfig::new(0))?;
    io::write_ply(&result.scene, &a.out)?;
    let report = serde_json::json!({
        "threshold": a.threshold,
        "kept": result.kept,
        "mask_values": result.mask_values,
    });
    write_text(
        &report_path(&a.out, a.report),
        &serde_json::to_string_pretty(&report)?,
    )?;
    println!("kept {} of {} splats", result.kept.len(), scene.len());
    Ok(())
}

fn run_baseline(a: BaselineArgs) -> anyhow::Result<()> {
    let scene = io::read_ply(&a.inputs.scene)?;
    let (set, targets) = load_posed(&a.inputs.cameras, &a.targets)?;
    let channels = targets.first().map_or(scene.channels, |t| t.channels);
    let mut scene = if scene.sh_order != a.sh_order || scene.channels != channels {
        scene.with_color_layout(a.sh_order, channels)
    } else {
        scene
    };
    if a.zero_init {
        scene.reset_coeffs();
    }
    let test = match (&a.test_cameras, &a.test_targets) {
        (Some(c), Some(t)) => Some(load_posed(c, t)?),
        _ => None,
    };
    let test_views = test.as_ref().map(|(s, _)| s.views());
    let held_out = match (&test, &test_views) {
        (Some((_, targets)), Some(views)) => Some(HeldOut { views, targets }),
        _ => None,
    };
    let mut config = OptimizerConfig::new(a.method);
    if let Some(lr) = a.lr {
        config.learning_rate = lr;
    }
    config.max_steps = a.steps;
    config.time_budget = a.time_budget;
    config.eval_interval = a.eval_interval;
    let (fitted, trace) = baseline::optimize(&scene, &set.views(), &targets, held_out, &config)?;
    write_text(&a.trace, &trace.to_csv())?;
    if let Some(out) = &a.out {
        io::write_ply(&fitted, out)?;
    }
    if let Some(last) = trace.last() {
        let test = last.test_l2.map_or("-".to_string(), |t| format!("{t:.6e}"));
        println!(
            "{:?}: {} steps in {:.3}s, train L2 {:.6e}, test L2 {test}",
            a.method, last.step, last.seconds, last.train_l2
        );
    }
    Ok(())
}

fn image_files(dir: &Path) -> anyhow::Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if ext.eq_ignore_ascii_case("png") || ext == io::image::RAW_EXTENSION {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

fn run_metrics(a: MetricsArgs) -> anyhow::Result<()> {
    let names = image_files(&a.rendered)?;
    if names.is_empty() {
        bail!("no images in {}", a.rendered.display());
    }
    let mut per_image = Vec::with_capacity(names.len());
    for name in &names {
        let reference = a.reference.join(name);
        if !reference.is_file() {
            bail!("{name} has no counterpart in {}", a.reference.display());
        }
        let m = ImageMetrics::compare(
            &io::read_image(a.rendered.join(name))?,
            &io::read_image(&reference)?,
        )
        .with_context(|| name.clone())?;
        println!("{name}  L1 {:.6}  L2 {:.6e}  PSNR {}", m.l1, m.l2, format_psnr(m.psnr));
        per_image.push(m);
    }
    let mean = ImageMetrics::mean(&per_image);
    println!(
        "mean  L1 {:.6}  L2 {:.6e}  PSNR {}",
        mean.l1,
        mean.l2,
        format_psnr(mean.psnr)
    );
    let images: Vec<_> = names
        .iter()
        .zip(&per_image)
        .map(|(n, m)| serde_json::json!({ "image": n, "metrics": m }))
        .collect();
    let report = serde_json::json!({ "images": images, "mean": mean });
    write_text(&a.report, &serde_json::to_string_pretty(&report)?)
}

fn run_synth(a: SynthArgs) -> anyhow::Result<()> {
    let config = SynthConfig {
        splats: a.splats,
        views: a.views,
        seed: a.seed,
        width: a.width,
        height: a.height,
        sh_order: a.sh_order,
        held_out_stride: a.held_out_stride,
        ..Default::default()
    };
    let fixture = synth::generate(&config, &RasterConfig::default())?;
    synth::write_fixture(&fixture, &a.out)?;
    println!(
        "wrote {} splats, {} training and {} held-out views to {}",
        fixture.scene.len(),
        fixture.train_views.len(),
        fixture.test_views.len(),
        a.out.display()
    );
    Ok(())
}
