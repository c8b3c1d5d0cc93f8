//! Subcommand definitions and their implementations.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ufse_core::align::AlignmentKind;
use ufse_core::checkpoint::Checkpoint;
use ufse_core::loss::LossReport;
use ufse_core::net::{encode, NetKind, Network};
use ufse_core::pipeline::{stylize, stylize_cascade, StylizeOpts};
use ufse_core::prune::{export_pruned, prune_sweep};
use ufse_core::resample::pad_reflect_to_multiple;
use ufse_core::stats::{channel_correlation, normalized_diagonal_sum};
use ufse_core::tape::CorrelationMode;
use ufse_core::train::{cascade_stage_config, train_with_loss_net, TrainConfig};

use crate::bench::{bench_alignment, BenchResult};
use crate::dataset::{load_dir, load_dir_limited};
use crate::imageio::{correlation_csv, read_image, write_grid, write_heatmap, write_image};
use crate::synth::{synth_dataset, SynthKind};

/// Command-line misuse: wrong flag values, missing files. Exits with 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

macro_rules! usage {
    ($($arg:tt)*) => { return Err(anyhow::Error::new(UsageError(format!($($arg)*)))) };
}

#[derive(Parser, Debug)]
#[command(
    name = "ufse",
    version,
    about = "Feed-forward image style transfer with decorrelated feature encoding"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train an encoder/decoder pair with content, style, and uncorrelation losses.
    Train(TrainArgs),
    /// Train the three-stage cascade (style taps 1, 1-2, 1-3).
    TrainCascade(TrainCascadeArgs),
    /// Stylize a content image with a style image.
    Stylize(StylizeArgs),
    /// Correlation heatmap and alive-channel ratio of encoded features.
    Analyze(AnalyzeArgs),
    /// Style/content loss as eliminated channel count grows.
    PruneSweep(PruneSweepArgs),
    /// Wall-clock comparison of the AdaIN and WCT alignment transforms.
    Bench(BenchArgs),
    /// Generate a synthetic desk-scale dataset.
    GenData(GenDataArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum Preset {
    Desk,
    Smoke,
    Paper,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ModeArg {
    Signed,
    Absolute,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON config file holding TrainConfig fields by name.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Baseline preset applied before config file and flags.
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    #[arg(long)]
    pub content_dir: Option<PathBuf>,
    #[arg(long)]
    pub style_dir: Option<PathBuf>,
    /// Output directory for checkpoints and history.csv.
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr_decoder: Option<f64>,
    #[arg(long)]
    pub lr_encoder: Option<f64>,
    #[arg(long)]
    pub lambda_content: Option<f64>,
    #[arg(long)]
    pub lambda_style: Option<f64>,
    #[arg(long)]
    pub lambda_uncorrelation: Option<f64>,
    #[arg(long, value_enum)]
    pub uncorrelation_mode: Option<ModeArg>,
    #[arg(long)]
    pub resize: Option<usize>,
    #[arg(long)]
    pub crop: Option<usize>,
    /// Block widths, comma separated (e.g. 16,32,64).
    #[arg(long)]
    pub widths: Option<String>,
    /// Checkpoint supplying externally trained loss-network weights.
    #[arg(long)]
    pub loss_net: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainCascadeArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Number of cascade stages (at most the style tap count).
    #[arg(long, default_value_t = 3)]
    pub stages: usize,
}

#[derive(Args, Debug)]
pub struct StylizeArgs {
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    #[arg(long)]
    pub decoder: Option<PathBuf>,
    /// Cascade run directory (stage1/, stage2/, ... from train-cascade).
    #[arg(long)]
    pub cascade: Option<PathBuf>,
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long)]
    pub style: PathBuf,
    #[arg(long, default_value = "stylized.png")]
    pub out: PathBuf,
    /// Style strength in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Keep-fraction of channel magnitude; the rest are zeroed.
    #[arg(long)]
    pub prune_fraction: Option<f64>,
    /// With --cascade, also write each stage's output next to --out.
    #[arg(long)]
    pub save_stages: bool,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub encoder: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Second image; the alive-channel ratio D then spans both encodings.
    #[arg(long)]
    pub style: Option<PathBuf>,
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PruneSweepArgs {
    #[arg(long)]
    pub encoder: PathBuf,
    #[arg(long)]
    pub decoder: PathBuf,
    #[arg(long)]
    pub loss_net: PathBuf,
    #[arg(long)]
    pub content_dir: PathBuf,
    #[arg(long)]
    pub style_dir: PathBuf,
    /// Content/style pairs used for calibration.
    #[arg(long, default_value_t = 4)]
    pub pairs: usize,
    /// Sweep points spread over 0..=C eliminated channels.
    #[arg(long, default_value_t = 9)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.8)]
    pub keep_fraction: f64,
    /// Output directory for sweep.csv.
    #[arg(long, default_value = "runs/prune")]
    pub out: PathBuf,
    /// Also write a horizontal grid of decoded outputs.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Export structurally pruned encoder/decoder checkpoints here.
    #[arg(long)]
    pub export_pruned: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// adain, wct, or both.
    #[arg(long, default_value = "both")]
    pub kind: String,
    /// Channel counts, comma separated.
    #[arg(long, default_value = "32,256")]
    pub channels: String,
    #[arg(long, default_value_t = 60)]
    pub height: usize,
    #[arg(long, default_value_t = 60)]
    pub width: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Thread count; values above 1 are labeled multi-threaded.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub kind: GenKind,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Base image side length; actual sizes vary around it.
    #[arg(long, default_value_t = 96)]
    pub size: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum GenKind {
    Content,
    Style,
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::TrainCascade(args) => cmd_train_cascade(args),
        Command::Stylize(args) => cmd_stylize(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::PruneSweep(args) => cmd_prune_sweep(args),
        Command::Bench(args) => cmd_bench(args),
        Command::GenData(args) => cmd_gen_data(args),
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        usage!("{what} {} does not exist", path.display());
    }
    Ok(())
}

fn load_network(path: &Path, what: &str) -> Result<Network<f32>> {
    require_file(path, what)?;
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let net = Checkpoint::from_bytes(&bytes)?.into_network()?;
    Ok(net)
}

fn load_encoder(path: &Path, what: &str) -> Result<Network<f32>> {
    let net = load_network(path, what)?;
    if net.kind != NetKind::Encoder {
        usage!("{what} {} is not an encoder checkpoint", path.display());
    }
    Ok(net)
}

fn load_decoder(path: &Path, what: &str) -> Result<Network<f32>> {
    let net = load_network(path, what)?;
    if net.kind != NetKind::Decoder {
        usage!("{what} {} is not a decoder checkpoint", path.display());
    }
    Ok(net)
}

fn save_network(path: &Path, net: &Network<f32>) -> Result<()> {
    fs::write(path, Checkpoint::from_network(net).to_bytes())
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Preset -> config file -> individual flags, later wins.
pub fn resolve_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match args.preset {
        Preset::Desk => TrainConfig::desk(),
        Preset::Smoke => TrainConfig::smoke(),
        Preset::Paper => TrainConfig::paper(),
    };
    if let Some(path) = &args.config {
        require_file(path, "config file")?;
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        cfg = match serde_json::from_str(&text) {
            Ok(cfg) => cfg,
            Err(e) => usage!("parsing config {}: {e}", path.display()),
        };
    }
    if let Some(v) = &args.content_dir {
        cfg.content_dir = v.display().to_string();
    }
    if let Some(v) = &args.style_dir {
        cfg.style_dir = v.display().to_string();
    }
    if let Some(v) = args.iterations {
        cfg.iterations = Some(v);
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
        if args.iterations.is_none() {
            cfg.iterations = None;
        }
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.lr_decoder {
        cfg.lr_decoder = v;
    }
    if let Some(v) = args.lr_encoder {
        cfg.lr_encoder = v;
    }
    if let Some(v) = args.lambda_content {
        cfg.weights.content = v;
    }
    if let Some(v) = args.lambda_style {
        cfg.weights.style = v;
    }
    if let Some(v) = args.lambda_uncorrelation {
        cfg.weights.uncorrelation = v;
    }
    if let Some(m) = args.uncorrelation_mode {
        cfg.uncorrelation_mode = match m {
            ModeArg::Signed => CorrelationMode::Signed,
            ModeArg::Absolute => CorrelationMode::Absolute,
        };
    }
    if let Some(v) = args.resize {
        cfg.resize_to = v;
    }
    if let Some(v) = args.crop {
        cfg.crop_to = v;
    }
    if let Some(widths) = &args.widths {
        let parsed: std::result::Result<Vec<usize>, _> =
            widths.split(',').map(|s| s.trim().parse::<usize>()).collect();
        match parsed {
            Ok(w) if !w.is_empty() => cfg.network.widths = w,
            _ => usage!("--widths expects comma-separated positive integers, got {widths}"),
        }
    }
    Ok(cfg)
}

fn history_line(r: &LossReport) -> String {
    format!(
        "{},{:.9e},{:.9e},{:.9e},{:.9e}\n",
        r.iteration, r.content, r.style, r.uncorrelation, r.total
    )
}

pub const HISTORY_HEADER: &str = "iteration,content,style,uncorrelation,total\n";

fn run_training(cfg: &TrainConfig, out_dir: &Path, loss_net: Option<&Network<f32>>) -> Result<()> {
    if cfg.content_dir.is_empty() || cfg.style_dir.is_empty() {
        usage!("--content-dir and --style-dir (or config fields) are required");
    }
    let contents = load_dir(Path::new(&cfg.content_dir))?;
    let styles = load_dir(Path::new(&cfg.style_dir))?;
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;

    let mut history = fs::File::create(out_dir.join("history.csv"))?;
    history.write_all(HISTORY_HEADER.as_bytes())?;
    let iterations = cfg.total_iterations(contents.len());
    let log_every = cfg.log_every.max(1);

    let mut on_report = |r: &LossReport| {
        let _ = history.write_all(history_line(r).as_bytes());
        if r.iteration % log_every == 0 || r.iteration + 1 == iterations {
            eprintln!(
                "iter {:>6}/{iterations}  content {:.4}  style {:.5}  uncorrelation {:.2}  total {:.4}",
                r.iteration, r.content, r.style, r.uncorrelation, r.total
            );
        }
    };
    let result = train_with_loss_net(cfg, &contents, &styles, loss_net, &mut on_report)?;

    save_network(&out_dir.join("encoder.ufse"), &result.encoder)?;
    save_network(&out_dir.join("decoder.ufse"), &result.decoder)?;
    save_network(&out_dir.join("lossnet.ufse"), &result.loss_net)?;
    fs::write(
        out_dir.join("config.json"),
        serde_json::to_string_pretty(cfg)?,
    )?;
    if let Some(reason) = result.aborted {
        bail!("training aborted ({reason}); last-good checkpoints written to {}",
            out_dir.display());
    }
    eprintln!(
        "wrote encoder.ufse, decoder.ufse, lossnet.ufse, history.csv to {}",
        out_dir.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(&args)?;
    let external = match &args.loss_net {
        Some(p) => Some(load_encoder(p, "loss network checkpoint")?),
        None => None,
    };
    run_training(&cfg, &args.out, external.as_ref())
}

fn cmd_train_cascade(args: TrainCascadeArgs) -> Result<()> {
    let base = resolve_train_config(&args.train)?;
    if args.stages == 0 || args.stages > base.network.style_tags.len() {
        usage!(
            "--stages must be in 1..={}, got {}",
            base.network.style_tags.len(),
            args.stages
        );
    }
    let external = match &args.train.loss_net {
        Some(p) => Some(load_encoder(p, "loss network checkpoint")?),
        None => None,
    };
    for k in 1..=args.stages {
        let cfg = cascade_stage_config(&base, k)?;
        let dir = args.train.out.join(format!("stage{k}"));
        eprintln!("=== cascade stage {k}/{} ===", args.stages);
        run_training(&cfg, &dir, external.as_ref())?;
    }
    Ok(())
}

fn load_cascade(dir: &Path) -> Result<Vec<(Network<f32>, Network<f32>)>> {
    let mut stages = Vec::new();
    for k in 1.. {
        let stage = dir.join(format!("stage{k}"));
        if !stage.is_dir() {
            break;
        }
        stages.push((
            load_encoder(&stage.join("encoder.ufse"), "cascade encoder")?,
            load_decoder(&stage.join("decoder.ufse"), "cascade decoder")?,
        ));
    }
    if stages.is_empty() {
        usage!("cascade directory {} holds no stage1/ checkpoint set", dir.display());
    }
    Ok(stages)
}

fn cmd_stylize(args: StylizeArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.alpha) {
        usage!("--alpha must be within [0, 1], got {}", args.alpha);
    }
    if let Some(f) = args.prune_fraction {
        if !(f > 0.0 && f <= 1.0) {
            usage!("--prune-fraction must be within (0, 1], got {f}");
        }
    }
    require_file(&args.content, "content image")?;
    require_file(&args.style, "style image")?;
    let content = read_image(&args.content)?;
    let style = read_image(&args.style)?;
    let opts = StylizeOpts {
        alpha: args.alpha,
        prune_fraction: args.prune_fraction,
        ..Default::default()
    };

    let out_img = if let Some(cascade_dir) = &args.cascade {
        let stages = load_cascade(cascade_dir)?;
        let outs = stylize_cascade(&stages, &content, &style, &opts)?;
        if args.save_stages {
            for (k, img) in outs.iter().enumerate() {
                let mut path = args.out.clone();
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "stylized".into());
                let ext = path
                    .extension()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "png".into());
                path.set_file_name(format!("{stem}-stage{}.{ext}", k + 1));
                write_image(&path, img)?;
            }
        }
        outs.into_iter().last().expect("at least one stage")
    } else {
        let (enc_path, dec_path) = match (&args.encoder, &args.decoder) {
            (Some(e), Some(d)) => (e, d),
            _ => usage!("either --cascade or both --encoder and --decoder are required"),
        };
        let enc = load_encoder(enc_path, "encoder checkpoint")?;
        let dec = load_decoder(dec_path, "decoder checkpoint")?;
        stylize(&enc, &dec, &content, &style, &opts)?
    };
    write_image(&args.out, &out_img)?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let enc = load_encoder(&args.encoder, "encoder checkpoint")?;
    require_file(&args.image, "image")?;
    let div = enc.config.downsample_factor();
    let (img, _, _) = pad_reflect_to_multiple(&read_image(&args.image)?, div)?;
    let feats = encode(&enc, &img)?;
    let content_feat = feats.content();
    let r = channel_correlation(content_feat)?;

    let second = match &args.style {
        Some(p) => {
            require_file(p, "style image")?;
            let (s, _, _) = pad_reflect_to_multiple(&read_image(p)?, div)?;
            Some(encode(&enc, &s)?)
        }
        None => None,
    };
    let d = match &second {
        Some(fs) => normalized_diagonal_sum(content_feat, fs.content())?,
        None => normalized_diagonal_sum(content_feat, content_feat)?,
    };

    println!("channels: {}", r.size());
    println!("mean_abs_offdiagonal: {:.6}", r.mean_abs_offdiag());
    println!("alive_channels: {}", r.alive_count());
    println!("normalized_diagonal_sum: {d:.6}");

    if let Some(path) = &args.heatmap {
        write_heatmap(path, &r)?;
        eprintln!("wrote {}", path.display());
    }
    if let Some(path) = &args.csv {
        fs::write(path, correlation_csv(&r))?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_prune_sweep(args: PruneSweepArgs) -> Result<()> {
    let enc = load_encoder(&args.encoder, "encoder checkpoint")?;
    let dec = load_decoder(&args.decoder, "decoder checkpoint")?;
    let ln = load_encoder(&args.loss_net, "loss network checkpoint")?;
    let contents = load_dir_limited(&args.content_dir, args.pairs)?;
    let styles = load_dir_limited(&args.style_dir, args.pairs)?;

    let report = prune_sweep(
        &enc,
        &dec,
        &ln,
        &contents,
        &styles,
        args.steps,
        args.keep_fraction,
        args.grid.is_some(),
    )?;

    fs::create_dir_all(&args.out)?;
    let mut csv = String::from("eliminated_count,style_loss,content_loss\n");
    for row in &report.rows {
        csv.push_str(&format!(
            "{},{:.9e},{:.9e}\n",
            row.eliminated, row.style_loss, row.content_loss
        ));
    }
    fs::write(args.out.join("sweep.csv"), csv)?;

    println!(
        "baseline: style {:.6e} content {:.6e}",
        report.rows[0].style_loss, report.rows[0].content_loss
    );
    println!(
        "keep-{:.0}%: eliminated ~{} channels, style {:.6e} content {:.6e}",
        report.keep_fraction * 100.0,
        report.keep_row.eliminated,
        report.keep_row.style_loss,
        report.keep_row.content_loss
    );
    println!(
        "aggregate keep set ({} of {} channels): {:?}",
        report.keep_set.len(),
        enc.config.bottleneck_channels(),
        report.keep_set
    );

    if let Some(grid_path) = &args.grid {
        let images: Vec<_> = report.decoded.iter().map(|(_, img)| {
            let mut img = img.clone();
            ufse_core::resample::clamp_unit(&mut img);
            img
        }).collect();
        write_grid(grid_path, &images)?;
        eprintln!("wrote {}", grid_path.display());
    }
    if let Some(dir) = &args.export_pruned {
        let (enc_p, dec_p) = export_pruned(&enc, &dec, &report.keep_set)?;
        fs::create_dir_all(dir)?;
        save_network(&dir.join("encoder.ufse"), &enc_p)?;
        save_network(&dir.join("decoder.ufse"), &dec_p)?;
        eprintln!(
            "wrote structurally pruned checkpoints ({} channels) to {}",
            report.keep_set.len(),
            dir.display()
        );
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let kinds: Vec<AlignmentKind> = match args.kind.as_str() {
        "adain" => vec![AlignmentKind::AdaIn],
        "wct" => vec![AlignmentKind::Wct],
        "both" => vec![AlignmentKind::AdaIn, AlignmentKind::Wct],
        other => usage!("--kind must be adain, wct, or both, got {other}"),
    };
    let channels: std::result::Result<Vec<usize>, _> = args
        .channels
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect();
    let channels = match channels {
        Ok(c) if !c.is_empty() => c,
        _ => usage!("--channels expects comma-separated positive integers"),
    };

    let mut results: Vec<BenchResult> = Vec::new();
    for &c in &channels {
        for &kind in &kinds {
            let r = bench_alignment(kind, c, args.height, args.width, args.trials, args.seed, args.threads)?;
            println!("{}", r.table_row());
            results.push(r);
        }
    }
    if args.threads > 1 {
        println!("note: multi-threaded run ({} threads)", args.threads);
    }
    if let Some(path) = &args.csv {
        let mut csv =
            String::from("kind,channels,height,width,trials,threads,mean_ms,median_ms,stddev_ms\n");
        for r in &results {
            csv.push_str(&r.csv_row());
            csv.push('\n');
        }
        fs::write(path, csv)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    if args.count == 0 {
        usage!("--count must be positive");
    }
    let kind = match args.kind {
        GenKind::Content => SynthKind::Content,
        GenKind::Style => SynthKind::Style,
    };
    fs::create_dir_all(&args.out)?;
    let images = synth_dataset(kind, args.count, args.size, args.seed);
    for (i, img) in images.iter().enumerate() {
        write_image(&args.out.join(format!("img_{i:04}.png")), img)?;
    }
    eprintln!("wrote {} images to {}", args.count, args.out.display());
    Ok(())
}
