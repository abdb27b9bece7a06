//! Batch driver for the two-stage depth completion pipeline.
//!
//! Exit codes: 0 on success, 1 on domain errors (bad inputs, failed checks),
//! 2 on usage errors.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coarsefine::depth_io::{
    colorize, colorize_signed, read_color_png, read_depth_png, synth_scene, write_color_png,
    write_depth_png, DepthMap, SYNTH_MAX_DEPTH_M,
};
use coarsefine::eval::{
    ablation_run, build_dataset, compute_metrics, median_rmse, AblationSetup, AblationVariant,
    LossConfig,
};
use coarsefine::fusion::FusionConfig;
use coarsefine::gradcheck;
use coarsefine::numerics::Tensor3;
use coarsefine::refine::{
    forward, init_weights, load_weights, parse_kv, save_weights, train_toy, RefineNetConfig,
    TrainConfig, TrainSample,
};
use coarsefine::sparse::{sample_sparse, sparse_to_coarse, CoarseSource};
use coarsefine::{Error, Result};

const GRADCHECK_TOL: f64 = 1e-5;

#[derive(Parser)]
#[command(name = "coarsefine", version, about = "Sparse-to-coarse / coarse-to-fine depth completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic color/depth scene pairs.
    Synth(SynthArgs),
    /// Subsample a dense depth map into a sparse one.
    Sample(SampleArgs),
    /// Fill a sparse depth map into a coarse dense one.
    Interpolate(InterpolateArgs),
    /// Train the refinement network on a directory of synthetic scenes.
    Train(TrainArgs),
    /// Run sparse -> coarse -> fine on one image.
    Infer(InferArgs),
    /// Compare a predicted depth map to ground truth.
    Eval(EvalArgs),
    /// Run the ablation study on synthetic data.
    Ablate(AblateArgs),
    /// Run the finite-difference gradient suites.
    Gradcheck(GradcheckArgs),
    /// Render a depth map as a color PNG.
    Colorize(ColorizeArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Scene size as HEIGHTxWIDTH.
    #[arg(long, default_value = "96x128", value_parser = parse_size)]
    size: (usize, usize),
}

#[derive(Args)]
struct SampleArgs {
    /// Dense depth PNG to sample from.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 500)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output sparse depth PNG.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InterpolateArgs {
    /// Sparse depth PNG.
    #[arg(long)]
    sparse: PathBuf,
    /// Coarse backend: `nn` or `file:PATH`.
    #[arg(long, default_value = "nn")]
    coarse: String,
    /// Output coarse depth PNG.
    #[arg(long)]
    out: PathBuf,
}

/// Network and fusion settings shared by train and infer. Any of these may
/// also come from `--config`; flags win.
#[derive(Args, Clone, Default)]
struct NetArgs {
    /// Plain-text key=value file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Ablation variant that fixes the network layout.
    #[arg(long)]
    variant: Option<AblationVariant>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding image_NNNN.png / depth_NNNN.png pairs from `synth`.
    #[arg(long)]
    data: PathBuf,
    /// Output weight file.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    net: NetArgs,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Loss exponent, 1 or 2.
    #[arg(long)]
    p: Option<LossConfig>,
    #[arg(long)]
    batch: Option<usize>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    image: PathBuf,
    /// Sparse depth PNG.
    #[arg(long)]
    sparse: PathBuf,
    /// Trained weights; a freshly initialized network is used when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Coarse backend: `nn` or `file:PATH`.
    #[arg(long)]
    coarse: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    net: NetArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// Comma-separated variants; all of them when omitted.
    #[arg(long, value_delimiter = ',')]
    variant: Vec<AblationVariant>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    /// Dataset seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Optional file receiving the manifest and results.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ColorizeArgs {
    /// Depth PNG to render.
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    min: f64,
    #[arg(long, default_value_t = SYNTH_MAX_DEPTH_M)]
    max: f64,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("size {s:?} is not HEIGHTxWIDTH"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("size {s:?}: {e}"));
    Ok((parse(h)?, parse(w)?))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Sample(a) => sample(a),
        Command::Interpolate(a) => interpolate(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Colorize(a) => run_colorize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

fn scene_path(dir: &Path, kind: &str, i: usize) -> PathBuf {
    dir.join(format!("{kind}_{i:04}.png"))
}

fn synth(a: SynthArgs) -> Result<()> {
    create_dir(&a.out)?;
    let (h, w) = a.size;
    for i in 0..a.count {
        let (image, depth) = synth_scene(a.seed.wrapping_mul(1_000_003).wrapping_add(i as u64), h, w)?;
        write_color_png(scene_path(&a.out, "image", i), &image)?;
        write_depth_png(scene_path(&a.out, "depth", i), &depth)?;
    }
    println!("wrote {} scenes to {}", a.count, a.out.display());
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let gt = read_depth_png(&a.gt)?;
    let sparse = sample_sparse(&gt, a.points, a.seed);
    write_depth_png(&a.out, &sparse)?;
    println!("kept {} of {} valid pixels", sparse.valid_count(), gt.valid_count());
    Ok(())
}

fn interpolate(a: InterpolateArgs) -> Result<()> {
    let sparse = read_depth_png(&a.sparse)?;
    let source: CoarseSource = a.coarse.parse()?;
    let (h, w) = sparse.dims();
    let coarse = sparse_to_coarse(&sparse, &coarsefine::depth_io::ColorImage::black(h, w), &source)?;
    write_depth_png(&a.out, &coarse)
}

/// Settings resolved from an optional config file and flags.
struct Resolved {
    net: RefineNetConfig,
    fusion: FusionConfig,
    extra: BTreeMap<String, String>,
}

const NETWORK_KEYS: [&str; 12] = [
    "stem_channels",
    "stem_kernel",
    "blocks",
    "decoder",
    "head_kernel",
    "encoders",
    "shuffle",
    "fusion",
    "residual",
    "sparse_depth_input",
    "depth_scale",
    "seed",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("config key {key}: cannot parse {value:?}: {e}")))
}

fn resolve(args: &NetArgs) -> Result<Resolved> {
    let mut all = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            parse_kv(&text)?
        }
        None => BTreeMap::new(),
    };
    let mut net_text = String::new();
    for key in NETWORK_KEYS {
        if let Some(v) = all.remove(key) {
            net_text.push_str(&format!("{key}={v}\n"));
        }
    }
    let mut net = RefineNetConfig::from_kv(&net_text)?;
    if let Some(v) = args.variant.or(all.remove("variant").map(|v| v.parse::<AblationVariant>()).transpose()?) {
        net = v.apply(&net);
    }
    if let Some(seed) = args.seed {
        net.seed = seed;
    }
    let defaults = FusionConfig::default();
    let window = match (args.window, all.remove("window")) {
        (Some(v), _) => v,
        (None, Some(v)) => parse_value("window", &v)?,
        (None, None) => defaults.window(),
    };
    let omega = match (args.omega, all.remove("omega")) {
        (Some(v), _) => v,
        (None, Some(v)) => parse_value("omega", &v)?,
        (None, None) => defaults.omega(),
    };
    let sigma = match (args.sigma, all.remove("sigma")) {
        (Some(v), _) => v,
        (None, Some(v)) => parse_value("sigma", &v)?,
        (None, None) => defaults.sigma(),
    };
    Ok(Resolved {
        net,
        fusion: FusionConfig::new(window, omega, sigma)?,
        extra: all,
    })
}

/// Flag value if given, else the config value, else the default.
fn pick<T: std::str::FromStr>(
    flag: Option<T>,
    extra: &mut BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let from_file = extra.remove(key);
    match (flag, from_file) {
        (Some(v), _) => Ok(v),
        (None, Some(v)) => parse_value(key, &v),
        (None, None) => Ok(default),
    }
}

fn reject_unknown(extra: &BTreeMap<String, String>) -> Result<()> {
    match extra.keys().next() {
        Some(k) => Err(Error::Config(format!("unknown config key {k:?}"))),
        None => Ok(()),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let Resolved { net, fusion, mut extra } = resolve(&a.net)?;
    let defaults = TrainConfig::default();
    let points = pick(a.points, &mut extra, "points", 500)?;
    let coarse: CoarseSource = pick(None, &mut extra, "coarse", "nn".to_string())?.parse()?;
    let decay_every: usize = pick(None, &mut extra, "decay_every", defaults.decay_every.unwrap_or(0))?;
    let batch: usize = pick(a.batch, &mut extra, "batch_size", 0)?;
    let tc = TrainConfig {
        epochs: pick(a.epochs, &mut extra, "epochs", defaults.epochs)?,
        learning_rate: pick(a.lr, &mut extra, "lr", defaults.learning_rate)?,
        decay_every: (decay_every > 0).then_some(decay_every),
        decay_factor: pick(None, &mut extra, "decay_factor", defaults.decay_factor)?,
        batch_size: (batch > 0).then_some(batch),
        weight_decay: pick(None, &mut extra, "weight_decay", defaults.weight_decay)?,
        loss: pick(a.p, &mut extra, "p", defaults.loss)?,
        seed: net.seed,
    };
    reject_unknown(&extra)?;

    let mut samples = Vec::new();
    for i in 0.. {
        let (img_path, gt_path) = (scene_path(&a.data, "image", i), scene_path(&a.data, "depth", i));
        if !img_path.exists() {
            break;
        }
        let image = read_color_png(&img_path)?;
        let gt = read_depth_png(&gt_path)?;
        let sparse = sample_sparse(&gt, points, net.seed ^ i as u64);
        let depth = if net.sparse_depth_input {
            sparse
        } else {
            sparse_to_coarse(&sparse, &image, &coarse)?
        };
        samples.push(TrainSample { image, depth, gt });
    }
    if samples.is_empty() {
        return Err(Error::Config(format!("no image_0000.png found in {}", a.data.display())));
    }
    let (weights, history) = train_toy(&samples, &net, &fusion, &tc)?;
    for (epoch, loss) in history.iter().enumerate() {
        println!("epoch {:>4} loss {loss:.6}", epoch + 1);
    }
    save_weights(&weights, &a.out)?;
    println!("trained on {} scenes, weights written to {}", samples.len(), a.out.display());
    Ok(())
}

/// Writes a single-channel field as a little-endian float64 `.npy` array.
fn write_npy(path: &Path, field: &Tensor3) -> Result<()> {
    let mut header = format!(
        "{{'descr': '<f8', 'fortran_order': False, 'shape': ({}, {}), }}",
        field.height(),
        field.width()
    );
    // magic (6) + version (2) + header length (2) + header must be a multiple of 64
    let total = 10 + header.len() + 1;
    header.push_str(&" ".repeat(total.next_multiple_of(64) - total));
    header.push('\n');
    let mut bytes = b"\x93NUMPY\x01\x00".to_vec();
    bytes.extend_from_slice(&(header.len() as u16).to_le_bytes());
    bytes.extend_from_slice(header.as_bytes());
    for v in field.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", path.display())))?;
    f.write_all(&bytes)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn infer(a: InferArgs) -> Result<()> {
    let Resolved { net, fusion, mut extra } = resolve(&a.net)?;
    let coarse_src: CoarseSource = pick(a.coarse, &mut extra, "coarse", "nn".to_string())?.parse()?;
    reject_unknown(&extra)?;
    let weights = match &a.weights {
        Some(p) => load_weights(p)?,
        None => init_weights(&net)?,
    };
    let image = read_color_png(&a.image)?;
    let sparse = read_depth_png(&a.sparse)?;
    let coarse = sparse_to_coarse(&sparse, &image, &coarse_src)?;
    let input = if weights.config.sparse_depth_input { &sparse } else { &coarse };
    let out = forward(&image, input, &weights, &fusion)?;

    create_dir(&a.out)?;
    write_depth_png(a.out.join("coarse.png"), &coarse)?;
    write_npy(&a.out.join("residual.npy"), &out.d_r)?;
    write_color_png(a.out.join("residual.png"), &colorize_signed(&out.d_r)?)?;
    write_depth_png(a.out.join("output.png"), &out.d_o)?;
    println!(
        "wrote coarse.png, residual.npy, residual.png, output.png to {} ({} clamped pixels, max |d_r| {:.4} m)",
        a.out.display(),
        out.clamped.len(),
        out.d_r.max_abs()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let pred = read_depth_png(&a.pred)?;
    let gt = read_depth_png(&a.gt)?;
    print!("{}", compute_metrics(&pred, &gt)?.to_kv());
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let mut setup = AblationSetup::default();
    if let Some(n) = a.scenes {
        setup.train_scenes = n * setup.train_scenes / setup.scenes;
        setup.scenes = n;
    }
    if let Some(e) = a.epochs {
        setup.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        setup.train.learning_rate = lr;
    }
    if let Some(p) = a.points {
        setup.points = p;
    }
    if let Some(s) = a.seed {
        setup.data_seed = s;
    }
    setup.validate()?;
    let variants = if a.variant.is_empty() { AblationVariant::ALL.to_vec() } else { a.variant };
    let dataset = build_dataset(&setup)?;
    let mut text = setup.manifest();
    print!("{text}");
    for v in variants {
        let reports = ablation_run(v, &dataset, &a.seeds, &setup)?;
        let per_seed: Vec<String> = reports.iter().map(|r| format!("{:.2}", r.rmse_mm)).collect();
        let line = format!(
            "{v}: median_rmse_mm={:.2} per_seed=[{}]\n",
            median_rmse(&reports)?,
            per_seed.join(", ")
        );
        print!("{line}");
        text.push_str(&line);
    }
    if let Some(path) = &a.out {
        fs::write(path, text).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs) -> Result<()> {
    let reports = gradcheck::run_all(a.seed)?;
    let mut failed = Vec::new();
    for r in &reports {
        println!(
            "{:<40} max_rel_error={:.3e} checked={} skipped={}",
            r.name, r.max_rel_error, r.checked, r.skipped
        );
        if !r.passes(GRADCHECK_TOL) {
            failed.push(r.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "gradient checks above {GRADCHECK_TOL:e}: {}",
            failed.join(", ")
        )))
    }
}

fn run_colorize(a: ColorizeArgs) -> Result<()> {
    let depth: DepthMap = read_depth_png(&a.depth)?;
    write_color_png(&a.out, &colorize(&depth, a.min, a.max)?)
}
