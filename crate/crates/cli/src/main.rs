//! Single-binary CLI wiring the toolkit into reproducible pipelines.
//!
//! Exit codes: 0 success, 1 validation error, 2 i/o error. Every random
//! choice derives from --seed, and outputs are byte-identical for a fixed
//! seed regardless of --threads.

mod util;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use tubevox::duct::{screen_duct, DEFAULT_REGION_EDGE, DEFAULT_SCALE_THRESHOLD};
use tubevox::edt::{distance_transform, quantize, DistanceMap, DistanceUnit};
use tubevox::loss::{total_loss, DEFAULT_LAMBDA};
use tubevox::metrics::{dsc, mean_surface_distance};
use tubevox::phantom::{generate_phantom, synth_fields, PhantomSpec, SynthNoise};
use tubevox::refine::{
    gar_pipeline, GarParams, DEFAULT_TP, DEFAULT_TR, DEFAULT_TRUNC_MULTIPLIER,
};
use tubevox::volume::{load_volume, save_volume, Volume, DEFAULT_HU_HI, DEFAULT_HU_LO};

use util::*;

#[derive(Parser)]
#[command(name = "tubevox", version, about = "Tubular-structure voxel pipelines")]
struct Cli {
    /// Print the default parameter values as JSON and exit.
    #[arg(long)]
    print_defaults: bool,

    /// JSON file with parameter defaults; explicit flags win over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread count (0 = automatic). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Clamp CT intensities to a HU window and normalize to zero mean,
    /// unit variance.
    Preprocess(PreprocessArgs),
    /// Distance transform of a binary label volume.
    Edt(EdtArgs),
    /// Quantize a voxel-unit distance volume into scale classes.
    Quantize(QuantizeArgs),
    /// Evaluate the classification and distance losses on saved fields.
    LossEval(LossEvalArgs),
    /// Geometry-aware refinement of probability and scale fields.
    Refine(RefineArgs),
    /// DSC and mean surface distance between two masks, as CSV.
    Metrics(MetricsArgs),
    /// Generate a phantom with synthetic network outputs.
    Phantom(PhantomArgs),
    /// Dilated-duct screening and candidate region extraction.
    DuctCandidates(DuctArgs),
    /// Grid sweep over the refinement thresholds, emitting CSV.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    /// Input CT volume (i16 or f32 sidecar).
    #[arg(long)]
    input: PathBuf,
    /// Lower truncation bound in Hounsfield units.
    #[arg(long)]
    hu_lo: Option<f64>,
    /// Upper truncation bound in Hounsfield units.
    #[arg(long)]
    hu_hi: Option<f64>,
    /// Output normalized f32 volume.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EdtArgs {
    /// Input label volume (u8 sidecar).
    #[arg(long)]
    label: PathBuf,
    /// Output distance volume (f32 sidecar).
    #[arg(long)]
    out: PathBuf,
    /// Distances in millimetres instead of voxel units.
    #[arg(long)]
    mm: bool,
}

#[derive(Args)]
struct QuantizeArgs {
    /// Input voxel-unit distance volume (f32 sidecar).
    #[arg(long)]
    distance: PathBuf,
    /// Number of scale classes.
    #[arg(long)]
    k: Option<u16>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LossEvalArgs {
    /// Foreground probability volume (f32).
    #[arg(long)]
    p: PathBuf,
    /// Stacked scale probability volume (f32, k slabs along z).
    #[arg(long)]
    g: PathBuf,
    /// Ground-truth label volume (u8).
    #[arg(long)]
    label: PathBuf,
    /// Scale class volume (u8 or i16).
    #[arg(long)]
    z: PathBuf,
    #[arg(long)]
    k: Option<u16>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Write the JSON breakdown here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    p: PathBuf,
    #[arg(long)]
    g: PathBuf,
    #[arg(long)]
    k: Option<u16>,
    /// Pseudo-skeleton threshold.
    #[arg(long)]
    tp: Option<f64>,
    /// Binarization threshold on the refined field.
    #[arg(long)]
    tr: Option<f64>,
    /// Gaussian truncation multiplier (support = multiplier * sigma).
    #[arg(long)]
    trunc_sigma: Option<f64>,
    /// Directory for mask/skeleton/scales/soft volumes.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Case identifier for the CSV row.
    #[arg(long, default_value = "case")]
    id: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PhantomArgs {
    /// Phantom spec JSON.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    k: Option<u16>,
    /// Boundary erosion depth of the synthetic probability ramp.
    #[arg(long)]
    boundary_sigma: Option<f64>,
    /// Fraction of probability voxels replaced with uniform noise.
    #[arg(long)]
    flip_rate: Option<f64>,
    /// Gaussian blur of the one-hot scale rows, in class units.
    #[arg(long)]
    class_blur: Option<f64>,
    /// Directory for label/skeleton/scales/p/g volumes.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DuctArgs {
    /// Predicted duct mask (u8).
    #[arg(long)]
    mask: PathBuf,
    /// Predicted scale volume (u8 or i16, classes 1..=k).
    #[arg(long)]
    scales: PathBuf,
    /// Dilation threshold on the largest scale (strict).
    #[arg(long)]
    ts: Option<f64>,
    /// Candidate region edge in voxels.
    #[arg(long)]
    edge: Option<usize>,
    /// Optional exclusion mask; endpoints inside it produce no candidate.
    #[arg(long)]
    exclude: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Phantom spec JSON; mutually exclusive with --p/--g/--truth.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    p: Option<PathBuf>,
    #[arg(long)]
    g: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    k: Option<u16>,
    #[arg(long)]
    boundary_sigma: Option<f64>,
    #[arg(long)]
    flip_rate: Option<f64>,
    #[arg(long)]
    class_blur: Option<f64>,
    #[arg(long)]
    trunc_sigma: Option<f64>,
    /// Comma-separated skeleton thresholds.
    #[arg(long)]
    tp_list: Option<String>,
    /// Comma-separated binarization thresholds.
    #[arg(long)]
    tr_list: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Optional parameter values loaded from --config. Flags win over these,
/// these win over the built-in defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    k: Option<u16>,
    tp: Option<f64>,
    tr: Option<f64>,
    ts: Option<f64>,
    edge: Option<usize>,
    lambda: Option<f64>,
    trunc_sigma: Option<f64>,
    hu_lo: Option<f64>,
    hu_hi: Option<f64>,
    seed: Option<u64>,
    threads: Option<usize>,
    boundary_sigma: Option<f64>,
    flip_rate: Option<f64>,
    class_blur: Option<f64>,
}

#[derive(Serialize)]
struct Defaults {
    tp: f64,
    tr: f64,
    lambda: f64,
    ts: f64,
    edge: usize,
    trunc_sigma: f64,
    hu_lo: f64,
    hu_hi: f64,
}

impl Defaults {
    fn current() -> Self {
        Defaults {
            tp: DEFAULT_TP,
            tr: DEFAULT_TR,
            lambda: DEFAULT_LAMBDA,
            ts: DEFAULT_SCALE_THRESHOLD,
            edge: DEFAULT_REGION_EDGE,
            trunc_sigma: DEFAULT_TRUNC_MULTIPLIER,
            hu_lo: DEFAULT_HU_LO,
            hu_hi: DEFAULT_HU_HI,
        }
    }
}

enum CliError {
    Validation(String),
    Io(String),
}

impl From<tubevox::Error> for CliError {
    fn from(e: tubevox::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn resolve<T: Copy>(flag: Option<T>, cfg: Option<T>, default: T) -> T {
    flag.or(cfg).unwrap_or(default)
}

fn require<T: Copy>(flag: Option<T>, cfg: Option<T>, name: &str) -> CliResult<T> {
    flag.or(cfg)
        .ok_or_else(|| CliError::Validation(format!("missing required parameter {name}")))
}

fn load_config(path: Option<&Path>) -> CliResult<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("malformed config {}: {e}", path.display())))
}

fn write_text(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| CliError::Io(format!("cannot write stdout: {e}")))
        }
    }
}

fn main() -> ExitCode {
    // uniform exit codes: clap usage problems count as validation errors
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if cli.print_defaults {
        let json = serde_json::to_string_pretty(&Defaults::current()).expect("static struct");
        return write_text(None, &format!("{json}\n"));
    }
    let cfg = load_config(cli.config.as_deref())?;
    let threads = resolve(cli.threads, cfg.threads, 0);
    if threads > 0 {
        // ignore the error if a pool already exists (e.g. repeated calls in tests)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let seed = resolve(cli.seed, cfg.seed, 0);

    let Some(command) = cli.command else {
        return Err(CliError::Validation(
            "no subcommand given; see --help".into(),
        ));
    };
    match command {
        Command::Preprocess(args) => cmd_preprocess(args, &cfg),
        Command::Edt(args) => cmd_edt(args),
        Command::Quantize(args) => cmd_quantize(args, &cfg),
        Command::LossEval(args) => cmd_loss_eval(args, &cfg),
        Command::Refine(args) => cmd_refine(args, &cfg),
        Command::Metrics(args) => cmd_metrics(args),
        Command::Phantom(args) => cmd_phantom(args, &cfg, seed),
        Command::DuctCandidates(args) => cmd_duct(args, &cfg),
        Command::Sweep(args) => cmd_sweep(args, &cfg, seed),
    }
}

fn cmd_preprocess(args: PreprocessArgs, cfg: &ConfigFile) -> CliResult<()> {
    let lo = resolve(args.hu_lo, cfg.hu_lo, DEFAULT_HU_LO);
    let hi = resolve(args.hu_hi, cfg.hu_hi, DEFAULT_HU_HI);
    let header = tubevox::volume::read_header(&args.input)?;
    let out = match header.dtype {
        tubevox::volume::Dtype::I16 => {
            tubevox::volume::preprocess_ct(&load_volume::<i16>(&args.input)?, lo, hi)?
        }
        tubevox::volume::Dtype::F32 => {
            tubevox::volume::preprocess_ct(&load_volume::<f32>(&args.input)?, lo, hi)?
        }
        tubevox::volume::Dtype::U8 => {
            return Err(CliError::Validation(
                "preprocess expects an i16 or f32 CT volume".into(),
            ))
        }
    };
    save_volume(&out, &args.out)?;
    Ok(())
}

fn cmd_edt(args: EdtArgs) -> CliResult<()> {
    let label = load_label(&args.label)?;
    let unit = if args.mm {
        DistanceUnit::Millimeter
    } else {
        DistanceUnit::Voxel
    };
    let d = distance_transform(&label, unit);
    let vol = Volume::new(
        label.dims(),
        label.spacing(),
        d.data().to_vec(),
    )?;
    save_volume(&vol, &args.out)?;
    Ok(())
}

fn cmd_quantize(args: QuantizeArgs, cfg: &ConfigFile) -> CliResult<()> {
    let k = require(args.k, cfg.k, "--k")?;
    let vol: Volume<f32> = load_volume(&args.distance)?;
    let d = DistanceMap::from_raw(
        vol.dims(),
        vol.spacing(),
        DistanceUnit::Voxel,
        vol.into_data(),
    )?;
    let z = quantize(&d, k)?;
    save_classes(
        z.geometry().dims(),
        z.geometry().spacing(),
        k,
        z.data(),
        &args.out,
    )?;
    Ok(())
}

fn cmd_loss_eval(args: LossEvalArgs, cfg: &ConfigFile) -> CliResult<()> {
    let k = require(args.k, cfg.k, "--k")?;
    let lambda = resolve(args.lambda, cfg.lambda, DEFAULT_LAMBDA);
    let p = load_probability(&args.p)?;
    let g = load_scale_probability(&args.g, k as usize)?;
    let label = load_label(&args.label)?;
    let z = load_scale_class_map(&args.z, k)?;
    let breakdown = total_loss(&p, &g, &label, &z, lambda)?;
    let json = serde_json::to_string_pretty(&breakdown).expect("plain struct");
    write_text(args.out.as_deref(), &format!("{json}\n"))
}

#[derive(Serialize)]
struct RefineSummary {
    mask_voxels: usize,
    skeleton_voxels: usize,
    max_scale: u16,
}

fn cmd_refine(args: RefineArgs, cfg: &ConfigFile) -> CliResult<()> {
    let k = require(args.k, cfg.k, "--k")?;
    let params = GarParams::new(
        resolve(args.tp, cfg.tp, DEFAULT_TP),
        resolve(args.tr, cfg.tr, DEFAULT_TR),
        resolve(args.trunc_sigma, cfg.trunc_sigma, DEFAULT_TRUNC_MULTIPLIER),
    )?;
    let p = load_probability(&args.p)?;
    let g = load_scale_probability(&args.g, k as usize)?;
    let out = gar_pipeline(&p, &g, &params)?;

    fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", args.out_dir.display())))?;
    let dir = &args.out_dir;
    save_label(&out.mask, &dir.join("mask.json"))?;
    save_label(&out.skeleton.to_label_map(), &dir.join("skeleton.json"))?;
    let sg = out.scales.geometry();
    save_classes(sg.dims(), sg.spacing(), out.scales.k(), out.scales.data(), &dir.join("scales.json"))?;
    save_volume(&out.soft.to_f32_volume(), dir.join("soft.json"))?;

    let max_scale = out
        .mask
        .data()
        .iter()
        .zip(out.scales.data())
        .filter(|(&m, _)| m == 1)
        .map(|(_, &z)| z)
        .max()
        .unwrap_or(0);
    let summary = RefineSummary {
        mask_voxels: out.mask.foreground_count(),
        skeleton_voxels: out.skeleton.count(),
        max_scale,
    };
    let json = serde_json::to_string_pretty(&summary).expect("plain struct");
    write_text(None, &format!("{json}\n"))
}

fn cmd_metrics(args: MetricsArgs) -> CliResult<()> {
    let pred = load_label(&args.pred)?;
    let truth = load_label(&args.truth)?;
    let score = dsc(&pred, &truth)?;
    let msd = match mean_surface_distance(&pred, &truth) {
        Ok(v) => format!("{v:.6}"),
        Err(tubevox::Error::DegenerateInput(_)) => "nan".to_string(),
        Err(e) => return Err(e.into()),
    };
    let text = format!("case_id,dsc,msd_mm\n{},{score:.6},{msd}\n", args.id);
    write_text(args.out.as_deref(), &text)
}

fn cmd_phantom(args: PhantomArgs, cfg: &ConfigFile, seed: u64) -> CliResult<()> {
    let k = require(args.k, cfg.k, "--k")?;
    let noise = SynthNoise {
        boundary_sigma: resolve(args.boundary_sigma, cfg.boundary_sigma, 0.0),
        flip_rate: resolve(args.flip_rate, cfg.flip_rate, 0.0),
        class_blur: resolve(args.class_blur, cfg.class_blur, 0.0),
        seed,
    };
    let text = fs::read_to_string(&args.spec)
        .map_err(|e| CliError::Io(format!("cannot read spec {}: {e}", args.spec.display())))?;
    let spec: PhantomSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("malformed phantom spec: {e}")))?;
    let ph = generate_phantom(&spec)?;
    let (p, g) = synth_fields(&ph, &noise, k)?;

    fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", args.out_dir.display())))?;
    let dir = &args.out_dir;
    save_label(&ph.label, &dir.join("label.json"))?;
    save_label(&ph.skeleton_label(), &dir.join("skeleton.json"))?;
    let z = quantize(&distance_transform(&ph.label, DistanceUnit::Voxel), k)?;
    let zg = z.geometry();
    save_classes(zg.dims(), zg.spacing(), k, z.data(), &dir.join("scales.json"))?;
    save_probability(&p, &dir.join("p.json"))?;
    save_scale_probability(&g, &dir.join("g.json"))?;
    Ok(())
}

/// The documented output schema of `duct-candidates`.
#[derive(Serialize)]
struct DuctReport {
    dilated: bool,
    #[serde(rename = "N")]
    n: usize,
    max_scale: u16,
    candidates: Vec<tubevox::duct::CandidateBox>,
}

fn cmd_duct(args: DuctArgs, cfg: &ConfigFile) -> CliResult<()> {
    let ts = resolve(args.ts, cfg.ts, DEFAULT_SCALE_THRESHOLD);
    let edge = resolve(args.edge, cfg.edge, DEFAULT_REGION_EDGE);
    let mask = load_label(&args.mask)?;
    let scales = load_scale_map(&args.scales)?;
    let exclude = match &args.exclude {
        Some(path) => Some(load_label(path)?),
        None => None,
    };
    let finding = screen_duct(&mask, &scales, ts, edge, exclude.as_ref())?;
    let report = DuctReport {
        dilated: finding.dilated,
        n: finding.n_voxels,
        max_scale: finding.max_scale,
        candidates: finding.candidates,
    };
    let json = serde_json::to_string_pretty(&report).expect("plain struct");
    write_text(args.out.as_deref(), &format!("{json}\n"))
}

fn parse_list(text: &str, name: &str) -> CliResult<Vec<f64>> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let v: f64 = part
            .trim()
            .parse()
            .map_err(|_| CliError::Validation(format!("{name}: cannot parse {part:?}")))?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(CliError::Validation(format!("{name} is empty")));
    }
    Ok(out)
}

fn default_tr_list() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

fn cmd_sweep(args: SweepArgs, cfg: &ConfigFile, seed: u64) -> CliResult<()> {
    let k = require(args.k, cfg.k, "--k")?;
    let trunc = resolve(args.trunc_sigma, cfg.trunc_sigma, DEFAULT_TRUNC_MULTIPLIER);
    let tp_list = match &args.tp_list {
        Some(text) => parse_list(text, "--tp-list")?,
        None => vec![0.5, 0.9, 0.95, 0.98],
    };
    let tr_list = match &args.tr_list {
        Some(text) => parse_list(text, "--tr-list")?,
        None => default_tr_list(),
    };

    let (p, g, truth) = match (&args.spec, &args.p, &args.g, &args.truth) {
        (Some(spec_path), None, None, None) => {
            let noise = SynthNoise {
                boundary_sigma: resolve(args.boundary_sigma, cfg.boundary_sigma, 0.0),
                flip_rate: resolve(args.flip_rate, cfg.flip_rate, 0.0),
                class_blur: resolve(args.class_blur, cfg.class_blur, 0.0),
                seed,
            };
            let text = fs::read_to_string(spec_path).map_err(|e| {
                CliError::Io(format!("cannot read spec {}: {e}", spec_path.display()))
            })?;
            let spec: PhantomSpec = serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("malformed phantom spec: {e}")))?;
            let ph = generate_phantom(&spec)?;
            let (p, g) = synth_fields(&ph, &noise, k)?;
            (p, g, ph.label)
        }
        (None, Some(pp), Some(gp), Some(tp)) => {
            let p = load_probability(pp)?;
            let g = load_scale_probability(gp, k as usize)?;
            let truth = load_label(tp)?;
            (p, g, truth)
        }
        _ => {
            return Err(CliError::Validation(
                "sweep needs either --spec or all of --p, --g, --truth".into(),
            ))
        }
    };

    let mut csv = String::from("tp,tr,dsc,msd_mm\n");
    for &tp in &tp_list {
        for &tr in &tr_list {
            let params = GarParams::new(tp, tr, trunc)?;
            let out = gar_pipeline(&p, &g, &params)?;
            let score = dsc(&out.mask, &truth)?;
            let msd = match mean_surface_distance(&out.mask, &truth) {
                Ok(v) => format!("{v:.6}"),
                Err(tubevox::Error::DegenerateInput(_)) => "nan".to_string(),
                Err(e) => return Err(e.into()),
            };
            csv.push_str(&format!("{tp},{tr},{score:.6},{msd}\n"));
        }
    }
    write_text(args.out.as_deref(), &csv)
}
