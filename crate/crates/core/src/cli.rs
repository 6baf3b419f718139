//! The `ada` command-line tool.

use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use image::RgbImage;
use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerState, Heuristic, OverfitStats, UpdateOutcome};
use crate::error::AdaError;
use crate::gradcheck::{gradcheck, GradcheckOptions, DEFAULT_STEP};
use crate::image::ImageBatch;
use crate::leakage::{
    build_group_operator, build_line_operator, dft_zero_check, gated_uniform_mixture,
    null_space_witness, Group, MixtureSpec, DEFAULT_TOL,
};
use crate::pipeline::{augment, AugmentRecord, Categories, PipelineConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_LEAK: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

impl From<AdaError> for CliError {
    fn from(e: AdaError) -> Self {
        match e {
            AdaError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn data_err(context: impl std::fmt::Display) -> impl FnOnce(std::io::Error) -> CliError {
    move |e| CliError::Data(format!("{context}: {e}"))
}

#[derive(Parser, Debug)]
#[command(name = "ada", version, about = "Adaptive discriminator augmentation tools")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Augment PNG images and dump the sampled parameters
    Apply(ApplyArgs),
    /// Replay controller updates from logged discriminator statistics
    ControllerSim(ControllerSimArgs),
    /// Check a group mixture for leaks
    Leakcheck(LeakcheckArgs),
    /// Compare augmentation gradients against finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(clap::Args, Debug)]
struct ApplyArgs {
    /// PNG files to augment
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Pipeline config JSON; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Augmentation strength in [0, 1]
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated list from blit,geom,color,filter,noise,cutout or "all"
    #[arg(long)]
    categories: Option<String>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Tile ROWSxCOLS independent draws of each input into one grid image
    #[arg(long, value_parser = parse_dims)]
    grid: Option<(usize, usize)>,
    /// Clamp augmented values to [-1, 1] before encoding
    #[arg(long)]
    clamp: bool,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum HeuristicArg {
    Rt,
    Rv,
}

#[derive(clap::Args, Debug)]
struct ControllerSimArgs {
    /// JSON Lines file, one minibatch per line
    stats: PathBuf,
    #[arg(long, value_enum, default_value = "rt")]
    heuristic: HeuristicArg,
    #[arg(long, default_value_t = 0.6)]
    target: f64,
    /// Images needed for p to sweep from 0 to 1
    #[arg(long, default_value_t = 500_000.0)]
    ramp_images: f64,
    /// Minibatches per adjustment
    #[arg(long, default_value_t = 4)]
    window: usize,
    /// CSV output path (stdout if omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct LeakcheckArgs {
    /// "Z<N>" for the cyclic group of order N, or "line" for integer shifts
    #[arg(long)]
    group: String,
    /// Comma-separated probabilities, index 0 being the identity
    #[arg(long, conflicts_with = "gated", required_unless_present = "gated")]
    probs: Option<String>,
    /// Uniform mixture over the group applied with this probability
    #[arg(long)]
    gated: Option<f64>,
    /// Size of the state space the operator acts on
    #[arg(long)]
    states: Option<usize>,
    /// Also write the JSON report here
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
}

#[derive(clap::Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0.8)]
    p: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Image size HEIGHTxWIDTH
    #[arg(long, value_parser = parse_dims, default_value = "32x32")]
    size: (usize, usize),
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value = "all")]
    categories: String,
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected AxB, got '{s}'"))?;
    let a: usize = a.trim().parse().map_err(|e| format!("'{a}': {e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("'{b}': {e}"))?;
    if a == 0 || b == 0 {
        return Err(format!("dimensions must be positive, got '{s}'"));
    }
    Ok((a, b))
}

/// Runs the tool and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let result = match args.command {
        Command::Apply(a) => cmd_apply(a).map(|_| EXIT_OK),
        Command::ControllerSim(a) => cmd_controller_sim(a).map(|_| EXIT_OK),
        Command::Leakcheck(a) => cmd_leakcheck(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            EXIT_DATA
        }
    }
}

/// 8-bit value to `[-1, 1]`.
pub fn byte_to_float(v: u8) -> f64 {
    f64::from(v) / 127.5 - 1.0
}

/// `[-1, 1]` to 8 bits, rounding half away from zero and clamping.
pub fn float_to_byte(x: f64) -> u8 {
    ((x + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn load_png(path: &Path) -> std::result::Result<ImageBatch, String> {
    let img = image::open(path).map_err(|e| format!("{}: {e}", path.display()))?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = Array4::from_shape_fn((1, 3, h as usize, w as usize), |(_, c, y, x)| {
        byte_to_float(img.get_pixel(x as u32, y as u32)[c])
    });
    ImageBatch::new(data).map_err(|e| e.to_string())
}

fn to_rgb(batch: &ImageBatch, index: usize, clamp: bool) -> RgbImage {
    let img = batch.image(index);
    let (_, h, w) = img.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        image::Rgb(std::array::from_fn(|c| {
            let v = img[[c, y as usize, x as usize]];
            float_to_byte(if clamp { v.clamp(-1.0, 1.0) } else { v })
        }))
    })
}

fn save_png(img: &RgbImage, path: &Path) -> CliResult<()> {
    img.save(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[derive(Serialize, Deserialize)]
struct RecordsFile {
    config: PipelineConfig,
    records: Vec<AugmentRecord>,
}

fn apply_config(a: &ApplyArgs) -> CliResult<PipelineConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(data_err(path.display()))?;
            PipelineConfig::from_json(&text)?
        }
        None => PipelineConfig::new(0.0, Categories::default(), 0)?,
    };
    if let Some(p) = a.p {
        cfg.p = crate::params::AugmentStrength::new(p).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(list) = &a.categories {
        cfg.categories = Categories::parse_list(list)?;
    }
    Ok(cfg)
}

fn cmd_apply(a: ApplyArgs) -> CliResult<()> {
    let cfg = apply_config(&a)?;
    fs::create_dir_all(&a.out_dir).map_err(data_err(a.out_dir.display()))?;
    let tiles = a.grid.map_or(1, |(r, c)| r * c);
    for (pos, input) in a.inputs.iter().enumerate() {
        let img = load_png(input).map_err(CliError::Data)?;
        let stem = input.file_stem().map_or_else(|| format!("image{pos}"), |s| s.to_string_lossy().into_owned());
        let batch = ImageBatch::concat(&vec![img; tiles])?;
        let (out, records) = augment(&batch, &cfg, (pos * tiles) as u64)?;
        match a.grid {
            None => save_png(&to_rgb(&out, 0, a.clamp), &a.out_dir.join(format!("{stem}.aug.png")))?,
            Some((rows, cols)) => {
                let (h, w) = (out.height() as u32, out.width() as u32);
                let mut grid = RgbImage::new(w * cols as u32, h * rows as u32);
                for t in 0..tiles {
                    let tile = to_rgb(&out, t, a.clamp);
                    let (ty, tx) = ((t / cols) as u32, (t % cols) as u32);
                    image::imageops::replace(&mut grid, &tile, i64::from(tx * w), i64::from(ty * h));
                }
                save_png(&grid, &a.out_dir.join(format!("{stem}.grid.png")))?;
            }
        }
        let json = serde_json::to_string_pretty(&RecordsFile { config: cfg.clone(), records })
            .map_err(|e| CliError::Data(e.to_string()))?;
        let path = a.out_dir.join(format!("{stem}.records.json"));
        fs::write(&path, json + "\n").map_err(data_err(path.display()))?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct StatsLine {
    #[serde(flatten)]
    stats: OverfitStats,
    batch: usize,
}

fn cmd_controller_sim(a: ControllerSimArgs) -> CliResult<()> {
    let heuristic = match a.heuristic {
        HeuristicArg::Rt => Heuristic::Rt,
        HeuristicArg::Rv => Heuristic::Rv,
    };
    if !(a.ramp_images.is_finite() && a.ramp_images > 0.0) {
        return Err(CliError::Usage(format!("--ramp-images must be positive, got {}", a.ramp_images)));
    }
    let mut state = ControllerState::with_ramp(heuristic, a.target, a.window, a.ramp_images)?;
    let file = fs::File::open(&a.stats).map_err(data_err(a.stats.display()))?;

    let sink: Box<dyn Write> = match &a.out {
        Some(path) => Box::new(fs::File::create(path).map_err(data_err(path.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut csv = csv::Writer::from_writer(sink);
    let csv_err = |e: csv::Error| CliError::Data(e.to_string());
    csv.write_record(["minibatch_index", "images_seen", "heuristic_value", "p"]).map_err(csv_err)?;

    let mut index = 0usize;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(data_err(a.stats.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| CliError::Data(format!("{}:{}: {msg}", a.stats.display(), n + 1));
        let parsed: StatsLine = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        let outcome = state.update(&parsed.stats, parsed.batch).map_err(|e| at(e.to_string()))?;
        let heuristic = match outcome {
            UpdateOutcome::Adjusted { heuristic, .. } => heuristic.to_string(),
            _ => String::new(),
        };
        csv.write_record([
            index.to_string(),
            state.images_seen().to_string(),
            heuristic,
            state.p().get().to_string(),
        ])
        .map_err(csv_err)?;
        index += 1;
    }
    csv.flush().map_err(data_err("output"))?;
    Ok(())
}

fn parse_probs(list: &str) -> CliResult<Vec<f64>> {
    list.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| CliError::Usage(format!("probability '{s}': {e}"))))
        .collect()
}

fn cmd_leakcheck(a: LeakcheckArgs) -> CliResult<i32> {
    let usage = |e: AdaError| CliError::Usage(e.to_string());
    let group = if a.group.eq_ignore_ascii_case("line") {
        Group::IntegerLine
    } else {
        let order = a
            .group
            .strip_prefix(['Z', 'z'])
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("unknown group '{}', expected Z<N> or line", a.group)))?;
        Group::Cyclic { order }
    };
    let spec = match (&a.probs, a.gated, group) {
        (Some(list), _, _) => MixtureSpec::new(group, parse_probs(list)?).map_err(usage)?,
        (None, Some(p), Group::Cyclic { order }) => gated_uniform_mixture(order, p).map_err(usage)?,
        (None, Some(_), Group::IntegerLine) => {
            return Err(CliError::Usage("--gated needs a finite cyclic group".into()))
        }
        (None, None, _) => unreachable!("clap requires --probs or --gated"),
    };

    let mut verdict = dft_zero_check(&spec, a.tol).map_err(usage)?;
    let operator = match group {
        Group::Cyclic { order } => {
            let states = a.states.unwrap_or(order);
            if states % order != 0 {
                return Err(CliError::Usage(format!("--states {states} is not a multiple of {order}")));
            }
            let stride = states / order;
            let action: Vec<Vec<usize>> =
                (0..order).map(|i| (0..states).map(|s| (s + i * stride) % states).collect()).collect();
            build_group_operator(&spec, states, &action)?
        }
        Group::IntegerLine => build_line_operator(&spec, a.states.unwrap_or(2 * spec.probs.len()))?,
    };
    if !verdict.invertible {
        verdict.witness = null_space_witness(&operator, a.tol)?.witness;
    }
    let report = serde_json::to_string_pretty(&verdict.report(&spec)).map_err(|e| CliError::Data(e.to_string()))?;
    println!("{report}");
    if let Some(path) = &a.report {
        fs::write(path, report + "\n").map_err(data_err(path.display()))?;
    }
    Ok(if verdict.invertible { EXIT_OK } else { EXIT_LEAK })
}

fn cmd_gradcheck(a: GradcheckArgs) -> CliResult<i32> {
    let opts = GradcheckOptions {
        p: a.p,
        seed: a.seed,
        height: a.size.0,
        width: a.size.1,
        samples: a.samples,
        categories: Categories::parse_list(&a.categories)?,
        step: DEFAULT_STEP,
        ..GradcheckOptions::default()
    };
    crate::params::AugmentStrength::new(a.p).map_err(|e| CliError::Usage(e.to_string()))?;
    let r = gradcheck(&opts)?;
    let verdict = if r.passed() { "PASS" } else { "FAIL" };
    println!("{verdict} max_rel_error={:e} samples={} worst={:?}", r.max_rel_error, r.samples, r.worst);
    Ok(if r.passed() { EXIT_OK } else { EXIT_DATA })
}
