//! Command-line front end: one subcommand per analysis, CSV on stdout.
//!
//! Exit codes: 0 on success, 1 on a validation or I/O error (one line on
//! stderr), 2 on a usage error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use rfalign::aligner::{self, AlignConfig, SizeMetric};
use rfalign::archspec::{build_backbone, parse_network, BackboneParams, LayerSpec, NetworkSpec};
use rfalign::detmetrics::{self, EvalConfig, Interpolation};
use rfalign::gridscope::{self, AntiGridQuery, DilationBound};
use rfalign::rf;

#[derive(Debug, Parser)]
#[command(name = "rfalign", version, about = "Receptive-field alignment, grid-effect and detection-metric analyses")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-stage receptive field, stride and output size of a network.
    Rf(RfArgs),
    /// Pixel-utilization map of a stride-1 stack.
    Gridmap(GridmapArgs),
    /// Anti-grid admissibility of a final dilated convolution.
    Agrfm(AgrfmArgs),
    /// Fit backbone block counts to RF targets derived from annotations.
    Align(AlignArgs),
    /// Precision, recall, F1 and mAP50 of detections against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("network").required(true).args(["spec", "backbone"])))]
pub struct RfArgs {
    /// Network document (JSON).
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    /// Backbone template block counts n1,n2,n3,n4,n5.
    #[arg(long, value_name = "N1,N2,N3,N4,N5", value_parser = parse_block_counts)]
    pub backbone: Option<[u32; 5]>,
    /// Input size in pixels (defaults to the document's, or 640).
    #[arg(long, value_name = "INT")]
    pub input: Option<u32>,
    /// Write the table here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
    /// Emit the per-layer table instead of the stage table.
    #[arg(long)]
    pub layers: bool,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("network").required(true).args(["spec", "stack"])))]
pub struct GridmapArgs {
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    /// Comma-separated `[COUNTx]K:D` items, e.g. `5x3:1,3:4`.
    #[arg(long, value_name = "K:D[,K:D...]", value_parser = parse_stack)]
    pub stack: Option<KernelStack>,
    /// Write the map as a plain PGM image.
    #[arg(long, value_name = "FILE")]
    pub pgm: Option<PathBuf>,
    /// Write the map as integer CSV.
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
    /// Print an ASCII heatmap after the diagnostics.
    #[arg(long)]
    pub ascii: bool,
}

#[derive(Debug, Args)]
pub struct AgrfmArgs {
    /// Preceding standard convolutions as `COUNTxK` items, e.g. `5x3`.
    #[arg(long, value_name = "COUNTxK", value_parser = parse_pre_stack)]
    pub pre: PreStack,
    #[arg(long, value_name = "K")]
    pub kernel: u32,
    #[arg(long, value_name = "R")]
    pub dilation: u32,
    /// Also report the largest admissible dilation.
    #[arg(long)]
    pub advise: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SizeMetricArg {
    Max,
    Gmean,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Annotation CSV `image_id,class,x_min,y_min,x_max,y_max`.
    #[arg(long, value_name = "FILE")]
    pub annotations: PathBuf,
    #[arg(long, value_name = "FLOAT", default_value_t = aligner::DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Network input size; boxes are rescaled by input/native.
    #[arg(long, value_name = "INT", default_value_t = aligner::DEFAULT_INPUT_SIZE)]
    pub input: u32,
    /// Resolution the annotations were made at.
    #[arg(long, value_name = "INT", default_value_t = aligner::DEFAULT_NATIVE_SIZE)]
    pub native: u32,
    #[arg(long = "n-max", value_name = "INT", default_value_t = aligner::DEFAULT_N_MAX)]
    pub n_max: u32,
    #[arg(long = "size-metric", value_enum, default_value_t = SizeMetricArg::Max)]
    pub size_metric: SizeMetricArg,
    /// Also write the per-box size list (`image_id,class,size`).
    #[arg(long, value_name = "FILE")]
    pub sizes: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InterpArg {
    All,
    #[value(name = "11pt")]
    ElevenPoint,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub gt: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub pred: PathBuf,
    #[arg(long, value_name = "FLOAT", default_value_t = 0.5)]
    pub iou: f64,
    #[arg(long, value_name = "FLOAT", default_value_t = 0.25)]
    pub conf: f64,
    #[arg(long, value_enum, default_value_t = InterpArg::All)]
    pub interp: InterpArg,
}

fn parse_block_counts(s: &str) -> Result<[u32; 5], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 5 {
        return Err(format!("expected 5 comma-separated counts, got {}", parts.len()));
    }
    let mut counts = [0; 5];
    for (slot, p) in counts.iter_mut().zip(parts) {
        *slot = p.parse().map_err(|_| format!("`{p}` is not a non-negative integer"))?;
    }
    Ok(counts)
}

/// `COUNTxITEM` → (count, item); a bare item means count 1.
fn split_repeat(s: &str) -> Result<(usize, &str), String> {
    match s.split_once(['x', 'X']) {
        Some((n, rest)) => {
            let n: usize = n.trim().parse().map_err(|_| format!("bad repeat count in `{s}`"))?;
            if n == 0 {
                return Err(format!("repeat count must be positive in `{s}`"));
            }
            Ok((n, rest.trim()))
        }
        None => Ok((1, s.trim())),
    }
}

fn positive(s: &str, what: &str) -> Result<u32, String> {
    match s.trim().parse::<u32>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format!("{what} `{s}` is not a positive integer")),
    }
}

/// `(kernel, dilation)` per stride-1 layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelStack(pub Vec<(u32, u32)>);

/// Kernel sizes of the standard convolutions before the dilated one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreStack(pub Vec<u32>);

fn parse_stack(s: &str) -> Result<KernelStack, String> {
    let mut layers = Vec::new();
    for item in s.split(',') {
        let (n, body) = split_repeat(item)?;
        let (k, d) = body
            .split_once(':')
            .ok_or_else(|| format!("`{item}` is not of the form K:D"))?;
        let layer = (positive(k, "kernel")?, positive(d, "dilation")?);
        layers.extend(std::iter::repeat_n(layer, n));
    }
    Ok(KernelStack(layers))
}

fn parse_pre_stack(s: &str) -> Result<PreStack, String> {
    let mut kernels = Vec::new();
    for item in s.split(',') {
        let (n, k) = split_repeat(item)?;
        kernels.extend(std::iter::repeat_n(positive(k, "kernel")?, n));
    }
    Ok(PreStack(kernels))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn load_spec(path: &Path) -> Result<NetworkSpec> {
    parse_network(&read(path)?).with_context(|| format!("{}", path.display()))
}

fn run_rf(args: &RfArgs, out: &mut dyn Write) -> Result<()> {
    let spec = match (&args.spec, args.backbone) {
        (Some(path), _) => {
            let spec = load_spec(path)?;
            match args.input {
                Some(size) => spec.with_input_size(size)?,
                None => spec,
            }
        }
        (None, Some(counts)) => build_backbone(&BackboneParams::new(counts, args.input.unwrap_or(640))?),
        (None, None) => unreachable!("clap enforces the network group"),
    };
    let table = if args.layers || spec.stage_marks().is_empty() {
        rf::layer_table_csv(&spec, &rf::propagate(&spec)?)
    } else {
        rf::stage_table_csv(&rf::stage_table(&spec)?)
    };
    emit(&table, args.csv.as_deref(), out)
}

fn emit(text: &str, path: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => write_file(p, text),
        None => Ok(out.write_all(text.as_bytes())?),
    }
}

fn run_gridmap(args: &GridmapArgs, out: &mut dyn Write) -> Result<()> {
    let spec = match (&args.spec, &args.stack) {
        (Some(path), _) => load_spec(path)?,
        (None, Some(stack)) => {
            let layers = stack
                .0
                .iter()
                .map(|&(k, d)| LayerSpec::conv(k, 1, d))
                .collect::<Result<Vec<_>, _>>()?;
            NetworkSpec::sequential(640, layers)?
        }
        (None, None) => unreachable!("clap enforces the network group"),
    };
    let map = gridscope::utilization_map(&spec)?;
    let diag = gridscope::diagnostics(&map);
    if let Some(path) = &args.csv {
        write_file(path, &map.to_csv())?;
    }
    if let Some(path) = &args.pgm {
        write_file(path, &map.to_pgm())?;
    }
    out.write_all(gridscope::diagnostics_csv(&map, &diag).as_bytes())?;
    if args.ascii {
        writeln!(out)?;
        out.write_all(map.to_ascii().as_bytes())?;
    }
    Ok(())
}

fn run_agrfm(args: &AgrfmArgs, out: &mut dyn Write) -> Result<()> {
    let query = AntiGridQuery {
        pre_stack: args.pre.0.clone(),
        last_kernel: args.kernel,
        last_dilation: args.dilation,
    };
    let verdict = gridscope::check_anti_grid(&query)?;
    writeln!(out, "k_prime={}", verdict.k_prime)?;
    writeln!(out, "lhs={}", verdict.lhs)?;
    writeln!(out, "admissible={}", verdict.admissible)?;
    if args.advise {
        match gridscope::max_admissible_dilation(&args.pre.0, args.kernel)? {
            DilationBound::Max(r) => writeln!(out, "max_dilation={r}")?,
            DilationBound::Unbounded => writeln!(out, "max_dilation=unbounded")?,
        }
    }
    Ok(())
}

fn run_align(args: &AlignArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = AlignConfig::new(args.lambda, args.input, args.native)?;
    let boxes = aligner::load_annotations(&read(&args.annotations)?)
        .with_context(|| format!("{}", args.annotations.display()))?;
    let metric = match args.size_metric {
        SizeMetricArg::Max => SizeMetric::Max,
        SizeMetricArg::Gmean => SizeMetric::GeometricMean,
    };
    let stats = aligner::anchor_stats_with(&boxes, cfg.scale(), metric)?;
    if let Some(path) = &args.sizes {
        write_file(path, &aligner::size_list_csv(&boxes, cfg.scale(), metric))?;
    }
    let targets = aligner::rf_targets(&stats, &cfg)?;
    let result = aligner::search_blocks(&targets, args.input, args.n_max)?;
    writeln!(
        err,
        "note: {} boxes, anchor tiny={} mean={} large={} (input pixels); objective={}",
        stats.count, stats.tiny, stats.mean, stats.large, result.objective
    )?;
    let decreasing = result.non_monotone_targets();
    if !decreasing.is_empty() {
        let names: Vec<String> = decreasing.iter().map(ToString::to_string).collect();
        writeln!(
            err,
            "warning: target RF decreases at {}; no backbone can match a shrinking RF",
            names.join(",")
        )?;
    }
    out.write_all(result.report_csv().as_bytes())?;
    Ok(())
}

fn run_eval(args: &EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let gts = detmetrics::load_ground_truth(&read(&args.gt)?).with_context(|| format!("{}", args.gt.display()))?;
    let dets =
        detmetrics::load_detections(&read(&args.pred)?).with_context(|| format!("{}", args.pred.display()))?;
    let cfg = EvalConfig {
        iou_threshold: args.iou,
        conf_threshold: args.conf,
        interpolation: match args.interp {
            InterpArg::All => Interpolation::AllPoint,
            InterpArg::ElevenPoint => Interpolation::ElevenPoint,
        },
    };
    let report = detmetrics::evaluate(&gts, &dets, &cfg)?;
    if !report.unknown_classes.is_empty() {
        writeln!(
            err,
            "warning: detections for classes without ground truth counted as false positives: {}",
            report.unknown_classes.join(",")
        )?;
    }
    out.write_all(report.to_csv().as_bytes())?;
    Ok(())
}

pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Rf(a) => run_rf(a, out),
        Command::Gridmap(a) => run_gridmap(a, out),
        Command::Agrfm(a) => run_agrfm(a, out),
        Command::Align(a) => run_align(a, out, err),
        Command::Eval(a) => run_eval(a, out, err),
    }
}

/// Parses `argv` (including the program name), runs it and returns the exit
/// code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = err.write_all(rendered.as_bytes());
                return 2;
            }
            let _ = out.write_all(rendered.as_bytes());
            return 0;
        }
    };
    match execute(&cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let message = format!("{e:#}").replace(['\n', '\r'], " ");
            let _ = writeln!(err, "error: {message}");
            1
        }
    }
}
