//! Receptive-field alignment: anchor-size statistics from box annotations,
//! per-stage RF targets, and an exhaustive search over backbone block counts.

use std::fmt::Write as _;

use thiserror::Error;

use crate::archspec::{build_backbone, BackboneParams, Stage, MAX_BLOCKS_PER_STAGE};
use crate::csvio::{self, CsvError};
use crate::exec::{self, Exec};
use crate::rf::{stage_table, RfError};

/// Header of the annotation CSV.
pub const ANNOTATION_HEADER: [&str; 6] = ["image_id", "class", "x_min", "y_min", "x_max", "y_max"];

/// Default λ, the best setting of the published sweep.
pub const DEFAULT_LAMBDA: f64 = 4.0;
pub const DEFAULT_INPUT_SIZE: u32 = 640;
pub const DEFAULT_NATIVE_SIZE: u32 = 2048;
pub const DEFAULT_N_MAX: u32 = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlignError {
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error("no boxes to compute statistics from")]
    NoBoxes,
    #[error("{0}")]
    InvalidConfig(String),
    #[error("anchor_large = {0} gives ln(anchor_large) ≤ 0, so the P5 target is not positive")]
    NonPositiveP5(f64),
    #[error(transparent)]
    Rf(#[from] RfError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxRecord {
    pub image_id: String,
    pub class_label: String,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoxRecord {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

/// Parses `image_id,class,x_min,y_min,x_max,y_max` rows.
pub fn load_annotations(text: &str) -> Result<Vec<BoxRecord>, AlignError> {
    let rows = csvio::read(text, &ANNOTATION_HEADER)?;
    let mut out = Vec::with_capacity(rows.records.len());
    for (line, rec) in &rows.records {
        let line = *line;
        let r = BoxRecord {
            image_id: csvio::text_field(line, rec, 0, "image_id")?,
            class_label: csvio::text_field(line, rec, 1, "class")?,
            x_min: csvio::num_field(line, rec, 2, "x_min")?,
            y_min: csvio::num_field(line, rec, 3, "y_min")?,
            x_max: csvio::num_field(line, rec, 4, "x_max")?,
            y_max: csvio::num_field(line, rec, 5, "y_max")?,
        };
        if r.x_max <= r.x_min || r.y_max <= r.y_min {
            return Err(CsvError::Row {
                line,
                message: format!(
                    "inverted or empty box ({}, {}, {}, {})",
                    r.x_min, r.y_min, r.x_max, r.y_max
                ),
            }
            .into());
        }
        out.push(r);
    }
    Ok(out)
}

/// Scalar size of a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SizeMetric {
    /// Longer side.
    #[default]
    Max,
    /// `sqrt(width·height)`.
    GeometricMean,
}

impl SizeMetric {
    pub fn size(self, b: &BoxRecord) -> f64 {
        match self {
            SizeMetric::Max => b.width().max(b.height()),
            SizeMetric::GeometricMean => (b.width() * b.height()).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorStats {
    /// Mean of the smallest ⌈5%⌉ sizes.
    pub tiny: f64,
    pub mean: f64,
    /// Mean of the largest ⌈2%⌉ sizes.
    pub large: f64,
    pub count: usize,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Statistics over `max(width, height)·scale`.
pub fn anchor_stats(boxes: &[BoxRecord], scale: f64) -> Result<AnchorStats, AlignError> {
    anchor_stats_with(boxes, scale, SizeMetric::Max)
}

pub fn anchor_stats_with(boxes: &[BoxRecord], scale: f64, metric: SizeMetric) -> Result<AnchorStats, AlignError> {
    if boxes.is_empty() {
        return Err(AlignError::NoBoxes);
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(AlignError::InvalidConfig(format!("scale must be positive, got {scale}")));
    }
    let mut sizes: Vec<f64> = boxes.iter().map(|b| metric.size(b) * scale).collect();
    sizes.sort_by(f64::total_cmp);
    let n = sizes.len();
    // ceil(0.05·n) and ceil(0.02·n) in exact integer arithmetic
    let n_tiny = n.div_ceil(20);
    let n_large = n.div_ceil(50);
    Ok(AnchorStats {
        tiny: mean(&sizes[..n_tiny]),
        mean: mean(&sizes),
        large: mean(&sizes[n - n_large..]),
        count: n,
    })
}

/// `image_id,class,size` with sizes in scaled pixels, one row per box.
pub fn size_list_csv(boxes: &[BoxRecord], scale: f64, metric: SizeMetric) -> String {
    let mut out = String::from("image_id,class,size\n");
    for b in boxes {
        let _ = writeln!(
            out,
            "{},{},{}",
            csvio::quote(&b.image_id),
            csvio::quote(&b.class_label),
            metric.size(b) * scale
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignConfig {
    lambda: f64,
    input_size: u32,
    native_size: u32,
}

impl AlignConfig {
    pub fn new(lambda: f64, input_size: u32, native_size: u32) -> Result<Self, AlignError> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(AlignError::InvalidConfig(format!("lambda must be positive, got {lambda}")));
        }
        if input_size == 0 || native_size == 0 {
            return Err(AlignError::InvalidConfig("input and native sizes must be positive".into()));
        }
        Ok(Self {
            lambda,
            input_size,
            native_size,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn input_size(&self) -> u32 {
        self.input_size
    }

    pub fn native_size(&self) -> u32 {
        self.native_size
    }

    /// Factor that maps annotation pixels into network-input pixels.
    pub fn scale(&self) -> f64 {
        f64::from(self.input_size) / f64::from(self.native_size)
    }
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            input_size: DEFAULT_INPUT_SIZE,
            native_size: DEFAULT_NATIVE_SIZE,
        }
    }
}

/// Target theoretical RFs for `P1..P5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfTargets(pub [f64; 5]);

impl RfTargets {
    pub fn get(&self, stage: Stage) -> f64 {
        self.0[stage.index()]
    }
}

/// ```text
/// P1 = λ·tiny          P2 = λ·(tiny + mean)    P3 = λ·mean
/// P4 = λ·(mean + large)                       P5 = λ·ln(large)
/// ```
pub fn rf_targets(stats: &AnchorStats, cfg: &AlignConfig) -> Result<RfTargets, AlignError> {
    if stats.large <= 1.0 {
        return Err(AlignError::NonPositiveP5(stats.large));
    }
    let l = cfg.lambda;
    Ok(RfTargets([
        l * stats.tiny,
        l * (stats.tiny + stats.mean),
        l * stats.mean,
        l * (stats.mean + stats.large),
        l * stats.large.ln(),
    ]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentResult {
    pub block_counts: [u32; 5],
    pub achieved_rf: [u64; 5],
    pub targets: RfTargets,
    /// `Σ |achieved − target|`.
    pub objective: f64,
}

impl AlignmentResult {
    /// Stages whose target is smaller than the previous stage's, which no
    /// backbone can achieve since RF grows with depth.
    pub fn non_monotone_targets(&self) -> Vec<Stage> {
        Stage::ALL
            .windows(2)
            .filter(|w| self.targets.get(w[1]) < self.targets.get(w[0]))
            .map(|w| w[1])
            .collect()
    }

    /// `stage,target_rf,achieved_rf,blocks`.
    pub fn report_csv(&self) -> String {
        let mut out = String::from("stage,target_rf,achieved_rf,blocks\n");
        for stage in Stage::ALL {
            let i = stage.index();
            let _ = writeln!(
                out,
                "{stage},{},{},{}",
                self.targets.0[i], self.achieved_rf[i], self.block_counts[i]
            );
        }
        out
    }
}

/// Stage RFs of the backbone with the given block counts.
pub fn backbone_rfs(block_counts: [u32; 5], input_size: u32) -> Result<[u64; 5], AlignError> {
    let params = BackboneParams::new(block_counts, input_size)
        .map_err(|e| AlignError::InvalidConfig(e.to_string()))?;
    let table = stage_table(&build_backbone(&params))?;
    let mut rfs = [0; 5];
    for r in table {
        rfs[r.stage.index()] = r.rf;
    }
    Ok(rfs)
}

/// `Σ |rf_i − target_i|`.
pub fn objective(achieved: &[u64; 5], targets: &RfTargets) -> f64 {
    achieved.iter().zip(targets.0).map(|(&a, t)| (a as f64 - t).abs()).sum()
}

fn decode(mut index: usize, base: usize) -> [u32; 5] {
    let mut counts = [0u32; 5];
    for slot in counts.iter_mut().rev() {
        *slot = (index % base) as u32;
        index /= base;
    }
    counts
}

/// Strict "a is better than b": lower objective, then fewer blocks, then
/// lexicographically smaller counts.
fn better(a: &AlignmentResult, b: &AlignmentResult) -> bool {
    let key = |r: &AlignmentResult| (r.block_counts.iter().sum::<u32>(), r.block_counts);
    match a.objective.total_cmp(&b.objective) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => key(a) < key(b),
    }
}

/// Exhaustive search over `[0, n_max]⁵`.
pub fn search_blocks(targets: &RfTargets, input_size: u32, n_max: u32) -> Result<AlignmentResult, AlignError> {
    search_blocks_with(targets, input_size, n_max, Exec::default())
}

pub fn search_blocks_with(
    targets: &RfTargets,
    input_size: u32,
    n_max: u32,
    exec: Exec,
) -> Result<AlignmentResult, AlignError> {
    if n_max > MAX_BLOCKS_PER_STAGE {
        return Err(AlignError::InvalidConfig(format!(
            "n_max {n_max} exceeds the maximum of {MAX_BLOCKS_PER_STAGE}"
        )));
    }
    if input_size == 0 {
        return Err(AlignError::InvalidConfig("input size must be positive".into()));
    }
    if targets.0.iter().any(|t| !t.is_finite()) {
        return Err(AlignError::InvalidConfig("targets must be finite".into()));
    }
    let base = n_max as usize + 1;
    let evaluate = |index: usize| {
        let block_counts = decode(index, base);
        // counts are bounded and the template has only odd kernels, so this
        // cannot fail once the arguments above are valid
        let achieved_rf = backbone_rfs(block_counts, input_size).expect("validated backbone");
        AlignmentResult {
            block_counts,
            achieved_rf,
            targets: *targets,
            objective: objective(&achieved_rf, targets),
        }
    };
    Ok(exec::min_over_range(exec, base.pow(5), evaluate, better).expect("search space is non-empty"))
}
