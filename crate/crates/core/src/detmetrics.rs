//! Detection evaluation: IoU matching, precision/recall/F1 at a confidence
//! threshold, per-class AP at an IoU threshold and their mean (mAP50).
//!
//! Matching runs per `(image, class)` group. Detections are visited in
//! descending score order (ties by input order) and each takes the unmatched
//! ground truth of highest IoU, provided it reaches the IoU threshold; IoU ties
//! go to the earlier ground truth.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::csvio::{self, CsvError};
use crate::exec::{self, Exec};

pub const GROUND_TRUTH_HEADER: [&str; 6] = ["image_id", "class", "x_min", "y_min", "x_max", "y_max"];
pub const DETECTION_HEADER: [&str; 7] = ["image_id", "class", "score", "x_min", "y_min", "x_max", "y_max"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error("{0}")]
    InvalidConfig(String),
    #[error("invalid box ({0}, {1}, {2}, {3}): needs x_max > x_min and y_max > y_min")]
    InvalidBox(f64, f64, f64, f64),
    #[error("score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
}

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, EvalError> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_max <= x_min || y_max <= y_min {
            return Err(EvalError::InvalidBox(x_min, y_min, x_max, y_max));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

/// Intersection over union; 0 for disjoint or merely touching boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let h = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    inter / (a.area() + b.area() - inter)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRecord {
    pub image_id: String,
    pub class_label: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub image_id: String,
    pub class_label: String,
    pub score: f64,
    pub bbox: BBox,
}

impl DetectionRecord {
    pub fn new(image_id: &str, class_label: &str, score: f64, bbox: BBox) -> Result<Self, EvalError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(EvalError::ScoreOutOfRange(score));
        }
        Ok(Self {
            image_id: image_id.to_string(),
            class_label: class_label.to_string(),
            score,
            bbox,
        })
    }
}

fn row_box(line: u64, rec: &csv::StringRecord, first: usize) -> Result<BBox, CsvError> {
    let coords = [
        csvio::num_field(line, rec, first, "x_min")?,
        csvio::num_field(line, rec, first + 1, "y_min")?,
        csvio::num_field(line, rec, first + 2, "x_max")?,
        csvio::num_field(line, rec, first + 3, "y_max")?,
    ];
    BBox::new(coords[0], coords[1], coords[2], coords[3]).map_err(|e| CsvError::Row {
        line,
        message: e.to_string(),
    })
}

pub fn load_ground_truth(text: &str) -> Result<Vec<GroundTruthRecord>, EvalError> {
    let rows = csvio::read(text, &GROUND_TRUTH_HEADER)?;
    rows.records
        .iter()
        .map(|(line, rec)| {
            Ok(GroundTruthRecord {
                image_id: csvio::text_field(*line, rec, 0, "image_id")?,
                class_label: csvio::text_field(*line, rec, 1, "class")?,
                bbox: row_box(*line, rec, 2)?,
            })
        })
        .collect()
}

pub fn load_detections(text: &str) -> Result<Vec<DetectionRecord>, EvalError> {
    let rows = csvio::read(text, &DETECTION_HEADER)?;
    rows.records
        .iter()
        .map(|(line, rec)| {
            let line = *line;
            let score = csvio::num_field(line, rec, 2, "score")?;
            if !(0.0..=1.0).contains(&score) {
                return Err(CsvError::Row {
                    line,
                    message: format!("score {score} is outside [0, 1]"),
                }
                .into());
            }
            Ok(DetectionRecord {
                image_id: csvio::text_field(line, rec, 0, "image_id")?,
                class_label: csvio::text_field(line, rec, 1, "class")?,
                score,
                bbox: row_box(line, rec, 3)?,
            })
        })
        .collect()
}

pub fn ground_truth_to_csv(records: &[GroundTruthRecord]) -> String {
    let mut out = GROUND_TRUTH_HEADER.join(",");
    out.push('\n');
    for r in records {
        let b = &r.bbox;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            csvio::quote(&r.image_id),
            csvio::quote(&r.class_label),
            b.x_min,
            b.y_min,
            b.x_max,
            b.y_max
        );
    }
    out
}

pub fn detections_to_csv(records: &[DetectionRecord]) -> String {
    let mut out = DETECTION_HEADER.join(",");
    out.push('\n');
    for r in records {
        let b = &r.bbox;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            csvio::quote(&r.image_id),
            csvio::quote(&r.class_label),
            r.score,
            b.x_min,
            b.y_min,
            b.x_max,
            b.y_max
        );
    }
    out
}

/// Precision-recall curve integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    /// Area under the monotone precision envelope, integrated exactly.
    #[default]
    AllPoint,
    /// Mean envelope precision at recall 0, 0.1, …, 1.
    ElevenPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub conf_threshold: f64,
    pub interpolation: Interpolation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            conf_threshold: 0.25,
            interpolation: Interpolation::AllPoint,
        }
    }
}

impl EvalConfig {
    fn validate(&self) -> Result<(), EvalError> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(EvalError::InvalidConfig(format!(
                "IoU threshold must be in (0, 1], got {}",
                self.iou_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.conf_threshold) {
            return Err(EvalError::InvalidConfig(format!(
                "confidence threshold must be in [0, 1], got {}",
                self.conf_threshold
            )));
        }
        Ok(())
    }
}

/// Precision, recall and F1 at one confidence threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl OperatingPoint {
    fn from_counts(threshold: f64, tp: usize, fp: usize, n_gt: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, n_gt);
        Self {
            threshold,
            precision,
            recall,
            f1: f1_score(precision, recall),
            tp,
            fp,
            fn_: n_gt - tp,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub iou_threshold: f64,
    /// Metrics at the configured confidence threshold.
    pub at_threshold: OperatingPoint,
    /// The confidence threshold (among detection scores) maximizing F1.
    pub best_f1: Option<OperatingPoint>,
    /// AP per class with at least one ground truth.
    pub per_class_ap: BTreeMap<String, f64>,
    pub map50: f64,
    /// Detection classes absent from the ground truth; their detections are
    /// all false positives.
    pub unknown_classes: Vec<String>,
    /// Per detection in input order: whether it was matched.
    pub matched: Vec<bool>,
}

impl EvalReport {
    pub fn precision(&self) -> f64 {
        self.at_threshold.precision
    }

    pub fn recall(&self) -> f64 {
        self.at_threshold.recall
    }

    pub fn f1(&self) -> f64 {
        self.at_threshold.f1
    }

    pub fn tp(&self) -> usize {
        self.at_threshold.tp
    }

    pub fn fp(&self) -> usize {
        self.at_threshold.fp
    }

    pub fn fn_(&self) -> usize {
        self.at_threshold.fn_
    }

    /// `metric,value` block, a blank line, then a `class,ap50` block.
    pub fn to_csv(&self) -> String {
        let p = &self.at_threshold;
        let mut out = String::from("metric,value\n");
        let _ = writeln!(out, "iou_threshold,{}", self.iou_threshold);
        let _ = writeln!(out, "conf_threshold,{}", p.threshold);
        let _ = writeln!(out, "precision,{}", p.precision);
        let _ = writeln!(out, "recall,{}", p.recall);
        let _ = writeln!(out, "f1,{}", p.f1);
        let _ = writeln!(out, "tp,{}", p.tp);
        let _ = writeln!(out, "fp,{}", p.fp);
        let _ = writeln!(out, "fn,{}", p.fn_);
        if let Some(b) = &self.best_f1 {
            let _ = writeln!(out, "best_f1_threshold,{}", b.threshold);
            let _ = writeln!(out, "best_f1_precision,{}", b.precision);
            let _ = writeln!(out, "best_f1_recall,{}", b.recall);
            let _ = writeln!(out, "best_f1,{}", b.f1);
        }
        let _ = writeln!(out, "map50,{}", self.map50);
        out.push_str("\nclass,ap50\n");
        for (class, ap) in &self.per_class_ap {
            let _ = writeln!(out, "{},{ap}", csvio::quote(class));
        }
        out
    }
}

/// Greedy matching of one `(image, class)` group of `(score, box)`
/// detections. Returns, per detection in input order, whether it is a true
/// positive.
pub fn match_group(gts: &[BBox], dets: &[(f64, BBox)], iou_threshold: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].0.total_cmp(&dets[a].0).then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    let mut tp = vec![false; dets.len()];
    for d in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(&dets[d].1, gt);
            if v >= iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            tp[d] = true;
        }
    }
    tp
}

/// AP of one class from its `(score, is_tp)` list in any order.
pub fn average_precision(mut scored: Vec<(f64, usize, bool)>, n_gt: usize, interp: Interpolation) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut recall = Vec::with_capacity(scored.len());
    let mut precision = Vec::with_capacity(scored.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(_, _, is_tp) in &scored {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    // envelope: precision at rank i becomes the max precision at ranks ≥ i
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    match interp {
        Interpolation::AllPoint => {
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for (r, p) in recall.iter().zip(&precision) {
                if *r > prev_recall {
                    ap += (r - prev_recall) * p;
                    prev_recall = *r;
                }
            }
            ap
        }
        Interpolation::ElevenPoint => {
            (0..=10)
                .map(|t| {
                    let level = f64::from(t) / 10.0;
                    recall
                        .iter()
                        .position(|&r| r >= level)
                        .map_or(0.0, |i| precision[i])
                })
                .sum::<f64>()
                / 11.0
        }
    }
}

pub fn evaluate(gts: &[GroundTruthRecord], dets: &[DetectionRecord], cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    evaluate_with(gts, dets, cfg, Exec::default())
}

/// [`evaluate`] with an explicit execution strategy; per-group matching and
/// per-class AP run through `exec`.
pub fn evaluate_with(
    gts: &[GroundTruthRecord],
    dets: &[DetectionRecord],
    cfg: &EvalConfig,
    exec: Exec,
) -> Result<EvalReport, EvalError> {
    cfg.validate()?;
    for d in dets {
        if !(0.0..=1.0).contains(&d.score) {
            return Err(EvalError::ScoreOutOfRange(d.score));
        }
    }

    let known: BTreeSet<&str> = gts.iter().map(|g| g.class_label.as_str()).collect();
    let unknown: BTreeSet<&str> = dets
        .iter()
        .map(|d| d.class_label.as_str())
        .filter(|c| !known.contains(c))
        .collect();

    // group indices by (image, class)
    type Group = (Vec<usize>, Vec<usize>);
    let mut groups: HashMap<(&str, &str), Group> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        groups.entry((&g.image_id, &g.class_label)).or_default().0.push(i);
    }
    for (i, d) in dets.iter().enumerate() {
        groups.entry((&d.image_id, &d.class_label)).or_default().1.push(i);
    }
    let mut group_list: Vec<Group> = groups.into_values().filter(|(_, d)| !d.is_empty()).collect();
    // deterministic order regardless of hashing
    group_list.sort_by_key(|(_, d)| d[0]);

    let results = exec::map_slice(exec, &group_list, |(gi, di)| {
        let boxes: Vec<BBox> = gi.iter().map(|&i| gts[i].bbox).collect();
        let scored: Vec<(f64, BBox)> = di.iter().map(|&i| (dets[i].score, dets[i].bbox)).collect();
        match_group(&boxes, &scored, cfg.iou_threshold)
    });
    let mut matched = vec![false; dets.len()];
    for ((_, di), tp) in group_list.iter().zip(results) {
        for (&i, t) in di.iter().zip(tp) {
            matched[i] = t;
        }
    }

    let n_gt = gts.len();
    let count_at = |threshold: f64| {
        let (mut tp, mut fp) = (0, 0);
        for (d, &m) in dets.iter().zip(&matched) {
            if d.score >= threshold {
                if m {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        OperatingPoint::from_counts(threshold, tp, fp, n_gt)
    };
    let at_threshold = count_at(cfg.conf_threshold);

    let mut thresholds: Vec<f64> = dets.iter().map(|d| d.score).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let best_f1 = thresholds
        .into_iter()
        .map(count_at)
        .reduce(|best, p| if p.f1 > best.f1 { p } else { best });

    let classes: Vec<&str> = known.iter().copied().collect();
    let aps = exec::map_slice(exec, &classes, |&class| {
        let n = gts.iter().filter(|g| g.class_label == class).count();
        let scored = dets
            .iter()
            .enumerate()
            .filter(|(_, d)| d.class_label == class)
            .map(|(i, d)| (d.score, i, matched[i]))
            .collect();
        average_precision(scored, n, cfg.interpolation)
    });
    let per_class_ap: BTreeMap<String, f64> = classes.iter().map(|c| c.to_string()).zip(aps).collect();
    let map50 = if per_class_ap.is_empty() {
        0.0
    } else {
        per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64
    };

    Ok(EvalReport {
        iou_threshold: cfg.iou_threshold,
        at_threshold,
        best_f1,
        per_class_ap,
        map50,
        unknown_classes: unknown.into_iter().map(str::to_string).collect(),
        matched,
    })
}
