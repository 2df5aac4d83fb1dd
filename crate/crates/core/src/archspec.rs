//! Convolution-stack descriptions: the data model, its JSON document format,
//! and the backbone template generator.
//!
//! A [`NetworkSpec`] is a purely sequential stack of convolutions. Stage marks
//! tag the last layer of each pyramid level `P1..P5`. Non-sequential structure
//! (resizes, concatenations) lives in [`crate::fusion`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest per-stage bottleneck count accepted by [`BackboneParams`].
pub const MAX_BLOCKS_PER_STAGE: u32 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("schema violation: {0}")]
    Schema(String),
}

/// Pyramid level of a backbone feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    P1,
    P2,
    P3,
    P4,
    P5,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::P1, Stage::P2, Stage::P3, Stage::P4, Stage::P5];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["P1", "P2", "P3", "P4", "P5"][self.index()]
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| SpecError::Schema(format!("unknown stage `{s}` (expected P1..P5)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
}

/// One square convolution.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    kind: LayerKind,
    kernel: u32,
    stride: u32,
    dilation: u32,
    label: Option<String>,
}

impl LayerSpec {
    pub fn conv(kernel: u32, stride: u32, dilation: u32) -> Result<Self, SpecError> {
        for (name, value) in [("kernel", kernel), ("stride", stride), ("dilation", dilation)] {
            if value == 0 {
                return Err(SpecError::Schema(format!("{name} must be positive")));
            }
        }
        Ok(Self {
            kind: LayerKind::Conv,
            kernel,
            stride,
            dilation,
            label: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn kernel(&self) -> u32 {
        self.kernel
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn dilation(&self) -> u32 {
        self.dilation
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    /// Input-pixel extent covered by the dilated kernel: `d·(k−1)+1`.
    pub fn effective_kernel(&self) -> u64 {
        u64::from(self.dilation) * u64::from(self.kernel - 1) + 1
    }
}

/// A validated sequential convolution stack on a square input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    layers: Vec<LayerSpec>,
    stage_marks: BTreeMap<Stage, usize>,
    input_size: u32,
}

impl NetworkSpec {
    /// Builds a spec, checking that stage marks are in range and strictly
    /// increasing in `P1..P5` order.
    pub fn new(input_size: u32, layers: Vec<LayerSpec>, stage_marks: BTreeMap<Stage, usize>) -> Result<Self, SpecError> {
        if input_size == 0 {
            return Err(SpecError::Schema("input_size must be positive".into()));
        }
        let mut previous: Option<(Stage, usize)> = None;
        for (&stage, &idx) in &stage_marks {
            if idx >= layers.len() {
                return Err(SpecError::Schema(format!(
                    "stage {stage} marks layer {idx} but the stack has {} layers",
                    layers.len()
                )));
            }
            if let Some((prev_stage, prev_idx)) = previous {
                if idx <= prev_idx {
                    return Err(SpecError::Schema(format!(
                        "stage marks out of order: {prev_stage}={prev_idx} but {stage}={idx}"
                    )));
                }
            }
            previous = Some((stage, idx));
        }
        Ok(Self {
            layers,
            stage_marks,
            input_size,
        })
    }

    /// Unmarked stack.
    pub fn sequential(input_size: u32, layers: Vec<LayerSpec>) -> Result<Self, SpecError> {
        Self::new(input_size, layers, BTreeMap::new())
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn stage_marks(&self) -> &BTreeMap<Stage, usize> {
        &self.stage_marks
    }

    pub fn input_size(&self) -> u32 {
        self.input_size
    }

    /// Same stack evaluated on a different input resolution.
    pub fn with_input_size(&self, input_size: u32) -> Result<Self, SpecError> {
        Self::new(input_size, self.layers.clone(), self.stage_marks.clone())
    }

    /// Serializes to the JSON document format accepted by [`parse_network`].
    pub fn to_json(&self) -> String {
        let doc = Document {
            input_size: i64::from(self.input_size),
            layers: self
                .layers
                .iter()
                .map(|l| LayerDoc {
                    kind: l.kind,
                    kernel: i64::from(l.kernel),
                    stride: i64::from(l.stride),
                    dilation: i64::from(l.dilation),
                    label: l.label.clone(),
                })
                .collect(),
            stages: self.stage_marks.iter().map(|(s, &i)| (s.name().to_string(), i as i64)).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("document serialization is infallible")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    input_size: i64,
    layers: Vec<LayerDoc>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    stages: BTreeMap<String, i64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    kind: LayerKind,
    kernel: i64,
    stride: i64,
    dilation: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

fn positive(value: i64, what: impl FnOnce() -> String) -> Result<u32, SpecError> {
    u32::try_from(value)
        .ok()
        .filter(|&v| v > 0)
        .ok_or_else(|| SpecError::Schema(format!("{} must be a positive integer, got {value}", what())))
}

/// Parses and validates a network document.
///
/// ```json
/// {"input_size": 640,
///  "layers": [{"kind": "conv", "kernel": 3, "stride": 2, "dilation": 1, "label": "stem"}],
///  "stages": {"P1": 0}}
/// ```
pub fn parse_network(text: &str) -> Result<NetworkSpec, SpecError> {
    let doc: Document = serde_json::from_str(text).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Data => SpecError::Schema(e.to_string()),
            _ => SpecError::Syntax {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            },
        }
    })?;

    let input_size = positive(doc.input_size, || "input_size".into())?;
    let layers = doc
        .layers
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let kernel = positive(l.kernel, || format!("layers[{i}].kernel"))?;
            let stride = positive(l.stride, || format!("layers[{i}].stride"))?;
            let dilation = positive(l.dilation, || format!("layers[{i}].dilation"))?;
            let mut layer = LayerSpec::conv(kernel, stride, dilation)?;
            layer.label = l.label;
            Ok(layer)
        })
        .collect::<Result<Vec<_>, SpecError>>()?;
    let stage_marks = doc
        .stages
        .into_iter()
        .map(|(name, idx)| {
            let stage: Stage = name.parse()?;
            let idx = usize::try_from(idx)
                .map_err(|_| SpecError::Schema(format!("stage {stage} has negative layer index {idx}")))?;
            Ok((stage, idx))
        })
        .collect::<Result<BTreeMap<_, _>, SpecError>>()?;
    NetworkSpec::new(input_size, layers, stage_marks)
}

/// Bottleneck counts per stage for [`build_backbone`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BackboneParams {
    block_counts: [u32; 5],
    input_size: u32,
}

impl BackboneParams {
    pub fn new(block_counts: [u32; 5], input_size: u32) -> Result<Self, SpecError> {
        if let Some(n) = block_counts.iter().find(|&&n| n > MAX_BLOCKS_PER_STAGE) {
            return Err(SpecError::Schema(format!(
                "block count {n} exceeds the maximum of {MAX_BLOCKS_PER_STAGE}"
            )));
        }
        if input_size == 0 {
            return Err(SpecError::Schema("input_size must be positive".into()));
        }
        Ok(Self {
            block_counts,
            input_size,
        })
    }

    pub fn block_counts(&self) -> [u32; 5] {
        self.block_counts
    }

    pub fn input_size(&self) -> u32 {
        self.input_size
    }
}

/// Generates the backbone template: a 3×3/2 stem, then per stage an optional
/// 3×3/2 downsample (stages 2..5) followed by `n_i` bottlenecks of two 3×3/1
/// convolutions. Each stage is marked at its last layer.
///
/// Layer count is `1 + 4 + 2·Σn_i`.
pub fn build_backbone(params: &BackboneParams) -> NetworkSpec {
    let conv = |stride: u32, label: String| LayerSpec {
        kind: LayerKind::Conv,
        kernel: 3,
        stride,
        dilation: 1,
        label: Some(label),
    };
    let total: u32 = params.block_counts.iter().sum();
    let mut layers = Vec::with_capacity(5 + 2 * total as usize);
    let mut marks = BTreeMap::new();
    layers.push(conv(2, "stem".into()));
    for (stage, &n) in Stage::ALL.iter().zip(&params.block_counts) {
        if *stage != Stage::P1 {
            layers.push(conv(2, format!("{stage}.down")));
        }
        for b in 0..n {
            layers.push(conv(1, format!("{stage}.b{b}.cv1")));
            layers.push(conv(1, format!("{stage}.b{b}.cv2")));
        }
        marks.insert(*stage, layers.len() - 1);
    }
    NetworkSpec {
        layers,
        stage_marks: marks,
        input_size: params.input_size,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document() {
        let spec = parse_network(r#"{"input_size": 640, "layers": [{"kind":"conv","kernel":3,"stride":2,"dilation":1}]}"#)
            .unwrap();
        assert_eq!(spec.layers().len(), 1);
        assert_eq!(spec.input_size(), 640);
        assert!(spec.stage_marks().is_empty());
        assert_eq!(spec.layers()[0].effective_kernel(), 3);
    }

    #[test]
    fn stage_mark_out_of_bounds() {
        let err = parse_network(
            r#"{"input_size": 640, "layers": [{"kind":"conv","kernel":3,"stride":2,"dilation":1}], "stages": {"P1": 1}}"#,
        )
        .unwrap_err();
        assert!(matches!(err, SpecError::Schema(_)), "{err}");
    }

    #[test]
    fn stage_marks_must_increase() {
        let layer = r#"{"kind":"conv","kernel":3,"stride":1,"dilation":1}"#;
        let text = format!(r#"{{"input_size": 64, "layers": [{layer},{layer},{layer}], "stages": {{"P1": 2, "P2": 1}}}}"#);
        assert!(matches!(parse_network(&text), Err(SpecError::Schema(_))));
        let text = format!(r#"{{"input_size": 64, "layers": [{layer},{layer}], "stages": {{"P1": 1, "P2": 1}}}}"#);
        assert!(matches!(parse_network(&text), Err(SpecError::Schema(_))));
    }

    #[test]
    fn schema_violations() {
        let cases = [
            r#"{"input_size": 640, "layers": [{"kind":"conv","kernel":0,"stride":1,"dilation":1}]}"#,
            r#"{"input_size": 640, "layers": [{"kind":"conv","kernel":3,"stride":-2,"dilation":1}]}"#,
            r#"{"input_size": 640, "layers": [{"kind":"conv","kernel":3,"stride":1}]}"#,
            r#"{"input_size": 640, "layers": [{"kind":"conv","kernel":3,"stride":1,"dilation":1,"groups":2}]}"#,
            r#"{"input_size": 640, "layers": [{"kind":"pool","kernel":3,"stride":1,"dilation":1}]}"#,
            r#"{"input_size": 0, "layers": []}"#,
            r#"{"layers": []}"#,
            r#"{"input_size": 640, "layers": [], "stages": {"P6": 0}}"#,
            r#"{"input_size": 640, "layers": [], "extra": true}"#,
        ];
        for text in cases {
            assert!(matches!(parse_network(text), Err(SpecError::Schema(_))), "{text}");
        }
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_network("{\n  \"input_size\": 640,\n  \"layers\": [,]\n}").unwrap_err();
        match err {
            SpecError::Syntax { line, column, .. } => {
                assert_eq!(line, 3);
                assert!(column > 0);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn backbone_layer_counts() {
        let spec = build_backbone(&BackboneParams::new([3, 1, 1, 1, 1], 640).unwrap());
        assert_eq!(spec.layers().len(), 1 + 4 + 2 * 7);
        // stem + three bottlenecks: P1 ends at the 7th layer
        assert_eq!(spec.stage_marks()[&Stage::P1], 6);
        assert_eq!(spec.stage_marks()[&Stage::P5], spec.layers().len() - 1);

        let empty = build_backbone(&BackboneParams::new([0; 5], 640).unwrap());
        assert_eq!(empty.layers().len(), 5);
        let marks: Vec<usize> = empty.stage_marks().values().copied().collect();
        assert_eq!(marks, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn backbone_params_bounds() {
        assert!(BackboneParams::new([16, 0, 0, 0, 16], 640).is_ok());
        assert!(BackboneParams::new([17, 0, 0, 0, 0], 640).is_err());
        assert!(BackboneParams::new([1; 5], 0).is_err());
    }

    #[test]
    fn backbone_round_trips() {
        let spec = build_backbone(&BackboneParams::new([3, 1, 1, 1, 1], 640).unwrap());
        assert_eq!(parse_network(&spec.to_json()).unwrap(), spec);
    }
}
