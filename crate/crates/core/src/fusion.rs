//! Shape inference over the high-resolution fusion neck.
//!
//! The standard graph built by [`infer_fusion`] is
//!
//! ```text
//! fuse   = concat(resize(P5 → P3), resize(P4 → P3), P3)
//! sup    = agrfm(fuse)
//! b2     = concat(resize(sup → P2), P2)
//! ```
//!
//! AGRFM is a shape-only passthrough here; its receptive-field behavior is
//! analyzed by [`crate::gridscope`].

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::archspec::Stage;
use crate::rf::StageReport;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FusionError {
    #[error("node `{node}`: input id {input} does not refer to an earlier node")]
    UnknownInput { node: String, input: NodeId },
    #[error("node `{node}`: concat needs at least one input")]
    EmptyConcat { node: String },
    #[error("node `{node}`: zero-sized dimension in {shape}")]
    ZeroDimension { node: String, shape: TensorShape },
    #[error("concat `{node}`: spatial mismatch between {first} and {other}")]
    ConcatMismatch {
        node: String,
        first: TensorShape,
        other: TensorShape,
    },
    #[error("missing stage {0} in the stage table")]
    MissingStage(Stage),
    #[error("missing channel count for stage {0}")]
    MissingChannels(Stage),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorShape {
    pub height: u64,
    pub width: u64,
    pub channels: u64,
}

impl TensorShape {
    pub fn new(height: u64, width: u64, channels: u64) -> Self {
        Self { height, width, channels }
    }

    fn has_zero(&self) -> bool {
        self.height == 0 || self.width == 0 || self.channels == 0
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}×{}×{}", self.height, self.width, self.channels)
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FusionOp {
    Source(TensorShape),
    BilinearResize { height: u64, width: u64 },
    Concat,
    /// Output channels; `None` keeps the input's.
    AgrfmPassthrough { channels: Option<u64> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionNode {
    pub id: NodeId,
    pub name: String,
    pub op: FusionOp,
    pub inputs: Vec<NodeId>,
    pub shape: Option<TensorShape>,
}

/// A DAG whose nodes may only consume earlier nodes, so it is acyclic by
/// construction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FusionGraph {
    nodes: Vec<FusionNode>,
}

impl FusionGraph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: &str, op: FusionOp, inputs: Vec<NodeId>) -> Result<NodeId, FusionError> {
        let id = self.nodes.len();
        if let Some(&bad) = inputs.iter().find(|&&i| i >= id) {
            return Err(FusionError::UnknownInput {
                node: name.to_string(),
                input: bad,
            });
        }
        self.nodes.push(FusionNode {
            id,
            name: name.to_string(),
            op,
            inputs,
            shape: None,
        });
        Ok(id)
    }

    pub fn add_source(&mut self, name: &str, shape: TensorShape) -> NodeId {
        self.push(name, FusionOp::Source(shape), Vec::new())
            .expect("sources have no inputs")
    }

    pub fn add_resize(&mut self, name: &str, input: NodeId, height: u64, width: u64) -> Result<NodeId, FusionError> {
        self.push(name, FusionOp::BilinearResize { height, width }, vec![input])
    }

    pub fn add_concat(&mut self, name: &str, inputs: &[NodeId]) -> Result<NodeId, FusionError> {
        if inputs.is_empty() {
            return Err(FusionError::EmptyConcat { node: name.to_string() });
        }
        self.push(name, FusionOp::Concat, inputs.to_vec())
    }

    pub fn add_agrfm(&mut self, name: &str, input: NodeId, channels: Option<u64>) -> Result<NodeId, FusionError> {
        self.push(name, FusionOp::AgrfmPassthrough { channels }, vec![input])
    }

    pub fn nodes(&self) -> &[FusionNode] {
        &self.nodes
    }

    pub fn node(&self, name: &str) -> Option<&FusionNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    /// Inferred shape of a named node, if inference has run.
    pub fn shape(&self, name: &str) -> Option<TensorShape> {
        self.node(name).and_then(|n| n.shape)
    }

    /// Infers every node's shape in insertion order.
    pub fn infer(&mut self) -> Result<(), FusionError> {
        for i in 0..self.nodes.len() {
            let node = &self.nodes[i];
            let input = |k: usize| self.nodes[node.inputs[k]].shape.expect("inputs precede consumers");
            let shape = match &node.op {
                FusionOp::Source(shape) => *shape,
                FusionOp::BilinearResize { height, width } => TensorShape::new(*height, *width, input(0).channels),
                FusionOp::AgrfmPassthrough { channels } => {
                    let s = input(0);
                    TensorShape::new(s.height, s.width, channels.unwrap_or(s.channels))
                }
                FusionOp::Concat => {
                    let first = input(0);
                    let mut channels = 0;
                    for k in 0..node.inputs.len() {
                        let other = input(k);
                        if (other.height, other.width) != (first.height, first.width) {
                            return Err(FusionError::ConcatMismatch {
                                node: node.name.clone(),
                                first,
                                other,
                            });
                        }
                        channels += other.channels;
                    }
                    TensorShape::new(first.height, first.width, channels)
                }
            };
            if shape.has_zero() {
                return Err(FusionError::ZeroDimension {
                    node: node.name.clone(),
                    shape,
                });
            }
            self.nodes[i].shape = Some(shape);
        }
        Ok(())
    }
}

/// Builds and shape-checks the standard fusion neck from backbone stage
/// reports and caller-supplied channel counts for `P2..P5`.
///
/// `sup_channels` overrides the AGRFM output width; `None` preserves it.
/// Nodes are named `P2..P5`, `P5_up`, `P4_up`, `fuse`, `sup`, `sup_up`, `b2`.
pub fn infer_fusion(
    stages: &[StageReport],
    channels: &BTreeMap<Stage, u64>,
    sup_channels: Option<u64>,
) -> Result<FusionGraph, FusionError> {
    let mut graph = FusionGraph::new();
    let source = |graph: &mut FusionGraph, stage: Stage| -> Result<(NodeId, u64), FusionError> {
        let report = stages
            .iter()
            .find(|r| r.stage == stage)
            .ok_or(FusionError::MissingStage(stage))?;
        let c = *channels.get(&stage).ok_or(FusionError::MissingChannels(stage))?;
        Ok((graph.add_source(stage.name(), TensorShape::new(report.size, report.size, c)), report.size))
    };
    let (p2, p2_size) = source(&mut graph, Stage::P2)?;
    let (p3, p3_size) = source(&mut graph, Stage::P3)?;
    let (p4, _) = source(&mut graph, Stage::P4)?;
    let (p5, _) = source(&mut graph, Stage::P5)?;

    let p5_up = graph.add_resize("P5_up", p5, p3_size, p3_size)?;
    let p4_up = graph.add_resize("P4_up", p4, p3_size, p3_size)?;
    let fuse = graph.add_concat("fuse", &[p5_up, p4_up, p3])?;
    let sup = graph.add_agrfm("sup", fuse, sup_channels)?;
    let sup_up = graph.add_resize("sup_up", sup, p2_size, p2_size)?;
    graph.add_concat("b2", &[sup_up, p2])?;
    graph.infer()?;
    Ok(graph)
}
