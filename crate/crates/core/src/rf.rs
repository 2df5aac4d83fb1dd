//! Theoretical receptive field, cumulative stride and output size through a
//! convolution stack.
//!
//! Layer `n` updates the state as
//!
//! ```text
//! rf_n   = rf_{n-1} + d_n·(k_n − 1)·jump_{n-1}
//! jump_n = jump_{n-1}·s_n
//! size_n = ⌊(size_{n-1} + 2p − d_n·(k_n − 1) − 1) / s_n⌋ + 1,   p = d_n·(k_n − 1)/2
//! ```
//!
//! Only "same" padding is modeled, so kernels must be odd.

use std::fmt::Write as _;

use thiserror::Error;

use crate::archspec::{NetworkSpec, Stage};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RfError {
    #[error("layer {layer}: even kernel {kernel} is unsupported with same padding")]
    EvenKernel { layer: usize, kernel: u32 },
    #[error("layer {layer}: spatial size underflows below 1")]
    SizeUnderflow { layer: usize },
    #[error("layer {layer}: receptive field or stride product overflows")]
    Overflow { layer: usize },
}

/// State of one feature map relative to the input image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RfState {
    pub rf: u64,
    pub jump: u64,
    pub size: u64,
}

impl RfState {
    pub fn input(input_size: u32) -> Self {
        Self {
            rf: 1,
            jump: 1,
            size: u64::from(input_size),
        }
    }
}

/// Per-layer states, one per layer of `spec` (the input state is not included).
pub fn propagate(spec: &NetworkSpec) -> Result<Vec<RfState>, RfError> {
    let mut state = RfState::input(spec.input_size());
    let mut out = Vec::with_capacity(spec.layers().len());
    for (i, layer) in spec.layers().iter().enumerate() {
        if layer.kernel() % 2 == 0 {
            return Err(RfError::EvenKernel {
                layer: i,
                kernel: layer.kernel(),
            });
        }
        let span = u64::from(layer.dilation()) * u64::from(layer.kernel() - 1);
        let stride = u64::from(layer.stride());
        let rf = span
            .checked_mul(state.jump)
            .and_then(|g| g.checked_add(state.rf))
            .ok_or(RfError::Overflow { layer: i })?;
        let jump = state.jump.checked_mul(stride).ok_or(RfError::Overflow { layer: i })?;
        let pad = span / 2;
        let numer = (state.size + 2 * pad)
            .checked_sub(span + 1)
            .ok_or(RfError::SizeUnderflow { layer: i })?;
        let size = numer / stride + 1;
        state = RfState { rf, jump, size };
        out.push(state);
    }
    Ok(out)
}

/// RF of the whole stack (1 for an empty stack).
pub fn stack_rf(spec: &NetworkSpec) -> Result<u64, RfError> {
    Ok(propagate(spec)?.last().map_or(1, |s| s.rf))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StageReport {
    pub stage: Stage,
    pub size: u64,
    pub rf: u64,
    pub jump: u64,
}

/// One report per marked stage, in `P1..P5` order.
pub fn stage_table(spec: &NetworkSpec) -> Result<Vec<StageReport>, RfError> {
    if spec.stage_marks().is_empty() {
        return Ok(Vec::new());
    }
    let states = propagate(spec)?;
    Ok(spec
        .stage_marks()
        .iter()
        .map(|(&stage, &idx)| {
            let s = states[idx];
            StageReport {
                stage,
                size: s.size,
                rf: s.rf,
                jump: s.jump,
            }
        })
        .collect())
}

/// `stage,size,rf,jump` with LF line endings.
pub fn stage_table_csv(reports: &[StageReport]) -> String {
    let mut out = String::from("stage,size,rf,jump\n");
    for r in reports {
        let _ = writeln!(out, "{},{},{},{}", r.stage, r.size, r.rf, r.jump);
    }
    out
}

/// Per-layer table `layer,label,kernel,stride,dilation,rf,jump,size`.
pub fn layer_table_csv(spec: &NetworkSpec, states: &[RfState]) -> String {
    let mut out = String::from("layer,label,kernel,stride,dilation,rf,jump,size\n");
    for (i, (layer, s)) in spec.layers().iter().zip(states).enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{},{},{}",
            crate::csvio::quote(layer.label().unwrap_or("")),
            layer.kernel(),
            layer.stride(),
            layer.dilation(),
            s.rf,
            s.jump,
            s.size
        );
    }
    out
}
