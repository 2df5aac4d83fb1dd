//! Pixel-utilization maps for stride-1 convolution stacks and the anti-grid
//! admissibility rule for a final dilated convolution.
//!
//! The utilization count of an input offset `p` is the number of distinct
//! tap-paths (one tap per layer) from `p` to the central output unit. Zeros
//! inside the map's support are the gridding holes of a dilated stack.

use std::fmt::Write as _;

use num_rational::Ratio;
use thiserror::Error;

use crate::archspec::{LayerSpec, NetworkSpec, SpecError};
use crate::exec::{self, Exec};

/// Largest stack receptive field for which a map is materialized.
pub const MAX_MAP_RF: u64 = 1024;

/// Intensity ramp for [`UtilizationMap::to_ascii`], from zero to maximum.
pub const ASCII_RAMP: &[u8; 10] = b" .:-=+*#%@";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GridError {
    #[error("utilization map needs a non-empty stack")]
    EmptyStack,
    #[error("layer {layer}: stride {stride} is unsupported for utilization maps (stride 1 only)")]
    Strided { layer: usize, stride: u32 },
    #[error("layer {layer}: even kernel {kernel} has no center tap")]
    EvenKernel { layer: usize, kernel: u32 },
    #[error("receptive field {rf} exceeds the map limit of {MAX_MAP_RF}")]
    TooLarge { rf: u64 },
    #[error("path counts overflow 64-bit integers")]
    Overflow,
    #[error("pre-stack is empty, so the equivalent kernel k' is undefined")]
    EmptyPreStack,
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error(transparent)]
    Spec(#[from] SpecError),
}

/// Square grid of path counts indexed by offset from the center tap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtilizationMap {
    half_extent: usize,
    counts: Vec<u64>,
}

impl UtilizationMap {
    /// Builds a map from row-major counts; `counts.len()` must be `(2h+1)²`.
    pub fn from_counts(half_extent: usize, counts: Vec<u64>) -> Option<Self> {
        let side = 2 * half_extent + 1;
        (counts.len() == side * side).then_some(Self { half_extent, counts })
    }

    pub fn half_extent(&self) -> usize {
        self.half_extent
    }

    pub fn side(&self) -> usize {
        2 * self.half_extent + 1
    }

    /// Count at offset `(x, y)`; zero outside the grid.
    pub fn get(&self, x: i64, y: i64) -> u64 {
        let h = self.half_extent as i64;
        if x.abs() > h || y.abs() > h {
            return 0;
        }
        self.counts[((y + h) as usize) * self.side() + (x + h) as usize]
    }

    /// Rows from `y = −h` to `y = +h`, each from `x = −h` to `x = +h`.
    pub fn rows(&self) -> std::slice::ChunksExact<'_, u64> {
        self.counts.chunks_exact(self.side())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u128 {
        self.counts.iter().map(|&c| u128::from(c)).sum()
    }

    pub fn max_count(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Bounding box of the nonzero cells as `(x_min, x_max, y_min, y_max)`.
    pub fn support_box(&self) -> Option<(i64, i64, i64, i64)> {
        let h = self.half_extent as i64;
        let side = self.side();
        let mut bbox: Option<(i64, i64, i64, i64)> = None;
        for (i, &c) in self.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let (x, y) = ((i % side) as i64 - h, (i / side) as i64 - h);
            bbox = Some(match bbox {
                None => (x, x, y, y),
                Some((x0, x1, y0, y1)) => (x0.min(x), x1.max(x), y0.min(y), y1.max(y)),
            });
        }
        bbox
    }

    /// Width of the nonzero support along the x axis.
    pub fn support_width(&self) -> u64 {
        self.support_box().map_or(0, |(x0, x1, _, _)| (x1 - x0 + 1) as u64)
    }

    /// Comma-separated integer rows, origin at the grid center.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Plain (P2) PGM with `maxval` equal to the largest count. Counts above
    /// the format's 65535 limit are rescaled proportionally.
    pub fn to_pgm(&self) -> String {
        let max = self.max_count().max(1);
        let (maxval, scale) = if max <= 65535 { (max, None) } else { (65535, Some(max)) };
        let side = self.side();
        let mut out = format!("P2\n{side} {side}\n{maxval}\n");
        for row in self.rows() {
            let mut line = String::new();
            for &c in row {
                let v = match scale {
                    None => c,
                    Some(m) => ((u128::from(c) * 65535 + u128::from(m) / 2) / u128::from(m)) as u64,
                };
                let token = v.to_string();
                // netpbm recommends lines of at most 70 characters
                if !line.is_empty() && line.len() + 1 + token.len() > 70 {
                    out.push_str(&line);
                    out.push('\n');
                    line.clear();
                }
                if !line.is_empty() {
                    line.push(' ');
                }
                line.push_str(&token);
            }
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    /// Heatmap using [`ASCII_RAMP`]. Zero is blank; any nonzero count gets at
    /// least the first visible level so holes stay distinguishable.
    pub fn to_ascii(&self) -> String {
        let max = self.max_count().max(1);
        let mut out = String::new();
        for row in self.rows() {
            for &c in row {
                let level = if c == 0 {
                    0
                } else {
                    ((u128::from(c) * 9 / u128::from(max)) as usize).max(1)
                };
                out.push(ASCII_RAMP[level] as char);
            }
            out.push('\n');
        }
        out
    }
}

fn check_stack(spec: &NetworkSpec) -> Result<u64, GridError> {
    if spec.layers().is_empty() {
        return Err(GridError::EmptyStack);
    }
    let mut rf = 1u64;
    let mut product = 1u128;
    for (i, layer) in spec.layers().iter().enumerate() {
        if layer.stride() != 1 {
            return Err(GridError::Strided {
                layer: i,
                stride: layer.stride(),
            });
        }
        if layer.kernel() % 2 == 0 {
            return Err(GridError::EvenKernel {
                layer: i,
                kernel: layer.kernel(),
            });
        }
        rf = rf.saturating_add(layer.effective_kernel() - 1);
        product = product.saturating_mul(u128::from(layer.kernel()).pow(2));
    }
    if rf > MAX_MAP_RF {
        return Err(GridError::TooLarge { rf });
    }
    // every cell is bounded by the total path count
    if product > u128::from(u64::MAX) {
        return Err(GridError::Overflow);
    }
    Ok(rf)
}

/// Exact utilization map of a stride-1 stack.
pub fn utilization_map(spec: &NetworkSpec) -> Result<UtilizationMap, GridError> {
    utilization_map_with(spec, Exec::default())
}

/// [`utilization_map`] with an explicit execution strategy. Output rows are
/// accumulated independently, so the result does not depend on `exec`.
pub fn utilization_map_with(spec: &NetworkSpec, exec: Exec) -> Result<UtilizationMap, GridError> {
    check_stack(spec)?;
    let mut map = UtilizationMap {
        half_extent: 0,
        counts: vec![1],
    };
    for layer in spec.layers() {
        map = apply_layer(&map, layer, exec);
    }
    Ok(map)
}

/// One 2D convolution of `prev` with the layer's indicator kernel.
fn apply_layer(prev: &UtilizationMap, layer: &LayerSpec, exec: Exec) -> UtilizationMap {
    let step = layer.dilation() as usize;
    let reach = (layer.effective_kernel() as usize - 1) / 2;
    let taps: Vec<usize> = (0..layer.kernel() as usize).map(|t| t * step).collect();
    let old_side = prev.side();
    let half_extent = prev.half_extent + reach;
    let side = 2 * half_extent + 1;

    // Output cell (xi, yi) in new grid indices receives old cell
    // (xi - tx, yi - ty) for tap offsets tx, ty in 0..=2·reach.
    let rows = exec::map_range(exec, side, |yi| {
        let mut row = vec![0u64; side];
        for &ty in &taps {
            let Some(oy) = yi.checked_sub(ty).filter(|&oy| oy < old_side) else {
                continue;
            };
            let old_row = &prev.counts[oy * old_side..(oy + 1) * old_side];
            for &tx in &taps {
                for (ox, &c) in old_row.iter().enumerate() {
                    row[ox + tx] += c;
                }
            }
        }
        row
    });
    UtilizationMap {
        half_extent,
        counts: rows.into_iter().flatten().collect(),
    }
}

/// Descriptive gridding statistics of a map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridDiagnostics {
    /// Any zero cell inside the support bounding box.
    pub has_interior_zeros: bool,
    /// Nonzero cells over support-box cells.
    pub coverage_ratio: Ratio<u64>,
    /// Smallest nonzero count over the largest count.
    pub uniformity: Ratio<u64>,
}

pub fn diagnostics(map: &UtilizationMap) -> GridDiagnostics {
    let Some((x0, x1, y0, y1)) = map.support_box() else {
        return GridDiagnostics {
            has_interior_zeros: false,
            coverage_ratio: Ratio::from_integer(0),
            uniformity: Ratio::from_integer(0),
        };
    };
    let mut nonzero = 0u64;
    let mut min_nonzero = u64::MAX;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let c = map.get(x, y);
            if c > 0 {
                nonzero += 1;
                min_nonzero = min_nonzero.min(c);
            }
        }
    }
    let cells = ((x1 - x0 + 1) * (y1 - y0 + 1)) as u64;
    GridDiagnostics {
        has_interior_zeros: nonzero < cells,
        coverage_ratio: Ratio::new(nonzero, cells),
        uniformity: Ratio::new(min_nonzero, map.max_count()),
    }
}

/// A final dilated conv preceded by standard (dilation 1, stride 1) convs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AntiGridQuery {
    pub pre_stack: Vec<u32>,
    pub last_kernel: u32,
    pub last_dilation: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AntiGridVerdict {
    pub admissible: bool,
    /// Equivalent kernel of the pre-stack, `Σ(k_i − 1) + 1`.
    pub k_prime: u64,
    /// Extent of the last dilated kernel, `(k − 1)·r + 1`.
    pub lhs: u64,
}

fn equivalent_kernel(pre_stack: &[u32]) -> Result<u64, GridError> {
    if pre_stack.is_empty() {
        return Err(GridError::EmptyPreStack);
    }
    if pre_stack.contains(&0) {
        return Err(GridError::NonPositive("pre-stack kernel"));
    }
    Ok(pre_stack.iter().map(|&k| u64::from(k) - 1).sum::<u64>() + 1)
}

/// Admissible iff the dilated kernel's extent is strictly smaller than the
/// equivalent kernel of the preceding standard convolutions.
pub fn check_anti_grid(q: &AntiGridQuery) -> Result<AntiGridVerdict, GridError> {
    let k_prime = equivalent_kernel(&q.pre_stack)?;
    if q.last_kernel == 0 {
        return Err(GridError::NonPositive("last kernel"));
    }
    if q.last_dilation == 0 {
        return Err(GridError::NonPositive("dilation"));
    }
    let lhs = u64::from(q.last_kernel - 1) * u64::from(q.last_dilation) + 1;
    Ok(AntiGridVerdict {
        admissible: lhs < k_prime,
        k_prime,
        lhs,
    })
}

/// Largest admissible dilation for the last conv.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DilationBound {
    /// Largest admissible rate; 0 means no rate ≥ 1 is admissible.
    Max(u64),
    /// A 1×1 last kernel has extent 1 at every rate.
    Unbounded,
}

pub fn max_admissible_dilation(pre_stack: &[u32], last_kernel: u32) -> Result<DilationBound, GridError> {
    let k_prime = equivalent_kernel(pre_stack)?;
    match last_kernel {
        0 => Err(GridError::NonPositive("last kernel")),
        1 => Ok(DilationBound::Unbounded),
        k => Ok(DilationBound::Max(k_prime.saturating_sub(2) / u64::from(k - 1))),
    }
}

/// Dilation branch of an AGRFM block: `n_standard` plain convs then one
/// dilated conv, all stride 1. The input size only matters to the RF engine
/// and is fixed at 640.
pub fn build_agrfm_stack(n_standard: usize, kernel: u32, dilation: u32) -> Result<NetworkSpec, GridError> {
    if n_standard == 0 {
        return Err(GridError::NonPositive("number of standard convs"));
    }
    let mut layers = Vec::with_capacity(n_standard + 1);
    for i in 0..n_standard {
        layers.push(LayerSpec::conv(kernel, 1, 1)?.with_label(format!("std{i}")));
    }
    layers.push(LayerSpec::conv(kernel, 1, dilation)?.with_label("dilated"));
    Ok(NetworkSpec::sequential(640, layers)?)
}

/// `metric,value` rows describing a map.
pub fn diagnostics_csv(map: &UtilizationMap, diag: &GridDiagnostics) -> String {
    let ratio = |r: Ratio<u64>| *r.numer() as f64 / *r.denom() as f64;
    let mut out = String::from("metric,value\n");
    let _ = writeln!(out, "half_extent,{}", map.half_extent());
    let _ = writeln!(out, "support_width,{}", map.support_width());
    let _ = writeln!(out, "total_paths,{}", map.total());
    let _ = writeln!(out, "max_count,{}", map.max_count());
    let _ = writeln!(out, "has_interior_zeros,{}", diag.has_interior_zeros);
    let _ = writeln!(out, "coverage_ratio,{}", ratio(diag.coverage_ratio));
    let _ = writeln!(out, "uniformity,{}", ratio(diag.uniformity));
    out
}
