//! Layer reconstruction error `ℒ_i = ‖W_i X_i − W̃_i X̃_i‖²_F` and numerical
//! checks of how it grows with sparsity and propagates through depth.

use serde::{Deserialize, Serialize};

use crate::allocator::SparsityProfile;
use crate::error::{Error, Result};
use crate::linalg::{frob_norm_sq, matmul, sigma_min, DenseMatrix};
use crate::netmodel::{CalibrationSet, LayerNet};
use crate::pruner::{prune_layer, prune_net, score_layer, Mask, PruneMethod, PruneOptions};

/// `‖w·x − w_sparse·x_sparse‖²_F`.
pub fn layer_error(
    w: &DenseMatrix,
    w_sparse: &DenseMatrix,
    x: &DenseMatrix,
    x_sparse: &DenseMatrix,
) -> Result<f64> {
    let dense = matmul(w, x)?;
    let sparse = matmul(w_sparse, x_sparse)?;
    Ok(frob_norm_sq(&dense.sub(&sparse)?))
}

/// Per-layer reconstruction errors of a sparse network against its dense source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTrace {
    pub per_layer: Vec<f64>,
    pub total: f64,
    /// Fraction of zero weights in each sparse layer.
    pub achieved_rates: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<SparsityProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<PruneMethod>,
}

impl ErrorTrace {
    pub fn with_context(mut self, profile: SparsityProfile, method: PruneMethod) -> Self {
        self.profile = Some(profile);
        self.method = Some(method);
        self
    }
}

fn zero_fraction(w: &DenseMatrix) -> f64 {
    w.as_slice().iter().filter(|&&v| v == 0.0).count() as f64 / w.numel() as f64
}

fn check_same_topology(net: &LayerNet, sparse: &LayerNet) -> Result<()> {
    if net.depth() != sparse.depth()
        || net
            .layers()
            .iter()
            .zip(sparse.layers())
            .any(|(a, b)| a.shape() != b.shape())
    {
        return Err(Error::shape("dense and sparse networks differ in topology"));
    }
    Ok(())
}

/// Runs the dense branch `X_{i+1} = act(W_i X_i)` and the sparse branch
/// `X̃_{i+1} = act(W̃_i X̃_i)` from the same calibration input and records the
/// pre-activation error of every layer.
pub fn trace_errors(net: &LayerNet, sparse_net: &LayerNet, calib: &CalibrationSet) -> Result<ErrorTrace> {
    check_same_topology(net, sparse_net)?;
    let act = net.activation();
    let mut x = calib.x0.clone();
    let mut x_sparse = calib.x0.clone();
    let mut per_layer = Vec::with_capacity(net.depth());
    for (w, w_sparse) in net.layers().iter().zip(sparse_net.layers()) {
        let out = matmul(w, &x)?;
        let out_sparse = matmul(w_sparse, &x_sparse)?;
        per_layer.push(frob_norm_sq(&out.sub(&out_sparse)?));
        x = act.apply(out);
        x_sparse = act.apply(out_sparse);
    }
    Ok(ErrorTrace {
        total: per_layer.iter().sum(),
        per_layer,
        achieved_rates: sparse_net.layers().iter().map(zero_fraction).collect(),
        profile: None,
        method: None,
    })
}

/// Squared error between the final dense and sparse outputs.
pub fn output_error(net: &LayerNet, sparse_net: &LayerNet, calib: &CalibrationSet) -> Result<f64> {
    check_same_topology(net, sparse_net)?;
    let act = net.activation();
    let mut x = calib.x0.clone();
    let mut x_sparse = calib.x0.clone();
    for (w, w_sparse) in net.layers().iter().zip(sparse_net.layers()) {
        x = act.apply(matmul(w, &x)?);
        x_sparse = act.apply(matmul(w_sparse, &x_sparse)?);
    }
    Ok(frob_norm_sq(&x.sub(&x_sparse)?))
}

/// Error of a single layer as its sparsity sweeps a grid, inputs held dense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub grid: Vec<f64>,
    pub errors: Vec<f64>,
    /// Whether each mask keeps a subset of the previous one.
    pub nested: bool,
    /// Fraction of adjacent grid pairs with non-decreasing error.
    pub monotone_fraction: f64,
}

impl MonotonicityReport {
    pub fn is_monotone(&self) -> bool {
        self.errors.windows(2).all(|p| p[1] >= p[0])
    }
}

/// Sweeps one layer's sparsity over `grid` with scores fixed from the dense
/// input `x`, and reports how often the error grows along the grid.
pub fn check_theorem1(
    w: &DenseMatrix,
    x: &DenseMatrix,
    grid: &[f64],
    method: PruneMethod,
) -> Result<MonotonicityReport> {
    if grid.windows(2).any(|p| p[1] < p[0]) {
        return Err(Error::domain("sparsity grid must be ascending"));
    }
    let scores = score_layer(w, Some(x), method)?;
    let reference = matmul(w, x)?;
    let mut errors = Vec::with_capacity(grid.len());
    let mut nested = true;
    let mut prev: Option<Mask> = None;
    for &s in grid {
        let mask = match method {
            PruneMethod::NmGroup { m, .. } => {
                let keep = (m as f64 * (1.0 - s)).round() as usize;
                crate::pruner::nm_mask(&scores, keep, m)?
            }
            _ => prune_layer(&scores, s)?,
        };
        let sparse_out = matmul(&mask.apply(w)?, x)?;
        errors.push(frob_norm_sq(&reference.sub(&sparse_out)?));
        if let Some(p) = &prev {
            nested &= mask.kept_subset_of(p);
        }
        prev = Some(mask);
    }
    let pairs = errors.len().saturating_sub(1);
    let up = errors.windows(2).filter(|p| p[1] >= p[0]).count();
    Ok(MonotonicityReport {
        grid: grid.to_vec(),
        errors,
        nested,
        monotone_fraction: if pairs == 0 { 1.0 } else { up as f64 / pairs as f64 },
    })
}

/// One adjacent-layer comparison `ℒ_{i+1}` against `σ_min²(W̃_{i+1})·ℒ_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    /// Zero-based index of the later layer.
    pub layer: usize,
    pub lhs: f64,
    pub sigma_min_sq: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl BoundRow {
    pub fn ratio(&self) -> f64 {
        self.lhs / self.rhs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    /// Pairs skipped because the earlier layer had no error or the later
    /// sparse layer is entirely zero.
    pub skipped: usize,
}

impl BoundReport {
    pub fn applicable(&self) -> usize {
        self.rows.len()
    }

    pub fn satisfied(&self) -> usize {
        self.rows.iter().filter(|r| r.holds).count()
    }

    pub fn satisfaction_fraction(&self) -> f64 {
        if self.rows.is_empty() {
            1.0
        } else {
            self.satisfied() as f64 / self.rows.len() as f64
        }
    }
}

/// Evaluates the propagation lower bound for every adjacent layer pair.
pub fn check_theorem2_bound(trace: &ErrorTrace, sparse_net: &LayerNet) -> Result<BoundReport> {
    if trace.per_layer.len() != sparse_net.depth() {
        return Err(Error::shape("trace and network depth differ"));
    }
    let mut rows = Vec::new();
    let mut skipped = 0;
    for i in 0..sparse_net.depth().saturating_sub(1) {
        let prev = trace.per_layer[i];
        let next_w = sparse_net.layer(i + 1);
        if prev <= 0.0 || next_w.is_zero() {
            skipped += 1;
            continue;
        }
        let smin = sigma_min(next_w)?;
        let sigma_min_sq = smin * smin;
        let rhs = sigma_min_sq * prev;
        let lhs = trace.per_layer[i + 1];
        rows.push(BoundRow {
            layer: i + 1,
            lhs,
            sigma_min_sq,
            rhs,
            holds: lhs > rhs,
        });
    }
    Ok(BoundReport { rows, skipped })
}

/// Next-layer error before and after raising one layer's rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationTrial {
    pub layer: usize,
    pub next_error_before: f64,
    pub next_error_after: f64,
}

impl PropagationTrial {
    pub fn non_decreasing(&self) -> bool {
        self.next_error_after >= self.next_error_before
    }
}

/// Prunes `net` at `rates`, then again with `rates[layer] + bump` (others
/// fixed), and compares the error of layer `layer + 1`.
pub fn check_theorem3(
    net: &LayerNet,
    calib: &CalibrationSet,
    rates: &[f64],
    layer: usize,
    bump: f64,
    method: PruneMethod,
) -> Result<PropagationTrial> {
    if layer + 1 >= net.depth() {
        return Err(Error::domain(format!(
            "layer {layer} has no successor in a {}-layer network",
            net.depth()
        )));
    }
    let mut raised = rates.to_vec();
    raised[layer] = (raised[layer] + bump).min(1.0);
    let before = SparsityProfile::explicit(rates.to_vec())?;
    let after = SparsityProfile::explicit(raised)?;
    let opts = PruneOptions::default();
    let t0 = trace_errors(net, &prune_net(net, calib, &before, method, opts)?.sparse_net, calib)?;
    let t1 = trace_errors(net, &prune_net(net, calib, &after, method, opts)?.sparse_net, calib)?;
    Ok(PropagationTrial {
        layer,
        next_error_before: t0.per_layer[layer + 1],
        next_error_after: t1.per_layer[layer + 1],
    })
}

/// Row of the exported trace table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub layer_index: usize,
    pub rate: f64,
    pub error: f64,
    /// `σ_min²` of the sparse layer, absent for an all-zero layer.
    pub sigma_min_sq: Option<f64>,
    /// `σ_min²(W̃_i)·ℒ_{i−1}`, absent for the first layer.
    pub bound_rhs: Option<f64>,
}

pub fn trace_rows(trace: &ErrorTrace, sparse_net: &LayerNet) -> Result<Vec<TraceRow>> {
    if trace.per_layer.len() != sparse_net.depth() {
        return Err(Error::shape("trace and network depth differ"));
    }
    sparse_net
        .layers()
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let sigma_min_sq = if w.is_zero() {
                None
            } else {
                let s = sigma_min(w)?;
                Some(s * s)
            };
            Ok(TraceRow {
                layer_index: i,
                rate: trace.achieved_rates[i],
                error: trace.per_layer[i],
                sigma_min_sq,
                bound_rhs: match (i, sigma_min_sq) {
                    (0, _) | (_, None) => None,
                    (_, Some(s2)) => Some(s2 * trace.per_layer[i - 1]),
                },
            })
        })
        .collect()
}
