//! Layer masks from magnitude, activation-aware and N:M group scores.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::allocator::SparsityProfile;
use crate::error::{Error, Result};
use crate::linalg::{matmul, DenseMatrix};
use crate::netmodel::{forward, CalibrationSet, LayerNet};

/// Binary keep-mask over a weight matrix; `true` keeps the weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl Mask {
    pub fn from_keep(rows: usize, cols: usize, keep: Vec<bool>) -> Result<Self> {
        if rows == 0 || cols == 0 || keep.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} mask entries for a {rows}x{cols} layer",
                keep.len()
            )));
        }
        Ok(Self { rows, cols, keep })
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            keep: vec![true; rows * cols],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn numel(&self) -> usize {
        self.keep.len()
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn zeros_count(&self) -> usize {
        self.keep.iter().filter(|&&k| !k).count()
    }

    /// Fraction of pruned entries.
    pub fn sparsity(&self) -> f64 {
        self.zeros_count() as f64 / self.numel() as f64
    }

    /// `w ⊙ mask`.
    pub fn apply(&self, w: &DenseMatrix) -> Result<DenseMatrix> {
        if w.shape() != self.shape() {
            return Err(Error::shape(format!(
                "mask {:?} does not fit weights {:?}",
                self.shape(),
                w.shape()
            )));
        }
        let data = w
            .as_slice()
            .iter()
            .zip(&self.keep)
            .map(|(&v, &k)| if k { v } else { 0.0 })
            .collect();
        Ok(DenseMatrix::from_parts(self.rows, self.cols, data))
    }

    /// True when every weight kept here is also kept by `other`.
    pub fn kept_subset_of(&self, other: &Mask) -> bool {
        self.shape() == other.shape()
            && self.keep.iter().zip(&other.keep).all(|(&a, &b)| !a || b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMethod {
    /// `|w_ij|`
    Magnitude,
    /// `|w_ij| · ‖X_j‖₂`, the input feature norm over calibration samples.
    WandaStyle,
    /// Keep `n` of every `m` consecutive inputs, ranked by the activation-aware
    /// score. Inside [`prune_net`] `n` is the network-average and the per-layer
    /// counts come from [`nm_allocation`].
    NmGroup { n: usize, m: usize },
}

impl fmt::Display for PruneMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PruneMethod::Magnitude => write!(f, "magnitude"),
            PruneMethod::WandaStyle => write!(f, "wanda"),
            PruneMethod::NmGroup { n, m } => write!(f, "nm:{n}:{m}"),
        }
    }
}

impl FromStr for PruneMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "magnitude" => Ok(PruneMethod::Magnitude),
            "wanda" | "wanda_style" => Ok(PruneMethod::WandaStyle),
            _ => {
                let parts: Vec<_> = lower.split(':').collect();
                match parts.as_slice() {
                    ["nm", n, m] => {
                        let n = n.parse().map_err(|_| Error::domain(format!("bad N in '{s}'")))?;
                        let m = m.parse().map_err(|_| Error::domain(format!("bad M in '{s}'")))?;
                        if m == 0 || n > m {
                            return Err(Error::domain(format!("need 0 <= N <= M and M > 0 in '{s}'")));
                        }
                        Ok(PruneMethod::NmGroup { n, m })
                    }
                    _ => Err(Error::domain(format!(
                        "unknown prune method '{s}' (magnitude, wanda, nm:N:M)"
                    ))),
                }
            }
        }
    }
}

/// Set of weights competing for the same pruning budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Layer,
    /// Each output row keeps its own budget, as Wanda does.
    Row,
}

/// Which activations feed the activation-aware score in [`prune_net`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringInput {
    /// Inputs propagated through the already-pruned prefix.
    #[default]
    Sparse,
    /// Inputs of the dense network.
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PruneOptions {
    pub granularity: Granularity,
    pub scoring_input: ScoringInput,
}

pub fn score_layer(w: &DenseMatrix, x: Option<&DenseMatrix>, method: PruneMethod) -> Result<DenseMatrix> {
    match method {
        PruneMethod::Magnitude => Ok(w.map(f64::abs)),
        PruneMethod::WandaStyle | PruneMethod::NmGroup { .. } => {
            let x = x.ok_or_else(|| Error::shape("activation-aware scoring needs calibration inputs"))?;
            if x.rows() != w.cols() {
                return Err(Error::shape(format!(
                    "inputs have {} features, layer expects {}",
                    x.rows(),
                    w.cols()
                )));
            }
            let norms: Vec<f64> = (0..x.rows())
                .map(|j| x.row(j).iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect();
            let data = w
                .as_slice()
                .chunks(w.cols())
                .flat_map(|row| row.iter().zip(&norms).map(|(v, n)| v.abs() * n))
                .collect();
            Ok(DenseMatrix::from_parts(w.rows(), w.cols(), data))
        }
    }
}

fn check_rate(s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::domain(format!("sparsity {s} outside [0, 1]")));
    }
    Ok(())
}

/// Indices of `scores[idx]` in ascending (score, index) order.
fn ascending_order(scores: &[f64], idx: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut order: Vec<usize> = idx.collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order
}

/// Prunes the `round(s · numel)` lowest-scoring weights of the whole layer;
/// equal scores prune the lower flat index first.
pub fn prune_layer(score: &DenseMatrix, s: f64) -> Result<Mask> {
    check_rate(s)?;
    let n = score.numel();
    let k = (s * n as f64).round() as usize;
    let mut keep = vec![true; n];
    for &i in ascending_order(score.as_slice(), 0..n).iter().take(k) {
        keep[i] = false;
    }
    Mask::from_keep(score.rows(), score.cols(), keep)
}

/// Per-row variant of [`prune_layer`]: each row prunes `round(s · cols)`.
pub fn prune_layer_rows(score: &DenseMatrix, s: f64) -> Result<Mask> {
    check_rate(s)?;
    let cols = score.cols();
    let k = (s * cols as f64).round() as usize;
    let mut keep = vec![true; score.numel()];
    for r in 0..score.rows() {
        let base = r * cols;
        for &i in ascending_order(score.as_slice(), base..base + cols).iter().take(k) {
            keep[i] = false;
        }
    }
    Mask::from_keep(score.rows(), cols, keep)
}

/// N:M group mask along the input dimension of each output row.
///
/// Each full group of `m` keeps its `n` highest scores (equal scores keep the
/// lower index). A trailing partial group of length `len` keeps `⌈n·len/m⌉`.
pub fn nm_mask(score: &DenseMatrix, n: usize, m: usize) -> Result<Mask> {
    if m == 0 || n > m {
        return Err(Error::domain(format!("invalid N:M pattern {n}:{m}")));
    }
    let cols = score.cols();
    let data = score.as_slice();
    let mut keep = vec![false; score.numel()];
    for r in 0..score.rows() {
        let mut start = 0;
        while start < cols {
            let len = m.min(cols - start);
            let quota = if len == m { n } else { (n * len).div_ceil(m) };
            let base = r * cols + start;
            let mut group: Vec<usize> = (base..base + len).collect();
            group.sort_by(|&a, &b| data[b].total_cmp(&data[a]).then(a.cmp(&b)));
            for &i in group.iter().take(quota) {
                keep[i] = true;
            }
            start += len;
        }
    }
    Mask::from_keep(score.rows(), cols, keep)
}

/// Integer kept-per-group counts `N_i` for an `m`-wide group pattern.
///
/// The ideal `m·(1 − s_i)` is floored and the remainder up to
/// `round(Σ m·(1 − s_i))` goes to the largest fractional parts, earlier layers
/// first on ties. Ordering of the ideal values is preserved.
pub fn nm_allocation(rates: &[f64], m: usize) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::domain("group size must be positive"));
    }
    for &s in rates {
        check_rate(s)?;
    }
    let ideal: Vec<f64> = rates.iter().map(|s| m as f64 * (1.0 - s)).collect();
    let target = ideal.iter().sum::<f64>().round() as usize;
    // Snap values within rounding noise of an integer before flooring.
    let mut counts: Vec<usize> = ideal
        .iter()
        .map(|v| {
            let r = v.round();
            if (v - r).abs() < 1e-9 { r as usize } else { v.floor() as usize }
        })
        .collect();
    let assigned: usize = counts.iter().sum();
    if assigned < target {
        let mut order: Vec<usize> = (0..rates.len()).collect();
        let frac = |i: usize| ideal[i] - counts[i] as f64;
        order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
        for &i in order.iter().take(target - assigned) {
            counts[i] += 1;
        }
    }
    Ok(counts.into_iter().map(|c| c.min(m)).collect())
}

#[derive(Debug, Clone)]
pub struct PruneResult {
    pub masks: Vec<Mask>,
    pub sparse_net: LayerNet,
}

impl PruneResult {
    pub fn achieved_rates(&self) -> Vec<f64> {
        self.masks.iter().map(Mask::sparsity).collect()
    }
}

/// Sequential post-training pruning of every layer at its profile rate.
///
/// Layer `i` is scored with `X̃_i` (inputs propagated through the pruned
/// prefix, `X̃_1 = x0`) unless `opts.scoring_input` asks for dense inputs.
pub fn prune_net(
    net: &LayerNet,
    calib: &CalibrationSet,
    profile: &SparsityProfile,
    method: PruneMethod,
    opts: PruneOptions,
) -> Result<PruneResult> {
    if profile.rates.len() != net.depth() {
        return Err(Error::shape(format!(
            "profile has {} rates for a {}-layer network",
            profile.rates.len(),
            net.depth()
        )));
    }
    if calib.features() != net.input_dim() {
        return Err(Error::shape(format!(
            "calibration has {} features, network expects {}",
            calib.features(),
            net.input_dim()
        )));
    }
    let group_counts = match method {
        PruneMethod::NmGroup { n, m } => {
            let mean_keep = m as f64 * (1.0 - profile.mean);
            if (mean_keep - n as f64).abs() > 1e-9 {
                return Err(Error::domain(format!(
                    "profile mean {} keeps {mean_keep} of {m}, not the requested average {n}",
                    profile.mean
                )));
            }
            Some(nm_allocation(&profile.rates, m)?)
        }
        _ => None,
    };
    let dense_inputs = match opts.scoring_input {
        ScoringInput::Dense => Some(forward(net, &calib.x0)?),
        ScoringInput::Sparse => None,
    };

    let mut masks = Vec::with_capacity(net.depth());
    let mut sparse_layers = Vec::with_capacity(net.depth());
    let mut x_sparse = calib.x0.clone();
    for (i, (w, &rate)) in net.layers().iter().zip(&profile.rates).enumerate() {
        let x_score = match &dense_inputs {
            Some(xs) => &xs[i],
            None => &x_sparse,
        };
        let scores = score_layer(w, Some(x_score), method)?;
        let mask = match (method, &group_counts) {
            (PruneMethod::NmGroup { m, .. }, Some(counts)) => nm_mask(&scores, counts[i], m)?,
            _ => match opts.granularity {
                Granularity::Layer => prune_layer(&scores, rate)?,
                Granularity::Row => prune_layer_rows(&scores, rate)?,
            },
        };
        let w_sparse = mask.apply(w)?;
        x_sparse = net.activation().apply(matmul(&w_sparse, &x_sparse)?);
        masks.push(mask);
        sparse_layers.push(w_sparse);
    }
    Ok(PruneResult {
        masks,
        sparse_net: net.with_layers(sparse_layers)?,
    })
}

/// Applies stored masks to a network.
pub fn apply_masks(net: &LayerNet, masks: &[Mask]) -> Result<LayerNet> {
    if masks.len() != net.depth() {
        return Err(Error::shape(format!(
            "{} masks for a {}-layer network",
            masks.len(),
            net.depth()
        )));
    }
    let layers = net
        .layers()
        .iter()
        .zip(masks)
        .map(|(w, m)| m.apply(w))
        .collect::<Result<Vec<_>>>()?;
    net.with_layers(layers)
}
