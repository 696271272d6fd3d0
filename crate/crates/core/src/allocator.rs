//! Per-layer sparsity profiles.
//!
//! The main scheme is an increasing arithmetic progression around the
//! average sparsity `S`,
//!
//! ```text
//! s_i = S − β(L − 1)/2 + β(i − 1),   i = 1..L
//! ```
//!
//! whose common difference `β` is the only searched quantity. Uniform, ERK,
//! LAMP and global-threshold allocations are provided as baselines.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::LayerNet;

/// Candidates closer than this to the β upper bound are kept.
pub const BOUND_SLACK: f64 = 1e-12;

const WATER_FILL_MAX_ITERS: usize = 100;
const WATER_FILL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Uniform,
    Arithmetic,
    Erk,
    Lamp,
    Global,
    RandomSearch,
    Explicit,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Origin::Uniform => "uniform",
            Origin::Arithmetic => "arithmetic",
            Origin::Erk => "erk",
            Origin::Lamp => "lamp",
            Origin::Global => "global",
            Origin::RandomSearch => "random_search",
            Origin::Explicit => "explicit",
        };
        f.write_str(s)
    }
}

/// Layer-wise sparsity rates with their average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityProfile {
    pub origin: Origin,
    #[serde(rename = "S")]
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub rates: Vec<f64>,
}

impl SparsityProfile {
    /// Profile from explicit rates; `mean` is their arithmetic mean.
    pub fn explicit(rates: Vec<f64>) -> Result<Self> {
        Self::with_origin(rates, Origin::Explicit)
    }

    pub(crate) fn with_origin(rates: Vec<f64>, origin: Origin) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::shape("profile needs at least one rate"));
        }
        if let Some(bad) = rates.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::domain(format!("rate {bad} outside [0, 1]")));
        }
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        Ok(Self {
            origin,
            mean,
            beta: None,
            rates,
        })
    }

    pub fn depth(&self) -> usize {
        self.rates.len()
    }

    /// Checks the stored invariants, e.g. after deserialising.
    pub fn validate(&self) -> Result<()> {
        if self.rates.is_empty() {
            return Err(Error::shape("profile needs at least one rate"));
        }
        if let Some(bad) = self.rates.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::domain(format!("rate {bad} outside [0, 1]")));
        }
        let mean = self.rates.iter().sum::<f64>() / self.rates.len() as f64;
        if (mean - self.mean).abs() > 1e-12 {
            return Err(Error::domain(format!(
                "stored average {} differs from rate mean {mean}",
                self.mean
            )));
        }
        if let Some(beta) = self.beta {
            if self.rates.windows(2).any(|p| (p[1] - p[0] - beta).abs() > 1e-12) {
                return Err(Error::domain("rates are not an arithmetic progression with the stored beta"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }
}

fn check_average(s: f64) -> Result<()> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::domain(format!("average sparsity {s} must lie in (0, 1)")));
    }
    Ok(())
}

/// Largest admissible common difference, `min(2S, 2(1 − S)) / (L − 1)`.
pub fn beta_upper_bound(s: f64, layers: usize) -> Result<f64> {
    check_average(s)?;
    if layers < 2 {
        return Err(Error::domain(format!("need at least 2 layers, got {layers}")));
    }
    let span = (layers - 1) as f64;
    Ok((2.0 * s / span).min(2.0 * (1.0 - s) / span))
}

/// Increasing arithmetic progression with mean `s` and difference `beta`.
pub fn allocate_arithmetic(s: f64, layers: usize, beta: f64) -> Result<SparsityProfile> {
    let bound = beta_upper_bound(s, layers)?;
    if !(0.0..=bound + BOUND_SLACK).contains(&beta) {
        return Err(Error::domain(format!(
            "beta {beta} outside [0, {bound}] for S={s}, L={layers}"
        )));
    }
    let offset = beta * (layers - 1) as f64 / 2.0;
    let rates: Vec<f64> = (0..layers)
        .map(|i| s - offset + beta * i as f64)
        .collect();
    // Endpoints can stray past [0, 1] by rounding only when beta sits on the bound.
    let rates: Vec<f64> = rates
        .into_iter()
        .map(|r| if r.abs() < BOUND_SLACK { 0.0 } else if (r - 1.0).abs() < BOUND_SLACK { 1.0 } else { r })
        .collect();
    if let Some(bad) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::domain(format!("rate {bad} outside [0, 1]")));
    }
    Ok(SparsityProfile {
        origin: Origin::Arithmetic,
        mean: s,
        beta: Some(beta),
        rates,
    })
}

pub fn allocate_uniform(s: f64, layers: usize) -> Result<SparsityProfile> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::domain(format!("sparsity {s} outside [0, 1]")));
    }
    if layers == 0 {
        return Err(Error::shape("need at least one layer"));
    }
    Ok(SparsityProfile {
        origin: Origin::Uniform,
        mean: s,
        beta: None,
        rates: vec![s; layers],
    })
}

/// `{0} ∪ {step, 2·step, …}` up to the β bound (inclusive), ascending.
pub fn grid_candidates(s: f64, layers: usize, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::domain(format!("grid step {step} must be positive")));
    }
    let bound = beta_upper_bound(s, layers)?;
    let mut out = vec![0.0];
    let mut k = 1u64;
    loop {
        let beta = step * k as f64;
        if beta > bound + BOUND_SLACK {
            break;
        }
        out.push(beta.min(bound));
        k += 1;
    }
    Ok(out)
}

/// Densities `min(1, ε·w_i)` whose mean equals `target`, found by repeatedly
/// pinning saturated layers at 1 and rescaling the rest.
fn water_fill(weights: &[f64], target: f64) -> Result<Vec<f64>> {
    let n = weights.len() as f64;
    let mut saturated = vec![false; weights.len()];
    for _ in 0..WATER_FILL_MAX_ITERS {
        let pinned = saturated.iter().filter(|&&s| s).count() as f64;
        let free_mass: f64 = weights
            .iter()
            .zip(&saturated)
            .filter(|(_, &s)| !s)
            .map(|(w, _)| w)
            .sum();
        let need = target * n - pinned;
        if free_mass <= 0.0 {
            if need.abs() <= WATER_FILL_TOL * n {
                return Ok(saturated.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect());
            }
            return Err(Error::domain(format!(
                "cannot reach average density {target} from the given layer weights"
            )));
        }
        let eps = need / free_mass;
        let mut changed = false;
        for (w, sat) in weights.iter().zip(saturated.iter_mut()) {
            if !*sat && eps * w > 1.0 + WATER_FILL_TOL {
                *sat = true;
                changed = true;
            }
        }
        if !changed {
            return Ok(weights
                .iter()
                .zip(&saturated)
                .map(|(w, &s)| if s { 1.0 } else { (eps * w).clamp(0.0, 1.0) })
                .collect());
        }
    }
    Err(Error::domain(format!(
        "water-filling did not converge for average density {target}"
    )))
}

/// Converts relative densities into rates with mean exactly `s`.
fn normalized_profile(raw_density: &[f64], s: f64, origin: Origin) -> Result<SparsityProfile> {
    check_average(s)?;
    let densities = water_fill(raw_density, 1.0 - s)?;
    let mut rates: Vec<f64> = densities.iter().map(|d| (1.0 - d).clamp(0.0, 1.0)).collect();
    // Remove the last few ulps of drift on the unsaturated layers.
    let drift = rates.iter().sum::<f64>() / rates.len() as f64 - s;
    let free: Vec<usize> = (0..rates.len())
        .filter(|&i| rates[i] > 0.0 && rates[i] < 1.0)
        .collect();
    if !free.is_empty() && drift != 0.0 {
        let per = drift * rates.len() as f64 / free.len() as f64;
        for &i in &free {
            rates[i] = (rates[i] - per).clamp(0.0, 1.0);
        }
    }
    let mut p = SparsityProfile::with_origin(rates, origin)?;
    if (p.mean - s).abs() > 1e-12 {
        return Err(Error::domain(format!(
            "normalisation reached average {} instead of {s}",
            p.mean
        )));
    }
    p.mean = s;
    Ok(p)
}

/// Erdős–Rényi-kernel allocation: layer density ∝ `(c_in + c_out)/(c_in·c_out)`.
pub fn allocate_erk(net: &LayerNet, s: f64) -> Result<SparsityProfile> {
    let raw: Vec<f64> = net
        .layers()
        .iter()
        .map(|w| {
            let (c_out, c_in) = (w.rows() as f64, w.cols() as f64);
            (c_in + c_out) / (c_in * c_out)
        })
        .collect();
    normalized_profile(&raw, s, Origin::Erk)
}

/// Per-layer rates from one network-wide threshold on `scores`.
///
/// The `round(S·N)` lowest scores are pruned. Scores tied with the threshold
/// are shared across layers in proportion to each layer's tie count, so an
/// all-equal score field yields a uniform profile.
fn global_threshold_rates(scores: &[Vec<f64>], s: f64) -> Vec<f64> {
    let mut all: Vec<f64> = scores.iter().flatten().copied().collect();
    all.sort_by(f64::total_cmp);
    let total = all.len();
    let k = (s * total as f64).round() as usize;
    if k == 0 {
        return vec![0.0; scores.len()];
    }
    let threshold = all[k - 1];
    let below: Vec<usize> = scores
        .iter()
        .map(|l| l.iter().filter(|&&v| v < threshold).count())
        .collect();
    let ties: Vec<usize> = scores
        .iter()
        .map(|l| l.iter().filter(|&&v| v == threshold).count())
        .collect();
    let remaining = (k - below.iter().sum::<usize>()) as f64;
    let tie_total = ties.iter().sum::<usize>() as f64;
    scores
        .iter()
        .enumerate()
        .map(|(i, l)| (below[i] as f64 + remaining * ties[i] as f64 / tie_total) / l.len() as f64)
        .collect()
}

fn global_profile(scores: &[Vec<f64>], s: f64, origin: Origin) -> Result<SparsityProfile> {
    check_average(s)?;
    let rates = global_threshold_rates(scores, s);
    let raw: Vec<f64> = rates.iter().map(|r| 1.0 - r).collect();
    normalized_profile(&raw, s, origin)
}

/// Global magnitude threshold across all layers.
pub fn allocate_global(net: &LayerNet, s: f64) -> Result<SparsityProfile> {
    let scores: Vec<Vec<f64>> = net
        .layers()
        .iter()
        .map(|w| w.as_slice().iter().map(|v| v.abs()).collect())
        .collect();
    global_profile(&scores, s, Origin::Global)
}

/// LAMP scores of one layer: with weights sorted by ascending magnitude,
/// `score(u) = w_u² / Σ_{v ≥ u} w_v²`.
pub fn lamp_scores(weights: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[a].abs().total_cmp(&weights[b].abs()).then(a.cmp(&b)));
    let mut out = vec![0.0; weights.len()];
    let mut tail = 0.0;
    for &i in order.iter().rev() {
        let sq = weights[i] * weights[i];
        tail += sq;
        out[i] = if tail > 0.0 { sq / tail } else { 0.0 };
    }
    out
}

/// Global threshold on LAMP scores.
pub fn allocate_lamp(net: &LayerNet, s: f64) -> Result<SparsityProfile> {
    let scores: Vec<Vec<f64>> = net.layers().iter().map(|w| lamp_scores(w.as_slice())).collect();
    global_profile(&scores, s, Origin::Lamp)
}

/// Largest depth accepted by [`permutations_of`].
pub const MAX_EXHAUSTIVE_LAYERS: usize = 8;

/// Every distinct ordering of a profile's rates, in lexicographic order
/// starting from the ascending one.
pub fn permutations_of(profile: &SparsityProfile) -> Result<Permutations> {
    Permutations::new(&profile.rates)
}

/// Iterator over distinct orderings of a multiset of rates.
pub struct Permutations {
    current: Option<Vec<f64>>,
}

impl Permutations {
    pub fn new(rates: &[f64]) -> Result<Self> {
        if rates.len() > MAX_EXHAUSTIVE_LAYERS {
            return Err(Error::Size(format!(
                "exhaustive permutation of {} layers (limit {MAX_EXHAUSTIVE_LAYERS})",
                rates.len()
            )));
        }
        let mut sorted = rates.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            current: (!sorted.is_empty()).then_some(sorted),
        })
    }
}

fn next_permutation(v: &mut [f64]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1].total_cmp(&v[i]).is_ge() {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j].total_cmp(&v[i - 1]).is_le() {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

impl Iterator for Permutations {
    type Item = SparsityProfile;

    fn next(&mut self) -> Option<Self::Item> {
        let cur = self.current.take()?;
        let mut next = cur.clone();
        if next_permutation(&mut next) {
            self.current = Some(next);
        }
        let mean = cur.iter().sum::<f64>() / cur.len() as f64;
        Some(SparsityProfile {
            origin: Origin::Explicit,
            mean,
            beta: None,
            rates: cur,
        })
    }
}
