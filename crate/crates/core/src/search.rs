//! Choosing the common difference β by grid search, plus a seeded random
//! search over arbitrary profiles as an optimality probe.
//!
//! Every candidate is pruned from the dense network independently, so the
//! evaluations run in parallel and the report does not depend on their order.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocator::{allocate_arithmetic, grid_candidates, Origin, SparsityProfile};
use crate::error::{Error, Result};
use crate::netmodel::{CalibrationSet, LayerNet};
use crate::pruner::{prune_net, PruneMethod, PruneOptions};
use crate::reconerr::{output_error, trace_errors};
use crate::rng::SplitMix64;

const MEAN_REPAIR_MAX_ITERS: usize = 100;
const MEAN_REPAIR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Sum of per-layer reconstruction errors on the calibration set.
    #[default]
    TotalReconError,
    /// Output error on held-out samples: pruning sees the first `⌈d/2⌉`
    /// calibration columns, the loss is measured on the rest.
    HeldOutLoss,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "total" | "total_recon_error" => Ok(Objective::TotalReconError),
            "heldout" | "held_out_loss" => Ok(Objective::HeldOutLoss),
            other => Err(Error::domain(format!(
                "unknown objective '{other}' (total, heldout)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub method: PruneMethod,
    pub objective: Objective,
    pub options: PruneOptions,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            method: PruneMethod::WandaStyle,
            objective: Objective::TotalReconError,
            options: PruneOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub candidates: Vec<Candidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_beta: Option<f64>,
    pub best_objective: f64,
    pub best_profile: SparsityProfile,
    pub objective_kind: Objective,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl SearchReport {
    pub fn evaluations(&self) -> usize {
        self.candidates.len()
    }
}

/// Prunes `net` with `profile` and scores the result.
pub fn evaluate_profile(
    net: &LayerNet,
    calib: &CalibrationSet,
    profile: &SparsityProfile,
    cfg: &SearchConfig,
) -> Result<f64> {
    match cfg.objective {
        Objective::TotalReconError => {
            let pruned = prune_net(net, calib, profile, cfg.method, cfg.options)?;
            Ok(trace_errors(net, &pruned.sparse_net, calib)?.total)
        }
        Objective::HeldOutLoss => {
            let d = calib.samples();
            if d < 2 {
                return Err(Error::domain("held-out loss needs at least two calibration samples"));
            }
            let (fit, held) = calib.split(d.div_ceil(2))?;
            let pruned = prune_net(net, &fit, profile, cfg.method, cfg.options)?;
            output_error(net, &pruned.sparse_net, &held)
        }
    }
}

/// Index of the smallest objective; the earliest wins ties.
fn argmin(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v < values[best] { i } else { best })
}

/// Evaluates every β in `grid_candidates(s, L, step)` and keeps the best,
/// preferring the smaller β on ties.
pub fn grid_search_beta(
    net: &LayerNet,
    calib: &CalibrationSet,
    s: f64,
    step: f64,
    cfg: &SearchConfig,
) -> Result<SearchReport> {
    let start = Instant::now();
    let layers = net.depth();
    let betas = grid_candidates(s, layers, step)?;
    let profiles = betas
        .iter()
        .map(|&b| allocate_arithmetic(s, layers, b))
        .collect::<Result<Vec<_>>>()?;
    let objectives = profiles
        .par_iter()
        .map(|p| evaluate_profile(net, calib, p, cfg))
        .collect::<Result<Vec<_>>>()?;
    let best = argmin(&objectives);
    Ok(SearchReport {
        candidates: betas
            .iter()
            .zip(&objectives)
            .map(|(&b, &o)| Candidate {
                beta: Some(b),
                objective: o,
            })
            .collect(),
        best_beta: Some(betas[best]),
        best_objective: objectives[best],
        best_profile: profiles[best].clone(),
        objective_kind: cfg.objective,
        wall_time: start.elapsed(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub step: f64,
    pub evaluations: usize,
    pub best_beta: f64,
    pub best_objective: f64,
}

/// One grid search per step size.
pub fn step_ablation(
    net: &LayerNet,
    calib: &CalibrationSet,
    s: f64,
    steps: &[f64],
    cfg: &SearchConfig,
) -> Result<Vec<(AblationRow, SearchReport)>> {
    steps
        .iter()
        .map(|&step| {
            let report = grid_search_beta(net, calib, s, step, cfg)?;
            Ok((
                AblationRow {
                    step,
                    evaluations: report.evaluations(),
                    best_beta: report.best_beta.unwrap_or(0.0),
                    best_objective: report.best_objective,
                },
                report,
            ))
        })
        .collect()
}

/// Shifts all rates by the mean deficit and clips to `[0, 1]` until the mean
/// is `s`.
pub fn repair_mean(rates: &mut [f64], s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) || rates.is_empty() {
        return Err(Error::domain(format!("cannot repair towards average {s}")));
    }
    let n = rates.len() as f64;
    for _ in 0..MEAN_REPAIR_MAX_ITERS {
        let deficit = s - rates.iter().sum::<f64>() / n;
        if deficit.abs() <= MEAN_REPAIR_TOL {
            return Ok(());
        }
        // Spread the deficit over the layers that can still move.
        let movable = rates
            .iter()
            .filter(|&&r| if deficit > 0.0 { r < 1.0 } else { r > 0.0 })
            .count();
        if movable == 0 {
            break;
        }
        let shift = deficit * n / movable as f64;
        for r in rates.iter_mut() {
            if (deficit > 0.0 && *r < 1.0) || (deficit < 0.0 && *r > 0.0) {
                *r = (*r + shift).clamp(0.0, 1.0);
            }
        }
    }
    Err(Error::domain(format!("mean repair could not reach average {s}")))
}

/// Uniform rates on `[0, 1]` repaired to mean `s`.
pub fn sample_profile(rng: &mut SplitMix64, layers: usize, s: f64) -> Result<SparsityProfile> {
    let mut rates: Vec<f64> = (0..layers).map(|_| rng.next_f64()).collect();
    repair_mean(&mut rates, s)?;
    let mut p = SparsityProfile::with_origin(rates, Origin::RandomSearch)?;
    p.mean = s;
    Ok(p)
}

/// Samples `iters` profiles from `SplitMix64::new(seed)` and keeps the best
/// (earliest on ties).
pub fn random_search_profiles(
    net: &LayerNet,
    calib: &CalibrationSet,
    s: f64,
    iters: usize,
    seed: u64,
    cfg: &SearchConfig,
) -> Result<SearchReport> {
    if iters == 0 {
        return Err(Error::domain("random search needs at least one iteration"));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::domain(format!("average sparsity {s} must lie in (0, 1)")));
    }
    let start = Instant::now();
    let mut rng = SplitMix64::new(seed);
    let profiles = (0..iters)
        .map(|_| sample_profile(&mut rng, net.depth(), s))
        .collect::<Result<Vec<_>>>()?;
    let objectives = profiles
        .par_iter()
        .map(|p| evaluate_profile(net, calib, p, cfg))
        .collect::<Result<Vec<_>>>()?;
    let best = argmin(&objectives);
    Ok(SearchReport {
        candidates: objectives
            .iter()
            .map(|&o| Candidate {
                beta: None,
                objective: o,
            })
            .collect(),
        best_beta: None,
        best_objective: objectives[best],
        best_profile: profiles[best].clone(),
        objective_kind: cfg.objective,
        wall_time: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::allocate_uniform;
    use crate::netmodel::{generate_calibration, generate_net, Activation};

    fn desk(layers: usize, dim: usize, seed: u64) -> (LayerNet, CalibrationSet) {
        let net = generate_net(layers, &vec![dim; layers + 1], Activation::Linear, seed).unwrap();
        let calib = generate_calibration(dim, 2 * dim, seed).unwrap();
        (net, calib)
    }

    #[test]
    fn grid_search_never_worse_than_uniform() {
        let (net, calib) = desk(6, 12, 3);
        let cfg = SearchConfig::default();
        let r = grid_search_beta(&net, &calib, 0.6, 0.01, &cfg).unwrap();
        let uniform = evaluate_profile(&net, &calib, &allocate_uniform(0.6, 6).unwrap(), &cfg).unwrap();
        assert_eq!(r.candidates[0].objective, uniform);
        assert!(r.best_objective <= uniform);
        assert_eq!(r.evaluations(), grid_candidates(0.6, 6, 0.01).unwrap().len());
        let min = r.candidates.iter().map(|c| c.objective).fold(f64::INFINITY, f64::min);
        assert_eq!(r.best_objective, min);
    }

    #[test]
    fn argmin_prefers_first() {
        assert_eq!(argmin(&[3.0, 1.0, 1.0, 2.0]), 1);
        assert_eq!(argmin(&[1.0]), 0);
    }

    #[test]
    fn repair_hits_mean() {
        let mut rng = SplitMix64::new(5);
        for _ in 0..200 {
            let p = sample_profile(&mut rng, 8, 0.7).unwrap();
            let mean = p.rates.iter().sum::<f64>() / 8.0;
            assert!((mean - 0.7).abs() <= 1e-9);
            assert!(p.rates.iter().all(|r| (0.0..=1.0).contains(r)));
        }
        let mut r = vec![1.0, 1.0];
        assert!(repair_mean(&mut r, 0.5).is_ok());
        let mut r = vec![0.0; 3];
        repair_mean(&mut r, 1.0).unwrap();
        assert_eq!(r, vec![1.0; 3]);
    }

    #[test]
    fn random_search_single_iteration() {
        let (net, calib) = desk(4, 8, 2);
        let cfg = SearchConfig::default();
        let r = random_search_profiles(&net, &calib, 0.5, 1, 9, &cfg).unwrap();
        assert_eq!(r.evaluations(), 1);
        let direct = evaluate_profile(&net, &calib, &r.best_profile, &cfg).unwrap();
        assert_eq!(r.best_objective, direct);
        assert!(random_search_profiles(&net, &calib, 0.5, 0, 9, &cfg).is_err());
    }

    #[test]
    fn random_search_deterministic() {
        let (net, calib) = desk(4, 8, 2);
        let cfg = SearchConfig::default();
        let a = random_search_profiles(&net, &calib, 0.6, 20, 4, &cfg).unwrap();
        let b = random_search_profiles(&net, &calib, 0.6, 20, 4, &cfg).unwrap();
        assert_eq!(a.candidates, b.candidates);
        assert_eq!(a.best_profile, b.best_profile);
    }

    #[test]
    fn held_out_objective() {
        let (net, calib) = desk(4, 8, 6);
        let cfg = SearchConfig {
            objective: Objective::HeldOutLoss,
            ..SearchConfig::default()
        };
        let zero = evaluate_profile(&net, &calib, &allocate_uniform(0.0, 4).unwrap(), &cfg).unwrap();
        assert_eq!(zero, 0.0);
        let r = grid_search_beta(&net, &calib, 0.5, 0.05, &cfg).unwrap();
        assert!(r.best_objective > 0.0);
        let one = CalibrationSet::new(calib.x0.columns(0, 1).unwrap());
        assert!(evaluate_profile(&net, &one, &allocate_uniform(0.5, 4).unwrap(), &cfg).is_err());
    }

    #[test]
    fn ablation_rows() {
        let (net, calib) = desk(5, 10, 1);
        let cfg = SearchConfig::default();
        let rows = step_ablation(&net, &calib, 0.6, &[0.04, 0.02], &cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[1].0.best_objective <= rows[0].0.best_objective);
        assert!(rows[1].0.evaluations >= rows[0].0.evaluations);
    }
}
