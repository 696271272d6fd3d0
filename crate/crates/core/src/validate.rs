//! Seeded sweeps that check the error-propagation properties on many random
//! instances. Each sweep returns its raw rows plus a pass/fail verdict
//! against a fixed threshold.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstractmodel::{verify_theorem4, AbstractErrorParams, ErrorFn, OrderingReport};
use crate::allocator::allocate_uniform;
use crate::error::Result;
use crate::linalg::{lemma1_gap, rank, DenseMatrix};
use crate::netmodel::{generate_calibration, generate_net, Activation};
use crate::pruner::{prune_net, PruneMethod, PruneOptions};
use crate::reconerr::{check_theorem1, check_theorem2_bound, check_theorem3, trace_errors, BoundRow};
use crate::rng::SplitMix64;

/// Base of the published seed list: trial `i` uses `DEFAULT_SEED + i`.
pub const DEFAULT_SEED: u64 = 20_240_000;

fn gaussian(rows: usize, cols: usize, rng: &mut SplitMix64) -> DenseMatrix {
    DenseMatrix::from_parts(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Case {
    pub rows: usize,
    pub cols: usize,
    pub inner: usize,
    pub full_column_rank: bool,
    pub lhs: f64,
    pub rhs: f64,
}

impl Lemma1Case {
    pub fn holds(&self) -> bool {
        self.lhs >= self.rhs - 1e-9
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Sweep {
    pub cases: Vec<Lemma1Case>,
    /// Rank-deficient draws, reported but not asserted.
    pub rank_deficient: usize,
}

impl Lemma1Sweep {
    pub fn passed(&self) -> bool {
        self.cases
            .iter()
            .filter(|c| c.full_column_rank)
            .all(Lemma1Case::holds)
    }
}

/// Random `A` (tall, at most 32×32) and `B`; every `rank_deficient_every`-th
/// draw gets a duplicated column so the rank-deficient case is exercised.
pub fn lemma1_sweep(seed: u64, count: usize, rank_deficient_every: Option<usize>) -> Result<Lemma1Sweep> {
    let mut rng = SplitMix64::new(seed);
    let mut cases = Vec::with_capacity(count);
    let mut rank_deficient = 0;
    for i in 0..count {
        let cols = 1 + (rng.next_u64() % 32) as usize;
        let rows = cols + (rng.next_u64() % (33 - cols as u64)) as usize;
        let inner = 1 + (rng.next_u64() % 32) as usize;
        let mut a = gaussian(rows, cols, &mut rng);
        let b = gaussian(cols, inner, &mut rng);
        if cols >= 2 && rank_deficient_every.is_some_and(|k| k > 0 && i % k == k - 1) {
            let mut data = a.into_vec();
            for r in 0..rows {
                data[r * cols + 1] = data[r * cols];
            }
            a = DenseMatrix::from_parts(rows, cols, data);
        }
        let full = rank(&a) == cols;
        if !full {
            rank_deficient += 1;
        }
        let g = lemma1_gap(&a, &b)?;
        cases.push(Lemma1Case {
            rows,
            cols,
            inner,
            full_column_rank: full,
            lhs: g.lhs,
            rhs: g.rhs,
        });
    }
    Ok(Lemma1Sweep { cases, rank_deficient })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Sweep {
    pub method: PruneMethod,
    /// Per layer: (monotone fraction, nested masks).
    pub layers: Vec<(f64, bool)>,
    pub threshold: f64,
}

impl Theorem1Sweep {
    pub fn mean_fraction(&self) -> f64 {
        self.layers.iter().map(|l| l.0).sum::<f64>() / self.layers.len() as f64
    }

    pub fn fully_monotone(&self) -> usize {
        self.layers.iter().filter(|l| l.0 == 1.0).count()
    }

    pub fn passed(&self) -> bool {
        self.mean_fraction() >= self.threshold
    }
}

/// Sweeps `count` random 32×32 layers (64 calibration samples) over the
/// sparsity grid `0, 0.05, …, 1` with dense inputs. Magnitude pruning must be
/// monotone everywhere; activation-aware pruning must reach 0.99.
pub fn theorem1_sweep(seed: u64, count: usize, method: PruneMethod) -> Result<Theorem1Sweep> {
    let grid: Vec<f64> = (0..=20).map(|k| k as f64 * 0.05).collect();
    let layers = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = SplitMix64::new(seed + i);
            let w = gaussian(32, 32, &mut rng);
            let x = gaussian(32, 64, &mut rng);
            let r = check_theorem1(&w, &x, &grid, method)?;
            Ok((r.monotone_fraction, r.nested))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Theorem1Sweep {
        method,
        layers,
        threshold: if method == PruneMethod::Magnitude { 1.0 } else { 0.99 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Sweep {
    /// (network index, bound row)
    pub rows: Vec<(usize, BoundRow)>,
    pub skipped: usize,
}

impl Theorem2Sweep {
    pub fn fraction(&self) -> f64 {
        if self.rows.is_empty() {
            return 1.0;
        }
        self.rows.iter().filter(|r| r.1.holds).count() as f64 / self.rows.len() as f64
    }

    pub fn passed(&self) -> bool {
        !self.rows.is_empty() && self.fraction() >= 0.95
    }
}

/// `count` random 8-layer Linear nets (width 32, 64 samples) pruned uniformly
/// at 0.5 with activation-aware scores.
pub fn theorem2_sweep(seed: u64, count: usize) -> Result<Theorem2Sweep> {
    let per_net = (0..count)
        .into_par_iter()
        .map(|i| {
            let s = seed + i as u64;
            let net = generate_net(8, &[32; 9], Activation::Linear, s)?;
            let calib = generate_calibration(32, 64, s)?;
            let profile = allocate_uniform(0.5, 8)?;
            let pruned = prune_net(&net, &calib, &profile, PruneMethod::WandaStyle, PruneOptions::default())?;
            let trace = trace_errors(&net, &pruned.sparse_net, &calib)?;
            check_theorem2_bound(&trace, &pruned.sparse_net)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut skipped = 0;
    for (i, r) in per_net.into_iter().enumerate() {
        skipped += r.skipped;
        rows.extend(r.rows.into_iter().map(|b| (i, b)));
    }
    Ok(Theorem2Sweep { rows, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem3Sweep {
    pub trials: Vec<crate::reconerr::PropagationTrial>,
}

impl Theorem3Sweep {
    pub fn fraction(&self) -> f64 {
        self.trials.iter().filter(|t| t.non_decreasing()).count() as f64 / self.trials.len() as f64
    }

    pub fn passed(&self) -> bool {
        self.fraction() >= 0.95
    }
}

/// `count` trials on 6-layer Linear nets (width 16, 32 samples) at uniform
/// 0.5: one random layer's rate is raised by 0.2 and the next layer's error
/// is compared.
pub fn theorem3_sweep(seed: u64, count: usize) -> Result<Theorem3Sweep> {
    let trials = (0..count)
        .into_par_iter()
        .map(|i| {
            let s = seed + i as u64;
            let net = generate_net(6, &[16; 7], Activation::Linear, s)?;
            let calib = generate_calibration(16, 32, s)?;
            let layer = (SplitMix64::new(s).next_u64() % 5) as usize;
            check_theorem3(&net, &calib, &[0.5; 6], layer, 0.2, PruneMethod::Magnitude)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Theorem3Sweep { trials })
}

/// The three `f` families swept by [`theorem4_sweep`].
pub const ERROR_FAMILIES: [ErrorFn; 3] = [ErrorFn::Square, ErrorFn::Ratio { eps: 0.1 }, ErrorFn::Exp { k: 2.0 }];
pub const PROPAGATION_FACTORS: [f64; 4] = [1.1, 1.5, 2.0, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Theorem4Sweep {
    pub cases: usize,
    pub counterexamples: usize,
}

impl Theorem4Sweep {
    pub fn passed(&self) -> bool {
        self.counterexamples == 0
    }
}

fn choose(pool: &[f64], size: usize, start: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
    if cur.len() == size {
        out.push(cur.clone());
        return;
    }
    for i in start..pool.len() {
        cur.push(pool[i]);
        choose(pool, size, i + 1, cur, out);
        cur.pop();
    }
}

/// Every set of `min_len..=max_len` distinct rates from `{0.1, …, 0.9}`,
/// every factor in [`PROPAGATION_FACTORS`] and every family in
/// [`ERROR_FAMILIES`]: the ascending ordering must be the strict minimum.
pub fn theorem4_sweep(min_len: usize, max_len: usize) -> Result<Theorem4Sweep> {
    let pool: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    let mut sets = Vec::new();
    for size in min_len..=max_len {
        choose(&pool, size, 0, &mut Vec::new(), &mut sets);
    }
    let results = sets
        .par_iter()
        .map(|rates| {
            let mut input = rates.clone();
            input.reverse();
            let mut bad = 0;
            for c in PROPAGATION_FACTORS {
                for f in ERROR_FAMILIES {
                    let r = verify_theorem4(&input, &AbstractErrorParams::new(c, f)?)?;
                    if !r.ascending_strict_min || r.counterexamples() > 0 {
                        bad += 1;
                    }
                }
            }
            Ok(bad)
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(Theorem4Sweep {
        cases: sets.len() * PROPAGATION_FACTORS.len() * ERROR_FAMILIES.len(),
        counterexamples: results.iter().sum(),
    })
}

/// Ordering table for `layers` evenly spaced rates in `[0.1, 0.9]`.
pub fn theorem4_table(layers: usize, params: &AbstractErrorParams) -> Result<OrderingReport> {
    let rates: Vec<f64> = if layers == 1 {
        vec![0.5]
    } else {
        (0..layers)
            .map(|i| 0.1 + 0.8 * i as f64 / (layers - 1) as f64)
            .collect()
    };
    verify_theorem4(&rates, params)
}
