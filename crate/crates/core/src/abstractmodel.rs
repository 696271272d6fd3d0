//! Analytical model of error accumulation across layers.
//!
//! Each layer contributes `f(s_i)` for an increasing `f`, and carries the
//! previous layer's error forward amplified by a constant `c > 1`:
//!
//! ```text
//! ℒ_1 = f(s_1),   ℒ_{i+1} = c·ℒ_i + f(s_{i+1}),   total = Σ ℒ_i
//! ```
//!
//! Under this model the increasing ordering of any multiset of rates has the
//! strictly smallest total, and swapping an out-of-order adjacent pair
//! `(s_k, s_{k+1})` of a two-layer chain lowers its total by exactly
//! `c·[f(s_k) − f(s_{k+1})]`.

use serde::{Deserialize, Serialize};

use crate::allocator::{Permutations, MAX_EXHAUSTIVE_LAYERS};
use crate::error::{Error, Result};

/// Per-layer error contribution as a function of sparsity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorFn {
    /// `s²`
    Square,
    /// `s / (1 − s + ε)`
    Ratio { eps: f64 },
    /// `e^{k·s} − 1`
    Exp { k: f64 },
}

impl ErrorFn {
    pub fn eval(self, s: f64) -> f64 {
        match self {
            ErrorFn::Square => s * s,
            ErrorFn::Ratio { eps } => s / (1.0 - s + eps),
            ErrorFn::Exp { k } => (k * s).exp_m1(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbstractErrorParams {
    c: f64,
    f: ErrorFn,
}

impl Default for AbstractErrorParams {
    fn default() -> Self {
        Self {
            c: 1.5,
            f: ErrorFn::Square,
        }
    }
}

impl AbstractErrorParams {
    pub fn new(c: f64, f: ErrorFn) -> Result<Self> {
        if !(c > 1.0 && c.is_finite()) {
            return Err(Error::domain(format!("propagation factor c = {c} must exceed 1")));
        }
        match f {
            ErrorFn::Ratio { eps } if !(eps > 0.0 && eps.is_finite()) => {
                return Err(Error::domain(format!("ratio family needs eps > 0, got {eps}")));
            }
            ErrorFn::Exp { k } if !(k > 0.0 && k.is_finite()) => {
                return Err(Error::domain(format!("exponential family needs k > 0, got {k}")));
            }
            _ => {}
        }
        Ok(Self { c, f })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn f(&self) -> ErrorFn {
        self.f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceTrace {
    pub per_layer: Vec<f64>,
    pub total: f64,
}

fn check_rates(rates: &[f64]) -> Result<()> {
    if let Some(bad) = rates.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::domain(format!("rate {bad} outside [0, 1]")));
    }
    Ok(())
}

fn total_unchecked(rates: &[f64], params: &AbstractErrorParams) -> f64 {
    let mut prev = 0.0;
    let mut total = 0.0;
    for &s in rates {
        prev = params.c * prev + params.f.eval(s);
        total += prev;
    }
    total
}

pub fn recurrence_total(rates: &[f64], params: &AbstractErrorParams) -> Result<RecurrenceTrace> {
    check_rates(rates)?;
    let mut per_layer = Vec::with_capacity(rates.len());
    let mut prev = 0.0;
    for &s in rates {
        prev = params.c * prev + params.f.eval(s);
        per_layer.push(prev);
    }
    Ok(RecurrenceTrace {
        total: per_layer.iter().sum(),
        per_layer,
    })
}

fn swapped(rates: &[f64], k: usize) -> Result<Vec<f64>> {
    if k + 1 >= rates.len() {
        return Err(Error::domain(format!(
            "swap position {k} needs a successor among {} layers",
            rates.len()
        )));
    }
    let mut out = rates.to_vec();
    out.swap(k, k + 1);
    Ok(out)
}

/// `total(rates) − total(rates with positions k, k+1 exchanged)` over the
/// whole chain; `k` is zero-based.
pub fn swap_gain(rates: &[f64], k: usize, params: &AbstractErrorParams) -> Result<f64> {
    check_rates(rates)?;
    let other = swapped(rates, k)?;
    Ok(total_unchecked(rates, params) - total_unchecked(&other, params))
}

/// [`swap_gain`] on the isolated two-layer chain `(s_k, s_{k+1})`.
pub fn local_swap_gain(rates: &[f64], k: usize, params: &AbstractErrorParams) -> Result<f64> {
    check_rates(rates)?;
    swapped(rates, k)?;
    let pair = [rates[k], rates[k + 1]];
    swap_gain(&pair, 0, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedOrdering {
    /// For each layer, the index of its rate in the input list.
    pub order: Vec<usize>,
    pub rates: Vec<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    /// Every distinct ordering, lowest total first.
    pub ranking: Vec<RankedOrdering>,
    pub ascending_total: f64,
    /// All rates equal, so every ordering ties.
    pub degenerate: bool,
    /// The ascending ordering is strictly below every other distinct ordering.
    pub ascending_strict_min: bool,
}

impl OrderingReport {
    pub fn counterexamples(&self) -> usize {
        self.ranking
            .iter()
            .filter(|r| !r.rates.windows(2).all(|p| p[0] <= p[1]))
            .filter(|r| r.total <= self.ascending_total)
            .count()
    }
}

fn source_indices(input: &[f64], arrangement: &[f64]) -> Vec<usize> {
    let mut used = vec![false; input.len()];
    arrangement
        .iter()
        .map(|v| {
            let i = (0..input.len())
                .find(|&i| !used[i] && input[i] == *v)
                .expect("arrangement is a permutation of the input");
            used[i] = true;
            i
        })
        .collect()
}

/// Evaluates the recurrence for every distinct ordering of `rates`.
pub fn verify_theorem4(rates: &[f64], params: &AbstractErrorParams) -> Result<OrderingReport> {
    check_rates(rates)?;
    if rates.len() > MAX_EXHAUSTIVE_LAYERS {
        return Err(Error::Size(format!(
            "exhaustive ordering check of {} layers (limit {MAX_EXHAUSTIVE_LAYERS})",
            rates.len()
        )));
    }
    let mut ascending = rates.to_vec();
    ascending.sort_by(f64::total_cmp);
    let ascending_total = total_unchecked(&ascending, params);

    let mut ranking: Vec<RankedOrdering> = Permutations::new(rates)?
        .map(|p| RankedOrdering {
            order: source_indices(rates, &p.rates),
            total: total_unchecked(&p.rates, params),
            rates: p.rates,
        })
        .collect();
    ranking.sort_by(|a, b| a.total.total_cmp(&b.total).then_with(|| a.order.cmp(&b.order)));

    let degenerate = ranking.len() <= 1;
    let ascending_strict_min = ranking
        .iter()
        .filter(|r| r.rates != ascending)
        .all(|r| ascending_total < r.total);
    Ok(OrderingReport {
        ranking,
        ascending_total,
        degenerate,
        ascending_strict_min,
    })
}

/// Repeatedly swaps the first out-of-order adjacent pair until the rates are
/// ascending, returning the total after each step (starting total first).
pub fn bubble_sort_path(rates: &[f64], params: &AbstractErrorParams) -> Result<Vec<f64>> {
    check_rates(rates)?;
    let mut cur = rates.to_vec();
    let mut totals = vec![total_unchecked(&cur, params)];
    while let Some(k) = (0..cur.len().saturating_sub(1)).find(|&k| cur[k] > cur[k + 1]) {
        cur.swap(k, k + 1);
        totals.push(total_unchecked(&cur, params));
    }
    Ok(totals)
}

/// Ratios `ℒ_{i+1}/ℒ_i` of a measured error trace, `None` where `ℒ_i = 0`.
/// Under the recurrence each ratio exceeds `c`.
pub fn propagation_ratios(per_layer: &[f64]) -> Vec<Option<f64>> {
    per_layer
        .windows(2)
        .map(|p| (p[0] > 0.0).then(|| p[1] / p[0]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq(c: f64) -> AbstractErrorParams {
        AbstractErrorParams::new(c, ErrorFn::Square).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(AbstractErrorParams::new(1.0, ErrorFn::Square).is_err());
        assert!(AbstractErrorParams::new(2.0, ErrorFn::Ratio { eps: 0.0 }).is_err());
        assert!(AbstractErrorParams::new(2.0, ErrorFn::Exp { k: -1.0 }).is_err());
        let d = AbstractErrorParams::default();
        assert_eq!((d.c(), d.f()), (1.5, ErrorFn::Square));
    }

    #[test]
    fn two_layer_hand_values() {
        let p = sq(2.0);
        let up = recurrence_total(&[0.3, 0.7], &p).unwrap();
        let down = recurrence_total(&[0.7, 0.3], &p).unwrap();
        // 3·0.09 + 0.49 and 3·0.49 + 0.09
        assert!((up.total - 0.76).abs() < 1e-12);
        assert!((down.total - 1.56).abs() < 1e-12);
        let gain = swap_gain(&[0.7, 0.3], 0, &p).unwrap();
        assert!((gain - 0.80).abs() < 1e-12);
        assert!((gain - 2.0 * (0.49 - 0.09)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_recurrences() {
        let p = sq(3.0);
        assert_eq!(recurrence_total(&[0.0; 5], &p).unwrap().total, 0.0);
        for f in [ErrorFn::Square, ErrorFn::Ratio { eps: 0.1 }, ErrorFn::Exp { k: 2.0 }] {
            let p = AbstractErrorParams::new(7.0, f).unwrap();
            assert_eq!(recurrence_total(&[0.0; 3], &p).unwrap().total, 0.0);
            assert_eq!(recurrence_total(&[0.4], &p).unwrap().total, f.eval(0.4));
        }
    }

    #[test]
    fn swap_gain_signs() {
        let p = sq(1.5);
        assert_eq!(swap_gain(&[0.4, 0.4, 0.2], 0, &p).unwrap(), 0.0);
        assert!(swap_gain(&[0.1, 0.4, 0.2], 0, &p).unwrap() < 0.0);
        assert!(swap_gain(&[0.1, 0.4, 0.2], 1, &p).unwrap() > 0.0);
        assert!(swap_gain(&[0.1, 0.4], 1, &p).is_err());
    }

    #[test]
    fn local_gain_closed_form() {
        let p = AbstractErrorParams::new(4.0, ErrorFn::Exp { k: 1.5 }).unwrap();
        let rates = [0.2, 0.9, 0.3, 0.5];
        let g = local_swap_gain(&rates, 1, &p).unwrap();
        let f = p.f();
        assert!((g - 4.0 * (f.eval(0.9) - f.eval(0.3))).abs() < 1e-12);
    }

    #[test]
    fn theorem4_three_layers() {
        let r = verify_theorem4(&[0.8, 0.2, 0.5], &sq(1.5)).unwrap();
        assert_eq!(r.ranking.len(), 6);
        assert!(r.ascending_strict_min);
        assert_eq!(r.ranking[0].rates, vec![0.2, 0.5, 0.8]);
        assert_eq!(r.ranking[0].order, vec![1, 2, 0]);
        assert_eq!(r.counterexamples(), 0);
    }

    #[test]
    fn theorem4_all_equal() {
        let r = verify_theorem4(&[0.4; 4], &sq(2.0)).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.ranking.len(), 1);
    }

    #[test]
    fn theorem4_two_layers_margin() {
        let p = sq(2.5);
        let r = verify_theorem4(&[0.6, 0.1], &p).unwrap();
        let margin = r.ranking[1].total - r.ranking[0].total;
        assert!((margin - 2.5 * (0.36 - 0.01)).abs() < 1e-12);
    }

    #[test]
    fn theorem4_size_limit() {
        assert!(matches!(verify_theorem4(&[0.1; 9], &sq(2.0)), Err(Error::Size(_))));
    }

    #[test]
    fn six_layers_have_720_orderings() {
        let r = verify_theorem4(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], &sq(1.1)).unwrap();
        assert_eq!(r.ranking.len(), 720);
        assert!(r.ascending_strict_min);
    }

    #[test]
    fn bubble_path_strictly_decreases() {
        let p = AbstractErrorParams::new(1.1, ErrorFn::Ratio { eps: 0.05 }).unwrap();
        let path = bubble_sort_path(&[0.9, 0.1, 0.7, 0.3, 0.5], &p).unwrap();
        assert!(path.len() > 1);
        assert!(path.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn ratios() {
        let r = propagation_ratios(&[0.0, 1.0, 3.0]);
        assert_eq!(r, vec![None, Some(3.0)]);
    }
}
