//! AUROC, its certified lower bound under l2 perturbations, local Lipschitz
//! lower bounds, and score histograms.

use std::fmt::Write;

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::model::Scorer;

fn check(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.is_empty() {
        return Err(Error::Empty("positive scores"));
    }
    if neg.is_empty() {
        return Err(Error::Empty("negative scores"));
    }
    if pos.iter().chain(neg).any(|v| v.is_nan()) {
        return Err(Error::Numerical("NaN score".into()));
    }
    Ok(())
}

/// Twice the Mann-Whitney count: 2 per pair with `pos > neg`, 1 per tie.
pub fn doubled_wins(pos: &[f64], neg: &[f64]) -> u128 {
    let mut sorted = neg.to_vec();
    sorted.sort_by(f64::total_cmp);
    pos.iter()
        .map(|&p| {
            let below = sorted.partition_point(|&v| v < p);
            let not_above = sorted.partition_point(|&v| v <= p);
            (2 * below + (not_above - below)) as u128
        })
        .sum()
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting 1/2.
pub fn auroc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check(pos, neg)?;
    let pairs = 2 * pos.len() as u128 * neg.len() as u128;
    Ok(doubled_wins(pos, neg) as f64 / pairs as f64)
}

/// AUROC lower bound valid against any l2 attack of radius `eps` on a
/// 1-Lipschitz scorer: each positive can lose `eps` and each negative can gain
/// `eps`, so positives are shifted down by `2·eps`.
pub fn certified_auroc(pos: &[f64], neg: &[f64], eps: f64) -> Result<f64> {
    if !(eps >= 0.0) {
        return Err(Error::Config(format!("epsilon must be non-negative, got {eps}")));
    }
    let shifted: Vec<f64> = pos.iter().map(|p| p - 2.0 * eps).collect();
    auroc(&shifted, neg)
}

pub fn certified_auroc_curve(pos: &[f64], neg: &[f64], eps_list: &[f64]) -> Result<Vec<f64>> {
    if eps_list.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("epsilon list must be non-decreasing".into()));
    }
    eps_list.iter().map(|&e| certified_auroc(pos, neg, e)).collect()
}

/// `epsilon,certified_auroc` lines with a header.
pub fn curve_csv(eps_list: &[f64], values: &[f64]) -> String {
    let mut out = String::from("epsilon,certified_auroc\n");
    for (e, v) in eps_list.iter().zip(values) {
        writeln!(out, "{e},{v}").expect("string write");
    }
    out
}

/// Largest input-gradient norm over `points`.
pub fn llc_lower_bound<S: Scorer + ?Sized>(net: &S, points: ArrayView2<f64>) -> Result<f64> {
    if points.nrows() == 0 {
        return Err(Error::Empty("points"));
    }
    let (_, g) = net.scores_and_gradients(points)?;
    Ok(crate::lipnet::row_norms(&g).fold(0.0, |m, &v| f64::max(m, v)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` shared edges.
    pub edges: Vec<f64>,
    pub pos_counts: Vec<usize>,
    pub neg_counts: Vec<usize>,
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,pos_count,neg_count\n");
        for i in 0..self.pos_counts.len() {
            writeln!(out, "{},{},{},{}", self.edges[i], self.edges[i + 1], self.pos_counts[i], self.neg_counts[i])
                .expect("string write");
        }
        out
    }
}

/// Equal-width bins over `[min, max]` of both score sets together. The last
/// bin is closed on the right.
pub fn score_histogram(pos: &[f64], neg: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    if pos.iter().chain(neg).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite score".into()));
    }
    let all = || pos.iter().chain(neg);
    let lo = all().copied().fold(f64::INFINITY, f64::min);
    let hi = all().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
    let bin_of = |v: f64| {
        if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        }
    };
    let count = |s: &[f64]| {
        let mut c = vec![0; bins];
        for &v in s {
            c[bin_of(v)] += 1;
        }
        c
    };
    Ok(Histogram { edges, pos_counts: count(pos), neg_counts: count(neg) })
}
