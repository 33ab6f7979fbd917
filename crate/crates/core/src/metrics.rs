//! Rank correlations, sign accuracy, AUROC and Pearson correlation.
//!
//! Ties follow the τ-a convention (a tied pair contributes 0 and the
//! denominator stays n(n−1)/2) and ρ uses average ranks.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingEval {
    pub tau: f64,
    pub rho: f64,
    pub llr_acc: f64,
    pub n: usize,
}

fn check_pair(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < min {
        return Err(Error::TooFewValues {
            needed: min,
            got: x.len(),
        });
    }
    finite(x)?;
    finite(y)
}

fn finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|a| !a.is_finite()) {
        Some(index) => Err(Error::NonFiniteValue { index }),
        None => Ok(()),
    }
}

fn cmp(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).expect("inputs are finite")
}

/// Number of pairs tied within each run of equal values of a sorted slice.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts `v` and returns the number of inversions removed (strict `>` pairs).
fn count_inversions(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = v.split_at_mut(mid);
    let mut swaps = count_inversions(left, &mut buf[..mid]) + count_inversions(right, &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, 0, 0);
    while i < left.len() && j < right.len() {
        if right[j] < left[i] {
            buf[k] = right[j];
            swaps += (left.len() - i) as u64;
            j += 1;
        } else {
            buf[k] = left[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + left.len() - i].copy_from_slice(&left[i..]);
    k += left.len() - i;
    buf[k..].copy_from_slice(&right[j..]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall's τ-a in O(n log n).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let n = x.len() as u64;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| cmp(a.0, b.0).then(cmp(a.1, b.1)));

    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ties_x = tied_pairs(&xs);
    let ties_xy = tied_pairs(&pairs);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let discordant = count_inversions(&mut ys, &mut buf);
    let ties_y = tied_pairs(&ys);

    let total = n * (n - 1) / 2;
    // concordant − discordant over pairs untied in both coordinates
    let numerator = total as i64 - ties_x as i64 - ties_y as i64 + ties_xy as i64 - 2 * discordant as i64;
    Ok(numerator as f64 / total as f64)
}

/// 1-based ranks; each tie group gets the mean of the ranks it spans.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| cmp(v[a], v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman's ρ = 1 − 6Σd²/(n(n²−1)) on average ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    let n = x.len() as f64;
    Ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0)))
}

/// Fraction of datasets whose score and gain are both strictly positive or
/// both strictly negative. A zero on either side counts as a miss.
pub fn llr_accuracy(scores: &[f64], gains: &[f64]) -> Result<f64> {
    check_pair(scores, gains, 1)?;
    let hits = scores
        .iter()
        .zip(gains)
        .filter(|(&s, &g)| (s > 0.0 && g > 0.0) || (s < 0.0 && g < 0.0))
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

pub fn rank_eval(scores: &[f64], gains: &[f64]) -> Result<RankingEval> {
    Ok(RankingEval {
        tau: kendall_tau(scores, gains)?,
        rho: spearman_rho(scores, gains)?,
        llr_acc: llr_accuracy(scores, gains)?,
        n: scores.len(),
    })
}

/// Mann-Whitney AUROC: P(pos > neg) + ½ P(pos = neg).
pub fn auroc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() {
        return Err(Error::EmptyInput("no positive scores"));
    }
    if neg.is_empty() {
        return Err(Error::EmptyInput("no negative scores"));
    }
    finite(pos)?;
    finite(neg)?;
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&v| (v, true))
        .chain(neg.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| cmp(a.0, b.0));

    // twice the U statistic, kept integral so ties stay exact
    let mut twice_u = 0u128;
    let mut neg_below = 0u128;
    let mut start = 0;
    while start < all.len() {
        let mut end = start;
        let (mut p, mut q) = (0u128, 0u128);
        while end < all.len() && all[end].0 == all[start].0 {
            if all[end].1 {
                p += 1;
            } else {
                q += 1;
            }
            end += 1;
        }
        twice_u += 2 * p * neg_below + p * q;
        neg_below += q;
        start = end;
    }
    Ok(twice_u as f64 / (2.0 * pos.len() as f64 * neg.len() as f64))
}

/// Pearson correlation coefficient.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mean over samples of the PCC between paired embedding rows, e.g. one
/// layer's activations with and without a prompt.
pub fn mean_sample_pcc(a: &[f32], b: &[f32], dim: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if dim < 2 || !a.len().is_multiple_of(dim) {
        return Err(Error::ShapeMismatch(format!(
            "{} values do not form rows of width {dim}",
            a.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("no embeddings"));
    }
    let rows = a.len() / dim;
    let mut total = 0.0;
    for (ra, rb) in a.chunks_exact(dim).zip(b.chunks_exact(dim)) {
        let ra: Vec<f64> = ra.iter().map(|&v| f64::from(v)).collect();
        let rb: Vec<f64> = rb.iter().map(|&v| f64::from(v)).collect();
        total += pcc(&ra, &rb)?;
    }
    Ok(total / rows as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_spearman() {
        let rho = spearman_rho(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 3.0, 5.0, 4.0]).unwrap();
        assert!((rho - 0.8).abs() < 1e-15);
    }

    #[test]
    fn extremes() {
        let x = [0.3, -1.0, 2.5, 7.0, 4.0];
        let rev: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(kendall_tau(&x, &x).unwrap(), 1.0);
        assert_eq!(kendall_tau(&x, &rev).unwrap(), -1.0);
        assert_eq!(spearman_rho(&x, &x).unwrap(), 1.0);
        assert_eq!(spearman_rho(&x, &rev).unwrap(), -1.0);
    }

    #[test]
    fn tau_with_ties_counts_zero() {
        // pairs: (0,1) tie in x, (0,2) concordant, (1,2) concordant
        let tau = kendall_tau(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(tau, 2.0 / 3.0);
        assert_eq!(kendall_tau(&[1.0, 1.0], &[5.0, 5.0]).unwrap(), 0.0);
    }

    #[test]
    fn average_ranks_on_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(llr_accuracy(&[1.0, 2.0], &[3.0, 0.5]).unwrap(), 1.0);
        assert_eq!(llr_accuracy(&[1.0, -2.0], &[-1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(llr_accuracy(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(llr_accuracy(&[-1.0, 1.0], &[-3.0, -3.0]).unwrap(), 0.5);
    }

    #[test]
    fn auroc_cases() {
        assert_eq!(auroc(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap(), 0.5);
        assert_eq!(auroc(&[1.0], &[2.0]).unwrap(), 0.0);
        assert!(auroc(&[], &[1.0]).is_err());
        assert!(auroc(&[1.0], &[]).is_err());
    }

    #[test]
    fn pcc_cases() {
        let x = [1.0, 4.0, 2.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v + 7.0).collect();
        assert!((pcc(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pcc(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pcc(&x, &[2.0; 4]), Err(Error::ZeroVariance)));
    }

    #[test]
    fn mean_sample_pcc_rows() {
        let a = [1.0f32, 2.0, 3.0, 1.0, 2.0, 3.0];
        let b = [2.0f32, 4.0, 6.0, 3.0, 2.0, 1.0];
        assert!((mean_sample_pcc(&a, &b, 3).unwrap() - 0.0).abs() < 1e-12);
        assert!(mean_sample_pcc(&a, &b[..3], 3).is_err());
        assert!(mean_sample_pcc(&a, &b, 4).is_err());
    }

    #[test]
    fn input_errors() {
        assert!(matches!(kendall_tau(&[1.0], &[1.0]), Err(Error::TooFewValues { .. })));
        assert!(matches!(spearman_rho(&[1.0, 2.0], &[1.0]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(llr_accuracy(&[], &[]), Err(Error::TooFewValues { .. })));
        assert!(matches!(
            kendall_tau(&[1.0, f64::NAN], &[1.0, 2.0]),
            Err(Error::NonFiniteValue { index: 1 })
        ));
    }
}
