//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the library's numerics.

#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use vpllr::featurestore::{FeatureMeta, FeatureSet};

/// Lower Cholesky factor of a dense symmetric positive-definite matrix.
pub fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Solves L Lᵀ x = b.
pub fn cholesky_solve(l: &[f64], d: usize, b: &[f64]) -> Vec<f64> {
    let mut z = b.to_vec();
    for i in 0..d {
        for k in 0..i {
            z[i] -= l[i * d + k] * z[k];
        }
        z[i] /= l[i * d + i];
    }
    for i in (0..d).rev() {
        for k in i + 1..d {
            z[i] -= l[k * d + i] * z[k];
        }
        z[i] /= l[i * d + i];
    }
    z
}

/// Sufficient statistics of (F, y) for dense evidence evaluation.
pub struct Gram {
    pub n: usize,
    pub d: usize,
    pub ftf: Vec<f64>,
    pub fty: Vec<f64>,
    pub yty: f64,
}

impl Gram {
    pub fn new(rows: &[Vec<f64>], y: &[f64]) -> Self {
        let (n, d) = (rows.len(), rows[0].len());
        let mut ftf = vec![0.0; d * d];
        let mut fty = vec![0.0; d];
        for (r, &t) in rows.iter().zip(y) {
            for i in 0..d {
                fty[i] += r[i] * t;
                for j in 0..d {
                    ftf[i * d + j] += r[i] * r[j];
                }
            }
        }
        Gram {
            n,
            d,
            ftf,
            fty,
            yty: y.iter().map(|t| t * t).sum(),
        }
    }

    /// Log marginal likelihood by dense Cholesky, un-normalized.
    pub fn log_evidence(&self, alpha: f64, beta: f64) -> f64 {
        let (n, d) = (self.n as f64, self.d);
        let mut a: Vec<f64> = self.ftf.iter().map(|v| beta * v).collect();
        for i in 0..d {
            a[i * d + i] += alpha;
        }
        let l = cholesky(&a, d).expect("A is positive definite");
        let rhs: Vec<f64> = self.fty.iter().map(|v| beta * v).collect();
        let m = cholesky_solve(&l, d, &rhs);
        let mm: f64 = m.iter().map(|v| v * v).sum();
        let mut mgm = 0.0;
        for i in 0..d {
            for j in 0..d {
                mgm += m[i] * self.ftf[i * d + j] * m[j];
            }
        }
        let mfy: f64 = m.iter().zip(&self.fty).map(|(a, b)| a * b).sum();
        let resid = (mgm - 2.0 * mfy + self.yty).max(0.0);
        let log_det: f64 = (0..d).map(|i| 2.0 * l[i * d + i].ln()).sum();
        0.5 * d as f64 * alpha.ln() + 0.5 * n * beta.ln() - 0.5 * n * (2.0 * PI).ln()
            - 0.5 * alpha * mm
            - 0.5 * beta * resid
            - 0.5 * log_det
    }
}

pub struct GridOptimum {
    pub grid_best: f64,
    pub refined: f64,
    pub log_alpha: f64,
    pub log_beta: f64,
}

/// Exhaustive `points`×`points` log-grid over [1e-6, 1e6]², then a
/// compass search in log space from the best node, bounded to [1e-12, 1e12].
pub fn grid_search(g: &Gram, points: usize) -> GridOptimum {
    let (lo, hi) = ((1e-6f64).ln(), (1e6f64).ln());
    let step = (hi - lo) / (points - 1) as f64;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..points {
        let la = lo + step * i as f64;
        for j in 0..points {
            let lb = lo + step * j as f64;
            let v = g.log_evidence(la.exp(), lb.exp());
            if v > best.0 {
                best = (v, la, lb);
            }
        }
    }
    let grid_best = best.0;
    let (bound_lo, bound_hi) = ((1e-12f64).ln(), (1e12f64).ln());
    let (mut v, mut la, mut lb) = best;
    let mut h = step;
    while h > 1e-11 {
        let mut moved = false;
        for (da, db) in [(h, 0.0), (-h, 0.0), (0.0, h), (0.0, -h)] {
            let (na, nb) = ((la + da).clamp(bound_lo, bound_hi), (lb + db).clamp(bound_lo, bound_hi));
            let nv = g.log_evidence(na.exp(), nb.exp());
            if nv > v {
                (v, la, lb) = (nv, na, nb);
                moved = true;
                break;
            }
        }
        if !moved {
            h *= 0.5;
        }
    }
    GridOptimum {
        grid_best,
        refined: v,
        log_alpha: la,
        log_beta: lb,
    }
}

/// Trapezoid quadrature of ∫ N(y | Fw, β⁻¹I) N(w | 0, α⁻¹I) dw for D ≤ 3,
/// returned as a log. The box is centred on the posterior mode (found by a
/// separate dense solve) and spans `width` posterior standard deviations
/// per axis.
pub fn quadrature_log_evidence(rows: &[Vec<f64>], y: &[f64], alpha: f64, beta: f64, points: usize, width: f64) -> f64 {
    let g = Gram::new(rows, y);
    let d = g.d;
    assert!((1..=3).contains(&d));
    let mut a: Vec<f64> = g.ftf.iter().map(|v| beta * v).collect();
    for i in 0..d {
        a[i * d + i] += alpha;
    }
    let l = cholesky(&a, d).unwrap();
    let centre = cholesky_solve(&l, d, &g.fty.iter().map(|v| beta * v).collect::<Vec<_>>());
    let half: Vec<f64> = (0..d)
        .map(|i| {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            width * cholesky_solve(&l, d, &e)[i].sqrt()
        })
        .collect();
    let h: Vec<f64> = half.iter().map(|w| 2.0 * w / (points - 1) as f64).collect();

    let n = rows.len() as f64;
    let log_norm = 0.5 * n * (beta / (2.0 * PI)).ln() + 0.5 * d as f64 * (alpha / (2.0 * PI)).ln();
    let log_integrand = |w: &[f64]| {
        let sq: f64 = rows
            .iter()
            .zip(y)
            .map(|(r, t)| {
                let p: f64 = r.iter().zip(w).map(|(a, b)| a * b).sum();
                (t - p) * (t - p)
            })
            .sum();
        log_norm - 0.5 * beta * sq - 0.5 * alpha * w.iter().map(|v| v * v).sum::<f64>()
    };
    let total = points.pow(d as u32);
    let mut values = Vec::with_capacity(total);
    let mut w = vec![0.0; d];
    for flat in 0..total {
        let mut rem = flat;
        let mut weight = 1.0;
        for k in 0..d {
            let idx = rem % points;
            rem /= points;
            w[k] = centre[k] - half[k] + h[k] * idx as f64;
            weight *= if idx == 0 || idx == points - 1 { 0.5 * h[k] } else { h[k] };
        }
        values.push(log_integrand(&w) + weight.ln());
    }
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    top + values.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
}

pub fn sgn(v: f64) -> i64 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Σ_{i<j} sgn(x_i−x_j)·sgn(y_i−y_j) / (n(n−1)/2).
pub fn brute_kendall(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            s += sgn(x[i] - x[j]) * sgn(y[i] - y[j]);
        }
    }
    s as f64 / (n * (n - 1) / 2) as f64
}

/// Rank of each entry = #smaller + (#equal + 1)/2, counted directly.
pub fn counting_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let less = v.iter().filter(|&&b| b < a).count();
            let equal = v.iter().filter(|&&b| b == a).count();
            less as f64 + (equal as f64 + 1.0) / 2.0
        })
        .collect()
}

pub fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (counting_ranks(x), counting_ranks(y));
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    let n = x.len() as f64;
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

pub fn brute_auroc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut twice = 0u64;
    for &p in pos {
        for &q in neg {
            twice += if p > q { 2 } else if p == q { 1 } else { 0 };
        }
    }
    twice as f64 / (2.0 * pos.len() as f64 * neg.len() as f64)
}

/// All permutations of 0..n in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        out.push(p.clone());
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| p[i] < p[i + 1]) else {
            return out;
        };
        let j = (i + 1..n).rev().find(|&j| p[j] > p[i]).unwrap();
        p.swap(i, j);
        p[i + 1..].reverse();
    }
}

/// Random instance with Gaussian features, balanced-ish labels and every
/// class present.
pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: u32) -> (Vec<Vec<f64>>, FeatureSet) {
    let rows64: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    let mut labels: Vec<u32> = (0..n).map(|i| (i as u32) % classes).collect();
    for i in (1..n).rev() {
        labels.swap(i, rng.random_range(0..=i));
    }
    // labels partly explained by the first feature
    let signal: f64 = rng.random_range(0.0..2.0);
    let rows32: Vec<Vec<f32>> = rows64
        .iter()
        .zip(&labels)
        .map(|(r, &l)| {
            r.iter()
                .enumerate()
                .map(|(j, &v)| (if j == 0 { v + signal * l as f64 } else { v }) as f32)
                .collect()
        })
        .collect();
    let exact: Vec<Vec<f64>> = rows32
        .iter()
        .map(|r| r.iter().map(|&v| f64::from(v)).collect())
        .collect();
    let fs = FeatureSet::from_rows(&rows32, labels, FeatureMeta::lp("rand", "oracle", classes)).unwrap();
    (exact, fs)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
