//! Bayesian evidence of a linear head on fixed features (LogME), and its
//! expectation over prompt draws (LogME-VP).
//!
//! For features `F` (n × D), a target `y`, prior precision `alpha` and noise
//! precision `beta`, with `A = alpha I + beta FᵀF` and `m = beta A⁻¹ Fᵀ y`:
//!
//! ```text
//! log p(y | F, alpha, beta) = D/2 log alpha + n/2 log beta - n/2 log 2π
//!                             - alpha/2 mᵀm - beta/2 |F m - y|² - 1/2 log|A|
//! ```
//!
//! Everything is evaluated in the eigenbasis of the Gram matrix of `F`
//! (`FᵀF` when D ≤ n, `FFᵀ` otherwise), so each evaluation after the one-off
//! decomposition costs O(min(n, D)).

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::featurestore::{FeatureKind, FeatureSet, PromptTag};

/// Fixed-point schedule for maximizing the evidence over `(alpha, beta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvidenceConfig {
    /// Relative change of both alpha and beta below which the iteration stops.
    pub tol: f64,
    pub max_iter: usize,
    pub init_alpha: f64,
    pub init_beta: f64,
    /// Polish the fixed point by a 1-D search over alpha/beta with beta
    /// profiled out. Never lowers the evidence.
    pub refine: bool,
}

impl Default for EvidenceConfig {
    fn default() -> Self {
        EvidenceConfig {
            tol: 1e-3,
            max_iter: 100,
            init_alpha: 1.0,
            init_beta: 1.0,
            refine: true,
        }
    }
}

// keeps the iteration finite when the optimum is at alpha or beta -> infinity
const PRECISION_MIN: f64 = 1e-12;
const PRECISION_MAX: f64 = 1e12;

/// Optimum for one one-vs-rest target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassEvidence {
    pub class: u32,
    pub alpha: f64,
    pub beta: f64,
    /// Maximized log evidence divided by n.
    pub log_evidence: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceResult {
    /// Mean over classes of the per-sample maximized log evidence.
    pub logme: f64,
    /// Class-averaged optimal prior precision.
    pub alpha_star: f64,
    /// Class-averaged optimal noise precision.
    pub beta_star: f64,
    pub per_class: Vec<ClassEvidence>,
    /// Posterior weight means, one row per class (C × D).
    pub m: DMatrix<f64>,
    /// Largest iteration count over classes.
    pub iterations: usize,
    /// True when every class converged.
    pub converged: bool,
    n_samples: usize,
    labels_digest: u64,
}

impl EvidenceResult {
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// True when both results were fitted on the same labels.
    pub fn same_samples(&self, other_n: usize, other_digest: u64) -> bool {
        self.n_samples == other_n && self.labels_digest == other_digest
    }

    pub(crate) fn labels_digest(&self) -> u64 {
        self.labels_digest
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VpEvidenceResult {
    /// Monte-Carlo estimate of the expected log evidence over prompt draws.
    pub mean_logme: f64,
    pub per_prompt: Vec<EvidenceResult>,
    pub k: usize,
    /// Population variance of the per-prompt `logme` values.
    pub variance: f64,
    /// Prompt tag of the first prompted set.
    pub prompt_tag: PromptTag,
}

/// 64-bit FNV-1a over the label sequence.
pub(crate) fn labels_digest(labels: &[u32]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for l in labels {
        for b in l.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

enum Basis {
    /// Eigenvectors of FᵀF (D × r).
    Features(DMatrix<f64>),
    /// Eigenvectors of FFᵀ (n × r).
    Samples(DMatrix<f64>),
}

/// Eigendecomposition of the Gram matrix of a feature set.
pub struct FeatureSpectrum {
    n: usize,
    dim: usize,
    /// Squared singular values of F; numerically-zero ones are set to exactly 0.
    eigvals: Vec<f64>,
    basis: Basis,
}

/// Target expressed in the spectral basis.
struct Projection {
    /// Squared length of y along each left singular vector.
    along: Vec<f64>,
    /// Basis coordinates used to rebuild m (Vᵀ Fᵀ y or Uᵀ y).
    coords: Vec<f64>,
    /// Squared norm of the part of y outside the column span of F.
    outside: f64,
}

const GRAM_CHUNK_ROWS: usize = 2048;

impl FeatureSpectrum {
    pub fn new(fs: &FeatureSet) -> Self {
        let (n, dim) = (fs.n_samples(), fs.dim());
        let data = fs.features();
        let (gram, feature_side) = if dim <= n {
            // FᵀF = Σ over row blocks, reduced in block order
            let partials: Vec<DMatrix<f64>> = data
                .par_chunks(GRAM_CHUNK_ROWS * dim)
                .map(|chunk| {
                    let rows = chunk.len() / dim;
                    let ft = DMatrix::from_iterator(dim, rows, chunk.iter().map(|&v| f64::from(v)));
                    &ft * ft.transpose()
                })
                .collect();
            let mut gram = DMatrix::zeros(dim, dim);
            for p in partials {
                gram += p;
            }
            (gram, true)
        } else {
            let ft = DMatrix::from_iterator(dim, n, data.iter().map(|&v| f64::from(v)));
            (ft.transpose() * &ft, false)
        };

        let eig = SymmetricEigen::new(gram);
        let mut eigvals: Vec<f64> = eig.eigenvalues.iter().map(|&s| s.max(0.0)).collect();
        let s_max = eigvals.iter().cloned().fold(0.0, f64::max);
        let cutoff = s_max * n.max(dim) as f64 * f64::EPSILON;
        for s in &mut eigvals {
            if *s <= cutoff {
                *s = 0.0;
            }
        }
        let basis = if feature_side {
            Basis::Features(eig.eigenvectors)
        } else {
            Basis::Samples(eig.eigenvectors)
        };
        FeatureSpectrum {
            n,
            dim,
            eigvals,
            basis,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Numerical rank of F.
    pub fn rank(&self) -> usize {
        self.eigvals.iter().filter(|&&s| s > 0.0).count()
    }

    /// Squared singular values of F (length min(n, D)).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigvals
    }

    fn finish_projection(&self, coords: Vec<f64>, yy: f64) -> Projection {
        let along: Vec<f64> = match self.basis {
            Basis::Features(_) => coords
                .iter()
                .zip(&self.eigvals)
                .map(|(&z, &s)| if s > 0.0 { z * z / s } else { 0.0 })
                .collect(),
            Basis::Samples(_) => coords
                .iter()
                .zip(&self.eigvals)
                .map(|(&w, &s)| if s > 0.0 { w * w } else { 0.0 })
                .collect(),
        };
        let outside = (yy - along.iter().sum::<f64>()).max(0.0);
        Projection {
            along,
            coords,
            outside,
        }
    }

    fn project(&self, fs: &FeatureSet, target: &[f64]) -> Projection {
        let yy = target.iter().map(|y| y * y).sum();
        let coords = match &self.basis {
            Basis::Features(v) => {
                let mut fty = nalgebra::DVector::zeros(self.dim);
                for (row, &y) in fs.rows().zip(target) {
                    if y != 0.0 {
                        for (acc, &f) in fty.iter_mut().zip(row) {
                            *acc += y * f64::from(f);
                        }
                    }
                }
                (v.transpose() * fty).iter().copied().collect()
            }
            Basis::Samples(u) => {
                let y = nalgebra::DVector::from_column_slice(target);
                (u.transpose() * y).iter().copied().collect()
            }
        };
        self.finish_projection(coords, yy)
    }

    /// One-vs-rest projections for every class at once.
    fn project_classes(&self, fs: &FeatureSet) -> Vec<Projection> {
        let classes = fs.class_count() as usize;
        let counts = fs.class_counts();
        // class-indicator sums: Fᵀ Y (D × C) or Uᵀ Y (r × C)
        let coords = match &self.basis {
            Basis::Features(v) => {
                let mut fty = DMatrix::<f64>::zeros(self.dim, classes);
                for (row, &l) in fs.rows().zip(fs.labels()) {
                    let mut col = fty.column_mut(l as usize);
                    for (acc, &f) in col.iter_mut().zip(row) {
                        *acc += f64::from(f);
                    }
                }
                v.transpose() * fty
            }
            Basis::Samples(u) => {
                let mut uty = DMatrix::<f64>::zeros(u.ncols(), classes);
                for (i, &l) in fs.labels().iter().enumerate() {
                    let mut col = uty.column_mut(l as usize);
                    col += u.row(i).transpose();
                }
                uty
            }
        };
        (0..classes)
            .map(|c| {
                let col: Vec<f64> = coords.column(c).iter().copied().collect();
                self.finish_projection(col, counts[c] as f64)
            })
            .collect()
    }

    /// Log evidence at fixed precisions.
    fn evaluate(&self, proj: &Projection, alpha: f64, beta: f64) -> f64 {
        let n = self.n as f64;
        let d = self.dim as f64;
        let mut mm = 0.0;
        let mut resid = proj.outside;
        let mut log_det = (self.dim - self.eigvals.len()) as f64 * alpha.ln();
        for (&s, &t) in self.eigvals.iter().zip(&proj.along) {
            let denom = alpha + beta * s;
            mm += beta * beta * s * t / (denom * denom);
            resid += t * alpha * alpha / (denom * denom);
            log_det += denom.ln();
        }
        0.5 * d * alpha.ln() + 0.5 * n * beta.ln() - 0.5 * n * (2.0 * PI).ln()
            - 0.5 * alpha * mm
            - 0.5 * beta * resid
            - 0.5 * log_det
    }

    /// MacKay-style alternating updates: alpha from |m|², beta from the residual.
    fn maximize(&self, proj: &Projection, cfg: &EvidenceConfig) -> (f64, f64, usize, bool) {
        let n = self.n as f64;
        let (mut alpha, mut beta) = (cfg.init_alpha, cfg.init_beta);
        let mut iterations = 0;
        let mut converged = false;
        while iterations < cfg.max_iter {
            iterations += 1;
            let mut gamma = 0.0;
            let mut mm = 0.0;
            let mut resid = proj.outside;
            for (&s, &t) in self.eigvals.iter().zip(&proj.along) {
                let denom = alpha + beta * s;
                gamma += beta * s / denom;
                mm += beta * beta * s * t / (denom * denom);
                resid += t * alpha * alpha / (denom * denom);
            }
            let next_alpha = clamp_precision(gamma / mm);
            let next_beta = clamp_precision((n - gamma) / resid);
            let done = ((next_alpha - alpha) / alpha).abs() < cfg.tol
                && ((next_beta - beta) / beta).abs() < cfg.tol;
            alpha = next_alpha;
            beta = next_beta;
            if done {
                converged = true;
                break;
            }
        }
        (alpha, beta, iterations, converged)
    }

    /// For fixed ratio `lambda = alpha/beta` the evidence is maximized by
    /// `beta = n / (lambda mᵀm + |Fm - y|²)`; search ln lambda by golden section
    /// starting from the fixed point.
    fn refine(&self, proj: &Projection, alpha: f64, beta: f64) -> (f64, f64) {
        let n = self.n as f64;
        let profile = |x: f64| {
            let lambda = x.exp();
            let mut fit = proj.outside;
            for (&s, &t) in self.eigvals.iter().zip(&proj.along) {
                fit += t * lambda / (lambda + s);
            }
            let b = clamp_precision(n / fit);
            let a = clamp_precision(lambda * b);
            (self.evaluate(proj, a, b), a, b)
        };
        let (lo, hi) = ((PRECISION_MIN / PRECISION_MAX).ln(), (PRECISION_MAX / PRECISION_MIN).ln());
        let f = |x: f64| profile(x.clamp(lo, hi)).0;

        let x0 = (alpha / beta).ln().clamp(lo, hi);
        let f0 = f(x0);
        let mut h = 0.5;
        let (mut a, mut b) = (x0 - h, x0 + h);
        let dir = if f(x0 + h) > f0 {
            1.0
        } else if f(x0 - h) > f0 {
            -1.0
        } else {
            0.0
        };
        if dir != 0.0 {
            let (mut prev, mut cur) = (x0, x0 + dir * h);
            let mut f_cur = f(cur);
            loop {
                h *= 2.0;
                let next = (cur + dir * h).clamp(lo, hi);
                let f_next = f(next);
                if f_next <= f_cur || next == lo || next == hi {
                    (a, b) = if dir > 0.0 { (prev, next) } else { (next, prev) };
                    break;
                }
                (prev, cur, f_cur) = (cur, next, f_next);
            }
        }

        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let (mut c, mut d) = (b - ratio * (b - a), a + ratio * (b - a));
        let (mut fc, mut fd) = (f(c), f(d));
        while b - a > 1e-10 {
            if fc > fd {
                (b, d, fd) = (d, c, fc);
                c = b - ratio * (b - a);
                fc = f(c);
            } else {
                (a, c, fc) = (c, d, fd);
                d = a + ratio * (b - a);
                fd = f(d);
            }
        }
        let (best, a_star, b_star) = profile(((a + b) / 2.0).clamp(lo, hi));
        if best > self.evaluate(proj, alpha, beta) {
            (a_star, b_star)
        } else {
            (alpha, beta)
        }
    }

    /// Posterior weight mean m = beta A⁻¹ Fᵀ y in feature coordinates.
    fn posterior_mean(&self, fs: &FeatureSet, proj: &Projection, alpha: f64, beta: f64) -> Vec<f64> {
        let scaled: nalgebra::DVector<f64> = nalgebra::DVector::from_iterator(
            self.eigvals.len(),
            self.eigvals
                .iter()
                .zip(&proj.coords)
                .map(|(&s, &c)| if s > 0.0 { beta * c / (alpha + beta * s) } else { 0.0 }),
        );
        match &self.basis {
            Basis::Features(v) => (v * scaled).iter().copied().collect(),
            Basis::Samples(u) => {
                // m = Fᵀ (U scaled)
                let coef = u * scaled;
                let mut m = vec![0.0; self.dim];
                for (row, &c) in fs.rows().zip(coef.iter()) {
                    for (acc, &f) in m.iter_mut().zip(row) {
                        *acc += c * f64::from(f);
                    }
                }
                m
            }
        }
    }
}

fn clamp_precision(x: f64) -> f64 {
    if x.is_nan() {
        PRECISION_MAX
    } else {
        x.clamp(PRECISION_MIN, PRECISION_MAX)
    }
}

fn check_precisions(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite() && beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "alpha = {alpha} and beta = {beta} must be positive and finite"
        )));
    }
    Ok(())
}

/// Log evidence (not normalized by n) of `target` given the features at
/// fixed `alpha` and `beta`.
pub fn log_evidence_at(fs: &FeatureSet, target: &[f64], alpha: f64, beta: f64) -> Result<f64> {
    check_precisions(alpha, beta)?;
    let spectrum = FeatureSpectrum::new(fs);
    log_evidence_with(&spectrum, fs, target, alpha, beta)
}

/// [`log_evidence_at`] reusing a precomputed spectrum of `fs`.
pub fn log_evidence_with(
    spectrum: &FeatureSpectrum,
    fs: &FeatureSet,
    target: &[f64],
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    check_precisions(alpha, beta)?;
    if target.len() != fs.n_samples() {
        return Err(Error::LengthMismatch {
            left: target.len(),
            right: fs.n_samples(),
        });
    }
    if let Some(index) = target.iter().position(|y| !y.is_finite()) {
        return Err(Error::NonFiniteValue { index });
    }
    let value = spectrum.evaluate(&spectrum.project(fs, target), alpha, beta);
    if !value.is_finite() {
        return Err(Error::Numerical(format!(
            "log evidence is {value} at alpha = {alpha}, beta = {beta}"
        )));
    }
    Ok(value)
}

/// One-vs-rest target for `class`.
pub fn one_vs_rest(fs: &FeatureSet, class: u32) -> Vec<f64> {
    fs.labels()
        .iter()
        .map(|&l| if l == class { 1.0 } else { 0.0 })
        .collect()
}

pub fn maximize_evidence(fs: &FeatureSet) -> Result<EvidenceResult> {
    maximize_evidence_with(fs, &EvidenceConfig::default())
}

pub fn maximize_evidence_with(fs: &FeatureSet, cfg: &EvidenceConfig) -> Result<EvidenceResult> {
    check_precisions(cfg.init_alpha, cfg.init_beta)?;
    if cfg.tol.is_nan() || cfg.tol <= 0.0 || cfg.max_iter == 0 {
        return Err(Error::InvalidParameter(
            "tolerance and iteration cap must be positive".into(),
        ));
    }
    fs.require_all_classes()?;
    let spectrum = FeatureSpectrum::new(fs);
    if spectrum.rank() == 0 {
        return Err(Error::DegenerateFeatures);
    }

    let n = fs.n_samples() as f64;
    let projections = spectrum.project_classes(fs);
    let mut per_class = Vec::with_capacity(projections.len());
    let mut m = DMatrix::zeros(projections.len(), fs.dim());
    for (c, proj) in projections.iter().enumerate() {
        let (mut alpha, mut beta, iterations, converged) = spectrum.maximize(proj, cfg);
        if cfg.refine {
            (alpha, beta) = spectrum.refine(proj, alpha, beta);
        }
        let value = spectrum.evaluate(proj, alpha, beta);
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "class {c}: log evidence is {value} at alpha = {alpha}, beta = {beta}"
            )));
        }
        let mean = spectrum.posterior_mean(fs, proj, alpha, beta);
        m.row_mut(c).copy_from_slice(&mean);
        per_class.push(ClassEvidence {
            class: c as u32,
            alpha,
            beta,
            log_evidence: value / n,
            iterations,
            converged,
        });
    }

    let classes = per_class.len() as f64;
    Ok(EvidenceResult {
        logme: per_class.iter().map(|c| c.log_evidence).sum::<f64>() / classes,
        alpha_star: per_class.iter().map(|c| c.alpha).sum::<f64>() / classes,
        beta_star: per_class.iter().map(|c| c.beta).sum::<f64>() / classes,
        iterations: per_class.iter().map(|c| c.iterations).max().unwrap_or(0),
        converged: per_class.iter().all(|c| c.converged),
        per_class,
        m,
        n_samples: fs.n_samples(),
        labels_digest: labels_digest(fs.labels()),
    })
}

/// Expected log evidence over K prompt-conditioned feature sets.
pub fn vp_evidence(prompted: &[FeatureSet]) -> Result<VpEvidenceResult> {
    vp_evidence_with(prompted, &EvidenceConfig::default())
}

pub fn vp_evidence_with(prompted: &[FeatureSet], cfg: &EvidenceConfig) -> Result<VpEvidenceResult> {
    let first = prompted
        .first()
        .ok_or(Error::EmptyInput("no prompted feature sets"))?;
    for (i, fs) in prompted.iter().enumerate() {
        if fs.meta().feature_kind != FeatureKind::VpClassifier {
            return Err(Error::KindMismatch(format!(
                "prompted set {i} has kind {:?}",
                fs.meta().feature_kind
            )));
        }
        if fs.n_samples() != first.n_samples() || fs.labels() != first.labels() {
            return Err(Error::MismatchedSets(format!(
                "prompted set {i} does not share the samples of set 0"
            )));
        }
    }

    let per_prompt: Vec<EvidenceResult> = prompted
        .par_iter()
        .map(|fs| maximize_evidence_with(fs, cfg))
        .collect::<Result<_>>()?;

    // Welford, in prompt order
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, r) in per_prompt.iter().enumerate() {
        let delta = r.logme - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (r.logme - mean);
    }
    let k = per_prompt.len();
    Ok(VpEvidenceResult {
        mean_logme: mean,
        variance: (m2 / k as f64).max(0.0),
        k,
        prompt_tag: first.meta().prompt_tag,
        per_prompt,
    })
}
