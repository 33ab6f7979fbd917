//! OOD-detection baselines: maximum softmax confidence, ODIN and the
//! minimum class-conditional Mahalanobis distance.
//!
//! Matrices are row-major `&[f32]` slices with an explicit column count, the
//! same layout [`FeatureSet`] stores.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestore::FeatureSet;
use crate::metrics::auroc;

pub const DEFAULT_TEMPERATURE: f64 = 1000.0;
pub const DEFAULT_RIDGE_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Confidence,
    Odin,
    Mahalanobis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineScore {
    pub method: BaselineMethod,
    pub per_sample: Vec<f64>,
    pub dataset_score: f64,
    /// Multiplier applied before datasets are sorted against gains.
    pub sort_sign: i8,
}

impl BaselineScore {
    /// `sort_sign · dataset_score`, the value ranked against accuracy gains.
    pub fn ranking_score(&self) -> f64 {
        f64::from(self.sort_sign) * self.dataset_score
    }
}

fn logit_rows(logits: &[f32], classes: usize) -> Result<usize> {
    if classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "{classes} logit columns, need at least 2"
        )));
    }
    if logits.is_empty() {
        return Err(Error::EmptyInput("no logits"));
    }
    if !logits.len().is_multiple_of(classes) {
        return Err(Error::ShapeMismatch(format!(
            "{} logits do not form rows of {classes}",
            logits.len()
        )));
    }
    if let Some(index) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLogits { index });
    }
    Ok(logits.len() / classes)
}

/// max_c softmax(row / temperature)_c, clamped to [1/C, 1].
fn max_softmax(row: &[f32], temperature: f64) -> f64 {
    let scaled: Vec<f64> = row.iter().map(|&v| f64::from(v) / temperature).collect();
    let top = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = scaled.iter().map(|v| (v - top).exp()).sum();
    (1.0 / denom).clamp(1.0 / row.len() as f64, 1.0)
}

fn softmax_baseline(method: BaselineMethod, logits: &[f32], classes: usize, temperature: f64) -> BaselineScore {
    let per_sample: Vec<f64> = logits
        .chunks_exact(classes)
        .map(|row| max_softmax(row, temperature))
        .collect();
    let dataset_score = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    BaselineScore {
        method,
        per_sample,
        dataset_score,
        sort_sign: -1,
    }
}

/// Maximum softmax probability per sample; the dataset score is the mean.
pub fn confidence_score(logits: &[f32], classes: usize) -> Result<BaselineScore> {
    logit_rows(logits, classes)?;
    Ok(softmax_baseline(BaselineMethod::Confidence, logits, classes, 1.0))
}

/// Temperature-scaled confidence. When `perturbed` is given (logits of
/// inputs nudged against the loss gradient) it replaces `logits`.
pub fn odin_score(
    logits: &[f32],
    classes: usize,
    temperature: f64,
    perturbed: Option<&[f32]>,
) -> Result<BaselineScore> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "temperature {temperature} must be positive"
        )));
    }
    let rows = logit_rows(logits, classes)?;
    let used = match perturbed {
        Some(p) => {
            if p.len() != logits.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} perturbed logits for {rows}x{classes} raw logits",
                    p.len()
                )));
            }
            logit_rows(p, classes)?;
            p
        }
        None => logits,
    };
    Ok(softmax_baseline(BaselineMethod::Odin, used, classes, temperature))
}

/// Class means and a shared precision matrix.
#[derive(Debug, Clone)]
pub struct MahalanobisFit {
    pub means: DMatrix<f64>,
    pub precision: DMatrix<f64>,
    pub ridge: f64,
    /// Inverse Cholesky factor: precision = whitenᵀ · whiten.
    whiten: DMatrix<f64>,
    whitened_means: DMatrix<f64>,
}

impl MahalanobisFit {
    pub fn dim(&self) -> usize {
        self.precision.nrows()
    }

    pub fn class_count(&self) -> usize {
        self.means.nrows()
    }
}

pub fn mahalanobis_fit(train: &FeatureSet) -> Result<MahalanobisFit> {
    mahalanobis_fit_with(train, DEFAULT_RIDGE_SCALE)
}

/// Tied covariance (1/n normalization) over class-centred features with
/// ridge `ridge_scale · trace(Σ)/D`. If the within-class scatter vanishes the
/// ridge is scaled by the global scatter instead.
pub fn mahalanobis_fit_with(train: &FeatureSet, ridge_scale: f64) -> Result<MahalanobisFit> {
    if !(ridge_scale >= 0.0 && ridge_scale.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "ridge scale {ridge_scale} must be non-negative"
        )));
    }
    let (n, d, c) = (train.n_samples(), train.dim(), train.class_count() as usize);
    for (class, &count) in train.class_counts().iter().enumerate() {
        if count == 0 {
            return Err(Error::MissingClass { class: class as u32 });
        }
        if count < 2 {
            return Err(Error::TooFewValues { needed: 2, got: count });
        }
    }

    let mut means = DMatrix::<f64>::zeros(c, d);
    for (row, &label) in train.rows().zip(train.labels()) {
        for (j, &v) in row.iter().enumerate() {
            means[(label as usize, j)] += f64::from(v);
        }
    }
    for (class, &count) in train.class_counts().iter().enumerate() {
        means.row_mut(class).unscale_mut(count as f64);
    }

    let mut centred = DMatrix::<f64>::zeros(d, n);
    let mut global = DMatrix::<f64>::zeros(d, n);
    let grand: DVector<f64> = DVector::from_iterator(
        d,
        (0..d).map(|j| train.rows().map(|r| f64::from(r[j])).sum::<f64>() / n as f64),
    );
    for (i, (row, &label)) in train.rows().zip(train.labels()).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            centred[(j, i)] = f64::from(v) - means[(label as usize, j)];
            global[(j, i)] = f64::from(v) - grand[j];
        }
    }
    let mut cov = (&centred * centred.transpose()).unscale(n as f64);
    let mut scale = cov.trace();
    if scale == 0.0 {
        scale = global.iter().map(|v| v * v).sum::<f64>() / n as f64;
    }
    let ridge = ridge_scale * scale / d as f64;
    if scale == 0.0 && ridge_scale > 0.0 {
        return Err(Error::SingularCovariance);
    }
    for j in 0..d {
        cov[(j, j)] += ridge;
    }

    let chol = cov.cholesky().ok_or(Error::SingularCovariance)?;
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(d, d))
        .ok_or(Error::SingularCovariance)?;
    if l_inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularCovariance);
    }
    let mut precision = l_inv.transpose() * &l_inv;
    precision = (&precision + precision.transpose()).unscale(2.0);
    let whitened_means = &means * l_inv.transpose();
    Ok(MahalanobisFit {
        means,
        precision,
        ridge,
        whiten: l_inv,
        whitened_means,
    })
}

/// Squared Mahalanobis distance to the nearest class mean, per row.
pub fn mahalanobis_score(fit: &MahalanobisFit, feats: &[f32], dim: usize) -> Result<Vec<f64>> {
    if dim != fit.dim() {
        return Err(Error::DimensionMismatch(format!(
            "features have {dim} columns, fit has {}",
            fit.dim()
        )));
    }
    if !feats.len().is_multiple_of(dim) {
        return Err(Error::ShapeMismatch(format!(
            "{} values do not form rows of {dim}",
            feats.len()
        )));
    }
    if let Some(index) = feats.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { index });
    }
    let m = feats.len() / dim;
    let x = DMatrix::from_row_iterator(m, dim, feats.iter().map(|&v| f64::from(v)));
    let z = x * fit.whiten.transpose();
    Ok((0..m)
        .map(|i| {
            (0..fit.class_count())
                .map(|c| {
                    (0..dim)
                        .map(|j| {
                            let t = z[(i, j)] - fit.whitened_means[(c, j)];
                            t * t
                        })
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

/// AUROC with OOD distances as positives and ID distances as negatives.
pub fn mahalanobis_auroc(fit: &MahalanobisFit, id_feats: &[f32], ood_feats: &[f32], dim: usize) -> Result<f64> {
    let id = mahalanobis_score(fit, id_feats, dim)?;
    let ood = mahalanobis_score(fit, ood_feats, dim)?;
    auroc(&ood, &id)
}

/// Mahalanobis baseline as a [`BaselineScore`]: per-sample OOD distances and
/// the AUROC as dataset score.
pub fn mahalanobis_baseline(
    fit: &MahalanobisFit,
    id_feats: &[f32],
    ood_feats: &[f32],
    dim: usize,
) -> Result<BaselineScore> {
    let id = mahalanobis_score(fit, id_feats, dim)?;
    let ood = mahalanobis_score(fit, ood_feats, dim)?;
    let dataset_score = auroc(&ood, &id)?;
    Ok(BaselineScore {
        method: BaselineMethod::Mahalanobis,
        per_sample: ood,
        dataset_score,
        sort_sign: 1,
    })
}
