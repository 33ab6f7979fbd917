//! Gaussian class-cluster generators for controlled LP/VP comparisons.
//!
//! A domain has one LP feature set and K prompted feature sets over the same
//! samples. How far apart the class means sit in each view decides which
//! view is more linearly predictive: an OOD-like domain is separable only
//! after prompting, an ID-like domain only in backbone features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestore::{mix_feature_sets, FeatureMeta, FeatureSet, PromptTag};
use crate::llr::Mixture;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub classes: u32,
    pub samples_per_class: usize,
    /// Norm scale of the class means in backbone features.
    pub lp_separation: f64,
    /// Norm scale of the class means in prompted features.
    pub vp_separation: f64,
}

impl DomainSpec {
    /// Overlapping clusters without prompts, separated with them.
    pub fn ood_like(classes: u32) -> Self {
        DomainSpec {
            classes,
            samples_per_class: 40,
            lp_separation: 0.3,
            vp_separation: 4.0,
        }
    }

    /// Separated clusters without prompts, overlapping with them.
    pub fn id_like(classes: u32) -> Self {
        DomainSpec {
            classes,
            samples_per_class: 40,
            lp_separation: 4.0,
            vp_separation: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub lp_dim: usize,
    pub vp_dim: usize,
    /// Per-coordinate standard deviation of the within-class noise.
    pub noise: f64,
    /// Per-coordinate standard deviation of the shift each prompt draw adds
    /// to every class mean.
    pub prompt_jitter: f64,
    pub k_prompts: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            lp_dim: 32,
            vp_dim: 32,
            noise: 1.0,
            prompt_jitter: 0.2,
            k_prompts: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDomain {
    pub lp: FeatureSet,
    pub vp: Vec<FeatureSet>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Class means with entries N(0, separation²/dim), so |μ| ≈ separation.
fn class_means(rng: &mut ChaCha8Rng, classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    let scale = separation / (dim as f64).sqrt();
    (0..classes)
        .map(|_| (0..dim).map(|_| scale * gaussian(rng)).collect())
        .collect()
}

fn draw(rng: &mut ChaCha8Rng, means: &[Vec<f64>], labels: &[u32], noise: f64) -> Vec<f32> {
    labels
        .iter()
        .flat_map(|&l| means[l as usize].clone())
        .map(|m| (m + noise * gaussian(rng)) as f32)
        .collect()
}

/// Deterministic in `seed`; each prompt draw uses its own derived stream.
pub fn generate_domain(name: &str, spec: &DomainSpec, cfg: &SyntheticConfig, seed: u64) -> Result<SyntheticDomain> {
    if spec.classes < 2 || spec.samples_per_class == 0 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 classes and 1 sample per class, got {} and {}",
            spec.classes, spec.samples_per_class
        )));
    }
    if cfg.lp_dim == 0 || cfg.vp_dim == 0 || cfg.k_prompts == 0 {
        return Err(Error::InvalidParameter(
            "dimensions and prompt count must be positive".into(),
        ));
    }
    for (what, v) in [
        ("noise", cfg.noise),
        ("prompt_jitter", cfg.prompt_jitter),
        ("lp_separation", spec.lp_separation),
        ("vp_separation", spec.vp_separation),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{what} = {v} must be non-negative")));
        }
    }

    let classes = spec.classes as usize;
    let labels: Vec<u32> = (0..classes * spec.samples_per_class)
        .map(|i| (i % classes) as u32)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lp_means = class_means(&mut rng, classes, cfg.lp_dim, spec.lp_separation);
    let vp_means = class_means(&mut rng, classes, cfg.vp_dim, spec.vp_separation);
    let lp = FeatureSet::new(
        draw(&mut rng, &lp_means, &labels, cfg.noise),
        cfg.lp_dim,
        labels.clone(),
        FeatureMeta::lp(name, "synthetic", spec.classes),
    )?;

    let vp = (0..cfg.k_prompts)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            let shifted: Vec<Vec<f64>> = vp_means
                .iter()
                .map(|m| m.iter().map(|v| v + cfg.prompt_jitter * gaussian(&mut rng)).collect())
                .collect();
            FeatureSet::new(
                draw(&mut rng, &shifted, &labels, cfg.noise),
                cfg.vp_dim,
                labels.clone(),
                FeatureMeta::vp(name, "synthetic", spec.classes, PromptTag::Gaussian, Some(k as i64)),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDomain { lp, vp })
}

/// All of `base` plus the first `k` classes of `added`, for every k in `ks`,
/// applied identically to the LP set and each prompted set.
pub fn mixture_sweep(base: &SyntheticDomain, added: &SyntheticDomain, ks: &[u32]) -> Result<Vec<Mixture>> {
    if base.vp.len() != added.vp.len() {
        return Err(Error::MismatchedSets(format!(
            "{} vs {} prompt draws",
            base.vp.len(),
            added.vp.len()
        )));
    }
    ks.iter()
        .map(|&k| {
            Ok(Mixture {
                lp: mix_feature_sets(&base.lp, &added.lp, k)?,
                vp: base
                    .vp
                    .iter()
                    .zip(&added.vp)
                    .map(|(a, b)| mix_feature_sets(a, b, k))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}
