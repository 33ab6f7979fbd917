//! Feature sets: the n × D feature matrix, labels and provenance that every
//! score is computed from.
//!
//! Sets are validated on construction and immutable afterwards, so a loaded
//! set can be shared freely between threads.

mod format;
mod gains;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{decode_feature_set, encode_feature_set, load_feature_set, write_feature_set};
pub use format::{FST_MAGIC, FST_VERSION};
pub use gains::{read_gains, write_gains, GainRecord};

/// Where in the network a feature matrix was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Output of the frozen backbone, the input of a linear probe.
    LpPenultimate,
    /// Output of the backbone's own classifier on prompted inputs.
    VpClassifier,
}

impl FeatureKind {
    pub fn code(self) -> u8 {
        match self {
            FeatureKind::LpPenultimate => 0,
            FeatureKind::VpClassifier => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FeatureKind::LpPenultimate),
            1 => Some(FeatureKind::VpClassifier),
            _ => None,
        }
    }
}

/// How the prompt behind a VP feature set was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptTag {
    None,
    Gaussian,
    Gradient,
    MiniFt1,
    MiniFt5,
    Trained,
}

impl PromptTag {
    pub fn code(self) -> u8 {
        match self {
            PromptTag::None => 0,
            PromptTag::Gaussian => 1,
            PromptTag::Gradient => 2,
            PromptTag::MiniFt1 => 3,
            PromptTag::MiniFt5 => 4,
            PromptTag::Trained => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => PromptTag::None,
            1 => PromptTag::Gaussian,
            2 => PromptTag::Gradient,
            3 => PromptTag::MiniFt1,
            4 => PromptTag::MiniFt5,
            5 => PromptTag::Trained,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub dataset_name: String,
    pub model_name: String,
    pub feature_kind: FeatureKind,
    pub prompt_tag: PromptTag,
    pub prompt_seed: Option<i64>,
    pub class_count: u32,
}

impl FeatureMeta {
    /// Metadata for linear-probing (penultimate) features.
    pub fn lp(dataset: impl Into<String>, model: impl Into<String>, class_count: u32) -> Self {
        FeatureMeta {
            dataset_name: dataset.into(),
            model_name: model.into(),
            feature_kind: FeatureKind::LpPenultimate,
            prompt_tag: PromptTag::None,
            prompt_seed: None,
            class_count,
        }
    }

    /// Metadata for classifier outputs under a prompt.
    pub fn vp(
        dataset: impl Into<String>,
        model: impl Into<String>,
        class_count: u32,
        prompt_tag: PromptTag,
        prompt_seed: Option<i64>,
    ) -> Self {
        FeatureMeta {
            dataset_name: dataset.into(),
            model_name: model.into(),
            feature_kind: FeatureKind::VpClassifier,
            prompt_tag,
            prompt_seed,
            class_count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::InvalidHeader(format!(
                "class count {} < 2",
                self.class_count
            )));
        }
        match (self.feature_kind, self.prompt_tag) {
            (FeatureKind::LpPenultimate, PromptTag::None) => Ok(()),
            (FeatureKind::LpPenultimate, tag) => Err(Error::KindMismatch(format!(
                "lp_penultimate features cannot carry prompt tag {tag:?}"
            ))),
            (FeatureKind::VpClassifier, PromptTag::None) => Err(Error::KindMismatch(
                "vp_classifier features need a prompt tag".into(),
            )),
            (FeatureKind::VpClassifier, _) => Ok(()),
        }
    }
}

/// An n × D feature matrix (row-major, f32) with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    features: Vec<f32>,
    n_samples: usize,
    dim: usize,
    labels: Vec<u32>,
    meta: FeatureMeta,
}

impl FeatureSet {
    /// Builds a set from a row-major feature buffer, checking every invariant.
    pub fn new(features: Vec<f32>, dim: usize, labels: Vec<u32>, meta: FeatureMeta) -> Result<Self> {
        meta.validate()?;
        let n_samples = labels.len();
        if n_samples == 0 || dim == 0 {
            return Err(Error::DimensionMismatch(format!(
                "empty feature set (n = {n_samples}, D = {dim})"
            )));
        }
        let expected = n_samples
            .checked_mul(dim)
            .ok_or_else(|| Error::DimensionMismatch("n * D overflows".into()))?;
        if features.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{} feature values for n = {n_samples}, D = {dim}",
                features.len()
            )));
        }
        if let Some(index) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        if let Some((index, &label)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= meta.class_count)
        {
            return Err(Error::LabelOutOfRange {
                index,
                label: label as i64,
                class_count: meta.class_count,
            });
        }
        Ok(FeatureSet {
            features,
            n_samples,
            dim,
            labels,
            meta,
        })
    }

    /// Builds a set from per-sample rows.
    pub fn from_rows(rows: &[Vec<f32>], labels: Vec<u32>, meta: FeatureMeta) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch(format!(
                "ragged rows: {} vs {dim}",
                bad.len()
            )));
        }
        if rows.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: rows.len(),
                right: labels.len(),
            });
        }
        Self::new(rows.concat(), dim, labels, meta)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> u32 {
        self.meta.class_count
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Row-major feature buffer of length n·D.
    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.features.chunks_exact(self.dim)
    }

    pub fn meta(&self) -> &FeatureMeta {
        &self.meta
    }

    /// Same samples under different metadata (e.g. re-tagging LP features as VP).
    pub fn with_meta(self, meta: FeatureMeta) -> Result<Self> {
        Self::new(self.features, self.dim, self.labels, meta)
    }

    /// Number of samples per class, indexed by label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.meta.class_count as usize];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Fails with `MissingClass` for the first class without samples.
    pub fn require_all_classes(&self) -> Result<()> {
        match self.class_counts().iter().position(|&c| c == 0) {
            Some(class) => Err(Error::MissingClass {
                class: class as u32,
            }),
            None => Ok(()),
        }
    }

    fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(features, self.dim, labels, self.meta.clone())
    }
}

/// Joins all of `a` with the samples of `b` whose label is below `classes_from_b`.
///
/// Labels from `b` are shifted past `a`'s classes, so the result has
/// `a.class_count + classes_from_b` classes and `a`'s labels are untouched.
pub fn mix_feature_sets(a: &FeatureSet, b: &FeatureSet, classes_from_b: u32) -> Result<FeatureSet> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch(format!(
            "cannot mix D = {} with D = {}",
            a.dim, b.dim
        )));
    }
    if a.meta.feature_kind != b.meta.feature_kind {
        return Err(Error::KindMismatch(format!(
            "cannot mix {:?} with {:?}",
            a.meta.feature_kind, b.meta.feature_kind
        )));
    }
    if classes_from_b == 0 || classes_from_b > b.class_count() {
        return Err(Error::OutOfRange {
            what: "k",
            value: classes_from_b as i64,
            range: format!("[1, {}]", b.class_count()),
        });
    }
    let offset = a.class_count();
    let mut features = a.features.clone();
    let mut labels = a.labels.clone();
    for (row, &label) in b.rows().zip(&b.labels) {
        if label < classes_from_b {
            features.extend_from_slice(row);
            labels.push(label + offset);
        }
    }
    let meta = FeatureMeta {
        dataset_name: format!(
            "{}+{}[{}]",
            a.meta.dataset_name, b.meta.dataset_name, classes_from_b
        ),
        class_count: offset + classes_from_b,
        ..a.meta.clone()
    };
    FeatureSet::new(features, a.dim, labels, meta)
}

/// Deterministic stratified subsample of `m` rows.
///
/// Each class gets a share proportional to its size, at least one sample
/// when `m >= C`; rows keep their original relative order.
pub fn subsample(fs: &FeatureSet, m: usize, seed: u64) -> Result<FeatureSet> {
    let n = fs.n_samples;
    if m == 0 || m > n {
        return Err(Error::OutOfRange {
            what: "m",
            value: m as i64,
            range: format!("[1, {n}]"),
        });
    }
    if m == n {
        return Ok(fs.clone());
    }

    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in fs.labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let sizes: Vec<usize> = by_class.values().map(Vec::len).collect();
    let quotas = stratified_quotas(&sizes, m);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(m);
    for (members, &quota) in by_class.values().zip(&quotas) {
        let mut members = members.clone();
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..quota]);
    }
    chosen.sort_unstable();
    fs.select(&chosen)
}

/// Largest-remainder apportionment of `m` slots over classes of the given sizes,
/// with a floor of one per class whenever there are at least as many slots as classes.
fn stratified_quotas(sizes: &[usize], m: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    let floor_one = m >= sizes.len();
    let exact: Vec<f64> = sizes
        .iter()
        .map(|&s| m as f64 * s as f64 / n as f64)
        .collect();
    let mut quotas: Vec<usize> = exact
        .iter()
        .zip(sizes)
        .map(|(&e, &s)| {
            let q = e.floor() as usize;
            if floor_one { q.max(1) } else { q }.min(s)
        })
        .collect();

    let mut total: usize = quotas.iter().sum();
    // shrink the most over-allocated classes first
    while total > m {
        let i = (0..quotas.len())
            .filter(|&i| quotas[i] > usize::from(floor_one))
            .max_by(|&i, &j| {
                let oi = quotas[i] as f64 - exact[i];
                let oj = quotas[j] as f64 - exact[j];
                oi.total_cmp(&oj).then(j.cmp(&i))
            })
            .expect("quota total exceeds m with nothing to remove");
        quotas[i] -= 1;
        total -= 1;
    }
    while total < m {
        let i = (0..quotas.len())
            .filter(|&i| quotas[i] < sizes[i])
            .max_by(|&i, &j| {
                let ri = exact[i] - quotas[i] as f64;
                let rj = exact[j] - quotas[j] as f64;
                ri.total_cmp(&rj).then(j.cmp(&i))
            })
            .expect("m <= n guarantees spare capacity");
        quotas[i] += 1;
        total += 1;
    }
    quotas
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[&[f32]], labels: &[u32], classes: u32) -> FeatureSet {
        let rows: Vec<Vec<f32>> = rows.iter().map(|r| r.to_vec()).collect();
        FeatureSet::from_rows(&rows, labels.to_vec(), FeatureMeta::lp("t", "m", classes)).unwrap()
    }

    fn balanced(n_per_class: usize, classes: u32) -> FeatureSet {
        let n = n_per_class * classes as usize;
        let features = (0..n * 2).map(|i| i as f32).collect();
        let labels = (0..n).map(|i| (i % classes as usize) as u32).collect();
        FeatureSet::new(features, 2, labels, FeatureMeta::lp("b", "m", classes)).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        let meta = FeatureMeta::lp("t", "m", 2);
        assert!(matches!(
            FeatureSet::new(vec![1.0, f32::NAN], 1, vec![0, 1], meta.clone()),
            Err(Error::NonFiniteValue { index: 1 })
        ));
        assert!(matches!(
            FeatureSet::new(vec![1.0, 2.0], 1, vec![0, 2], meta.clone()),
            Err(Error::LabelOutOfRange { index: 1, .. })
        ));
        assert!(matches!(
            FeatureSet::new(vec![1.0, 2.0, 3.0], 1, vec![0, 1], meta.clone()),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            FeatureSet::new(vec![], 1, vec![], meta),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(FeatureSet::new(vec![1.0], 1, vec![0], FeatureMeta::lp("t", "m", 1)).is_err());
    }

    #[test]
    fn kind_and_tag_must_agree() {
        let mut meta = FeatureMeta::lp("t", "m", 2);
        meta.prompt_tag = PromptTag::Gaussian;
        assert!(matches!(meta.validate(), Err(Error::KindMismatch(_))));
        let meta = FeatureMeta::vp("t", "m", 2, PromptTag::None, None);
        assert!(matches!(meta.validate(), Err(Error::KindMismatch(_))));
        assert!(FeatureMeta::vp("t", "m", 2, PromptTag::Trained, Some(3))
            .validate()
            .is_ok());
    }

    #[test]
    fn mix_offsets_labels_of_second_set() {
        // 10-class "a" mixed with the first 2 classes of a 47-class "b"
        let a = balanced(3, 10);
        let b = balanced(2, 47);
        let mixed = mix_feature_sets(&a, &b, 2).unwrap();
        assert_eq!(mixed.class_count(), 12);
        assert_eq!(mixed.n_samples(), 30 + 4);
        assert_eq!(&mixed.labels()[..30], a.labels());
        assert!(mixed.labels()[30..].iter().all(|&l| l == 10 || l == 11));
    }

    #[test]
    fn mix_with_full_class_count_concatenates() {
        let a = set(&[&[1.0], &[2.0]], &[0, 1], 2);
        let b = set(&[&[3.0], &[4.0], &[5.0]], &[2, 0, 1], 3);
        let mixed = mix_feature_sets(&a, &b, 3).unwrap();
        assert_eq!(mixed.features(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(mixed.labels(), &[0, 1, 4, 2, 3]);
        assert_eq!(mixed.class_count(), 5);
    }

    #[test]
    fn mix_sample_count_matches_direct_count() {
        let a = balanced(4, 3);
        let b = balanced(5, 7);
        for k in 1..=7 {
            let expected = a.n_samples() + b.labels().iter().filter(|&&l| l < k).count();
            assert_eq!(mix_feature_sets(&a, &b, k).unwrap().n_samples(), expected);
        }
    }

    #[test]
    fn mix_errors() {
        let a = balanced(2, 2);
        let wide = FeatureSet::new(vec![0.0; 6], 3, vec![0, 1], FeatureMeta::lp("w", "m", 2)).unwrap();
        assert!(matches!(
            mix_feature_sets(&a, &wide, 1),
            Err(Error::DimensionMismatch(_))
        ));
        let vp = a
            .clone()
            .with_meta(FeatureMeta::vp("v", "m", 2, PromptTag::Gaussian, None))
            .unwrap();
        assert!(matches!(
            mix_feature_sets(&a, &vp, 1),
            Err(Error::KindMismatch(_))
        ));
        assert!(matches!(
            mix_feature_sets(&a, &a, 0),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            mix_feature_sets(&a, &a, 3),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn subsample_full_size_is_identity() {
        let fs = balanced(5, 4);
        for seed in [0, 1, 99] {
            assert_eq!(subsample(&fs, fs.n_samples(), seed).unwrap(), fs);
        }
    }

    #[test]
    fn subsample_one_per_class() {
        let fs = balanced(25, 8);
        let sub = subsample(&fs, 8, 3).unwrap();
        assert_eq!(sub.class_counts(), vec![1; 8]);
    }

    #[test]
    fn subsample_keeps_rare_classes() {
        // 95 samples of class 0, 5 of class 1: proportional share of class 1 at m = 10 is 0.5
        let labels: Vec<u32> = (0..100).map(|i| u32::from(i >= 95)).collect();
        let fs = FeatureSet::new(vec![0.0; 100], 1, labels, FeatureMeta::lp("r", "m", 2)).unwrap();
        let sub = subsample(&fs, 10, 0).unwrap();
        assert_eq!(sub.n_samples(), 10);
        assert_eq!(sub.class_counts(), vec![9, 1]);
    }

    #[test]
    fn subsample_is_seeded() {
        let fs = balanced(100, 10);
        let a = subsample(&fs, 100, 7).unwrap();
        let b = subsample(&fs, 100, 7).unwrap();
        let c = subsample(&fs, 100, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.class_counts(), vec![10; 10]);
    }

    #[test]
    fn subsample_range_checked() {
        let fs = balanced(2, 2);
        assert!(matches!(subsample(&fs, 0, 0), Err(Error::OutOfRange { .. })));
        assert!(matches!(subsample(&fs, 5, 0), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn quotas_always_sum_to_m() {
        let sizes = [1, 1, 1, 50, 7, 3];
        let n: usize = sizes.iter().sum();
        for m in 1..=n {
            let q = stratified_quotas(&sizes, m);
            assert_eq!(q.iter().sum::<usize>(), m);
            assert!(q.iter().zip(&sizes).all(|(q, s)| q <= s));
            if m >= sizes.len() {
                assert!(q.iter().all(|&q| q >= 1), "m = {m}: {q:?}");
            }
        }
    }
}
