//! Dataset-level log-likelihood ratio: expected evidence under prompting
//! minus evidence of linear probing.
//!
//! A positive score says prompted features explain the labels better than the
//! backbone features (VP favoured); a negative score says the opposite. The
//! ratio is only defined per dataset; there is no per-sample LLR.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::{labels_digest, maximize_evidence_with, vp_evidence_with, EvidenceConfig};
use crate::evidence::{EvidenceResult, VpEvidenceResult};
use crate::featurestore::{FeatureSet, PromptTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlrReport {
    #[serde(rename = "dataset")]
    pub dataset_name: String,
    pub llr: f64,
    pub logme_lp: f64,
    pub logme_vp_mean: f64,
    pub vp_variance: f64,
    #[serde(rename = "k")]
    pub k_prompts: usize,
    pub prompt_tag: PromptTag,
}

impl LlrReport {
    /// True when the score favours visual prompting.
    pub fn favours_vp(&self) -> bool {
        self.llr > 0.0
    }
}

/// Combines LP evidence with the prompted expectation into a report.
pub fn llr_score(
    dataset_name: impl Into<String>,
    lp: &EvidenceResult,
    vp: &VpEvidenceResult,
) -> Result<LlrReport> {
    let first = vp
        .per_prompt
        .first()
        .ok_or(Error::EmptyInput("no prompted evidence"))?;
    if vp
        .per_prompt
        .iter()
        .any(|r| !lp.same_samples(r.n_samples(), r.labels_digest()))
    {
        return Err(Error::SampleMismatch);
    }
    debug_assert_eq!(first.n_samples(), lp.n_samples());
    Ok(LlrReport {
        dataset_name: dataset_name.into(),
        llr: vp.mean_logme - lp.logme,
        logme_lp: lp.logme,
        logme_vp_mean: vp.mean_logme,
        vp_variance: vp.variance,
        k_prompts: vp.k,
        prompt_tag: vp.prompt_tag,
    })
}

/// Fits both sides from feature sets and scores them.
pub fn score_feature_sets(lp: &FeatureSet, vp: &[FeatureSet], cfg: &EvidenceConfig) -> Result<LlrReport> {
    if let Some(first) = vp.first() {
        if first.n_samples() != lp.n_samples()
            || labels_digest(first.labels()) != labels_digest(lp.labels())
        {
            return Err(Error::SampleMismatch);
        }
    }
    let (lp_fit, vp_fit) = rayon::join(
        || maximize_evidence_with(lp, cfg),
        || vp_evidence_with(vp, cfg),
    );
    llr_score(lp.meta().dataset_name.clone(), &lp_fit?, &vp_fit?)
}

/// One LP set with its K prompted counterparts.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub lp: FeatureSet,
    pub vp: Vec<FeatureSet>,
}

/// Scores every mixture; reports come back in input order.
pub fn llr_sweep(mixtures: &[Mixture], cfg: &EvidenceConfig) -> Result<Vec<LlrReport>> {
    mixtures
        .par_iter()
        .map(|m| score_feature_sets(&m.lp, &m.vp, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::{maximize_evidence, vp_evidence};
    use crate::featurestore::FeatureMeta;

    fn clustered(spread: f32, tag: Option<PromptTag>) -> FeatureSet {
        // 3 classes on the corners of a triangle, `spread` controls the overlap
        let centres = [[2.0f32, 0.0], [-1.0, 1.7], [-1.0, -1.7]];
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..90 {
            let c = i % 3;
            let wobble = ((i * 37 % 17) as f32 / 17.0 - 0.5) * spread;
            let wobble2 = ((i * 11 % 13) as f32 / 13.0 - 0.5) * spread;
            rows.push(vec![centres[c][0] + wobble, centres[c][1] + wobble2, 1.0]);
            labels.push(c as u32);
        }
        let meta = match tag {
            None => FeatureMeta::lp("tri", "m", 3),
            Some(t) => FeatureMeta::vp("tri", "m", 3, t, None),
        };
        FeatureSet::from_rows(&rows, labels, meta).unwrap()
    }

    #[test]
    fn equal_evidence_gives_zero() {
        let lp = clustered(1.0, None);
        let vp = clustered(1.0, Some(PromptTag::Gaussian));
        let report = score_feature_sets(&lp, &[vp], &EvidenceConfig::default()).unwrap();
        assert_eq!(report.llr, 0.0);
        assert_eq!(report.k_prompts, 1);
    }

    #[test]
    fn separated_prompted_features_score_positive() {
        let lp = clustered(8.0, None);
        let vp = clustered(0.5, Some(PromptTag::Gaussian));
        let report = score_feature_sets(&lp, &[vp], &EvidenceConfig::default()).unwrap();
        assert!(report.llr > 0.0, "{report:?}");
        assert!(report.favours_vp());
    }

    #[test]
    fn swapping_roles_negates() {
        let a = clustered(8.0, None);
        let b = clustered(0.5, None);
        let as_vp = |fs: &FeatureSet| {
            fs.clone()
                .with_meta(FeatureMeta::vp("tri", "m", 3, PromptTag::Trained, None))
                .unwrap()
        };
        let ab = llr_score("x", &maximize_evidence(&a).unwrap(), &vp_evidence(&[as_vp(&b)]).unwrap()).unwrap();
        let ba = llr_score("x", &maximize_evidence(&b).unwrap(), &vp_evidence(&[as_vp(&a)]).unwrap()).unwrap();
        assert_eq!(ab.llr, -ba.llr);
    }

    #[test]
    fn mismatched_samples_rejected() {
        let lp = clustered(1.0, None);
        let other = FeatureSet::new(
            vec![1.0, 0.0, 0.0, 1.0],
            2,
            vec![0, 1],
            FeatureMeta::vp("o", "m", 2, PromptTag::Gaussian, None),
        )
        .unwrap();
        let lp_fit = maximize_evidence(&lp).unwrap();
        let vp_fit = vp_evidence(&[other]).unwrap();
        assert!(matches!(
            llr_score("x", &lp_fit, &vp_fit),
            Err(Error::SampleMismatch)
        ));
    }

    #[test]
    fn sweep_preserves_order() {
        let cfg = EvidenceConfig::default();
        assert!(llr_sweep(&[], &cfg).unwrap().is_empty());
        let mixtures: Vec<Mixture> = [0.5f32, 4.0, 8.0]
            .iter()
            .map(|&s| Mixture {
                lp: clustered(2.0, None),
                vp: vec![clustered(s, Some(PromptTag::Gaussian))],
            })
            .collect();
        let reports = llr_sweep(&mixtures, &cfg).unwrap();
        for (m, r) in mixtures.iter().zip(&reports) {
            assert_eq!(*r, score_feature_sets(&m.lp, &m.vp, &cfg).unwrap());
        }
        assert!(reports[0].llr > reports[2].llr);
    }

    #[test]
    fn report_json_field_names() {
        let r = LlrReport {
            dataset_name: "SVHN".into(),
            llr: 0.25,
            logme_lp: -1.0,
            logme_vp_mean: -0.75,
            vp_variance: 0.0,
            k_prompts: 5,
            prompt_tag: PromptTag::Gaussian,
        };
        let v = serde_json::to_value(&r).unwrap();
        for key in ["dataset", "llr", "logme_lp", "logme_vp_mean", "vp_variance", "k", "prompt_tag"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["prompt_tag"], "gaussian");
    }
}
