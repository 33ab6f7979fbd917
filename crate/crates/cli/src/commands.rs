use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use vpllr::baselines::{confidence_score, mahalanobis_baseline, mahalanobis_fit_with, odin_score};
use vpllr::evidence::EvidenceConfig;
use vpllr::featurestore::{
    encode_feature_set, load_feature_set, mix_feature_sets, read_gains, FeatureKind, FeatureMeta, FeatureSet,
    PromptTag,
};
use vpllr::llr::{llr_sweep, score_feature_sets, Mixture};
use vpllr::metrics::rank_eval;
use vpllr::prompts::{self, encode_prompt, gaussian_prompt, gradient_prompt, load_prompt, spectrum_profile};
use vpllr::synthetic::{generate_domain, DomainSpec, SyntheticConfig};
use vpllr::Error;

use crate::output::{emit, envelope_json, write_atomic};
use crate::scores::read_scores;
use crate::{
    ConfidenceArgs, Format, GaussianArgs, GradientArgs, KlArgs, MahalanobisArgs, MixSweepArgs, OdinArgs,
    Profile, RankArgs, ScoreArgs, SpectrumArgs, SynthArgs,
};

fn load(path: &Path) -> Result<FeatureSet> {
    Ok(load_feature_set(path)?)
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<FeatureSet>> {
    paths.iter().map(|p| load(p)).collect()
}

fn evidence_echo(cfg: &EvidenceConfig) -> Value {
    json!({
        "tol": cfg.tol,
        "max_iter": cfg.max_iter,
        "init_alpha": cfg.init_alpha,
        "init_beta": cfg.init_beta,
        "refine": cfg.refine,
    })
}

fn tag_name(tag: PromptTag) -> Value {
    serde_json::to_value(tag).unwrap_or(Value::Null)
}

fn into_lp(fs: FeatureSet, override_kind: bool, path: &Path) -> Result<FeatureSet> {
    if fs.meta().feature_kind == FeatureKind::LpPenultimate {
        return Ok(fs);
    }
    if !override_kind {
        return Err(Error::KindMismatch(format!("{} holds prompted features", path.display())).into());
    }
    let m = fs.meta();
    let meta = FeatureMeta::lp(m.dataset_name.clone(), m.model_name.clone(), m.class_count);
    Ok(fs.with_meta(meta)?)
}

fn into_vp(fs: FeatureSet, override_kind: bool, tag: PromptTag, path: &Path) -> Result<FeatureSet> {
    if fs.meta().feature_kind == FeatureKind::VpClassifier {
        return Ok(fs);
    }
    if !override_kind {
        return Err(Error::KindMismatch(format!("{} holds linear-probing features", path.display())).into());
    }
    let m = fs.meta();
    let meta = FeatureMeta::vp(m.dataset_name.clone(), m.model_name.clone(), m.class_count, tag, None);
    Ok(fs.with_meta(meta)?)
}

fn vp_sets(paths: &[PathBuf], override_kind: bool, tag: PromptTag) -> Result<Vec<FeatureSet>> {
    load_all(paths)?
        .into_iter()
        .zip(paths)
        .map(|(fs, p)| into_vp(fs, override_kind, tag, p))
        .collect()
}

pub fn score(a: ScoreArgs) -> Result<()> {
    let tag = PromptTag::from(a.tag);
    let lp = into_lp(load(&a.lp)?, a.override_kind, &a.lp)?;
    let vp = vp_sets(&a.vp, a.override_kind, tag)?;
    let cfg = EvidenceConfig::default();
    let report = score_feature_sets(&lp, &vp, &cfg)?;
    let config = json!({
        "lp": a.lp,
        "vp": a.vp,
        "k_prompts": vp.len(),
        "override_kind": a.override_kind,
        "tag": tag_name(tag),
        "evidence": evidence_echo(&cfg),
    });
    emit(a.output.as_deref(), &envelope_json("score", config, &report)?)
}

pub fn mix_sweep(a: MixSweepArgs) -> Result<()> {
    if a.vp_a.len() != a.vp_b.len() {
        bail!("{} --vp-a files but {} --vp-b files", a.vp_a.len(), a.vp_b.len());
    }
    let tag = PromptTag::from(a.tag);
    let lp_a = into_lp(load(&a.a)?, a.override_kind, &a.a)?;
    let lp_b = into_lp(load(&a.b)?, a.override_kind, &a.b)?;
    let vp_a = vp_sets(&a.vp_a, a.override_kind, tag)?;
    let vp_b = vp_sets(&a.vp_b, a.override_kind, tag)?;
    let mixtures = a
        .k
        .iter()
        .map(|&k| {
            Ok(Mixture {
                lp: mix_feature_sets(&lp_a, &lp_b, k)?,
                vp: vp_a
                    .iter()
                    .zip(&vp_b)
                    .map(|(x, y)| mix_feature_sets(x, y, k))
                    .collect::<vpllr::Result<_>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = EvidenceConfig::default();
    let reports = llr_sweep(&mixtures, &cfg)?;
    let config = json!({
        "a": a.a,
        "b": a.b,
        "vp_a": a.vp_a,
        "vp_b": a.vp_b,
        "k": a.k,
        "override_kind": a.override_kind,
        "tag": tag_name(tag),
        "evidence": evidence_echo(&cfg),
    });
    emit(a.output.as_deref(), &envelope_json("mix-sweep", config, &reports)?)
}

#[derive(Serialize)]
struct RankRow {
    dataset: String,
    score: f64,
    gain: f64,
}

pub fn rank(a: RankArgs) -> Result<()> {
    let mut scores = HashMap::new();
    for path in &a.scores {
        for (name, v) in read_scores(path)? {
            if scores.insert(name.clone(), v).is_some() {
                bail!("dataset {name:?} is scored more than once");
            }
        }
    }
    let file = File::open(&a.gains).with_context(|| format!("cannot read {}", a.gains.display()))?;
    let gains = read_gains(file).with_context(|| format!("{}", a.gains.display()))?;

    let scored: BTreeSet<&str> = scores.keys().map(String::as_str).collect();
    let gained: BTreeSet<&str> = gains.iter().map(|g| g.dataset_name.as_str()).collect();
    if scored != gained {
        let only_scores: Vec<_> = scored.difference(&gained).collect();
        let only_gains: Vec<_> = gained.difference(&scored).collect();
        bail!("dataset names differ: only in scores {only_scores:?}, only in gains {only_gains:?}");
    }

    let rows: Vec<RankRow> = gains
        .iter()
        .map(|g| RankRow {
            dataset: g.dataset_name.clone(),
            score: scores[&g.dataset_name],
            gain: g.gain,
        })
        .collect();
    let s: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let g: Vec<f64> = rows.iter().map(|r| r.gain).collect();
    let eval = rank_eval(&s, &g)?;

    let bytes = match a.format {
        Format::Json => {
            let config = json!({ "scores": a.scores, "gains": a.gains, "format": "json" });
            envelope_json("rank", config, json!({ "eval": eval, "datasets": rows }))?
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &rows {
                w.serialize(r)?;
            }
            w.into_inner()?
        }
    };
    emit(a.output.as_deref(), &bytes)
}

pub fn prompt_gaussian(a: GaussianArgs) -> Result<()> {
    let spec = prompts::PromptSpec::new(a.h, a.w, a.frame)?;
    if a.count == 0 {
        bail!("--count must be at least 1");
    }
    let mut files = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let seed = i64::try_from(i)
            .ok()
            .and_then(|i| a.seed.checked_add(i))
            .ok_or_else(|| anyhow::anyhow!("seed range overflows from {}", a.seed))?;
        let bytes = encode_prompt(&gaussian_prompt(&spec, a.gamma, seed)?)?;
        files.push((a.out_dir.join(format!("gaussian_{seed}.pst")), bytes));
    }
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    for (path, bytes) in &files {
        write_atomic(path, bytes)?;
    }
    let config = json!({
        "h": a.h, "w": a.w, "frame": a.frame, "gamma": a.gamma, "seed": a.seed, "count": a.count,
        "out_dir": a.out_dir,
    });
    let written: Vec<&PathBuf> = files.iter().map(|(p, _)| p).collect();
    emit(None, &envelope_json("prompt gaussian", config, json!({ "files": written }))?)
}

fn image_shape(d: usize, h: Option<usize>, w: Option<usize>) -> Result<(usize, usize)> {
    if !d.is_multiple_of(3) {
        bail!("gradient rows have {d} values, not a multiple of 3 channels");
    }
    let pixels = d / 3;
    let (h, w) = match (h, w) {
        (Some(h), Some(w)) => (h, w),
        (Some(h), None) if h > 0 => (h, pixels / h),
        (None, Some(w)) if w > 0 => (pixels / w, w),
        (None, None) => {
            let side = (pixels as f64).sqrt().round() as usize;
            (side, side)
        }
        _ => bail!("image sides must be positive"),
    };
    if h * w != pixels {
        bail!("gradient rows have {d} values, which is not 3x{h}x{w}");
    }
    Ok((h, w))
}

pub fn prompt_gradient(a: GradientArgs) -> Result<()> {
    let grads = load(&a.grads)?;
    let (h, w) = image_shape(grads.dim(), a.h, a.w)?;
    let spec = prompts::PromptSpec::new(h, w, a.frame)?;
    let mut mean = vec![0.0f64; grads.dim()];
    for row in grads.rows() {
        for (m, &g) in mean.iter_mut().zip(row) {
            *m += f64::from(g);
        }
    }
    let n = grads.n_samples() as f64;
    let mean: Vec<f32> = mean.into_iter().map(|m| (m / n) as f32).collect();
    let prompt = gradient_prompt(&spec, &mean)?;
    write_atomic(&a.output, &encode_prompt(&prompt)?)?;
    let ones = prompt.delta().iter().filter(|&&v| v == 1.0).count();
    let config = json!({ "grads": a.grads, "h": h, "w": w, "frame": a.frame, "output": a.output });
    let result = json!({
        "file": a.output,
        "ring_entries": spec.ring_indices().len(),
        "ones": ones,
        "rows_averaged": grads.n_samples(),
    });
    emit(None, &envelope_json("prompt gradient", config, result)?)
}

pub fn prompt_spectrum(a: SpectrumArgs) -> Result<()> {
    let profile = spectrum_profile(&load_prompt(&a.prompt)?);
    let config = json!({ "prompt": a.prompt });
    emit(a.output.as_deref(), &envelope_json("prompt spectrum", config, &profile)?)
}

pub fn prompt_kl(a: KlArgs) -> Result<()> {
    let sim = load_prompt(&a.simulated)?;
    let trained = load_prompt(&a.trained)?;
    let direction = prompts::KlDirection::from(a.direction);
    let kl = prompts::prompt_kl(&sim, &trained, direction)?;
    let config = json!({ "simulated": a.simulated, "trained": a.trained, "direction": direction });
    emit(a.output.as_deref(), &envelope_json("prompt kl", config, json!({ "kl": kl }))?)
}

pub fn baseline_confidence(a: ConfidenceArgs) -> Result<()> {
    let logits = load(&a.logits)?;
    let score = confidence_score(logits.features(), logits.dim())?;
    let config = json!({ "logits": a.logits });
    emit(a.output.as_deref(), &envelope_json("baseline confidence", config, &score)?)
}

pub fn baseline_odin(a: OdinArgs) -> Result<()> {
    let logits = load(&a.logits)?;
    let perturbed = a.perturbed.as_deref().map(load).transpose()?;
    if let Some(p) = &perturbed {
        if p.dim() != logits.dim() {
            return Err(Error::DimensionMismatch(format!("{} vs {} classes", p.dim(), logits.dim())).into());
        }
    }
    let score = odin_score(
        logits.features(),
        logits.dim(),
        a.temperature,
        perturbed.as_ref().map(FeatureSet::features),
    )?;
    let config = json!({ "logits": a.logits, "temperature": a.temperature, "perturbed": a.perturbed });
    emit(a.output.as_deref(), &envelope_json("baseline odin", config, &score)?)
}

pub fn baseline_mahalanobis(a: MahalanobisArgs) -> Result<()> {
    let train = load(&a.train)?;
    let id = load(&a.id)?;
    let ood = load(&a.ood)?;
    let fit = mahalanobis_fit_with(&train, a.ridge_scale)?;
    let score = mahalanobis_baseline(&fit, id.features(), ood.features(), train.dim())?;
    let config = json!({ "train": a.train, "id": a.id, "ood": a.ood, "ridge_scale": a.ridge_scale });
    emit(a.output.as_deref(), &envelope_json("baseline mahalanobis", config, &score)?)
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = match a.profile {
        Profile::Ood => DomainSpec::ood_like(a.classes),
        Profile::Id => DomainSpec::id_like(a.classes),
    };
    if let Some(m) = a.samples_per_class {
        spec.samples_per_class = m;
    }
    let cfg = SyntheticConfig {
        lp_dim: a.lp_dim,
        vp_dim: a.vp_dim,
        k_prompts: a.k,
        ..SyntheticConfig::default()
    };
    let domain = generate_domain(&a.name, &spec, &cfg, a.seed)?;
    let mut files = vec![(a.out_dir.join(format!("{}_lp.fst", a.name)), encode_feature_set(&domain.lp)?)];
    for (k, vp) in domain.vp.iter().enumerate() {
        files.push((a.out_dir.join(format!("{}_vp{k}.fst", a.name)), encode_feature_set(vp)?));
    }
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    for (path, bytes) in &files {
        write_atomic(path, bytes)?;
    }
    let config = json!({
        "profile": match a.profile { Profile::Ood => "ood", Profile::Id => "id" },
        "domain": spec,
        "synthetic": cfg,
        "seed": a.seed,
        "name": a.name,
        "out_dir": a.out_dir,
    });
    let written: Vec<&PathBuf> = files.iter().map(|(p, _)| p).collect();
    emit(None, &envelope_json("synth", config, json!({ "files": written }))?)
}
