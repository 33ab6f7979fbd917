use proptest::prelude::*;
use vpllr::featurestore::{
    decode_feature_set, encode_feature_set, load_feature_set, mix_feature_sets, subsample, write_feature_set,
    FeatureMeta, FeatureSet, PromptTag,
};
use vpllr::prompts::{decode_prompt, encode_prompt, load_prompt, write_prompt, PromptSample, PromptSpec, Provenance};

fn feature_set() -> impl Strategy<Value = FeatureSet> {
    (1usize..16, 1usize..10, 2u32..6)
        .prop_flat_map(|(n, d, c)| {
            (
                prop::collection::vec(prop::num::f32::NORMAL | prop::num::f32::ZERO | prop::num::f32::SUBNORMAL, n * d),
                prop::collection::vec(0..c, n),
                Just(d),
                Just(c),
                any::<Option<i64>>(),
                1u8..=5,
                any::<bool>(),
                ".{0,12}",
                ".{0,12}",
            )
        })
        .prop_map(|(f, labels, d, c, seed, tag, lp, dataset, model)| {
            let meta = if lp {
                FeatureMeta::lp(dataset, model, c)
            } else {
                FeatureMeta::vp(dataset, model, c, PromptTag::from_code(tag).unwrap(), seed)
            };
            FeatureSet::new(f, d, labels, meta).unwrap()
        })
}

fn prompt() -> impl Strategy<Value = PromptSample> {
    (3usize..20, 3usize..20)
        .prop_flat_map(|(h, w)| (Just(h), Just(w), 1..=(h.min(w) - 1) / 2))
        .prop_flat_map(|(h, w, p)| {
            let spec = PromptSpec::new(h, w, p).unwrap();
            (
                Just(spec),
                prop::collection::vec(0.0f32..=1.0, spec.ring_indices().len()),
                1u8..=5,
                prop::option::of(1e-9f64..1e3),
                prop::option::of(i64::MIN + 1..=i64::MAX),
            )
        })
        .prop_map(|(spec, ring, code, gamma, seed)| {
            let mut delta = vec![0.0f32; spec.len()];
            for (i, v) in spec.ring_indices().into_iter().zip(ring) {
                delta[i] = v;
            }
            PromptSample::new(spec, delta, Provenance::from_code(code).unwrap(), gamma, seed).unwrap()
        })
}

proptest! {
    #[test]
    fn fst_round_trip(fs in feature_set()) {
        let bytes = encode_feature_set(&fs).unwrap();
        let back = decode_feature_set(&bytes).unwrap();
        prop_assert_eq!(encode_feature_set(&back).unwrap(), bytes);
        prop_assert_eq!(back.meta(), fs.meta());
        prop_assert_eq!(back.labels(), fs.labels());
    }

    #[test]
    fn pst_round_trip(p in prompt()) {
        let bytes = encode_prompt(&p).unwrap();
        let back = decode_prompt(&bytes).unwrap();
        prop_assert_eq!(encode_prompt(&back).unwrap(), bytes);
        prop_assert_eq!(back, p);
    }

    #[test]
    fn fst_truncation_never_loads(fs in feature_set(), cut in 1usize..64) {
        let bytes = encode_feature_set(&fs).unwrap();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(decode_feature_set(&bytes[..keep]).is_err());
    }

    #[test]
    fn subsample_is_stratified(fs in feature_set(), seed in any::<u64>(), frac in 0.0f64..=1.0) {
        let n = fs.n_samples();
        let m = ((n as f64 * frac).round() as usize).max(1);
        let sub = subsample(&fs, m, seed).unwrap();
        prop_assert_eq!(sub.n_samples(), m);
        prop_assert_eq!(subsample(&fs, m, seed).unwrap(), sub.clone());
        for (have, total) in sub.class_counts().iter().zip(fs.class_counts()) {
            prop_assert!(*have <= total);
        }
    }
}

#[test]
fn mix_offsets_second_domain_labels() {
    let a = FeatureSet::new(vec![1.0, 2.0, 3.0, 4.0], 2, vec![0, 1], FeatureMeta::lp("a", "m", 2)).unwrap();
    let b = FeatureSet::new(vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0], 2, vec![0, 2, 1], FeatureMeta::lp("b", "m", 3)).unwrap();
    let mixed = mix_feature_sets(&a, &b, 2).unwrap();
    assert_eq!(mixed.class_count(), 4);
    assert_eq!(mixed.labels(), &[0, 1, 2, 3]);
    assert_eq!(mixed.features(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 9.0, 10.0]);
    assert_eq!(mixed.meta().dataset_name, "a+b[2]");
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let fs = FeatureSet::new(
        vec![0.5; 6],
        3,
        vec![1, 0],
        FeatureMeta::vp("SVHN", "ViT-B-16", 2, PromptTag::Gaussian, Some(4)),
    )
    .unwrap();
    write_feature_set(&fs, dir.path().join("f.fst")).unwrap();
    assert_eq!(load_feature_set(dir.path().join("f.fst")).unwrap(), fs);

    let p = vpllr::prompts::gaussian_prompt(&PromptSpec::new(16, 16, 2).unwrap(), 1.0, 3).unwrap();
    write_prompt(&p, dir.path().join("p.pst")).unwrap();
    assert_eq!(load_prompt(dir.path().join("p.pst")).unwrap(), p);
}
