mod common;

use proptest::prelude::*;
use ttd::datasets::toy_corpus;
use ttd::model::reference::ReferenceModel;
use ttd::model::ToxicityModel;
use ttd::tokenizer::PaddedBatch;

fn model() -> ToxicityModel {
    common::small_model(&toy_corpus(40, 1).unwrap(), 400, 3)
}

fn batch_of(rows: &[Vec<u32>]) -> PaddedBatch {
    let t = rows.iter().map(Vec::len).max().unwrap();
    let mut ids = Vec::new();
    let mut mask = Vec::new();
    for r in rows {
        ids.extend(r.iter().copied().chain(std::iter::repeat_n(0, t - r.len())));
        mask.extend((0..t).map(|i| if i < r.len() { 1.0 } else { 0.0 }));
    }
    PaddedBatch {
        ids,
        mask,
        batch: rows.len(),
        len: t,
    }
}

#[test]
fn first_layer_attention_matches_reference() {
    let m = model();
    let batch = batch_of(&[vec![5, 80, 131, 7, 300], vec![42, 9, 260]]);
    assert_eq!((batch.batch, batch.len), (2, 5));
    let reference = ReferenceModel::from_model(&m);
    let x = reference.embed(&batch);
    let (_, want) = reference.self_attention(0, &x, &batch.mask, 2, 5);
    let got = m.attention_maps(&batch).unwrap();
    assert_eq!(got[0].shape(), &[2 * m.config.n_heads, 5, 5]);
    for (g, w) in got[0].data().iter().zip(&want) {
        assert!((f64::from(*g) - w).abs() < 1e-5, "{g} vs {w}");
    }
}

#[test]
fn probabilities_match_reference_forward() {
    let m = model();
    let batch = m.encode_batch(&["you are a fool", "thanks, that is a lovely photo of the lake"]).unwrap();
    let got = m.predict_batch(&batch).unwrap();
    let want = ReferenceModel::from_model(&m).forward(&batch).unwrap();
    for (g, w) in got.iter().zip(&want) {
        assert!((f64::from(*g) - w).abs() < 1e-5, "{g} vs {w}");
    }
}

#[test]
fn prediction_is_deterministic() {
    let m = model();
    let a = m.predict_proba("same input twice").unwrap();
    let b = m.predict_proba("same input twice").unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn empty_text_is_rejected() {
    assert!(model().predict("", 0.5).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trailing_pad_does_not_change_probability(
        ids in proptest::collection::vec(2u32..400, 1..40),
        pads in 1usize..24,
    ) {
        let m = model();
        let plain = m.predict_batch(&batch_of(std::slice::from_ref(&ids))).unwrap()[0];
        let mut padded = batch_of(std::slice::from_ref(&ids));
        padded.ids.extend(std::iter::repeat_n(0, pads));
        padded.mask.extend(std::iter::repeat_n(0.0, pads));
        padded.len += pads;
        let p = m.predict_batch(&padded).unwrap()[0];
        prop_assert!((plain - p).abs() < 1e-6);
        prop_assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn batching_matches_single_rows(a in proptest::collection::vec(2u32..400, 1..30), b in proptest::collection::vec(2u32..400, 1..30)) {
        let m = model();
        let joint = m.predict_batch(&batch_of(&[a.clone(), b.clone()])).unwrap();
        let pa = m.predict_batch(&batch_of(&[a])).unwrap()[0];
        let pb = m.predict_batch(&batch_of(&[b])).unwrap()[0];
        prop_assert!((joint[0] - pa).abs() < 1e-6 && (joint[1] - pb).abs() < 1e-6);
    }
}
