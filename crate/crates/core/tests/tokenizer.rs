use std::sync::OnceLock;

use proptest::prelude::*;
use ttd::tokenizer::{normalize, pad_batch, train_vocab, Vocabulary};

fn vocab() -> &'static Vocabulary {
    static V: OnceLock<Vocabulary> = OnceLock::new();
    V.get_or_init(|| {
        let corpus = [
            "you are an idiot and everyone knows it",
            "thank you for the thoughtful edit",
            "Ünïcödé text, café and naïve résumé",
            "    indentation\tand\ttabs\n\nnewlines",
        ];
        train_vocab(corpus.iter().cycle().take(40), 420).unwrap()
    })
}

proptest! {
    #[test]
    fn normalize_is_idempotent(s in "\\PC{0,80}") {
        let once = normalize(&s);
        prop_assert_eq!(normalize(&once), once);
    }

    #[test]
    fn decode_inverts_encode_up_to_normalization(s in "\\PC{0,80}") {
        let v = vocab();
        prop_assert_eq!(v.decode(&v.encode_all(&s)), normalize(&s));
    }

    #[test]
    fn encoding_is_canonical(s in "\\PC{0,80}") {
        let v = vocab();
        let ids = v.encode_all(&s);
        prop_assert_eq!(v.encode_all(&v.decode(&ids)), ids);
    }

    #[test]
    fn truncation_keeps_prefix(s in "[a-z ]{0,200}", max_len in 1usize..64) {
        let v = vocab();
        let full = v.encode_all(&s);
        let seq = v.encode(&s, max_len).unwrap();
        prop_assert_eq!(seq.original_length, full.len());
        prop_assert_eq!(&seq.ids[..], &full[..full.len().min(max_len)]);
        prop_assert!(seq.attention_mask.iter().all(|&m| m == 1));
    }

    #[test]
    fn padded_batch_mask_marks_content(texts in proptest::collection::vec("[a-z]{1,12}( [a-z]{1,12}){0,6}", 1..6)) {
        let v = vocab();
        let seqs: Vec<_> = texts.iter().map(|t| v.encode(t, 512).unwrap()).collect();
        let batch = pad_batch(&seqs).unwrap();
        for (b, seq) in seqs.iter().enumerate() {
            let row = &batch.mask[b * batch.len..(b + 1) * batch.len];
            prop_assert_eq!(row.iter().filter(|&&m| m == 1.0).count(), seq.len());
            prop_assert_eq!(&batch.row_ids(b)[..seq.len()], &seq.ids[..]);
            prop_assert!(batch.row_ids(b)[seq.len()..].iter().all(|&id| id == 0));
        }
    }
}

#[test]
fn vocabulary_text_round_trip_preserves_encoding() {
    let v = vocab();
    let back = Vocabulary::from_text(&v.to_text()).unwrap();
    assert_eq!(back.to_text(), v.to_text());
    let s = "You are an IDIOT, café!";
    assert_eq!(back.encode_all(s), v.encode_all(s));
}

#[test]
fn specials_and_bytes_are_fixed() {
    let v = vocab();
    // Training stops early once no pair repeats.
    assert!(v.len() <= 420);
    assert_eq!(v.merges().len(), v.len() - 258);
    assert_eq!(v.decode(&[0, 1]), "");
    assert_eq!(v.decode(&[u32::from(b'a') + 2]), "a");
}
