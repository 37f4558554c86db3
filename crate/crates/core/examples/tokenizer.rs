// Train a byte-level BPE vocabulary, encode and decode, and save it in the
// text vocabulary format.
//
// `cargo run --example tokenizer`

use ttd::tokenizer::{pad_batch, train_vocab, Vocabulary};

pub fn run_example() -> ttd::Result<()> {
    let corpus = [
        "You are an idiot.",
        "You are a lovely person.",
        "Thanks for the edit, friend!",
        "Nobody asked you, idiot.",
    ];
    let vocab = train_vocab(corpus, 300)?;
    println!("vocabulary: {} tokens, {} merges", vocab.len(), vocab.merges().len());

    let seq = vocab.encode("YOU are an IDIOT", 512)?;
    let pieces: Vec<String> = seq.ids.iter().map(|&id| vocab.decode(&[id])).collect();
    println!("ids {:?}", seq.ids);
    println!("pieces {pieces:?}");
    println!("decoded {:?}", vocab.decode(&seq.ids));

    let short = vocab.encode("thanks", 512)?;
    let batch = pad_batch(&[seq, short])?;
    println!("padded batch {}x{}, second row {:?}", batch.batch, batch.len, batch.row_ids(1));

    let text = vocab.to_text();
    let reloaded = Vocabulary::from_text(&text)?;
    assert_eq!(reloaded.to_text(), text);
    println!("vocab file: {} lines, header {:?}", text.lines().count(), text.lines().next());
    Ok(())
}

#[allow(dead_code)]
fn main() -> ttd::Result<()> {
    run_example()
}
