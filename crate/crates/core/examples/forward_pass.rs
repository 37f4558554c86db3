// Build the default 2.1M-parameter model, inspect its parameter budget and
// run inference, including the per-layer attention maps.
//
// `cargo run --example forward_pass`

use ttd::model::{count_params, ModelConfig, Positional, ToxicityModel, DEFAULT_THRESHOLD};
use ttd::rng::SeedStream;
use ttd::tokenizer::{train_vocab, DEFAULT_VOCAB_SIZE};

pub fn run_example() -> ttd::Result<()> {
    let default = ModelConfig::default();
    let learned = ModelConfig {
        positional: Positional::Learned,
        ..ModelConfig::default()
    };
    println!("parameters, V = {DEFAULT_VOCAB_SIZE}: sinusoidal {}, learned positions {}", count_params(&default), count_params(&learned));

    // Untrained weights over a small vocabulary; the architecture is the default one.
    let vocab = train_vocab(["you are a fool", "what a kind thing to say"], 320)?;
    let model = ToxicityModel::initialize(default, vocab, &SeedStream::new(7))?;
    println!("this model: V = {}, {} parameters", model.config.vocab_size, model.param_count());

    for text in ["you are a fool", "what a kind thing to say"] {
        let p = model.predict(text, DEFAULT_THRESHOLD)?;
        println!("{text:?} -> {} ({:.4})", p.label, p.probability);
    }

    let batch = model.encode_batch(&["you fool", "what a kind thing to say"])?;
    let maps = model.attention_maps(&batch)?;
    let t = batch.len;
    let pads = batch.mask[..t].iter().filter(|&&m| m == 0.0).count();
    let first = &maps[0].data()[..t];
    println!(
        "layer 1, head 1, query 1 over {t} keys (last {pads} are PAD): {:?}",
        first.iter().map(|w| format!("{w:.3}")).collect::<Vec<_>>()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> ttd::Result<()> {
    run_example()
}
