// Save a model, reload it, confirm bit-identical predictions, and show
// that a single flipped bit is caught by the CRC32 trailer.
//
// `cargo run --example checkpoint_roundtrip`

use ttd::model::{Checkpoint, ModelConfig, ToxicityModel};
use ttd::rng::SeedStream;
use ttd::tokenizer::train_vocab;
use ttd::Error;

pub fn run_example() -> ttd::Result<()> {
    let vocab = train_vocab(["round trip through bytes", "checksums catch corruption"], 300)?;
    let model = ToxicityModel::initialize(ModelConfig::default(), vocab, &SeedStream::new(9))?;
    let bytes = model.to_bytes()?;
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    println!("{} bytes, {} tensors:", bytes.len(), ckpt.tensors.len());
    for (name, t) in ckpt.tensors.iter().take(4) {
        println!("  {name:<22} {:?}", t.shape());
    }
    println!("  ...");

    let reloaded = ToxicityModel::from_bytes(&bytes)?;
    let batch = model.encode_batch(&["round trip", "checksums"])?;
    let (a, b) = (model.predict_batch(&batch)?, reloaded.predict_batch(&batch)?);
    let identical = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    println!("predictions bit-identical after reload: {identical}");

    let mut corrupt = bytes.clone();
    let at = corrupt.len() / 2;
    corrupt[at] ^= 0x80;
    match ToxicityModel::from_bytes(&corrupt) {
        Err(e @ Error::Checksum { .. }) => println!("corrupted copy rejected: {e}"),
        other => panic!("corruption not detected: {other:?}"),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> ttd::Result<()> {
    run_example()
}
