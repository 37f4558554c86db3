// Compare tape gradients with fp64 central differences from the
// independent reference network.
//
// `cargo run --example gradient_check`

use ttd::model::{ModelConfig, ToxicityModel};
use ttd::rng::SeedStream;
use ttd::tokenizer::train_vocab;
use ttd::trainer::grad_check;

pub fn run_example() -> ttd::Result<()> {
    let vocab = train_vocab(["get lost, you troll", "have a wonderful day"], 300)?;
    let model = ToxicityModel::initialize(ModelConfig::default(), vocab, &SeedStream::new(1))?;
    let batch = model.encode_batch(&["get lost, you troll", "have a wonderful day"])?;
    let report = grad_check(&model, &batch, &[1.0, 0.0], 134, &mut SeedStream::new(2))?;

    println!(
        "{} samples across {} tensors, max relative error {:.2e}",
        report.samples.len(),
        report.tensors_covered,
        report.max_rel_error
    );
    let mut worst = report.samples.clone();
    worst.sort_by(|a, b| b.rel_error.total_cmp(&a.rel_error));
    for s in worst.iter().take(5) {
        println!(
            "  {:<22} [{:>5}] tape {:+.6e}  fd {:+.6e}  rel {:.1e}",
            s.tensor, s.index, s.analytic, s.numeric, s.rel_error
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> ttd::Result<()> {
    run_example()
}
