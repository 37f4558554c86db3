// Single-example CPU latency at fixed token lengths plus the raw weight
// footprint, rendered as report tables.
//
// `cargo run --release --example latency_bench` (pass `--full` for 100 runs).

use ttd::evalbench::{bench_latency, emit_report_tables, BenchConfig, ReportBundle};
use ttd::model::{ModelConfig, ToxicityModel};
use ttd::rng::SeedStream;
use ttd::tokenizer::train_vocab;

pub fn run_example() -> ttd::Result<()> {
    run(false)
}

fn run(full: bool) -> ttd::Result<()> {
    let vocab = train_vocab(["a small corpus is enough for timing"], 300)?;
    let model = ToxicityModel::initialize(ModelConfig::default(), vocab, &SeedStream::new(5))?;
    let config = if full {
        BenchConfig::default()
    } else {
        BenchConfig {
            lengths: vec![128, 512],
            runs: 5,
            warmup: 2,
        }
    };
    let report = bench_latency(&model, &config)?;
    let rendered = emit_report_tables(&ReportBundle {
        model_name: "ttd".into(),
        param_count: model.param_count(),
        bench: Some(report),
        ..Default::default()
    })?;
    print!("{}", rendered.text);
    Ok(())
}

#[allow(dead_code)]
fn main() -> ttd::Result<()> {
    run(std::env::args().any(|a| a == "--full"))
}
