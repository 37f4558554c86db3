// Two training stages: a base pass over a balanced toy corpus, then a
// targeted-overfit pass on hard cases (self-directed criticism versus the
// same words aimed at someone else). Each stage is followed by a benchmark
// evaluation and a checkpoint.
//
// `cargo run --example staged_training`

use ttd::datasets::{hard_cases, stratified_split, toy_corpus};
use ttd::model::{ModelConfig, ToxicityModel, DEFAULT_THRESHOLD};
use ttd::rng::SeedStream;
use ttd::tokenizer::train_vocab;
use ttd::trainer::{run_stages, BenchmarkInput, MetricRow, Purpose, RunOptions, StageInput, TrainStageConfig};

pub fn run_example() -> ttd::Result<()> {
    let corpus = toy_corpus(1200, 3)?;
    let (train, held) = stratified_split(&corpus, 4);
    let hard = hard_cases();

    let texts = train.iter().chain(&hard).map(|e| e.text.as_str());
    let vocab = train_vocab(texts, 600)?;
    let mut model = ToxicityModel::initialize(ModelConfig::default(), vocab, &SeedStream::new(11))?;

    let stages = [
        StageInput {
            config: TrainStageConfig::new("base", 9, 32, 1e-3, 1),
            examples: train.clone(),
        },
        StageInput {
            config: TrainStageConfig {
                purpose: Purpose::TargetedOverfit,
                ..TrainStageConfig::new("hard-cases", 20, 4, 2e-4, 2)
            },
            // A slice of the base data rides along to limit forgetting.
            examples: hard.iter().chain(&train[..36]).cloned().collect(),
        },
    ];
    let benchmarks = [BenchmarkInput {
        name: "toy-held-out".into(),
        examples: held,
    }];
    let dir = tempfile::tempdir().map_err(|e| ttd::Error::io(std::env::temp_dir(), e))?;
    let options = RunOptions {
        checkpoint_prefix: Some(dir.path().join("toy.ttd")),
        ..Default::default()
    };

    println!("{}", MetricRow::CSV_HEADER);
    let summary = run_stages(&mut model, &stages, &benchmarks, &options, |row| {
        println!("{}", row.to_csv_line())
    })?;
    for stage in &summary.stages {
        let path = stage.checkpoint.as_ref().expect("checkpoint prefix set");
        println!(
            "stage {:<10} held-out accuracy {:.3}, checkpoint {}",
            stage.name,
            stage.eval[0].accuracy,
            path.file_name().unwrap().to_string_lossy()
        );
    }
    for e in &hard {
        let p = model.predict(&e.text, DEFAULT_THRESHOLD)?;
        println!("{:<40} label {} -> {} ({:.3})", e.text, e.label, p.label, p.probability);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> ttd::Result<()> {
    run_example()
}
