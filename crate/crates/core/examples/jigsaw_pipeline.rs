// End-to-end pipeline on a Jigsaw-format CSV: load with reject accounting,
// balance, split, check contamination, train, evaluate and render report
// tables.
//
// `cargo run --release --example jigsaw_pipeline -- path/to/train.csv`
//
// Without an argument a small synthetic file in the same layout is used.

use std::io::Write;
use std::ops::ControlFlow;
use std::path::PathBuf;

use ttd::datasets::{balance, contamination_check, load_jigsaw_csv, stratified_split, toy_corpus, ContaminationConfig};
use ttd::evalbench::{emit_report_tables, evaluate, ReportBundle};
use ttd::model::{ModelConfig, ToxicityModel, DEFAULT_THRESHOLD};
use ttd::rng::SeedStream;
use ttd::tokenizer::train_vocab;
use ttd::trainer::{train_stage, TrainStageConfig};
use ttd::Error;

fn synthetic_jigsaw(dir: &std::path::Path) -> ttd::Result<PathBuf> {
    let path = dir.join("train.csv");
    let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = |line: String| writeln!(f, "{line}").map_err(|e| Error::io(&path, e));
    w("id,comment_text,toxic,severe_toxic,obscene,threat,insult,identity_hate".into())?;
    for e in toy_corpus(1200, 21)? {
        // Spread positives over different label columns.
        let col = e.id.len() % 6;
        let labels: Vec<&str> = (0..6).map(|c| if e.label == 1 && c == col { "1" } else { "0" }).collect();
        w(format!("{},\"{}\",{}", e.id, e.text.replace('"', "\"\""), labels.join(",")))?;
    }
    w("bad-row,\"unscored comment\",-1,-1,-1,-1,-1,-1".into())?;
    Ok(path)
}

pub fn run_example() -> ttd::Result<()> {
    run(None)
}

fn run(csv: Option<PathBuf>) -> ttd::Result<()> {
    let tmp = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let path = match csv {
        Some(p) => p,
        None => synthetic_jigsaw(tmp.path())?,
    };
    let ds = load_jigsaw_csv(&path)?;
    print!("{}", ds.manifest());
    print!("{}", ds.rejects_csv()?);

    let mut examples = balance(&ds.examples);
    SeedStream::new(1).shuffle(&mut examples);
    let (train, held) = stratified_split(&examples, 5);
    let report = contamination_check(&train, &held, &ContaminationConfig::default());
    println!(
        "train {} / held-out {}; contamination: {} exact, {} near",
        train.len(),
        held.len(),
        report.exact_matches.len(),
        report.near_duplicates.len()
    );

    let vocab = train_vocab(train.iter().map(|e| e.text.as_str()), 2000)?;
    let mut model = ToxicityModel::initialize(ModelConfig::default(), vocab, &SeedStream::new(2))?;
    let stage = TrainStageConfig::new("base", 6, 32, 1e-3, 3);
    train_stage(&mut model, 0, &stage, &train, |epoch, loss, _| {
        println!("epoch {} loss {loss:.4}", epoch + 1);
        ControlFlow::Continue(())
    })?;

    let eval = evaluate(&model, "jigsaw-held-out", &held, DEFAULT_THRESHOLD)?;
    let rendered = emit_report_tables(&ReportBundle {
        model_name: "ttd".into(),
        param_count: model.param_count(),
        eval: vec![eval],
        ..Default::default()
    })?;
    print!("{}", rendered.text);
    Ok(())
}

#[allow(dead_code)]
fn main() -> ttd::Result<()> {
    run(std::env::args_os().nth(1).map(PathBuf::from))
}
