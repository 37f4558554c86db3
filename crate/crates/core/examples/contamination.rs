// Exact and near-duplicate detection between a training set and a
// benchmark: normalized exact match plus MinHash/LSH over word 5-gram
// shingles, verified with exact Jaccard similarity.
//
// `cargo run --example contamination`

use ttd::datasets::{contamination_check, ContaminationConfig, TextRecord};

fn record(id: &str, text: &str) -> TextRecord {
    TextRecord {
        id: id.into(),
        text: text.into(),
    }
}

pub fn run_example() -> ttd::Result<()> {
    let base = "the article about the local election was rewritten three times because editors kept \
                arguing over which poll numbers to cite and whether the turnout estimate was credible";
    let train = vec![
        record("train-1", base),
        record("train-2", "please stop reverting my changes without reading the talk page first"),
        record("train-3", "thanks for uploading the photo of the bridge, it looks great"),
    ];
    let test = vec![
        // Same text after lowercasing and whitespace collapsing.
        record("test-a", "PLEASE stop reverting   my changes without reading the talk page first"),
        // One word changed.
        record("test-b", &base.replace("credible", "believable")),
        record("test-c", "an entirely different comment about football results"),
    ];
    let report = contamination_check(&train, &test, &ContaminationConfig::default());
    print!("{}", report.to_csv()?);
    println!(
        "clean: {}; {} LSH candidates verified",
        report.is_clean(),
        report.candidates_checked
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> ttd::Result<()> {
    run_example()
}
