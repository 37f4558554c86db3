use std::collections::HashMap;
use std::path::Path;

use super::{sha256_hex, source_name, Dataset, DatasetFormat, LabeledExample, LoadOptions, Reject, TextRecord};
use crate::error::{Error, Result};

pub const JIGSAW_LABEL_COLUMNS: [&str; 6] = ["toxic", "severe_toxic", "obscene", "threat", "insult", "identity_hate"];

struct Table {
    headers: HashMap<String, usize>,
    width: usize,
    rows: Vec<std::result::Result<csv::StringRecord, String>>,
}

fn read_table(path: &Path, bytes: &[u8]) -> Result<Table> {
    let tab = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("tsv"));
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(if tab { b'\t' } else { b',' })
        .flexible(true)
        .from_reader(bytes);
    let header = reader.headers()?.clone();
    let headers = header
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().trim_start_matches('\u{feff}').to_string(), i))
        .collect();
    let rows = reader.records().map(|r| r.map_err(|e| e.to_string())).collect();
    Ok(Table {
        headers,
        width: header.len(),
        rows,
    })
}

impl Table {
    fn column(&self, path: &Path, name: &str) -> Result<usize> {
        self.headers.get(name).copied().ok_or_else(|| Error::Schema {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
    }
}

fn parse_binary(field: &str, column: &str) -> std::result::Result<u8, String> {
    match field.trim() {
        "0" | "0.0" => Ok(0),
        "1" | "1.0" => Ok(1),
        "-1" => Err(format!("`{column}` is -1 (unscored)")),
        other => Err(format!("`{column}` has non-binary value `{other}`")),
    }
}

/// Shared row loop: `extract` maps a record to `(text, label)`.
fn load_with<F>(path: &Path, required: &[&str], mut extract: F) -> Result<Dataset>
where
    F: FnMut(&csv::StringRecord, &HashMap<&str, usize>) -> std::result::Result<(String, u8), String>,
{
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let table = read_table(path, &bytes)?;
    let mut cols = HashMap::new();
    for &name in required {
        cols.insert(name, table.column(path, name)?);
    }
    let id_col = table.headers.get("id").copied();
    let source = source_name(path);
    let mut examples = Vec::new();
    let mut rejects = Vec::new();
    for (i, row) in table.rows.iter().enumerate() {
        let row_no = i + 1;
        let record = match row {
            Ok(r) => r,
            Err(e) => {
                rejects.push(Reject {
                    row: row_no,
                    id: None,
                    reason: format!("unparseable row: {e}"),
                });
                continue;
            }
        };
        let id = id_col
            .and_then(|c| record.get(c))
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .unwrap_or_else(|| format!("{source}:{row_no}"));
        let outcome = if record.len() != table.width {
            Err(format!("expected {} fields, found {}", table.width, record.len()))
        } else {
            extract(record, &cols).and_then(|(text, label)| {
                LabeledExample::new(id.clone(), text, label, source.clone()).map_err(|e| e.to_string())
            })
        };
        match outcome {
            Ok(ex) => examples.push(ex),
            Err(reason) => rejects.push(Reject {
                row: row_no,
                id: Some(id),
                reason,
            }),
        }
    }
    Ok(Dataset {
        source,
        total_rows: table.rows.len(),
        examples,
        rejects,
        sha256: sha256_hex(&bytes),
    })
}

/// Jigsaw train/test CSV. Toxic iff any of the six label columns is 1.
pub fn load_jigsaw_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut required = vec!["comment_text"];
    required.extend(JIGSAW_LABEL_COLUMNS);
    load_with(path.as_ref(), &required, |rec, cols| {
        let mut label = 0;
        for name in JIGSAW_LABEL_COLUMNS {
            label |= parse_binary(&rec[cols[name]], name)?;
        }
        Ok((rec[cols["comment_text"]].to_string(), label))
    })
}

/// ToxiGen, either the human-annotated table (`raw = false`) or raw
/// generations with their prompt label (`raw = true`).
pub fn load_toxigen(path: impl AsRef<Path>, raw: bool, options: &LoadOptions) -> Result<Dataset> {
    let threshold = options.toxigen_threshold;
    if raw {
        load_with(path.as_ref(), &["generation", "prompt_label"], |rec, cols| {
            let label = parse_binary(&rec[cols["prompt_label"]], "prompt_label")?;
            Ok((rec[cols["generation"]].to_string(), label))
        })
    } else {
        load_with(path.as_ref(), &["text", "toxicity_human"], move |rec, cols| {
            let field = rec[cols["toxicity_human"]].trim();
            let score: f64 = field
                .parse()
                .ok()
                .filter(|s: &f64| s.is_finite())
                .ok_or_else(|| format!("`toxicity_human` is not a number: `{field}`"))?;
            Ok((rec[cols["text"]].to_string(), u8::from(score >= threshold)))
        })
    }
}

/// `text,label` CSV (label 0/1), optional `id`.
pub fn load_labeled_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    load_with(path.as_ref(), &["text", "label"], |rec, cols| {
        let label = parse_binary(&rec[cols["label"]], "label")?;
        Ok((rec[cols["text"]].to_string(), label))
    })
}

pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat, options: &LoadOptions) -> Result<Dataset> {
    match format {
        DatasetFormat::Jigsaw => load_jigsaw_csv(path),
        DatasetFormat::Toxigen => load_toxigen(path, false, options),
        DatasetFormat::ToxigenRaw => load_toxigen(path, true, options),
        DatasetFormat::Labeled => load_labeled_csv(path),
    }
}

/// Text columns tried in order by [`load_texts`].
const TEXT_COLUMNS: [&str; 3] = ["comment_text", "text", "generation"];

/// Infers the layout from the header row.
pub fn detect_format(path: impl AsRef<Path>) -> Result<DatasetFormat> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let table = read_table(path, &bytes)?;
    let has = |c: &str| table.headers.contains_key(c);
    if has("comment_text") && JIGSAW_LABEL_COLUMNS.iter().all(|c| has(c)) {
        Ok(DatasetFormat::Jigsaw)
    } else if has("text") && has("toxicity_human") {
        Ok(DatasetFormat::Toxigen)
    } else if has("generation") && has("prompt_label") {
        Ok(DatasetFormat::ToxigenRaw)
    } else if has("text") && has("label") {
        Ok(DatasetFormat::Labeled)
    } else {
        Err(Error::Format {
            what: "dataset header",
            reason: format!("{}: no known column layout", path.display()),
        })
    }
}

/// Every non-empty text from the first of `comment_text`, `text` or
/// `generation`, labels ignored.
pub fn load_texts(path: impl AsRef<Path>) -> Result<Vec<TextRecord>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let table = read_table(path, &bytes)?;
    let col = TEXT_COLUMNS
        .iter()
        .find_map(|c| table.headers.get(*c).copied())
        .ok_or_else(|| Error::Schema {
            path: path.to_path_buf(),
            column: TEXT_COLUMNS.join("|"),
        })?;
    let id_col = table.headers.get("id").copied();
    let source = source_name(path);
    Ok(table
        .rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| {
            let r = r.as_ref().ok()?;
            let text = r.get(col)?.trim();
            if text.is_empty() {
                return None;
            }
            let id = id_col
                .and_then(|c| r.get(c))
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .unwrap_or_else(|| format!("{source}:{}", i + 1));
            Some(TextRecord {
                id,
                text: text.to_string(),
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(name: &str, contents: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        std::fs::File::create(&path).unwrap().write_all(contents.as_bytes()).unwrap();
        (dir, path)
    }

    const HEADER: &str = "id,comment_text,toxic,severe_toxic,obscene,threat,insult,identity_hate\n";

    #[test]
    fn jigsaw_any_of_six() {
        let csv = format!("{HEADER}a,hello there,0,0,0,0,0,0\nb,you idiot,0,0,0,0,1,0\n");
        let (_d, p) = write("train.csv", &csv);
        let ds = load_jigsaw_csv(&p).unwrap();
        assert_eq!(ds.examples.len(), 2);
        assert_eq!(ds.examples[0].label, 0);
        assert_eq!(ds.examples[1].label, 1);
        assert_eq!(ds.examples[1].id, "b");
        assert_eq!(ds.examples[1].source, "train");
    }

    #[test]
    fn jigsaw_quoted_multiline_comment() {
        let csv = format!("{HEADER}q,\"first line, with comma\nsecond \"\"quoted\"\" line\",1,0,0,0,0,0\n");
        let (_d, p) = write("train.csv", &csv);
        let ds = load_jigsaw_csv(&p).unwrap();
        assert_eq!(ds.total_rows, 1);
        assert_eq!(ds.examples.len(), 1);
        assert_eq!(ds.examples[0].text, "first line, with comma\nsecond \"quoted\" line");
        assert_eq!(ds.examples[0].label, 1);
    }

    #[test]
    fn missing_column_names_it() {
        let (_d, p) = write("bad.csv", "id,comment_text,toxic\n1,x,0\n");
        match load_jigsaw_csv(&p) {
            Err(Error::Schema { column, .. }) => assert_eq!(column, "severe_toxic"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn bad_rows_are_reported_not_dropped() {
        let csv = format!(
            "{HEADER}a,fine,0,0,0,0,0,0\nb,unscored,-1,-1,-1,-1,-1,-1\nc,short,0\nd,   ,0,0,0,0,0,0\ne,odd,2,0,0,0,0,0\n"
        );
        let (_d, p) = write("t.csv", &csv);
        let ds = load_jigsaw_csv(&p).unwrap();
        assert_eq!(ds.total_rows, 5);
        assert_eq!(ds.examples.len(), 1);
        assert_eq!(ds.rejects.len(), 4);
        assert_eq!(ds.rejects.iter().map(|r| r.row).collect::<Vec<_>>(), vec![2, 3, 4, 5]);
        assert!(ds.rejects_csv().unwrap().starts_with("row,id,reason\n"));
    }

    #[test]
    fn toxigen_midpoint_rule() {
        let (_d, p) = write(
            "toxigen.csv",
            "text,target_group,toxicity_human\nbenign,asian,1.0\nborderline,women,3.0\nmean,lgbtq,4.6666\njunk,x,n/a\n",
        );
        let ds = load_toxigen(&p, false, &LoadOptions::default()).unwrap();
        let labels: Vec<u8> = ds.examples.iter().map(|e| e.label).collect();
        assert_eq!(labels, vec![0, 1, 1]);
        assert_eq!(ds.rejects.len(), 1);
        assert_eq!(ds.examples[0].id, "toxigen:1");

        let strict = LoadOptions { toxigen_threshold: 3.5 };
        let ds = load_toxigen(&p, false, &strict).unwrap();
        assert_eq!(ds.examples[1].label, 0);
    }

    #[test]
    fn toxigen_raw_and_tsv() {
        let (_d, p) = write("raw.tsv", "prompt\tgeneration\tprompt_label\np\tsome text\t1\np\tother text\t0\n");
        let ds = load_toxigen(&p, true, &LoadOptions::default()).unwrap();
        assert_eq!(ds.examples.iter().map(|e| e.label).collect::<Vec<_>>(), vec![1, 0]);
    }

    #[test]
    fn loaders_are_deterministic() {
        let csv = format!("{HEADER}a,one,0,0,0,0,0,0\nb,two,1,0,0,0,0,0\n");
        let (_d, p) = write("x.csv", &csv);
        let a = load_jigsaw_csv(&p).unwrap();
        let b = load_jigsaw_csv(&p).unwrap();
        assert_eq!(a.examples, b.examples);
        assert_eq!(a.sha256, b.sha256);
        assert!(a.manifest().contains("positives: 1"));
    }

    #[test]
    fn header_sniffing() {
        let (_d, p) = write("j.csv", &format!("{HEADER}a,hi,0,0,0,0,0,0\n"));
        assert_eq!(detect_format(&p).unwrap(), DatasetFormat::Jigsaw);
        let (_d2, p2) = write("t.csv", "text,toxicity_human\nhello,1.0\n");
        assert_eq!(detect_format(&p2).unwrap(), DatasetFormat::Toxigen);
        let (_d3, p3) = write("l.tsv", "label\ttext\n1\thi\n");
        assert_eq!(detect_format(&p3).unwrap(), DatasetFormat::Labeled);
        let (_d4, p4) = write("x.csv", "foo,bar\n1,2\n");
        assert!(detect_format(&p4).is_err());
    }

    #[test]
    fn unlabeled_texts() {
        let (_d, p) = write("test.csv", "id,comment_text\nx,first\ny,\nz,third\n");
        let texts = load_texts(&p).unwrap();
        assert_eq!(texts.len(), 2);
        assert_eq!(texts[1].id, "z");
    }
}
