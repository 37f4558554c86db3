use std::path::Path;

use super::{BenchReport, EmissionsEstimate, EvalReport, MemoryReport};
use crate::error::{Error, Result};

/// Published CPU reference point, seconds at (128, 512) tokens on an i5-8400.
/// Recorded for comparison only; never asserted.
pub const REFERENCE_LATENCY: [(usize, f64); 2] = [(128, 0.0038), (512, 0.0072)];

#[derive(Clone, Debug, Default)]
pub struct ReportBundle {
    pub model_name: String,
    pub param_count: usize,
    pub eval: Vec<EvalReport>,
    pub bench: Option<BenchReport>,
    pub memory: Option<MemoryReport>,
    pub emissions: Option<EmissionsEstimate>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderedReport {
    pub text: String,
    /// `(file name, contents)` pairs.
    pub csv: Vec<(String, String)>,
}

impl RenderedReport {
    pub fn write_csv_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in &self.csv {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn table(title: &str, headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = format!("{title}\n");
    out += &line(headers.to_vec());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out += &format!("|-{}-|\n", rule.join("-|-"));
    for row in rows {
        out += &line(row.iter().map(String::as_str).collect());
    }
    out
}

fn csv_body(headers: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(headers)?;
    for row in rows {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn millions(params: usize) -> String {
    format!("{:.2}M", params as f64 / 1e6)
}

fn megabytes(bytes: u64) -> String {
    format!("{:.2}MB", bytes as f64 / 1e6)
}

/// Text tables (memory, latency, accuracy, emissions) plus their CSV
/// counterparts and the score-versus-size scatter data.
pub fn emit_report_tables(bundle: &ReportBundle) -> Result<RenderedReport> {
    if bundle.eval.is_empty() && bundle.bench.is_none() && bundle.memory.is_none() && bundle.emissions.is_none() {
        return Err(Error::Validation("no reports to render".into()));
    }
    let mut out = RenderedReport::default();
    let name = bundle.model_name.as_str();
    let params = millions(bundle.param_count);

    if bundle.memory.is_some() || bundle.bench.is_some() {
        let (rss, weights) = match (&bundle.memory, &bundle.bench) {
            (Some(m), _) => (Some(m.rss_delta), m.weight_bytes),
            (None, Some(b)) => (b.rss_delta_bytes, b.weight_bytes as u64),
            (None, None) => unreachable!(),
        };
        let row = vec![
            name.to_string(),
            params.clone(),
            rss.map(megabytes).unwrap_or_else(|| "n/a".into()),
            megabytes(weights),
        ];
        let headers = ["Model", "Parameters", "RAM (RSS delta)", "fp32 weights"];
        out.text += &table("Memory required to load the model", &headers, std::slice::from_ref(&row));
        out.text += "\n";
        let raw = vec![
            name.to_string(),
            bundle.param_count.to_string(),
            rss.map(|r| r.to_string()).unwrap_or_default(),
            weights.to_string(),
        ];
        out.csv.push((
            "memory.csv".into(),
            csv_body(&["model", "parameters", "rss_delta_bytes", "weight_bytes"], &[raw])?,
        ));
    }

    if let Some(bench) = &bundle.bench {
        let rows: Vec<Vec<String>> = bench
            .latency
            .iter()
            .map(|s| {
                vec![
                    s.tokens.to_string(),
                    format!("{:.4}s", s.mean_s),
                    format!("{:.4}s", s.median_s),
                    format!("{:.4}s", s.p95_s),
                    s.runs.to_string(),
                    s.warmup.to_string(),
                ]
            })
            .collect();
        out.text += &table(
            &format!("CPU inference latency, batch 1 ({name}, {params})"),
            &["Tokens", "Mean", "Median", "p95", "Runs", "Warmup"],
            &rows,
        );
        out.text += &format!("hardware: {}\n", bench.hardware);
        let reference: Vec<String> = REFERENCE_LATENCY.iter().map(|(t, s)| format!("{s}s @{t} tokens")).collect();
        out.text += &format!(
            "reference (original release, i5-8400 CPU): {}; hardware-dependent, not asserted\n\n",
            reference.join(", ")
        );
        let raw: Vec<Vec<String>> = bench
            .latency
            .iter()
            .map(|s| {
                vec![
                    s.tokens.to_string(),
                    s.mean_s.to_string(),
                    s.median_s.to_string(),
                    s.p95_s.to_string(),
                    s.runs.to_string(),
                    s.warmup.to_string(),
                    bench.hardware.clone(),
                ]
            })
            .collect();
        out.csv.push((
            "latency.csv".into(),
            csv_body(&["tokens", "mean_s", "median_s", "p95_s", "runs", "warmup", "hardware"], &raw)?,
        ));
    }

    if !bundle.eval.is_empty() {
        let mut headers = vec!["Model".to_string(), "Parameters".to_string()];
        headers.extend(bundle.eval.iter().map(|r| format!("{} (%)", r.dataset)));
        let header_refs: Vec<&str> = headers.iter().map(String::as_str).collect();
        let mut acc = vec![name.to_string(), params.clone()];
        acc.extend(bundle.eval.iter().map(|r| format!("{:.2}", r.accuracy * 100.0)));
        let mut bal = vec![format!("{name} (balanced)"), params.clone()];
        bal.extend(bundle.eval.iter().map(|r| format!("{:.2}", r.balanced_accuracy * 100.0)));
        out.text += &table("Accuracy", &header_refs, &[acc, bal]);
        out.text += "\n";

        let raw: Vec<Vec<String>> = bundle
            .eval
            .iter()
            .map(|r| {
                vec![
                    r.dataset.clone(),
                    r.n_examples.to_string(),
                    r.accuracy.to_string(),
                    r.balanced_accuracy.to_string(),
                    r.tp.to_string(),
                    r.fp.to_string(),
                    r.tn.to_string(),
                    r.fn_.to_string(),
                    r.threshold.to_string(),
                ]
            })
            .collect();
        out.csv.push((
            "accuracy.csv".into(),
            csv_body(
                &["dataset", "n_examples", "accuracy", "balanced_accuracy", "tp", "fp", "tn", "fn", "threshold"],
                &raw,
            )?,
        ));
        let avg = bundle.eval.iter().map(|r| r.accuracy * 100.0).sum::<f64>() / bundle.eval.len() as f64;
        out.csv.push((
            "score_vs_size.csv".into(),
            csv_body(
                &["model", "parameters", "avg_benchmark_score"],
                &[vec![name.to_string(), bundle.param_count.to_string(), format!("{avg:.2}")]],
            )?,
        ));
    }

    if let Some(e) = &bundle.emissions {
        let row = vec![
            format!("{:.4}", e.power_kw),
            format!("{:.4}", e.hours),
            format!("{:.4}", e.intensity_kgco2_per_kwh),
            format!("{:.4}", e.gross_kg),
            format!("{:.4}", e.offset_fraction),
            format!("{:.4}", e.net_kg),
        ];
        let headers = ["power_kw", "hours", "intensity_kgco2_per_kwh", "gross_kg", "offset_fraction", "net_kg"];
        out.text += &table("Training emissions (kgCO2eq)", &headers, std::slice::from_ref(&row));
        out.csv.push(("emissions.csv".into(), csv_body(&headers, &[row])?));
    }
    Ok(out)
}
