use std::path::Path;
use std::process::Command;

use crate::error::{Error, Result};
use crate::model::ToxicityModel;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryReport {
    pub rss_before: u64,
    pub rss_after: u64,
    pub rss_delta: u64,
    pub param_count: usize,
    /// Raw fp32 weight bytes, `param_count × 4`.
    pub weight_bytes: u64,
}

impl MemoryReport {
    pub fn to_tsv(&self) -> String {
        format!(
            "rss_before\t{}\nrss_after\t{}\nrss_delta\t{}\nparam_count\t{}\nweight_bytes\t{}\n",
            self.rss_before, self.rss_after, self.rss_delta, self.param_count, self.weight_bytes
        )
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let field = |key: &str| -> Result<u64> {
            text.lines()
                .filter_map(|l| l.split_once('\t'))
                .find(|(k, _)| *k == key)
                .and_then(|(_, v)| v.trim().parse().ok())
                .ok_or_else(|| Error::Format {
                    what: "memory probe output",
                    reason: format!("missing `{key}`"),
                })
        };
        Ok(Self {
            rss_before: field("rss_before")?,
            rss_after: field("rss_after")?,
            rss_delta: field("rss_delta")?,
            param_count: field("param_count")? as usize,
            weight_bytes: field("weight_bytes")?,
        })
    }
}

/// Current resident set size in bytes (Linux `VmRSS`).
pub fn resident_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let kb: u64 = status
        .lines()
        .find(|l| l.starts_with("VmRSS:"))?
        .split_whitespace()
        .nth(1)?
        .parse()
        .ok()?;
    Some(kb * 1024)
}

/// Loads a checkpoint in this process and reports the resident-set growth.
/// Only meaningful in a fresh process; see [`bench_memory`].
pub fn measure_load_rss(checkpoint: &Path) -> Result<(ToxicityModel, MemoryReport)> {
    let before = resident_bytes().ok_or_else(|| Error::Contract("resident set size is unavailable".into()))?;
    let model = ToxicityModel::load(checkpoint)?;
    let after = resident_bytes().unwrap_or(before);
    let params = model.param_count();
    let report = MemoryReport {
        rss_before: before,
        rss_after: after,
        rss_delta: after.saturating_sub(before),
        param_count: params,
        weight_bytes: params as u64 * 4,
    };
    Ok((model, report))
}

/// Runs `<probe_exe> mem-probe --ckpt <checkpoint>` in a fresh process and
/// parses its report. `probe_exe` is the `ttd` binary.
pub fn bench_memory(probe_exe: &Path, checkpoint: &Path) -> Result<MemoryReport> {
    if !checkpoint.exists() {
        return Err(Error::io(checkpoint, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let out = Command::new(probe_exe)
        .arg("mem-probe")
        .arg("--ckpt")
        .arg(checkpoint)
        .output()
        .map_err(|e| Error::io(probe_exe, e))?;
    if !out.status.success() {
        return Err(Error::Contract(format!(
            "memory probe failed: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    MemoryReport::from_tsv(&String::from_utf8_lossy(&out.stdout))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_round_trip() {
        let r = MemoryReport {
            rss_before: 1,
            rss_after: 5,
            rss_delta: 4,
            param_count: 2,
            weight_bytes: 8,
        };
        assert_eq!(MemoryReport::from_tsv(&r.to_tsv()).unwrap(), r);
        assert!(MemoryReport::from_tsv("rss_before\t1\n").is_err());
    }

    #[test]
    fn rss_is_readable_on_linux() {
        if cfg!(target_os = "linux") {
            assert!(resident_bytes().unwrap() > 0);
        }
    }
}
