//! JSON Lines dataset files, one record per line.

use std::fs;
use std::io::Write;
use std::path::Path;

use etscl_core::synth::{MultiModalDataset, Record};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    id: u64,
    label: usize,
    cfp: Vec<f64>,
    oct: Vec<f64>,
    vessel: Vec<f64>,
    conflict: [bool; 3],
}

pub fn to_jsonl(ds: &MultiModalDataset) -> String {
    let mut out = String::new();
    for r in &ds.records {
        let [cfp, oct, vessel] = r.features.clone();
        let line = Line { id: r.id, label: r.label, cfp, oct, vessel, conflict: r.conflict };
        out.push_str(&serde_json::to_string(&line).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Parses records; blank lines are skipped and every modality must keep one width.
pub fn from_jsonl(text: &str) -> std::result::Result<MultiModalDataset, (usize, String)> {
    let mut records: Vec<Record> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let l: Line = serde_json::from_str(raw).map_err(|e| (line_no, e.to_string()))?;
        let rec = Record { id: l.id, label: l.label, features: [l.cfp, l.oct, l.vessel], conflict: l.conflict };
        if let Some(first) = records.first() {
            for (m, (a, b)) in first.features.iter().zip(&rec.features).enumerate() {
                if a.len() != b.len() {
                    let name = etscl_core::Modality::ALL[m];
                    return Err((line_no, format!("{name} has {} features, earlier records have {}", b.len(), a.len())));
                }
            }
        }
        if rec.features.iter().any(Vec::is_empty) {
            return Err((line_no, "empty feature vector".into()));
        }
        records.push(rec);
    }
    Ok(MultiModalDataset { records })
}

pub fn read_dataset(path: &Path) -> Result<MultiModalDataset> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    from_jsonl(&text).map_err(|(line, m)| CliError::format(path, line, m))
}

pub fn write_dataset(path: &Path, ds: &MultiModalDataset) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(to_jsonl(ds).as_bytes()).map_err(|e| CliError::io(path, e))
}
