//! Line-oriented file formats.
//!
//! * samples: JSONL, one JSON array of `n` labels in `1..=ℓ` per line;
//! * labels (hidden types, cluster assignments): JSONL, one integer per line;
//! * models: JSON, see [`ModelFile`](crate::model::ModelFile).
//!
//! All output is UTF-8 with LF line endings.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::SampleSet;

/// Parses samples. `ell` defaults to the largest label seen (at least 2).
pub fn parse_samples(text: &str, ell: Option<usize>) -> Result<SampleSet> {
    let mut rows: Vec<Vec<u32>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<u32> = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("samples line {}: {e}", lineno + 1)))?;
        rows.push(row);
    }
    let n = rows.first().map(Vec::len).ok_or_else(|| Error::Parse("no samples".into()))?;
    let seen = rows.iter().flatten().cloned().max().unwrap_or(1) as usize;
    let ell = ell.unwrap_or(seen.max(2));
    SampleSet::from_rows(n, ell, &rows)
}

pub fn format_samples(samples: &SampleSet) -> String {
    let mut out = String::with_capacity(samples.labels().len() * 2 + samples.len());
    for row in samples.rows() {
        out.push('[');
        for (i, y) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{y}").unwrap();
        }
        out.push_str("]\n");
    }
    out
}

pub fn parse_labels(text: &str) -> Result<Vec<u32>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<u32>()
                .map_err(|e| Error::Parse(format!("labels line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn format_labels(labels: &[u32]) -> String {
    let mut out = String::with_capacity(labels.len() * 2);
    for l in labels {
        writeln!(out, "{l}").unwrap();
    }
    out
}
