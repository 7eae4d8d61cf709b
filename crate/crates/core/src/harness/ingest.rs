//! Header-less CSV data files: one probability row per sample, one integer
//! label per line, and an optional oracle matrix shaped like the probabilities.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::prob::{Dataset, LabeledSample, ProbVector};

fn ingest_err(path: &Path, row: usize, msg: impl Into<String>) -> Error {
    Error::Ingest { path: path.to_path_buf(), row, msg: msg.into() }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| ingest_err(path, 0, e.to_string()))?;
    Ok(csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).flexible(true).from_reader(file))
}

/// Reads a numeric matrix; every row must have the same number of finite columns.
pub fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (i, rec) in reader(path)?.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| ingest_err(path, row, e.to_string()))?;
        let vals = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| ingest_err(path, row, format!("not a number: '{f}'"))))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(v) = vals.iter().find(|v| !v.is_finite()) {
            return Err(ingest_err(path, row, format!("non-finite value {v}")));
        }
        if let Some(first) = rows.first().map(Vec::len) {
            if vals.len() != first {
                return Err(ingest_err(path, row, format!("{} columns, expected {first}", vals.len())));
            }
        }
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(ingest_err(path, 0, "file has no rows"));
    }
    Ok(rows)
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let mut labels = Vec::new();
    for (i, rec) in reader(path)?.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| ingest_err(path, row, e.to_string()))?;
        if rec.len() != 1 {
            return Err(ingest_err(path, row, format!("expected one label, found {} fields", rec.len())));
        }
        let y = rec[0].parse::<usize>().map_err(|_| ingest_err(path, row, format!("not a class index: '{}'", &rec[0])))?;
        labels.push(y);
    }
    Ok(labels)
}

fn to_probs(path: &Path, rows: Vec<Vec<f64>>) -> Result<Vec<ProbVector>> {
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            // rows already on the simplex keep their exact values
            ProbVector::new(r.clone())
                .or_else(|_| ProbVector::normalized(r))
                .map_err(|e| ingest_err(path, i + 1, e.to_string()))
        })
        .collect()
}

/// Loads and validates a dataset. Rows within the renormalization tolerance
/// are rescaled to sum to one.
pub fn ingest(probs_path: &Path, labels_path: &Path, oracle_path: Option<&Path>) -> Result<Dataset> {
    let rows = read_matrix(probs_path)?;
    let k = rows[0].len();
    if k < 2 {
        return Err(ingest_err(probs_path, 1, format!("need at least 2 columns, found {k}")));
    }
    let probs = to_probs(probs_path, rows)?;
    let labels = read_labels(labels_path)?;
    if labels.len() != probs.len() {
        let row = labels.len().min(probs.len()) + 1;
        return Err(ingest_err(
            labels_path,
            row,
            format!("{} labels for {} probability rows", labels.len(), probs.len()),
        ));
    }
    let samples = probs
        .into_iter()
        .zip(&labels)
        .enumerate()
        .map(|(i, (p, &y))| {
            if y >= k {
                return Err(ingest_err(labels_path, i + 1, format!("label {y} out of range for K={k}")));
            }
            LabeledSample::new(p, y)
        })
        .collect::<Result<Vec<_>>>()?;
    let oracle = match oracle_path {
        None => None,
        Some(path) => {
            let rows = read_matrix(path)?;
            if rows.len() != samples.len() {
                return Err(ingest_err(path, 0, format!("{} oracle rows for {} samples", rows.len(), samples.len())));
            }
            if rows[0].len() != k {
                return Err(ingest_err(path, 1, format!("{} oracle columns, expected {k}", rows[0].len())));
            }
            Some(to_probs(path, rows)?)
        }
    };
    Dataset::new(k, samples, oracle)
}

pub fn write_matrix<'a>(path: &Path, rows: impl IntoIterator<Item = &'a ProbVector>) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    for r in rows {
        let line: Vec<String> = r.as_slice().iter().map(f64::to_string).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    for y in labels {
        writeln!(w, "{y}")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `probs.csv`, `labels.csv` and, when present, `oracle.csv` into `dir`.
pub fn export(d: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_matrix(&dir.join("probs.csv"), d.probs())?;
    write_labels(&dir.join("labels.csv"), &d.labels())?;
    if let Some(o) = d.oracle() {
        write_matrix(&dir.join("oracle.csv"), o)?;
    }
    Ok(())
}
