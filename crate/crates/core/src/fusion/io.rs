//! CSV formats: per-clip probabilities, per-patch probabilities, confusion
//! matrices and early-detection curves.

use std::io::{Read, Write};

use super::{EarlyDetectionCurve, EvaluationResult, FrameworkTable};
use crate::error::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("csv: {other:?}")),
    }
}

fn prob_header(prefix: &[&str], classes: usize) -> Vec<String> {
    prefix
        .iter()
        .map(|s| s.to_string())
        .chain((0..classes).map(|c| format!("p{c}")))
        .collect()
}

/// `clip_id,truth,p0..p{C-1}`, one row per clip.
pub fn write_probabilities<W: Write>(
    w: W,
    clip_ids: &[String],
    truth: &[usize],
    rows: &[Vec<f64>],
) -> Result<()> {
    let classes = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut out = csv::Writer::from_writer(w);
    out.write_record(prob_header(&["clip_id", "truth"], classes))
        .map_err(csv_err)?;
    for ((id, t), row) in clip_ids.iter().zip(truth).zip(rows) {
        let mut rec = vec![id.clone(), t.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        out.write_record(rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn parse<T: std::str::FromStr>(field: &str, what: &str, line: usize) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("line {line}: bad {what} {field:?}")))
}

fn check_header(headers: &csv::StringRecord, prefix: &[&str]) -> Result<usize> {
    let names: Vec<&str> = headers.iter().collect();
    if names.len() <= prefix.len() || names[..prefix.len()] != *prefix {
        return Err(Error::Format(format!(
            "expected header starting {prefix:?}, got {names:?}"
        )));
    }
    let classes = names.len() - prefix.len();
    for (c, name) in names[prefix.len()..].iter().enumerate() {
        if *name != format!("p{c}") {
            return Err(Error::Format(format!("unexpected column {name:?}")));
        }
    }
    Ok(classes)
}

pub fn read_probabilities<R: Read>(r: R, name: &str) -> Result<FrameworkTable> {
    let mut rdr = csv::Reader::from_reader(r);
    let classes = check_header(rdr.headers().map_err(csv_err)?, &["clip_id", "truth"])?;
    let mut table = FrameworkTable {
        name: name.to_string(),
        clip_ids: Vec::new(),
        truth: Vec::new(),
        probs: Vec::new(),
    };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        if rec.len() != classes + 2 {
            return Err(Error::Format(format!("line {line}: {} fields", rec.len())));
        }
        table.clip_ids.push(rec[0].to_string());
        table.truth.push(parse(&rec[1], "truth", line)?);
        table.probs.push(
            rec.iter()
                .skip(2)
                .map(|f| parse(f, "probability", line))
                .collect::<Result<_>>()?,
        );
    }
    Ok(table)
}

/// Per-patch probabilities of every clip, patches in temporal order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTable {
    pub clip_ids: Vec<String>,
    pub truth: Vec<usize>,
    /// [clip][patch][class]
    pub probs: Vec<Vec<Vec<f64>>>,
}

/// `clip_id,truth,patch,p0..p{C-1}`, one row per (clip, patch).
pub fn write_patch_probabilities<W: Write>(w: W, table: &PatchTable) -> Result<()> {
    let classes = table
        .probs
        .first()
        .and_then(|c| c.first())
        .map(|r| r.len())
        .unwrap_or(0);
    let mut out = csv::Writer::from_writer(w);
    out.write_record(prob_header(&["clip_id", "truth", "patch"], classes))
        .map_err(csv_err)?;
    for ((id, t), patches) in table.clip_ids.iter().zip(&table.truth).zip(&table.probs) {
        for (k, row) in patches.iter().enumerate() {
            let mut rec = vec![id.clone(), t.to_string(), k.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            out.write_record(rec).map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_patch_probabilities<R: Read>(r: R) -> Result<PatchTable> {
    let mut rdr = csv::Reader::from_reader(r);
    let classes = check_header(
        rdr.headers().map_err(csv_err)?,
        &["clip_id", "truth", "patch"],
    )?;
    let mut table = PatchTable {
        clip_ids: Vec::new(),
        truth: Vec::new(),
        probs: Vec::new(),
    };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        if rec.len() != classes + 3 {
            return Err(Error::Format(format!("line {line}: {} fields", rec.len())));
        }
        let id = &rec[0];
        let truth: usize = parse(&rec[1], "truth", line)?;
        let patch: usize = parse(&rec[2], "patch index", line)?;
        let row: Vec<f64> = rec
            .iter()
            .skip(3)
            .map(|f| parse(f, "probability", line))
            .collect::<Result<_>>()?;
        if table.clip_ids.last().map(String::as_str) != Some(id) {
            if table.clip_ids.iter().any(|c| c == id) {
                return Err(Error::Format(format!(
                    "line {line}: rows of clip {id} are not contiguous"
                )));
            }
            table.clip_ids.push(id.to_string());
            table.truth.push(truth);
            table.probs.push(Vec::new());
        }
        let patches = table.probs.last_mut().unwrap();
        if patch != patches.len() {
            return Err(Error::Format(format!(
                "line {line}: clip {id} patch {patch} out of order"
            )));
        }
        if *table.truth.last().unwrap() != truth {
            return Err(Error::Format(format!("line {line}: clip {id} changes truth")));
        }
        patches.push(row);
    }
    Ok(table)
}

/// Confusion matrix with header `truth,0..C-1`.
pub fn write_confusion<W: Write>(w: W, result: &EvaluationResult) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let classes = result.confusion.len();
    let mut header = vec!["truth".to_string()];
    header.extend((0..classes).map(|c| c.to_string()));
    out.write_record(header).map_err(csv_err)?;
    for (t, row) in result.confusion.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        out.write_record(rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// `k,accuracy` rows for k = 1..=10.
pub fn write_early_curve<W: Write>(w: W, curve: &EarlyDetectionCurve) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["k", "accuracy"]).map_err(csv_err)?;
    for (k, acc) in curve.accuracies.iter().enumerate() {
        out.write_record([(k + 1).to_string(), acc.to_string()])
            .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
