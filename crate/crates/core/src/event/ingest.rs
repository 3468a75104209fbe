use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::event::{Event, EventStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IngestOptions {
    /// Give sources and destinations separate id spaces (user/item graphs
    /// where both columns restart at zero).
    pub bipartite: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { bipartite: true }
    }
}

struct RawRow {
    src: u64,
    dst: u64,
    timestamp: f64,
    features: Vec<f64>,
}

/// Reads `src,dst,timestamp,state_label,f1,...,fd` rows.
///
/// A first row whose leading field is not numeric is treated as a header.
/// Rows are stably sorted by timestamp and vertex ids are compacted in order
/// of first appearance.
pub fn ingest_csv(path: impl AsRef<Path>, opts: IngestOptions) -> Result<EventStream> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, 0, e))?;

    let mut rows: Vec<RawRow> = Vec::new();
    let mut feature_dim = None;
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, k as u64 + 1, e))?;
        let line = record.position().map_or(k as u64 + 1, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        if k == 0 && record.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let perr = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if record.len() < 4 {
            return Err(perr(format!(
                "expected at least 4 fields, got {}",
                record.len()
            )));
        }
        let src = parse_id(&record[0]).map_err(|m| perr(format!("src: {m}")))?;
        let dst = parse_id(&record[1]).map_err(|m| perr(format!("dst: {m}")))?;
        let timestamp = parse_real(&record[2]).map_err(|m| perr(format!("timestamp: {m}")))?;
        if timestamp < 0.0 {
            return Err(perr(format!("negative timestamp {timestamp}")));
        }
        parse_real(&record[3]).map_err(|m| perr(format!("state_label: {m}")))?;
        let features = record
            .iter()
            .skip(4)
            .enumerate()
            .map(|(c, f)| parse_real(f).map_err(|m| perr(format!("feature {}: {m}", c + 1))))
            .collect::<Result<Vec<_>>>()?;
        match feature_dim {
            None => feature_dim = Some(features.len()),
            Some(d) if d != features.len() => {
                return Err(perr(format!(
                    "{} features, earlier rows have {d}",
                    features.len()
                )));
            }
            Some(_) => {}
        }
        rows.push(RawRow {
            src,
            dst,
            timestamp,
            features,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyStream);
    }
    rows.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));

    let mut src_ids = HashMap::new();
    let mut dst_ids = HashMap::new();
    let mut shared = HashMap::new();
    let mut pairs = Vec::with_capacity(rows.len());
    for r in &rows {
        if opts.bipartite {
            let n = src_ids.len();
            let s = *src_ids.entry(r.src).or_insert(n);
            let n = dst_ids.len();
            let d = *dst_ids.entry(r.dst).or_insert(n);
            pairs.push((s, d));
        } else {
            let n = shared.len();
            let s = *shared.entry(r.src).or_insert(n);
            let n = shared.len();
            let d = *shared.entry(r.dst).or_insert(n);
            pairs.push((s, d));
        }
    }
    let (offset, num_vertices) = if opts.bipartite {
        (src_ids.len(), src_ids.len() + dst_ids.len())
    } else {
        (0, shared.len())
    };
    let events = rows
        .into_iter()
        .zip(pairs)
        .map(|(r, (s, d))| Event::positive(s, d + offset, r.timestamp, r.features))
        .collect();
    EventStream::new(events, num_vertices, feature_dim.unwrap_or(0))
}

fn csv_error(path: &Path, line: u64, e: csv::Error) -> Error {
    let line = e.position().map_or(line, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

fn parse_real(field: &str) -> std::result::Result<f64, String> {
    match field.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        Ok(x) => Err(format!("non-finite value {x}")),
        Err(_) => Err(format!("not a number: {field:?}")),
    }
}

fn parse_id(field: &str) -> std::result::Result<u64, String> {
    if let Ok(id) = field.parse::<u64>() {
        return Ok(id);
    }
    let x = parse_real(field)?;
    if x >= 0.0 && x.fract() == 0.0 && x < u64::MAX as f64 {
        Ok(x as u64)
    } else {
        Err(format!("not a non-negative integer id: {field:?}"))
    }
}
