//! Text file formats: raw sample CSV and the windowed instance file.
//!
//! Floats are written with 17 significant digits (`{:.16e}`) so they parse
//! back to the identical `f64`. Timestamps are ISO 8601 / RFC 3339 in UTC.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};

use crate::error::{Error, Result};
use crate::preprocessing::label::LabelMode;
use crate::preprocessing::pipeline::{Partition, PreprocessOutput, RawSample};
use crate::preprocessing::series::Channel;
use crate::preprocessing::window::WindowInstance;
use crate::risk::RiskLevel;

pub const RAW_HEADER: &str = "worker_id,timestamp,channel,value";
pub const INSTANCE_MAGIC: &str = "# heatseq-instances";
pub const INSTANCE_SCHEMA_VERSION: u32 = 1;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn format_timestamp(secs: f64) -> String {
    let whole = secs.floor();
    let nanos = ((secs - whole) * 1e9).round() as u32;
    match DateTime::<Utc>::from_timestamp(whole as i64, nanos.min(999_999_999)) {
        Some(dt) => dt.to_rfc3339_opts(SecondsFormat::AutoSi, true),
        None => format!("{secs}"),
    }
}

pub fn parse_timestamp(s: &str) -> Option<f64> {
    let s = s.trim();
    let dt = DateTime::parse_from_rfc3339(s)
        .map(|d| d.with_timezone(&Utc))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f").map(|n| n.and_utc()))
        .ok()?;
    Some(dt.timestamp() as f64 + dt.timestamp_subsec_nanos() as f64 * 1e-9)
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

pub fn write_raw_csv<W: Write>(mut w: W, samples: &[RawSample]) -> Result<()> {
    writeln!(w, "{RAW_HEADER}")?;
    for s in samples {
        let value = s.value.map(fmt_f64).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{}",
            s.worker_id,
            format_timestamp(s.timestamp),
            s.channel.name(),
            value
        )?;
    }
    Ok(())
}

/// Reads `worker_id,timestamp_iso8601,channel,value`; an empty value is a
/// missing sample. A header line is optional. Line numbers in errors are
/// 1-based.
pub fn read_raw_csv<R: BufRead>(r: R) -> Result<Vec<RawSample>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || (line_no == 1 && line.starts_with("worker_id")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(line_no, format!("expected 4 fields, found {}", fields.len())));
        }
        let worker_id = fields[0].trim();
        if worker_id.is_empty() {
            return Err(parse_err(line_no, "empty worker_id"));
        }
        let timestamp = parse_timestamp(fields[1])
            .ok_or_else(|| parse_err(line_no, format!("bad timestamp '{}'", fields[1])))?;
        let channel: Channel = fields[2]
            .parse()
            .map_err(|_| parse_err(line_no, format!("unknown channel '{}'", fields[2])))?;
        let raw = fields[3].trim();
        let value = if raw.is_empty() {
            None
        } else {
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad value '{raw}'")))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, format!("non-finite value '{raw}'")));
            }
            Some(v)
        };
        out.push(RawSample {
            worker_id: worker_id.to_string(),
            timestamp,
            channel,
            value,
        });
    }
    Ok(out)
}

/// Windowed instances as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSet {
    pub label_mode: LabelMode,
    pub window_len: i64,
    pub feature_names: Vec<String>,
    pub windows: Vec<WindowInstance>,
    pub partition: Vec<Partition>,
}

impl InstanceSet {
    pub fn from_output(out: &PreprocessOutput, label_mode: LabelMode, window_len: i64) -> Self {
        InstanceSet {
            label_mode,
            window_len,
            feature_names: out.feature_names(),
            windows: out.windows.clone(),
            partition: out.partition.clone(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_names.len()
    }
}

/// Instance file: a `# heatseq-instances v1 key=value ...` line, a column
/// header, then `worker_id,window_start,feat_1..feat_K,label,partition`.
pub fn write_instances<W: Write>(mut w: W, set: &InstanceSet) -> Result<()> {
    writeln!(
        w,
        "{INSTANCE_MAGIC} v{INSTANCE_SCHEMA_VERSION} label_mode={} window={} features={}",
        set.label_mode,
        set.window_len,
        set.feature_names.len()
    )?;
    writeln!(w, "worker_id,window_start,{},label,partition", set.feature_names.join(","))?;
    for (win, part) in set.windows.iter().zip(&set.partition) {
        let label = win
            .label
            .ok_or_else(|| Error::State(format!("window {} has no label", win.window_start)))?;
        write!(w, "{},{}", win.worker_id, format_timestamp(win.window_start as f64))?;
        for f in &win.features {
            write!(w, ",{}", fmt_f64(*f))?;
        }
        writeln!(w, ",{label},{part}")?;
    }
    Ok(())
}

pub fn read_instances<R: BufRead>(r: R) -> Result<InstanceSet> {
    let mut lines = r.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty instance file"))?;
    let first = first?;
    let mut meta = first.split_whitespace();
    if meta.next() != Some("#") || meta.next() != Some("heatseq-instances") {
        return Err(parse_err(1, "missing instance file header"));
    }
    let version = meta.next().unwrap_or_default();
    if version != format!("v{INSTANCE_SCHEMA_VERSION}") {
        return Err(parse_err(1, format!("unsupported schema version '{version}'")));
    }
    let kv: BTreeMap<&str, &str> = meta.filter_map(|p| p.split_once('=')).collect();
    let label_mode: LabelMode = kv
        .get("label_mode")
        .ok_or_else(|| parse_err(1, "header lacks label_mode"))?
        .parse()
        .map_err(|e: Error| parse_err(1, e.to_string()))?;
    let window_len: i64 = kv
        .get("window")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| parse_err(1, "header lacks window"))?;

    let (_, header) = lines.next().ok_or_else(|| parse_err(2, "missing column header"))?;
    let header = header?;
    let cols: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    if cols.len() < 4 || cols[0] != "worker_id" || cols[1] != "window_start" {
        return Err(parse_err(2, "bad column header"));
    }
    let k = cols.len() - 4;
    let feature_names: Vec<String> = cols[2..2 + k].iter().map(|s| s.to_string()).collect();

    let mut windows = Vec::new();
    let mut partition = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != k + 4 {
            return Err(parse_err(line_no, format!("expected {} fields, found {}", k + 4, fields.len())));
        }
        let start = parse_timestamp(fields[1])
            .ok_or_else(|| parse_err(line_no, format!("bad timestamp '{}'", fields[1])))?;
        let features = fields[2..2 + k]
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|_| parse_err(line_no, format!("bad feature '{f}'"))))
            .collect::<Result<Vec<_>>>()?;
        let label: RiskLevel = fields[2 + k]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad label '{}'", fields[2 + k])))?;
        let part: Partition = fields[3 + k]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad partition '{}'", fields[3 + k])))?;
        windows.push(WindowInstance {
            worker_id: fields[0].to_string(),
            window_start: start as i64,
            features,
            raw_means: BTreeMap::new(),
            label: Some(label),
        });
        partition.push(part);
    }
    Ok(InstanceSet {
        label_mode,
        window_len,
        feature_names,
        windows,
        partition,
    })
}
