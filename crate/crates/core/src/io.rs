//! File formats: versioned CSV payloads, model JSON, run manifests, and
//! atomic writes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::influence::InfluenceRow;
use crate::metrics::MetricKind;
use crate::model::ModelParams;
use crate::numeric::fmt_f64;
use crate::qp::{KktCase, WeightSource, WeightVector};

pub const TOOL: &str = "soft-unlearn";
const SCHEMA_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaKind {
    Dataset,
    Model,
    Influence,
    Weights,
    Loo,
    Bench,
    Sweep,
    Report,
}

impl SchemaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemaKind::Dataset => "dataset",
            SchemaKind::Model => "model",
            SchemaKind::Influence => "influence",
            SchemaKind::Weights => "weights",
            SchemaKind::Loo => "loo",
            SchemaKind::Bench => "bench",
            SchemaKind::Sweep => "sweep",
            SchemaKind::Report => "report",
        }
    }

    pub fn tag(self) -> String {
        format!("{TOOL} {} {SCHEMA_VERSION}", self.as_str())
    }
}

/// `# soft-unlearn <kind> v1`
pub fn schema_line(kind: SchemaKind) -> String {
    format!("# {}", kind.tag())
}

/// Schema line followed by `key=value` metadata.
pub fn schema_line_with(kind: SchemaKind, meta: &[(&str, String)]) -> String {
    let mut s = schema_line(kind);
    for (k, v) in meta {
        let _ = write!(s, " {k}={v}");
    }
    s
}

/// Splits an optional leading schema line off `text`, checking kind and
/// version. Files without one are accepted as-is.
pub fn strip_schema_line<'a>(text: &'a str, path: &Path, kind: SchemaKind) -> Result<&'a str> {
    read_schema_line(text, path, kind, false).map(|(body, _)| body)
}

/// Like [`strip_schema_line`] but requires the line and returns its metadata.
pub fn read_schema_line<'a>(
    text: &'a str,
    path: &Path,
    kind: SchemaKind,
    required: bool,
) -> Result<(&'a str, BTreeMap<String, String>)> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let Some(line) = first.trim_end_matches('\r').strip_prefix('#') else {
        if required {
            return Err(Error::SchemaVersion {
                path: path.to_owned(),
                found: String::new(),
                expected: kind.tag(),
            });
        }
        return Ok((text, BTreeMap::new()));
    };
    let mut tokens = line.split_whitespace();
    let found: Vec<&str> = tokens.by_ref().take(3).collect();
    if found.join(" ") != kind.tag() {
        return Err(Error::SchemaVersion {
            path: path.to_owned(),
            found: found.join(" "),
            expected: kind.tag(),
        });
    }
    let meta = tokens
        .filter_map(|t| t.split_once('='))
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .collect();
    Ok((rest, meta))
}

/// Writes through a sibling temporary file and renames it into place.
/// `read_to_string` with the path in the error message.
pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_owned(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes)?;
    if let Err(e) = std::fs::rename(&tmp, path) {
        let _ = std::fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    schema: String,
    theta: Vec<f64>,
    intercept: f64,
    fingerprint: String,
}

pub fn fingerprint_hex(fp: u64) -> String {
    format!("{fp:016x}")
}

pub fn save_model(path: &Path, m: &ModelParams) -> Result<()> {
    write_json(
        path,
        &ModelFile {
            schema: SchemaKind::Model.tag(),
            theta: m.theta.clone(),
            intercept: m.intercept,
            fingerprint: fingerprint_hex(m.fingerprint()),
        },
    )
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let f: ModelFile = serde_json::from_str(&read_text(path)?)?;
    if f.schema != SchemaKind::Model.tag() {
        return Err(Error::SchemaVersion {
            path: path.to_owned(),
            found: f.schema,
            expected: SchemaKind::Model.tag(),
        });
    }
    let m = ModelParams {
        theta: f.theta,
        intercept: f.intercept,
    };
    if !m.is_finite() {
        return Err(Error::BadValue {
            path: path.to_owned(),
            row: 0,
            column: "theta".into(),
            message: "non-finite parameter".into(),
        });
    }
    Ok(m)
}

fn csv_body(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Assembles schema line, header and rows into one CSV payload.
pub fn csv_payload(
    kind: SchemaKind,
    meta: &[(&str, String)],
    header: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<String> {
    Ok(format!("{}\n{}", schema_line_with(kind, meta), csv_body(header, rows)?))
}

pub fn influence_csv(rows: &[InfluenceRow], model_fp: u64) -> Result<String> {
    csv_payload(
        SchemaKind::Influence,
        &[("model", fingerprint_hex(model_fp))],
        &["index", "i_util", "i_metric", "metric_kind"],
        rows.iter().map(|r| {
            vec![
                r.index.to_string(),
                fmt_f64(r.i_util),
                fmt_f64(r.i_metric),
                r.metric_kind.to_string(),
            ]
        }),
    )
}

/// Parsed influence file: rows plus the model fingerprint it was computed at.
pub fn load_influence(path: &Path) -> Result<(Vec<InfluenceRow>, Option<u64>)> {
    let text = read_text(path)?;
    let (body, meta) = read_schema_line(&text, path, SchemaKind::Influence, true)?;
    let fp = meta.get("model").and_then(|v| u64::from_str_radix(v, 16).ok());
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let mut rows = Vec::new();
    for (r, rec) in rdr.deserialize::<InfluenceRow>().enumerate() {
        let row = rec.map_err(|e| Error::BadValue {
            path: path.to_owned(),
            row: r + 1,
            column: String::new(),
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile(path.to_owned()));
    }
    if rows.iter().enumerate().any(|(i, r)| r.index != i) {
        return Err(Error::InvalidArgument(format!("{}: indices must be 0..n in order", path.display())));
    }
    Ok((rows, fp))
}

pub fn weights_csv(w: &WeightVector) -> Result<String> {
    let mut meta = vec![
        ("source", format!("{:?}", w.source).to_lowercase()),
        ("beta1", fmt_f64(w.dual_beta1)),
        ("beta2", fmt_f64(w.dual_beta2)),
    ];
    if let Some(fp) = w.snapshot {
        meta.push(("model", fingerprint_hex(fp)));
    }
    let case = w.case_id().to_string();
    csv_payload(
        SchemaKind::Weights,
        &meta,
        &["index", "eps", "case_id"],
        w.eps
            .iter()
            .enumerate()
            .map(|(i, &e)| vec![i.to_string(), fmt_f64(e), case.clone()]),
    )
}

#[derive(Debug, Deserialize)]
struct WeightRow {
    index: usize,
    eps: f64,
    case_id: u8,
}

pub fn load_weights(path: &Path) -> Result<WeightVector> {
    let text = read_text(path)?;
    let (body, meta) = read_schema_line(&text, path, SchemaKind::Weights, true)?;
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let mut eps = Vec::new();
    let mut case_id = None;
    for (r, rec) in rdr.deserialize::<WeightRow>().enumerate() {
        let bad = |message: String| Error::BadValue {
            path: path.to_owned(),
            row: r + 1,
            column: String::new(),
            message,
        };
        let row = rec.map_err(|e| bad(e.to_string()))?;
        if row.index != r || !row.eps.is_finite() {
            return Err(bad("indices must run 0..n and weights must be finite".into()));
        }
        eps.push(row.eps);
        case_id = Some(row.case_id);
    }
    if eps.is_empty() {
        return Err(Error::EmptyFile(path.to_owned()));
    }
    let num = |k: &str| meta.get(k).and_then(|v| v.parse::<f64>().ok()).unwrap_or(0.0);
    let source = match meta.get("source").map(String::as_str) {
        Some("numeric") => WeightSource::Numeric,
        Some("hard") => WeightSource::Hard,
        _ => WeightSource::Analytic,
    };
    Ok(WeightVector {
        eps,
        case: case_id.and_then(KktCase::from_id),
        dual_beta1: num("beta1"),
        dual_beta2: num("beta2"),
        source,
        snapshot: meta.get("model").and_then(|v| u64::from_str_radix(v, 16).ok()),
        diagnostic: None,
    })
}

/// Everything needed to re-run a command; written next to its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub metric: Option<MetricKind>,
    pub created_unix: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    /// Wall-clock seconds per step.
    pub timings: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn new(command: &str, argv: &[String]) -> Self {
        Self {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv: argv.to_vec(),
            config: serde_json::Value::Null,
            seed: None,
            metric: None,
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    /// Records an input file with a content fingerprint.
    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.inputs
            .insert(role.into(), format!("{} fnv1a={}", path.display(), fingerprint_hex(h)));
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_line_checks() {
        let p = Path::new("x.csv");
        let text = format!("{}\na,b\n1,2\n", schema_line_with(SchemaKind::Weights, &[("model", "ab".into())]));
        let (body, meta) = read_schema_line(&text, p, SchemaKind::Weights, true).unwrap();
        assert_eq!(body, "a,b\n1,2\n");
        assert_eq!(meta["model"], "ab");
        assert!(read_schema_line(&text, p, SchemaKind::Influence, true).is_err());
        assert!(read_schema_line("a,b\n", p, SchemaKind::Weights, true).is_err());
        assert_eq!(strip_schema_line("a,b\n", p, SchemaKind::Dataset).unwrap(), "a,b\n");
        let v2 = "# soft-unlearn weights v2\nindex,eps,case_id\n";
        assert!(matches!(
            read_schema_line(v2, p, SchemaKind::Weights, true),
            Err(Error::SchemaVersion { .. })
        ));
    }

    #[test]
    fn model_and_weights_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = ModelParams {
            theta: vec![0.1, -1.0 / 3.0, 1e-300],
            intercept: -2.5,
        };
        let p = dir.path().join("model.json");
        save_model(&p, &m).unwrap();
        assert_eq!(load_model(&p).unwrap(), m);

        let w = WeightVector {
            eps: vec![0.25, -1.0 / 7.0, 0.0],
            case: Some(KktCase::BothBound),
            dual_beta1: 0.5,
            dual_beta2: 1.0 / 3.0,
            source: WeightSource::Analytic,
            snapshot: Some(m.fingerprint()),
            diagnostic: None,
        };
        let p = dir.path().join("w.csv");
        write_atomic(&p, weights_csv(&w).unwrap().as_bytes()).unwrap();
        assert_eq!(load_weights(&p).unwrap(), w);
    }

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("f.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        let names: Vec<_> = std::fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(names.len(), 1);
    }
}
