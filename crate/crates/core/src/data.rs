//! Datasets: CSV ingestion, synthetic generators and deterministic splits.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, SchemaKind};
use crate::metrics::{EvalRole, EvalSet};
use crate::model::Sample;
use crate::numeric::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

impl SplitTag {
    pub const ALL: [SplitTag; 3] = [SplitTag::Train, SplitTag::Validation, SplitTag::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Validation => "validation",
            SplitTag::Test => "test",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(SplitTag::Train),
            "validation" | "val" | "valid" => Ok(SplitTag::Validation),
            "test" => Ok(SplitTag::Test),
            other => Err(format!("unknown split tag `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    /// Row-major `n × d`.
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub sensitive: Vec<u8>,
    pub split: Vec<SplitTag>,
    pub provenance: Provenance,
}

/// Train / validation / test proportions.
pub const DEFAULT_RATIOS: [f64; 3] = [4.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0];

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        for (what, len) in [
            ("features", self.features.len()),
            ("sensitive", self.sensitive.len()),
            ("split", self.split.len()),
        ] {
            if len != n {
                return Err(Error::InvalidArgument(format!("{what} has {len} rows, expected {n}")));
            }
        }
        if let Some(row) = self.features.iter().position(|r| r.len() != self.dim()) {
            return Err(Error::InvalidArgument(format!(
                "row {row} has {} features, expected {}",
                self.features[row].len(),
                self.dim()
            )));
        }
        if self.labels.iter().chain(&self.sensitive).any(|&v| v > 1) {
            return Err(Error::InvalidArgument("labels and sensitive values must be 0/1".into()));
        }
        for tag in SplitTag::ALL {
            if !self.split.contains(&tag) {
                return Err(Error::EmptySplit(tag.as_str()));
            }
        }
        Ok(())
    }

    pub fn indices(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == tag).collect()
    }

    pub fn split_sizes(&self) -> [usize; 3] {
        SplitTag::ALL.map(|t| self.split.iter().filter(|&&s| s == t).count())
    }

    /// Rows of one split as model samples, in file order.
    pub fn samples(&self, tag: SplitTag, sensitive_as_feature: bool) -> Vec<Sample> {
        self.indices(tag)
            .into_iter()
            .map(|i| {
                let mut x = self.features[i].clone();
                if sensitive_as_feature {
                    x.push(f64::from(self.sensitive[i]));
                }
                Sample {
                    x,
                    y: self.labels[i],
                    g: self.sensitive[i],
                }
            })
            .collect()
    }

    pub fn eval_set(&self, role: EvalRole, sensitive_as_feature: bool) -> Result<EvalSet> {
        let tag = match role {
            EvalRole::Validation => SplitTag::Validation,
            EvalRole::Test => SplitTag::Test,
        };
        EvalSet::new(self.samples(tag, sensitive_as_feature), role)
    }

    /// Z-scores every feature with training-split mean and standard deviation.
    /// Constant features are only centered.
    pub fn standardize(&mut self) -> Result<()> {
        let train = self.indices(SplitTag::Train);
        if train.is_empty() {
            return Err(Error::EmptySplit("train"));
        }
        let cnt = train.len() as f64;
        for k in 0..self.dim() {
            let mean = crate::numeric::sum(train.iter().map(|&i| self.features[i][k])) / cnt;
            let var = crate::numeric::sum(train.iter().map(|&i| (self.features[i][k] - mean).powi(2))) / cnt;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for row in &mut self.features {
                row[k] = (row[k] - mean) / sd;
            }
        }
        Ok(())
    }
}

/// Column mapping for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    /// `None` takes every column that is not label, sensitive or split.
    pub features: Option<Vec<String>>,
    pub label: String,
    pub sensitive: String,
    pub split: String,
    /// Seed for the default split when the file has no split column.
    pub split_seed: u64,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            features: None,
            label: "label".into(),
            sensitive: "sensitive".into(),
            split: "split".into(),
            split_seed: 0,
        }
    }
}

fn parse_binary(s: &str) -> Option<u8> {
    match s.trim() {
        "0" | "false" | "False" | "FALSE" => Some(0),
        "1" | "true" | "True" | "TRUE" => Some(1),
        t => match t.parse::<f64>() {
            Ok(v) if v == 0.0 => Some(0),
            Ok(v) if v == 1.0 => Some(1),
            _ => None,
        },
    }
}

/// Reads a headered CSV. Without a split column the rows get the default
/// 4:1:1 split drawn with `schema.split_seed`.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let text = io::read_text(path)?;
    let body = io::strip_schema_line(&text, path, SchemaKind::Dataset)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn {
            path: path.to_owned(),
            column: name.to_owned(),
        })
    };
    let label_col = col(&schema.label)?;
    let sens_col = col(&schema.sensitive)?;
    let split_col = header.iter().position(|h| *h == schema.split);
    let feature_names: Vec<String> = match &schema.features {
        Some(f) => f.clone(),
        None => header
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != label_col && i != sens_col && Some(i) != split_col)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let feature_cols = feature_names.iter().map(|f| col(f)).collect::<Result<Vec<_>>>()?;

    let bad = |row: usize, column: &str, message: String| Error::BadValue {
        path: path.to_owned(),
        row,
        column: column.to_owned(),
        message,
    };
    let mut ds = Dataset {
        feature_names,
        features: Vec::new(),
        labels: Vec::new(),
        sensitive: Vec::new(),
        split: Vec::new(),
        provenance: Provenance {
            source: path.display().to_string(),
            seed: None,
        },
    };
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // 1-based data row number, header excluded
        let row = r + 1;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let mut x = Vec::with_capacity(feature_cols.len());
        for (&c, name) in feature_cols.iter().zip(&ds.feature_names) {
            let v: f64 = field(c)
                .parse()
                .map_err(|_| bad(row, name, format!("not a number: `{}`", field(c))))?;
            if !v.is_finite() {
                return Err(bad(row, name, format!("non-finite value `{}`", field(c))));
            }
            x.push(v);
        }
        let y = parse_binary(field(label_col))
            .ok_or_else(|| bad(row, &schema.label, format!("expected 0/1, found `{}`", field(label_col))))?;
        let g = parse_binary(field(sens_col))
            .ok_or_else(|| bad(row, &schema.sensitive, format!("expected 0/1, found `{}`", field(sens_col))))?;
        if let Some(c) = split_col {
            ds.split.push(field(c).parse().map_err(|m| bad(row, &schema.split, m))?);
        }
        ds.features.push(x);
        ds.labels.push(y);
        ds.sensitive.push(g);
    }
    if ds.is_empty() {
        return Err(Error::EmptyFile(path.to_owned()));
    }
    if split_col.is_none() {
        ds.split = vec![SplitTag::Train; ds.len()];
        ds = split(&ds, DEFAULT_RATIOS, schema.split_seed)?;
    }
    ds.validate()?;
    Ok(ds)
}

/// Writes `features..., label, sensitive, split` with a schema line on top.
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    io::write_atomic(path, dataset_csv(ds)?.as_bytes())
}

pub fn dataset_csv(ds: &Dataset) -> Result<String> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header = ds.feature_names.clone();
    header.extend(["label", "sensitive", "split"].map(String::from));
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.features[i].iter().map(|&v| fmt_f64(v)).collect();
        rec.push(ds.labels[i].to_string());
        rec.push(ds.sensitive[i].to_string());
        rec.push(ds.split[i].to_string());
        w.write_record(&rec)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
        .expect("csv output is utf-8");
    Ok(format!("{}\n{body}", io::schema_line(SchemaKind::Dataset)))
}

fn split_counts(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !(*r > 0.0) || !r.is_finite()) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be positive and sum to 1 (got {ratios:?})"
        )));
    }
    let n_val = (n as f64 * ratios[1]).round() as usize;
    let n_test = (n as f64 * ratios[2]).round() as usize;
    let n_train = n.saturating_sub(n_val + n_test);
    for (tag, c) in SplitTag::ALL.iter().zip([n_train, n_val, n_test]) {
        if c == 0 {
            return Err(Error::EmptySplit(tag.as_str()));
        }
    }
    Ok([n_train, n_val, n_test])
}

/// Shuffled split assignment. Validation and test sizes are
/// `round(n·ratio)`; the training split takes the remainder.
pub fn split(ds: &Dataset, ratios: [f64; 3], seed: u64) -> Result<Dataset> {
    let counts = split_counts(ds.len(), ratios)?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut tags = vec![SplitTag::Train; ds.len()];
    for (pos, &i) in order.iter().enumerate() {
        tags[i] = if pos < counts[0] {
            SplitTag::Train
        } else if pos < counts[0] + counts[1] {
            SplitTag::Validation
        } else {
            SplitTag::Test
        };
    }
    Ok(Dataset {
        split: tags,
        ..ds.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    BiasedGauss,
    Symmetric,
    Boundary2d,
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "biased_gauss" => Ok(SyntheticKind::BiasedGauss),
            "symmetric" => Ok(SyntheticKind::Symmetric),
            "boundary2d" => Ok(SyntheticKind::Boundary2d),
            _ => Err(Error::InvalidArgument(format!("unknown synthetic kind `{s}`"))),
        }
    }
}

impl SyntheticKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SyntheticKind::BiasedGauss => "biased_gauss",
            SyntheticKind::Symmetric => "symmetric",
            SyntheticKind::Boundary2d => "boundary2d",
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Class-conditional Gaussians with a group-shifted proxy feature (`x0`) and
/// a mild group skew in the base rates. Each row also carries a uniform draw
/// that decides whether its label is corrupted if it lands in training.
fn biased_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, bias: f64, sep: f64) -> Vec<(Vec<f64>, u8, u8, f64)> {
    let p_pos = |g: u8| (0.5 + BASE_SKEW * bias * if g == 1 { 1.0 } else { -1.0 }).clamp(0.02, 0.98);
    (0..n)
        .map(|_| {
            let g = u8::from(rng.random_bool(0.5));
            let y = u8::from(rng.random_bool(p_pos(g)));
            let sign = if y == 1 { 1.0 } else { -1.0 };
            let mut x: Vec<f64> = (0..d)
                .map(|k| sign * sep / (1.0 + k as f64).sqrt() + normal(rng))
                .collect();
            x[0] += bias * PROXY_SHIFT * if g == 1 { 1.0 } else { -1.0 };
            (x, y, g, rng.random::<f64>())
        })
        .collect()
}

const BASE_SKEW: f64 = 0.05;
const PROXY_SHIFT: f64 = 0.75;
const FLIP_RATE: f64 = 0.2;

/// Group-correlated label noise on the training split only: disadvantaged
/// positives lose their label, advantaged negatives gain one. Validation and
/// test keep the clean labels.
fn corrupt_training_labels(ds: &mut Dataset, draws: &[f64], bias: f64) {
    let flip = (FLIP_RATE * bias).clamp(0.0, 0.45);
    for i in 0..ds.len() {
        if ds.split[i] != SplitTag::Train || draws[i] >= flip {
            continue;
        }
        match (ds.sensitive[i], ds.labels[i]) {
            (0, 1) => ds.labels[i] = 0,
            (1, 0) => ds.labels[i] = 1,
            _ => {}
        }
    }
}

fn feature_names(d: usize) -> Vec<String> {
    (0..d).map(|k| format!("x{k}")).collect()
}

/// Deterministic synthetic dataset with the default 4:1:1 split.
///
/// `symmetric` emits each point twice, once per group, with both copies in
/// the same split; `n` must then be even.
pub fn gen_synthetic(kind: SyntheticKind, n: usize, d: usize, bias_strength: f64, seed: u64) -> Result<Dataset> {
    if n < 12 {
        return Err(Error::InvalidArgument(format!("n must be >= 12 (got {n})")));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("d must be >= 1".into()));
    }
    if !bias_strength.is_finite() || bias_strength < 0.0 {
        return Err(Error::InvalidArgument(format!("bias_strength must be >= 0 (got {bias_strength})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let provenance = Provenance {
        source: format!("synthetic:{}", kind.as_str()),
        seed: Some(seed),
    };
    let from_rows = |rows: &[(Vec<f64>, u8, u8, f64)], d: usize| Dataset {
        feature_names: feature_names(d),
        features: rows.iter().map(|r| r.0.clone()).collect(),
        labels: rows.iter().map(|r| r.1).collect(),
        sensitive: rows.iter().map(|r| r.2).collect(),
        split: vec![SplitTag::Train; rows.len()],
        provenance: provenance.clone(),
    };
    let ds = match kind {
        SyntheticKind::BiasedGauss | SyntheticKind::Boundary2d => {
            let (d, sep) = if kind == SyntheticKind::Boundary2d { (2, 1.0) } else { (d, 0.6) };
            let rows = biased_rows(&mut rng, n, d, bias_strength, sep);
            let mut ds = split(&from_rows(&rows, d), DEFAULT_RATIOS, seed)?;
            let draws: Vec<f64> = rows.iter().map(|r| r.3).collect();
            corrupt_training_labels(&mut ds, &draws, bias_strength);
            ds
        }
        SyntheticKind::Symmetric => {
            if n % 2 != 0 {
                return Err(Error::InvalidArgument(format!("symmetric data needs an even n (got {n})")));
            }
            let pairs = n / 2;
            let counts = split_counts(pairs, DEFAULT_RATIOS)?;
            let mut rows = Vec::with_capacity(n);
            for _ in 0..pairs {
                let y = u8::from(rng.random_bool(0.5));
                let sign = if y == 1 { 1.0 } else { -1.0 };
                let x: Vec<f64> = (0..d)
                    .map(|k| sign * 0.6 / (1.0 + k as f64).sqrt() + normal(&mut rng))
                    .collect();
                rows.push((x.clone(), y, 0, 0.0));
                rows.push((x, y, 1, 0.0));
            }
            let mut order: Vec<usize> = (0..pairs).collect();
            order.shuffle(&mut rng);
            let mut pair_tag = vec![SplitTag::Train; pairs];
            for (pos, &p) in order.iter().enumerate() {
                if pos >= counts[0] + counts[1] {
                    pair_tag[p] = SplitTag::Test;
                } else if pos >= counts[0] {
                    pair_tag[p] = SplitTag::Validation;
                }
            }
            let mut ds = from_rows(&rows, d);
            ds.split = pair_tag.iter().flat_map(|&t| [t, t]).collect();
            ds
        }
    };
    ds.validate()?;
    Ok(ds)
}
