//! Binary labeled datasets: loading (CSV and KEEL), class statistics,
//! min-max scaling and stratified hold-out splitting.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng;

/// A feature matrix with exactly two classes.
///
/// Labels are stored as indices into `class_names`, which is kept in
/// lexicographic order so the encoding does not depend on row order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    feature_names: Vec<String>,
    class_names: [String; 2],
    label_name: String,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        feature_names: Vec<String>,
        class_names: [String; 2],
        label_name: impl Into<String>,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if n < 2 {
            return Err(Error::InvalidDataset(format!("need at least 2 rows, got {n}")));
        }
        if d < 1 {
            return Err(Error::InvalidDataset("need at least 1 feature".into()));
        }
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
        }
        if feature_names.len() != d {
            return Err(Error::Shape(format!(
                "{} feature names for {d} columns",
                feature_names.len()
            )));
        }
        if class_names[0] >= class_names[1] {
            return Err(Error::InvalidDataset(format!(
                "class names must be distinct and sorted, got {:?}",
                class_names
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidDataset(format!("label index {bad} out of range")));
        }
        if !labels.contains(&0) || !labels.contains(&1) {
            return Err(Error::InvalidDataset("exactly two classes must be present".into()));
        }
        if let Some(((r, c), v)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite value {v} at row {r}, column {c}"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            feature_names,
            class_names,
            label_name: label_name.into(),
        })
    }

    /// Builds a dataset from textual class tags (any two distinct strings).
    pub fn from_named_labels<S: AsRef<str>>(
        features: Array2<f64>,
        labels: &[S],
        feature_names: Vec<String>,
        label_name: impl Into<String>,
    ) -> Result<Self> {
        let distinct: BTreeSet<&str> = labels.iter().map(AsRef::as_ref).collect();
        if distinct.len() > 2 {
            return Err(Error::InvalidDataset(format!(
                "more than two classes: {}",
                distinct.iter().cloned().collect::<Vec<_>>().join(", ")
            )));
        }
        if distinct.len() < 2 {
            return Err(Error::InvalidDataset("exactly two classes must be present".into()));
        }
        let mut it = distinct.into_iter();
        let class_names = [it.next().unwrap().to_string(), it.next().unwrap().to_string()];
        let encoded = labels
            .iter()
            .map(|l| usize::from(l.as_ref() == class_names[1]))
            .collect();
        Dataset::new(features, encoded, feature_names, class_names, label_name)
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn class_names(&self) -> &[String; 2] {
        &self.class_names
    }

    /// Header of the label column in the source file.
    pub fn label_name(&self) -> &str {
        &self.label_name
    }

    pub fn class_name(&self, label: usize) -> &str {
        &self.class_names[label]
    }

    pub fn count(&self, label: usize) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Row indices carrying `label`, ascending.
    pub fn indices_of(&self, label: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.labels[i] == label).collect()
    }

    /// Feature rows carrying `label`, in dataset order.
    pub fn class_rows(&self, label: usize) -> Array2<f64> {
        self.features.select(Axis(0), &self.indices_of(label))
    }

    /// Subset of rows, in the order given. The subset must still hold both classes.
    pub fn select(&self, rows: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.features.select(Axis(0), rows),
            rows.iter().map(|&r| self.labels[r]).collect(),
            self.feature_names.clone(),
            self.class_names.clone(),
            self.label_name.clone(),
        )
    }

    /// Same schema, new rows.
    pub fn with_rows(&self, features: Array2<f64>, labels: Vec<usize>) -> Result<Dataset> {
        Dataset::new(
            features,
            labels,
            self.feature_names.clone(),
            self.class_names.clone(),
            self.label_name.clone(),
        )
    }

    /// Replaces the feature matrix, keeping labels and schema.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Dataset> {
        if features.dim() != self.features.dim() {
            return Err(Error::Shape(format!(
                "expected {:?}, got {:?}",
                self.features.dim(),
                features.dim()
            )));
        }
        self.with_rows(features, self.labels.clone())
    }
}

/// Class counts and imbalance ratio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassStats {
    pub min_count: usize,
    pub maj_count: usize,
    /// `maj_count / min_count`.
    pub ir: f64,
    /// Label index of the minority class.
    pub minority: usize,
    pub minority_label: String,
}

impl ClassStats {
    pub fn majority(&self) -> usize {
        1 - self.minority
    }

    pub fn deficit(&self) -> usize {
        self.maj_count - self.min_count
    }
}

/// Minority is the rarer class; on a tie, the lexicographically smaller name
/// (label index 0, since class names are kept sorted).
pub fn class_stats(ds: &Dataset) -> ClassStats {
    let counts = [ds.count(0), ds.count(1)];
    let minority = if counts[1] < counts[0] { 1 } else { 0 };
    let (min_count, maj_count) = (counts[minority], counts[1 - minority]);
    ClassStats {
        min_count,
        maj_count,
        ir: maj_count as f64 / min_count as f64,
        minority,
        minority_label: ds.class_name(minority).to_string(),
    }
}

/// Where the label lives in a CSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Last,
    Index(usize),
    Name(String),
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    /// `last` selects the final column, integers select by 0-based index and
    /// anything else selects by header name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) if s == "last" => LabelColumn::Last,
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

fn is_missing(field: &str) -> bool {
    matches!(field, "" | "?" | "NA" | "NaN" | "nan" | "null")
}

fn parse_real(field: &str, line: usize, column: usize) -> Result<f64> {
    if is_missing(field) {
        return Err(Error::parse(line, Some(column), "missing value"));
    }
    let v: f64 = field
        .parse()
        .map_err(|_| Error::parse(line, Some(column), format!("not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, Some(column), format!("non-finite value: {field:?}")));
    }
    Ok(v)
}

pub fn load_csv(path: impl AsRef<Path>, label: &LabelColumn) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, label)
}

/// Reads a headed CSV. Every non-label column must parse as a real number.
pub fn read_csv<R: Read>(reader: R, label: &LabelColumn) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::parse(1, None, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::parse(1, None, "empty file or missing header row"));
    }
    if headers.len() < 2 {
        return Err(Error::parse(1, None, "need a label column and at least one feature"));
    }
    let label_idx = match label {
        LabelColumn::Last => headers.len() - 1,
        LabelColumn::Index(i) if *i < headers.len() => *i,
        LabelColumn::Index(i) => {
            return Err(Error::parse(1, None, format!("label column {i} out of range")))
        }
        LabelColumn::Name(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(1, None, format!("no column named {name:?}")))?,
    };

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::parse(line, None, e.to_string()))?;
        if record.len() != headers.len() {
            return Err(Error::parse(
                line,
                None,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        for (c, field) in record.iter().enumerate() {
            if c == label_idx {
                if is_missing(field) {
                    return Err(Error::parse(line, Some(c + 1), "missing label"));
                }
                labels.push(field.to_string());
            } else {
                values.push(parse_real(field, line, c + 1)?);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::parse(2, None, "no data rows"));
    }
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let features = Array2::from_shape_vec((labels.len(), feature_names.len()), values)
        .map_err(|e| Error::Shape(e.to_string()))?;
    Dataset::from_named_labels(features, &labels, feature_names, headers[label_idx].clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Keel,
}

impl DataFormat {
    /// `.dat` files are KEEL, everything else CSV.
    pub fn from_path(path: &Path) -> DataFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("dat") => DataFormat::Keel,
            _ => DataFormat::Csv,
        }
    }
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(DataFormat::Csv),
            "keel" | "dat" => Ok(DataFormat::Keel),
            _ => Err(Error::InvalidConfig(format!("unknown format {s:?}"))),
        }
    }
}

/// Loads a dataset, guessing the format from the extension when `format` is `None`.
/// The label column only applies to CSV.
pub fn load(path: impl AsRef<Path>, format: Option<DataFormat>, label: &LabelColumn) -> Result<Dataset> {
    let path = path.as_ref();
    match format.unwrap_or_else(|| DataFormat::from_path(path)) {
        DataFormat::Csv => load_csv(path, label),
        DataFormat::Keel => load_keel(path),
    }
}

/// Writes a headed CSV with the label last, optionally followed by one extra
/// text column. Values use the shortest representation that parses back exactly.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W, extra: Option<(&str, &[String])>) -> Result<()> {
    let wrap = |e: csv::Error| Error::Report(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = ds.feature_names().iter().map(String::as_str).collect();
    header.push(ds.label_name());
    if let Some((name, values)) = extra {
        if values.len() != ds.n() {
            return Err(Error::Shape(format!("{} extra values for {} rows", values.len(), ds.n())));
        }
        header.push(name);
    }
    w.write_record(&header).map_err(wrap)?;
    for (i, row) in ds.features().rows().into_iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(ds.class_name(ds.labels()[i]).to_string());
        if let Some((_, values)) = extra {
            rec.push(values[i].clone());
        }
        w.write_record(&rec).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::Report(e.to_string()))
}

pub fn load_keel(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_keel(&text)
}

#[derive(Debug)]
struct KeelAttribute {
    name: String,
    numeric: bool,
}

fn split_keel_names(list: &str) -> Vec<String> {
    list.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Parses the KEEL `.dat` convention: `@relation`, `@attribute`, optional
/// `@inputs` / `@outputs`, then `@data` followed by comma-separated rows.
/// Without `@outputs`, the last attribute is the label.
pub fn parse_keel(text: &str) -> Result<Dataset> {
    let mut attributes: Vec<KeelAttribute> = Vec::new();
    let mut inputs: Option<Vec<String>> = None;
    let mut outputs: Option<Vec<String>> = None;
    let mut data_start = None;

    let lines: Vec<&str> = text.lines().collect();
    for (i, raw) in lines.iter().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        if !line.starts_with('@') {
            return Err(Error::parse(i + 1, None, "data row before @data marker"));
        }
        let (keyword, rest) = match line.find(char::is_whitespace) {
            Some(p) => (&line[..p], line[p..].trim()),
            None => (line, ""),
        };
        match keyword.to_ascii_lowercase().as_str() {
            "@relation" => {}
            "@attribute" => attributes.push(parse_keel_attribute(rest, i + 1)?),
            "@inputs" | "@input" => inputs = Some(split_keel_names(rest)),
            "@outputs" | "@output" => outputs = Some(split_keel_names(rest)),
            "@data" => {
                data_start = Some(i + 1);
                break;
            }
            other => return Err(Error::parse(i + 1, None, format!("unknown header keyword {other}"))),
        }
    }
    let data_start = data_start.ok_or_else(|| Error::parse(lines.len().max(1), None, "missing @data marker"))?;
    if attributes.len() < 2 {
        return Err(Error::parse(data_start, None, "need at least two @attribute lines"));
    }

    let position = |name: &str| -> Result<usize> {
        attributes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::parse(data_start, None, format!("undeclared attribute {name:?}")))
    };
    let label_idx = match &outputs {
        Some(o) if o.len() == 1 => position(&o[0])?,
        Some(o) => {
            return Err(Error::parse(data_start, None, format!("expected one output attribute, found {}", o.len())))
        }
        None => attributes.len() - 1,
    };
    let input_idx: Vec<usize> = match &inputs {
        Some(names) => names.iter().map(|n| position(n)).collect::<Result<_>>()?,
        None => (0..attributes.len()).filter(|&c| c != label_idx).collect(),
    };
    if input_idx.contains(&label_idx) {
        return Err(Error::parse(data_start, None, "label attribute listed among inputs"));
    }
    if let Some(&c) = input_idx.iter().find(|&&c| !attributes[c].numeric) {
        return Err(Error::parse(
            data_start,
            None,
            format!("nominal input attribute {:?} is not supported", attributes[c].name),
        ));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, raw) in lines.iter().enumerate().skip(data_start) {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != attributes.len() {
            return Err(Error::parse(
                i + 1,
                None,
                format!("expected {} fields, found {}", attributes.len(), fields.len()),
            ));
        }
        for &c in &input_idx {
            values.push(parse_real(fields[c], i + 1, c + 1)?);
        }
        if is_missing(fields[label_idx]) {
            return Err(Error::parse(i + 1, Some(label_idx + 1), "missing label"));
        }
        labels.push(fields[label_idx].to_string());
    }
    if labels.is_empty() {
        return Err(Error::parse(data_start, None, "no data rows after @data"));
    }
    let feature_names: Vec<String> = input_idx.iter().map(|&c| attributes[c].name.clone()).collect();
    let features = Array2::from_shape_vec((labels.len(), feature_names.len()), values)
        .map_err(|e| Error::Shape(e.to_string()))?;
    Dataset::from_named_labels(features, &labels, feature_names, attributes[label_idx].name.clone())
}

fn parse_keel_attribute(rest: &str, line: usize) -> Result<KeelAttribute> {
    let rest = rest.trim();
    if rest.is_empty() {
        return Err(Error::parse(line, None, "malformed @attribute"));
    }
    let (name, spec) = if let Some(stripped) = rest.strip_prefix('\'') {
        let end = stripped
            .find('\'')
            .ok_or_else(|| Error::parse(line, None, "unterminated quoted attribute name"))?;
        (stripped[..end].to_string(), stripped[end + 1..].trim())
    } else {
        match rest.find(|c: char| c.is_whitespace() || c == '{') {
            Some(p) => (rest[..p].to_string(), rest[p..].trim()),
            None => return Err(Error::parse(line, None, "attribute without a type")),
        }
    };
    let lower = spec.to_ascii_lowercase();
    let numeric = if spec.starts_with('{') {
        false
    } else if lower.starts_with("real") || lower.starts_with("integer") || lower.starts_with("numeric") {
        true
    } else {
        return Err(Error::parse(line, None, format!("unsupported attribute type {spec:?}")));
    };
    Ok(KeelAttribute { name, numeric })
}

/// Per-feature min-max scaler.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaler {
    pub fn fit(x: &Array2<f64>) -> Scaler {
        let mut min = vec![f64::INFINITY; x.ncols()];
        let mut max = vec![f64::NEG_INFINITY; x.ncols()];
        for row in x.rows() {
            for (f, &v) in row.iter().enumerate() {
                min[f] = min[f].min(v);
                max[f] = max[f].max(v);
            }
        }
        Scaler { min, max }
    }

    /// Constant features (max == min) map to 0.
    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for (f, v) in row.iter_mut().enumerate() {
                let range = self.max[f] - self.min[f];
                *v = if range > 0.0 { (*v - self.min[f]) / range } else { 0.0 };
            }
        }
        out
    }

    pub fn inverse_transform(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for (f, v) in row.iter_mut().enumerate() {
                let range = self.max[f] - self.min[f];
                *v = self.min[f] + *v * range;
            }
        }
        out
    }
}

pub fn normalize_minmax(ds: &Dataset) -> (Dataset, Scaler) {
    let scaler = Scaler::fit(ds.features());
    let scaled = ds
        .with_features(scaler.transform(ds.features()))
        .expect("scaling preserves shape and finiteness");
    (scaled, scaler)
}

/// Row indices of a stratified split, each side ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Each class contributes `round(count * train_fraction)` rows to train and
/// the rest to test; membership is drawn by a seeded shuffle per class.
pub fn stratified_split_indices(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut rng = rng::from_seed(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in 0..2 {
        let mut idx = ds.indices_of(label);
        let count = idx.len();
        let n_train = (count as f64 * train_fraction).round() as usize;
        if n_train == 0 || n_train >= count {
            return Err(Error::InvalidConfig(format!(
                "class {:?} with {count} rows gets {n_train} train / {} test rows at fraction {train_fraction}",
                ds.class_name(label),
                count.saturating_sub(n_train)
            )));
        }
        idx.shuffle(&mut rng);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

pub fn stratified_split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let split = stratified_split_indices(ds, train_fraction, seed)?;
    Ok((ds.select(&split.train)?, ds.select(&split.test)?))
}
