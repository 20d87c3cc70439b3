//! UCR-style delimited time series: one series per line, label first.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::Dataset;

fn line_err(line: usize, message: impl Into<String>) -> Error {
    Error::ParseLine {
        line,
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Delimiter {
    Tab,
    Comma,
    Whitespace,
}

impl Delimiter {
    fn detect(line: &str) -> Self {
        if line.contains('\t') {
            Delimiter::Tab
        } else if line.contains(',') {
            Delimiter::Comma
        } else {
            Delimiter::Whitespace
        }
    }

    fn split<'a>(self, line: &'a str) -> Box<dyn Iterator<Item = &'a str> + 'a> {
        match self {
            Delimiter::Tab => Box::new(line.split('\t').map(str::trim)),
            Delimiter::Comma => Box::new(line.split(',').map(str::trim)),
            Delimiter::Whitespace => Box::new(line.split_whitespace()),
        }
    }
}

/// Parses UCR text. Labels are remapped to `0..C` in order of first
/// appearance; line numbers in errors are 1-based.
pub fn parse_ucr<T: Scalar>(text: &str) -> Result<Dataset<T>> {
    let mut label_ids = HashMap::new();
    parse_with(text, &mut label_ids, true)
}

/// Parses a train/test pair so that both share the training label mapping.
/// A test label never seen in training is an error.
pub fn parse_ucr_pair<T: Scalar>(train: &str, test: &str) -> Result<(Dataset<T>, Dataset<T>)> {
    let mut label_ids = HashMap::new();
    let train = parse_with(train, &mut label_ids, true)?;
    let mut test = parse_with(test, &mut label_ids, false)?;
    test.classes = train.classes;
    if test.item_shape() != train.item_shape() {
        return Err(Error::Data(format!(
            "test series have shape {:?}, training series {:?}",
            test.item_shape(),
            train.item_shape()
        )));
    }
    Ok((train, test))
}

fn parse_with<T: Scalar>(text: &str, label_ids: &mut HashMap<u64, usize>, grow: bool) -> Result<Dataset<T>> {
    let mut delim = None;
    let mut labels = Vec::new();
    let mut values: Vec<T> = Vec::new();
    let mut length = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let d = *delim.get_or_insert_with(|| Delimiter::detect(line));
        let mut fields = d.split(line);
        let label_field = fields.next().unwrap_or_default();
        let label: f64 = label_field
            .parse()
            .ok()
            .filter(|l: &f64| l.is_finite())
            .ok_or_else(|| line_err(line_no, format!("label {label_field:?} is not numeric")))?;
        let next_id = label_ids.len();
        // -0.0 and 0.0 are the same class
        let key = (label + 0.0).to_bits();
        let id = match label_ids.get(&key) {
            Some(&id) => id,
            None if grow => *label_ids.entry(key).or_insert(next_id),
            None => return Err(line_err(line_no, format!("label {label_field} does not occur in the training file"))),
        };
        labels.push(id);
        let mut count = 0;
        for (j, f) in fields.enumerate() {
            let v: f64 = f
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| line_err(line_no, format!("field {} ({f:?}) is not a finite number", j + 2)))?;
            values.push(T::lit(v));
            count += 1;
        }
        match length {
            None if count == 0 => return Err(line_err(line_no, "series has no values")),
            None => length = Some(count),
            Some(l) if l != count => {
                return Err(line_err(line_no, format!("series has {count} values, expected {l}")));
            }
            _ => {}
        }
    }
    let Some(len) = length else {
        return Err(Error::Data("no series found".into()));
    };
    let n = labels.len();
    let classes = label_ids.len();
    Dataset::new(Tensor::from_vec(&[n, 1, len], values)?, labels, classes)
}

pub fn read_ucr<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    parse_ucr(&std::fs::read_to_string(path)?)
}

pub fn read_ucr_pair<T: Scalar>(train: impl AsRef<Path>, test: impl AsRef<Path>) -> Result<(Dataset<T>, Dataset<T>)> {
    parse_ucr_pair(&std::fs::read_to_string(train)?, &std::fs::read_to_string(test)?)
}

/// Writes series as comma-separated text with the class index first.
pub fn format_ucr<T: Scalar>(inputs: &Tensor<T>, labels: &[usize]) -> String {
    let mut out = String::new();
    for (i, y) in labels.iter().enumerate() {
        out.push_str(&y.to_string());
        for v in inputs.item(i) {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}
