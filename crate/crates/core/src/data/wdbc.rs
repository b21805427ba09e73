//! The WDBC diagnostic CSV: `id, M|B, 30 features`.

use std::fs;
use std::path::Path;

use super::{Dataset, DatasetId, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WDBC_FEATURES: usize = 30;

/// Loads the WDBC file. Malignant is label 1, benign label 0. A leading
/// non-numeric header line is skipped.
pub fn load_wdbc(path: &Path) -> Result<Dataset> {
    parse_wdbc(&fs::read_to_string(path)?)
}

pub(crate) fn parse_wdbc(text: &str) -> Result<Dataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if line == 1 && fields.get(2).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let err = |message: String| Error::Parse { line, message };
        if fields.len() != WDBC_FEATURES + 2 {
            return Err(err(format!("expected {} fields, found {}", WDBC_FEATURES + 2, fields.len())));
        }
        labels.push(match fields[1] {
            "M" => 1,
            "B" => 0,
            other => return Err(err(format!("diagnosis {other:?} is neither M nor B"))),
        });
        for (j, f) in fields[2..].iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| err(format!("feature {} is not a number: {f:?}", j + 1)))?;
            if !v.is_finite() {
                return Err(err(format!("feature {} is not finite", j + 1)));
            }
            data.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::Format("no WDBC rows found".into()));
    }
    let features = Tensor::new(&[labels.len(), WDBC_FEATURES], data)?;
    Dataset::new(features, labels, DatasetId::Wdbc.class_names(), Split::Full)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: usize, diag: &str) -> String {
        let feats: Vec<String> = (0..WDBC_FEATURES).map(|j| format!("{}.5", j + id)).collect();
        format!("{id},{diag},{}", feats.join(","))
    }

    #[test]
    fn parses_rows_and_header() {
        let text = format!("id,diagnosis,{}\n{}\n{}\n", vec!["f"; 30].join(","), row(1, "M"), row(2, "B"));
        let ds = parse_wdbc(&text).unwrap();
        assert_eq!(ds.labels(), &[1, 0]);
        assert_eq!(ds.features().shape(), &[2, 30]);
        assert_eq!(ds.features().at(1, 0), 2.5);
    }

    #[test]
    fn reports_line_numbers() {
        let mut short = row(2, "B");
        short.truncate(short.rfind(',').unwrap());
        let text = format!("{}\n{short}\n", row(1, "M"));
        assert!(matches!(parse_wdbc(&text), Err(Error::Parse { line: 2, .. })));

        let text = format!("{}\n{}\n", row(1, "M"), row(2, "X"));
        assert!(matches!(parse_wdbc(&text), Err(Error::Parse { line: 2, .. })));

        let text = format!("{}\n{}\n", row(1, "M"), row(2, "B").replace("2.5", "abc"));
        assert!(matches!(parse_wdbc(&text), Err(Error::Parse { line: 2, .. })));
    }
}
