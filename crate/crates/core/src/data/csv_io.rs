use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{byte_to_unit, DataError, Dataset};
use crate::atomic::write_atomic;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsvScale {
    /// Values are used as written and must already lie in [−1, 1].
    #[default]
    Unit,
    /// Values are pixel intensities in [0, 255], mapped linearly to [−1, 1].
    Byte,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsvOptions {
    /// `None` detects a header from a non-numeric first row.
    pub has_header: Option<bool>,
    /// First column is an integer class label.
    pub label_column: bool,
    /// Record shape; defaults to a flat vector of the row width.
    pub record_shape: Option<Vec<usize>>,
    pub scale: CsvScale,
}

pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path)?;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    let mut rows = 0usize;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 1);
        if i == 0 {
            let numeric = rec.iter().all(|f| f.trim().parse::<f64>().is_ok());
            match opts.has_header {
                Some(true) => continue,
                None if !numeric => continue,
                _ => {}
            }
        }
        let mut fields = rec.iter();
        if opts.label_column {
            let raw = fields.next().ok_or_else(|| DataError::Row { row: line, detail: "missing label".into() })?;
            let label = raw
                .trim()
                .parse::<u32>()
                .map_err(|_| DataError::Row { row: line, detail: format!("label `{raw}` is not a non-negative integer") })?;
            labels.push(label);
        }
        let start = values.len();
        for f in fields {
            let v: f64 = f.trim().parse().map_err(|_| DataError::Row { row: line, detail: format!("`{f}` is not a number") })?;
            let v = match opts.scale {
                CsvScale::Unit => {
                    if !(-1.0..=1.0).contains(&v) {
                        return Err(DataError::Row { row: line, detail: format!("value {v} outside [-1, 1]") });
                    }
                    v
                }
                CsvScale::Byte => {
                    if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                        return Err(DataError::Row { row: line, detail: format!("value {v} is not a byte intensity") });
                    }
                    byte_to_unit(v as u8)
                }
            };
            values.push(v);
        }
        let w = values.len() - start;
        match width {
            None if w == 0 => return Err(DataError::Row { row: line, detail: "row has no values".into() }),
            None => width = Some(w),
            Some(expected) if expected != w => {
                return Err(DataError::Row { row: line, detail: format!("ragged row: {w} values, expected {expected}") })
            }
            _ => {}
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| DataError::Invalid("CSV file has no data rows".into()))?;
    let record = opts.record_shape.clone().unwrap_or_else(|| vec![width]);
    if record.iter().product::<usize>() != width {
        return Err(DataError::Invalid(format!("record shape {record:?} does not hold {width} values")));
    }
    let mut shape = vec![rows];
    shape.extend(record);
    Dataset::new(Tensor::new(shape, values)?, opts.label_column.then_some(labels))
}

/// Writes one row per record with a header; labels go first when present.
/// Values are written in shortest round-trip form, so reloading with
/// [`CsvScale::Unit`] is exact.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    {
        let width = ds.records().row_len();
        let mut header: Vec<String> = Vec::with_capacity(width + 1);
        if ds.labels().is_some() {
            header.push("label".into());
        }
        header.extend((0..width).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for i in 0..ds.len() {
            let mut row: Vec<String> = Vec::with_capacity(width + 1);
            if let Some(l) = ds.labels() {
                row.push(l[i].to_string());
            }
            row.extend(ds.record(i).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| DataError::Io(e.into_error()))?;
    Ok(write_atomic(path, &bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SyntheticSpec};

    #[test]
    fn hundred_rows_hundred_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let body: String = (0..100).map(|i| format!("{},{}\n", i % 3, (i as f64) / 200.0)).collect();
        std::fs::write(&p, body).unwrap();
        let ds = load_csv(&p, &CsvOptions { label_column: true, ..Default::default() }).unwrap();
        assert_eq!(ds.len(), 100);
        assert_eq!(ds.record_shape(), &[1]);
        assert_eq!(ds.labels().unwrap()[5], 2);
    }

    #[test]
    fn header_detection_and_byte_scale() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "a,b\n0,255\n\"128\",64\n").unwrap();
        let ds = load_csv(&p, &CsvOptions { scale: CsvScale::Byte, ..Default::default() }).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.record(0), &[-1.0, 1.0]);
    }

    #[test]
    fn ragged_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "0.1,0.2\n0.3,0.4\n0.5\n").unwrap();
        match load_csv(&p, &CsvOptions::default()) {
            Err(DataError::Row { row, detail }) => {
                assert_eq!(row, 3);
                assert!(detail.contains("ragged"));
            }
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_values_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "0.1,2.0\n").unwrap();
        assert!(matches!(load_csv(&p, &CsvOptions::default()), Err(DataError::Row { row: 1, .. })));
    }

    #[test]
    fn export_import_is_exact() {
        let ds = synth_generate(&SyntheticSpec::ring(8, 0.8, 0.05, 64, 3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ring.csv");
        save_csv(&ds, &p).unwrap();
        let back = load_csv(&p, &CsvOptions { label_column: true, ..Default::default() }).unwrap();
        assert_eq!(back, ds);
    }
}
