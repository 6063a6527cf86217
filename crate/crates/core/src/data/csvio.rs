use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Mat;

const LABEL_COLUMN: &str = "label";

fn csv_err(path: &str, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::UnequalLengths { pos, expected_len, len } => Error::data(format!(
            "{path}: ragged row {}: expected {expected_len} fields, found {len}",
            pos.as_ref().map_or(0, |p| p.record())
        )),
        _ => Error::data(format!("{path}: {e}")),
    }
}

/// Parse a feature CSV: a header row, numeric feature columns, and an
/// optional trailing `label` column.
///
/// Data rows are numbered from 1 (the first row after the header).
pub fn read_feature_csv<R: Read>(reader: R, name: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_err(name, e))?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::data(format!("{name}: missing header row")));
    }
    if header.iter().all(|h| h.parse::<f64>().is_ok()) {
        return Err(Error::data(format!(
            "{name}: missing header row (first row is numeric)"
        )));
    }
    let has_label = header.iter().next_back() == Some(LABEL_COLUMN);
    let width = if has_label { header.len() - 1 } else { header.len() };
    if width == 0 {
        return Err(Error::data(format!("{name}: no feature columns")));
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| csv_err(name, e))?;
        if rec.len() != header.len() {
            return Err(Error::data(format!(
                "{name}: ragged row {row}: expected {} fields, found {}",
                header.len(),
                rec.len()
            )));
        }
        for (c, cell) in rec.iter().take(width).enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::data(format!(
                    "{name}: row {row}, column {}: `{cell}` is not a number",
                    &header[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::data(format!(
                    "{name}: row {row}, column {}: non-finite value `{cell}`",
                    &header[c]
                )));
            }
            data.push(v);
        }
        if has_label {
            let cell = &rec[width];
            let y: usize = cell
                .parse()
                .map_err(|_| Error::data(format!("{name}: row {row}: label `{cell}` is not a class id")))?;
            if y >= super::NUM_SEVERITY_CLASSES {
                return Err(Error::data(format!(
                    "{name}: row {row}: label {y} outside [0, {})",
                    super::NUM_SEVERITY_CLASSES
                )));
            }
            labels.push(y);
        }
    }
    let n = data.len() / width;
    Dataset::new(Mat::new(n, width, data)?, has_label.then_some(labels), name)
}

pub fn load_feature_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_feature_csv(file, &path.display().to_string())
}

/// Header `f0..f{F-1}[,label]`; floats use the shortest representation
/// that parses back to the same bits.
pub fn write_feature_csv_to<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let to_data = |e: csv::Error| Error::data(format!("writing feature CSV: {e}"));
    let mut header: Vec<String> = (0..ds.width()).map(|i| format!("f{i}")).collect();
    if ds.labels.is_some() {
        header.push(LABEL_COLUMN.to_string());
    }
    w.write_record(&header).map_err(to_data)?;
    for r in 0..ds.len() {
        let mut rec: Vec<String> = ds.features.row(r).iter().map(|v| format!("{v:?}")).collect();
        if let Some(l) = &ds.labels {
            rec.push(l[r].to_string());
        }
        w.write_record(&rec).map_err(to_data)?;
    }
    w.flush()
        .map_err(|e| Error::data(format!("writing feature CSV: {e}")))?;
    Ok(())
}

pub fn write_feature_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_feature_csv_to(ds, file).map_err(|e| match e {
        Error::Data(m) => Error::io(path, std::io::Error::other(m)),
        other => other,
    })
}
