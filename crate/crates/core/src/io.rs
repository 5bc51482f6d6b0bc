//! Record ingestion and storage: CSV with a JSON sidecar, or a raw f32 blob.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{Record, ECG_CHANNEL};

/// Dataset descriptor for one record: which columns to read and at what rate.
/// Stored verbatim as the JSON sidecar next to each data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSchema {
    pub subject_id: String,
    pub dataset_id: String,
    pub sample_rate_hz: f64,
    /// Channel columns to ingest; `ecg` (if present) is listed last.
    pub channels: Vec<String>,
}

impl RecordSchema {
    pub fn for_record(record: &Record) -> Self {
        let mut channels: Vec<String> =
            record.channels.iter().map(|(n, _)| n.clone()).collect();
        if record.ecg.is_some() {
            channels.push(ECG_CHANNEL.to_string());
        }
        RecordSchema {
            subject_id: record.subject_id.clone(),
            dataset_id: record.dataset_id.clone(),
            sample_rate_hz: record.sample_rate_hz,
            channels,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

/// Sidecar path for a record data file (`foo.csv` -> `foo.json`).
pub fn sidecar_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("json")
}

/// Load a record from CSV given its schema.
///
/// The CSV must carry a header row; every channel the schema declares must
/// appear in it. Cells are parsed as decimal floats; the first bad cell is
/// reported with its 1-based data row number.
pub fn load_record_csv(path: &Path, schema: &RecordSchema) -> Result<Record> {
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();

    let header = match lines.next() {
        Some(line) => line?,
        None => return Err(Error::EmptyRecord(format!("{} has no header", path.display()))),
    };
    let columns: Vec<&str> = header.trim_end().split(',').map(str::trim).collect();

    let mut col_index = Vec::with_capacity(schema.channels.len());
    for name in &schema.channels {
        match columns.iter().position(|c| c == name) {
            Some(i) => col_index.push(i),
            None => {
                return Err(Error::Schema(format!(
                    "declared column {name:?} missing from {}",
                    path.display()
                )))
            }
        }
    }

    let mut series: Vec<Vec<f64>> = vec![Vec::new(); schema.channels.len()];
    let mut row = 0usize;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        row += 1;
        let cells: Vec<&str> = line.trim_end().split(',').map(str::trim).collect();
        for (k, &ci) in col_index.iter().enumerate() {
            let cell = cells.get(ci).ok_or_else(|| Error::Parse {
                row,
                msg: format!("row has {} cells, column {} out of range", cells.len(), ci),
            })?;
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("cannot parse {cell:?} in column {:?}", schema.channels[k]),
            })?;
            series[k].push(value);
        }
    }
    if row == 0 {
        return Err(Error::EmptyRecord(format!("{} has no data rows", path.display())));
    }

    build_record(schema, series)
}

fn build_record(schema: &RecordSchema, mut series: Vec<Vec<f64>>) -> Result<Record> {
    let mut ecg = None;
    let mut channels = Vec::new();
    for (name, samples) in schema.channels.iter().zip(series.drain(..)) {
        if name == ECG_CHANNEL {
            ecg = Some(samples);
        } else {
            channels.push((name.clone(), samples));
        }
    }
    Record::new(
        schema.subject_id.clone(),
        schema.dataset_id.clone(),
        schema.sample_rate_hz,
        channels,
        ecg,
    )
}

/// Write a record as CSV (header of channel names, one sample per row) and
/// its JSON sidecar. Values print in shortest round-trip form, so a reload
/// reproduces the record bit-exactly.
pub fn save_record_csv(record: &Record, path: &Path) -> Result<()> {
    let schema = RecordSchema::for_record(record);
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", schema.channels.join(","))?;

    let mut columns: Vec<&[f64]> = record.channels.iter().map(|(_, s)| s.as_slice()).collect();
    if let Some(ecg) = &record.ecg {
        columns.push(ecg.as_slice());
    }
    let mut line = String::new();
    for i in 0..record.len() {
        line.clear();
        for (k, col) in columns.iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            line.push_str(&format!("{}", col[i]));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    schema.save(&sidecar_path(path))?;
    Ok(())
}

/// Write a record as a little-endian f32 blob (channels concatenated in
/// sidecar order) plus its JSON sidecar.
pub fn save_record_f32(record: &Record, path: &Path) -> Result<()> {
    let schema = RecordSchema::for_record(record);
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let mut write_channel = |samples: &[f64]| -> Result<()> {
        for &x in samples {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
        Ok(())
    };
    for (_, samples) in &record.channels {
        write_channel(samples)?;
    }
    if let Some(ecg) = &record.ecg {
        write_channel(ecg)?;
    }
    w.flush()?;
    schema.save(&sidecar_path(path))?;
    Ok(())
}

/// Load a record from an f32 blob given its schema.
pub fn load_record_f32(path: &Path, schema: &RecordSchema) -> Result<Record> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.is_empty() {
        return Err(Error::EmptyRecord(format!("{} is empty", path.display())));
    }
    let n_channels = schema.channels.len();
    if n_channels == 0 {
        return Err(Error::Schema("schema declares no channels".into()));
    }
    let total = bytes.len() / 4;
    if bytes.len() % 4 != 0 || total % n_channels != 0 {
        return Err(Error::Schema(format!(
            "{}: {} bytes do not divide into {} f32 channels",
            path.display(),
            bytes.len(),
            n_channels
        )));
    }
    let per_channel = total / n_channels;
    let mut series = Vec::with_capacity(n_channels);
    for c in 0..n_channels {
        let mut samples = Vec::with_capacity(per_channel);
        for i in 0..per_channel {
            let off = (c * per_channel + i) * 4;
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            samples.push(v as f64);
        }
        series.push(samples);
    }
    build_record(schema, series)
}

/// Load a record from `path` (`.csv` or `.f32`), reading the sidecar next to it.
pub fn load_record(path: &Path) -> Result<Record> {
    let schema = RecordSchema::load(&sidecar_path(path))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => load_record_csv(path, &schema),
        Some("f32") => load_record_f32(path, &schema),
        other => Err(Error::Config(format!(
            "unsupported record extension {other:?} for {}",
            path.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record() -> Record {
        Record::new(
            "s0",
            "unit",
            64.0,
            vec![
                ("acc_z".to_string(), vec![0.25, -1.5, 3.0e-7]),
                ("acc_x".to_string(), vec![1.0, 2.0, 3.0]),
            ],
            Some(vec![0.0, 1.0, 0.5]),
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s0.csv");
        let record = sample_record();
        save_record_csv(&record, &path).unwrap();
        let loaded = load_record(&path).unwrap();
        assert_eq!(loaded, record);
    }

    #[test]
    fn f32_round_trip_at_stored_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s0.f32");
        let record = sample_record();
        save_record_f32(&record, &path).unwrap();
        let loaded = load_record(&path).unwrap();
        assert_eq!(loaded.len(), record.len());
        for ((_, a), (_, b)) in loaded.channels.iter().zip(record.channels.iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
    }

    #[test]
    fn missing_declared_column_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s0.csv");
        fs::write(&path, "acc_z,ecg\n1,2\n").unwrap();
        let schema = RecordSchema {
            subject_id: "s0".into(),
            dataset_id: "unit".into(),
            sample_rate_hz: 64.0,
            channels: vec!["acc_z".into(), "gyr_x".into()],
        };
        let err = load_record_csv(&path, &schema).unwrap_err();
        match err {
            Error::Schema(msg) => assert!(msg.contains("gyr_x"), "{msg}"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn bad_cell_reports_row_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s0.csv");
        fs::write(&path, "acc_z\n1.0\nnope\n").unwrap();
        let schema = RecordSchema {
            subject_id: "s0".into(),
            dataset_id: "unit".into(),
            sample_rate_hz: 64.0,
            channels: vec!["acc_z".into()],
        };
        match load_record_csv(&path, &schema).unwrap_err() {
            Error::Parse { row, .. } => assert_eq!(row, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn zero_rows_is_empty_record_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s0.csv");
        fs::write(&path, "acc_z\n").unwrap();
        let schema = RecordSchema {
            subject_id: "s0".into(),
            dataset_id: "unit".into(),
            sample_rate_hz: 64.0,
            channels: vec!["acc_z".into()],
        };
        assert!(matches!(
            load_record_csv(&path, &schema),
            Err(Error::EmptyRecord(_))
        ));
    }

    #[test]
    fn minimal_csv_with_declared_rate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s0.csv");
        fs::write(&path, "acc_z,ecg\n0.1,1\n0.2,0\n0.3,1\n").unwrap();
        let schema = RecordSchema {
            subject_id: "s0".into(),
            dataset_id: "unit".into(),
            sample_rate_hz: 64.0,
            channels: vec!["acc_z".into(), "ecg".into()],
        };
        let record = load_record_csv(&path, &schema).unwrap();
        assert_eq!(record.channels.len(), 1);
        assert_eq!(record.len(), 3);
        assert!(record.ecg.is_some());
        assert_eq!(record.sample_rate_hz, 64.0);
    }
}
