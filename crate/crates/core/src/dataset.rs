//! Demonstration samples: one row per control tick with the raw features and
//! the wheel angle the expert asked for.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::features::FEATURE_COUNT;
use crate::trace::RunTrace;

pub const DATASET_HEADER: [&str; 10] =
    ["run_id", "t", "f1", "f2", "f3", "f4", "f5", "f6", "f7", "target_wheel_angle_rad"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Open { path: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("bad header: expected {expected:?}, found {found:?}")]
    Header { expected: String, found: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub run_id: u32,
    pub t: f64,
    pub features: [f64; FEATURE_COUNT],
    /// rad
    pub target: f64,
}

pub fn samples_from_trace(trace: &RunTrace) -> impl Iterator<Item = Sample> + '_ {
    trace.records.iter().map(|r| Sample {
        run_id: trace.run_id,
        t: r.t,
        features: r.frame.to_array(),
        target: r.target,
    })
}

pub fn write_dataset<W: Write>(out: W, samples: &[Sample]) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DATASET_HEADER)?;
    let mut rec = Vec::with_capacity(DATASET_HEADER.len());
    for s in samples {
        rec.clear();
        rec.push(s.run_id.to_string());
        rec.push(s.t.to_string());
        rec.extend(s.features.iter().map(f64::to_string));
        rec.push(s.target.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Row numbers in errors count the header as row 1.
pub fn read_dataset<R: Read>(input: R) -> Result<Vec<Sample>, DatasetError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(DATASET_HEADER) {
        return Err(DatasetError::Header {
            expected: DATASET_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| DatasetError::Row { row, msg: e.to_string() })?;
        let field = |k: usize| rec.get(k).unwrap_or("").trim();
        let num = |k: usize| -> Result<f64, DatasetError> {
            let v = field(k).parse::<f64>().map_err(|_| DatasetError::Row {
                row,
                msg: format!("{} = {:?} is not a number", DATASET_HEADER[k], field(k)),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(DatasetError::Row { row, msg: format!("{} is not finite", DATASET_HEADER[k]) })
            }
        };
        let run_id = field(0).parse::<u32>().map_err(|_| DatasetError::Row {
            row,
            msg: format!("run_id = {:?} is not a run number", field(0)),
        })?;
        let mut features = [0.0; FEATURE_COUNT];
        for (j, f) in features.iter_mut().enumerate() {
            *f = num(2 + j)?;
        }
        out.push(Sample { run_id, t: num(1)?, features, target: num(9)? });
    }
    Ok(out)
}

pub fn save_dataset(path: &Path, samples: &[Sample]) -> Result<(), DatasetError> {
    let f = File::create(path).map_err(|source| DatasetError::Open { path: path.display().to_string(), source })?;
    write_dataset(BufWriter::new(f), samples)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Sample>, DatasetError> {
    let f = File::open(path).map_err(|source| DatasetError::Open { path: path.display().to_string(), source })?;
    read_dataset(BufReader::new(f))
}

/// Distinct run ids in first-seen order.
pub fn run_ids(samples: &[Sample]) -> Vec<u32> {
    let mut seen = std::collections::BTreeSet::new();
    samples.iter().map(|s| s.run_id).filter(|id| seen.insert(*id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(run_id: u32, t: f64) -> Sample {
        Sample { run_id, t, features: [1.0, 3.5, 0.1, 42.5, 1.5707963267948966, -0.01, 0.3], target: 0.123456789 }
    }

    #[test]
    fn round_trip_is_exact() {
        let data = vec![sample(0, 0.0), sample(0, 1.0 / 30.0), sample(7, 0.1)];
        let mut buf = Vec::new();
        write_dataset(&mut buf, &data).unwrap();
        assert!(buf.starts_with(b"run_id,t,f1,f2,f3,f4,f5,f6,f7,target_wheel_angle_rad\n"));
        assert_eq!(read_dataset(&buf[..]).unwrap(), data);
        assert_eq!(run_ids(&data), vec![0, 7]);
    }

    #[test]
    fn reports_row_of_bad_value() {
        let mut buf = Vec::new();
        write_dataset(&mut buf, &[sample(0, 0.0)]).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text.push_str("1,0,1,2,3,4,five,6,7,8\n");
        match read_dataset(text.as_bytes()) {
            Err(DatasetError::Row { row, msg }) => {
                assert_eq!(row, 3);
                assert!(msg.contains("f5"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        let nan = "run_id,t,f1,f2,f3,f4,f5,f6,f7,target_wheel_angle_rad\n0,0,1,2,3,4,5,6,7,NaN\n";
        assert!(matches!(read_dataset(nan.as_bytes()), Err(DatasetError::Row { row: 2, .. })));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_dataset(Path::new("/nonexistent/train.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/train.csv"));
    }
}
