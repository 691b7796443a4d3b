//! Wide-CSV ingestion: `timestamp,<node>,<node>,...` with one row per step.
//!
//! Timestamps are epoch seconds on a uniform grid; empty cells (or `nan`)
//! mark missing observations. Single-channel only.

use std::path::Path;

use crate::data::Dataset;
use crate::error::DataError;

pub fn read_csv_dataset(path: &Path) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DataError::Invalid(format!("csv open: {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| DataError::Invalid(format!("csv header: {e}")))?
        .clone();
    if headers.len() < 2 || headers.get(0) != Some("timestamp") {
        return Err(DataError::Invalid(
            "csv must start with a 'timestamp' column followed by one column per node".into(),
        ));
    }
    let node_ids: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let nodes = node_ids.len();

    let mut values = Vec::new();
    let mut mask = Vec::new();
    let mut timestamps: Vec<i64> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Invalid(format!("csv row {}: {e}", line + 2)))?;
        if record.len() != nodes + 1 {
            return Err(DataError::Invalid(format!(
                "csv row {}: {} fields, expected {}",
                line + 2,
                record.len(),
                nodes + 1
            )));
        }
        let ts: i64 = record[0]
            .parse()
            .map_err(|_| DataError::Invalid(format!("csv row {}: bad timestamp '{}'", line + 2, &record[0])))?;
        timestamps.push(ts);
        for cell in record.iter().skip(1) {
            if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                values.push(0.0);
                mask.push(0);
            } else {
                let v: f32 = cell.parse().map_err(|_| {
                    DataError::Invalid(format!("csv row {}: bad value '{cell}'", line + 2))
                })?;
                values.push(v);
                mask.push(1);
            }
        }
    }
    if timestamps.len() < 2 {
        return Err(DataError::Invalid("csv needs at least two data rows".into()));
    }
    let interval = timestamps[1] - timestamps[0];
    if interval <= 0 || interval > u32::MAX as i64 {
        return Err(DataError::Invalid(format!("bad sampling interval {interval}s")));
    }
    let interval_seconds = interval as u32;
    for pair in timestamps.windows(2) {
        if pair[1] - pair[0] != interval {
            return Err(DataError::NonContiguousTimestamps {
                prev: pair[0],
                next: pair[1],
                interval: interval_seconds,
            });
        }
    }

    let ds = Dataset {
        t_total: timestamps.len(),
        nodes,
        channels: 1,
        start_epoch_seconds: timestamps[0],
        interval_seconds,
        zero_is_missing: false,
        node_ids,
        coordinates: None,
        values,
        mask,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn write_csv_dataset(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    if ds.channels != 1 {
        return Err(DataError::Invalid("csv export supports a single channel".into()));
    }
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| DataError::Invalid(format!("csv open: {e}")))?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(ds.node_ids.iter().cloned());
    writer
        .write_record(&header)
        .map_err(|e| DataError::Invalid(format!("csv write: {e}")))?;
    for t in 0..ds.t_total {
        let mut row = vec![ds.timestamp(t).to_string()];
        let (vals, mask) = ds.step_slice(t);
        for (v, m) in vals.iter().zip(mask) {
            row.push(if *m == 0 { String::new() } else { v.to_string() });
        }
        writer
            .write_record(&row)
            .map_err(|e| DataError::Invalid(format!("csv write: {e}")))?;
    }
    writer.flush()?;
    Ok(())
}
