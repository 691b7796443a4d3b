//! Dataset ingestion, chronological splitting, and windowing.

mod stts;
mod synth;
mod table;

pub use stts::{parse_stts, read_stts, serialize_stts, write_stts};
pub use synth::{generate_synthetic, generate_with_graph, SyntheticConfig, SyntheticOutput};
pub use table::{read_csv_dataset, write_csv_dataset};

use std::ops::Range;
use std::path::Path;

use crate::error::DataError;

/// In-memory traffic series: `t_total × nodes × channels` row-major values
/// plus an observed mask (1 = observed) and uniform timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub values: Vec<f32>,
    pub mask: Vec<u8>,
    pub t_total: usize,
    pub nodes: usize,
    pub channels: usize,
    pub start_epoch_seconds: i64,
    pub interval_seconds: u32,
    pub zero_is_missing: bool,
    pub node_ids: Vec<String>,
    pub coordinates: Option<Vec<[f64; 2]>>,
}

impl Dataset {
    pub fn validate(&self) -> Result<(), DataError> {
        let expected = self.t_total * self.nodes * self.channels;
        if self.values.len() != expected || self.mask.len() != expected {
            return Err(DataError::Invalid(format!(
                "value/mask length {}/{} does not match {}×{}×{}",
                self.values.len(),
                self.mask.len(),
                self.t_total,
                self.nodes,
                self.channels
            )));
        }
        if self.t_total < 24 {
            return Err(DataError::Invalid(format!(
                "dataset holds {} steps; at least 24 are required (two windows)",
                self.t_total
            )));
        }
        if self.interval_seconds == 0 || 86400 % self.interval_seconds != 0 {
            return Err(DataError::Invalid(format!(
                "interval {}s must divide a day",
                self.interval_seconds
            )));
        }
        if self.start_epoch_seconds.rem_euclid(self.interval_seconds as i64) != 0 {
            return Err(DataError::MisalignedTimestamp {
                timestamp: self.start_epoch_seconds,
                interval: self.interval_seconds,
            });
        }
        if self.node_ids.len() != self.nodes {
            return Err(DataError::Invalid(format!(
                "{} node ids for {} nodes",
                self.node_ids.len(),
                self.nodes
            )));
        }
        if let Some(coords) = &self.coordinates {
            if coords.len() != self.nodes {
                return Err(DataError::Invalid(format!(
                    "{} coordinate pairs for {} nodes",
                    coords.len(),
                    self.nodes
                )));
            }
        }
        if self.mask.iter().all(|&m| m == 0) {
            return Err(DataError::AllMissing);
        }
        Ok(())
    }

    pub fn timestamp(&self, step: usize) -> i64 {
        self.start_epoch_seconds + step as i64 * self.interval_seconds as i64
    }

    /// Values/mask slab for one time step.
    pub fn step_slice(&self, step: usize) -> (&[f32], &[u8]) {
        let w = self.nodes * self.channels;
        (&self.values[step * w..(step + 1) * w], &self.mask[step * w..(step + 1) * w])
    }
}

/// Loads a dataset from its file extension: `.stts` binary container or the
/// documented wide CSV layout.
pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv_dataset(path),
        _ => read_stts(path),
    }
}

/// Contiguous, ordered, disjoint index ranges covering the whole series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitRanges {
    pub fn named(&self, name: &str) -> Option<Range<usize>> {
        match name {
            "train" => Some(self.train.clone()),
            "val" | "validation" => Some(self.val.clone()),
            "test" => Some(self.test.clone()),
            _ => None,
        }
    }
}

/// Splits `0..t_total` chronologically by the given ratios (floor division,
/// remainder assigned to the test range). Every range must fit at least one
/// `t_in + t_out` window.
pub fn chronological_split(
    ds: &Dataset,
    ratios: (u32, u32, u32),
    t_in: usize,
    t_out: usize,
) -> Result<SplitRanges, DataError> {
    let (a, b, c) = ratios;
    if a == 0 || b == 0 || c == 0 {
        return Err(DataError::Invalid("split ratios must be positive".into()));
    }
    let total = (a + b + c) as usize;
    let n_train = ds.t_total * a as usize / total;
    let n_val = ds.t_total * b as usize / total;
    let ranges = SplitRanges {
        train: 0..n_train,
        val: n_train..n_train + n_val,
        test: n_train + n_val..ds.t_total,
    };
    let need = t_in + t_out;
    for (name, r) in [
        ("train", &ranges.train),
        ("validation", &ranges.val),
        ("test", &ranges.test),
    ] {
        if r.len() < need {
            return Err(DataError::SplitTooShort {
                split: match name {
                    "train" => "train",
                    "validation" => "validation",
                    _ => "test",
                },
                len: r.len(),
                need,
            });
        }
    }
    Ok(ranges)
}

/// All stride-1 forecasting windows lying fully inside one split range; the
/// windows reference the dataset, nothing is copied.
#[derive(Debug, Clone)]
pub struct WindowSet<'a> {
    ds: &'a Dataset,
    range: Range<usize>,
    t_in: usize,
    t_out: usize,
}

/// One (input, target) pair; slices view the parent dataset.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    ds: &'a Dataset,
    offset: usize,
    t_in: usize,
    t_out: usize,
}

pub fn make_windows<'a>(
    ds: &'a Dataset,
    range: Range<usize>,
    t_in: usize,
    t_out: usize,
) -> Result<WindowSet<'a>, DataError> {
    if range.end > ds.t_total {
        return Err(DataError::Invalid(format!(
            "range {range:?} exceeds the {} available steps",
            ds.t_total
        )));
    }
    if range.len() < t_in + t_out {
        return Err(DataError::RangeTooShort {
            len: range.len(),
            need: t_in + t_out,
        });
    }
    Ok(WindowSet { ds, range, t_in, t_out })
}

impl<'a> WindowSet<'a> {
    pub fn len(&self) -> usize {
        self.range.len() - self.t_in - self.t_out + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window(&self, i: usize) -> Window<'a> {
        assert!(i < self.len(), "window {i} out of {}", self.len());
        Window {
            ds: self.ds,
            offset: self.range.start + i,
            t_in: self.t_in,
            t_out: self.t_out,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Window<'a>> + '_ {
        (0..self.len()).map(move |i| self.window(i))
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.ds
    }
}

impl<'a> Window<'a> {
    fn width(&self) -> usize {
        self.ds.nodes * self.ds.channels
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn input(&self) -> &'a [f32] {
        let w = self.width();
        &self.ds.values[self.offset * w..(self.offset + self.t_in) * w]
    }

    pub fn input_mask(&self) -> &'a [u8] {
        let w = self.width();
        &self.ds.mask[self.offset * w..(self.offset + self.t_in) * w]
    }

    pub fn target(&self) -> &'a [f32] {
        let w = self.width();
        let s = self.offset + self.t_in;
        &self.ds.values[s * w..(s + self.t_out) * w]
    }

    pub fn target_mask(&self) -> &'a [u8] {
        let w = self.width();
        let s = self.offset + self.t_in;
        &self.ds.mask[s * w..(s + self.t_out) * w]
    }

    pub fn input_timestamps(&self) -> impl Iterator<Item = i64> + 'a {
        let ds = self.ds;
        let off = self.offset;
        (0..self.t_in).map(move |k| ds.timestamp(off + k))
    }

    pub fn target_timestamps(&self) -> impl Iterator<Item = i64> + 'a {
        let ds = self.ds;
        let s = self.offset + self.t_in;
        (0..self.t_out).map(move |k| ds.timestamp(s + k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(t_total: usize) -> Dataset {
        Dataset {
            values: vec![0.5; t_total * 2],
            mask: vec![1; t_total * 2],
            t_total,
            nodes: 2,
            channels: 1,
            start_epoch_seconds: 0,
            interval_seconds: 300,
            zero_is_missing: false,
            node_ids: vec!["a".into(), "b".into()],
            coordinates: None,
        }
    }

    #[test]
    fn split_100_is_60_20_20() {
        let ds = tiny(100);
        let s = chronological_split(&ds, (6, 2, 2), 6, 6).unwrap();
        assert_eq!(s.train, 0..60);
        assert_eq!(s.val, 60..80);
        assert_eq!(s.test, 80..100);
    }

    #[test]
    fn splits_are_ordered_and_disjoint() {
        for t in [120usize, 137, 999, 2016] {
            let ds = tiny(t);
            let s = chronological_split(&ds, (6, 2, 2), 12, 12).unwrap();
            assert_eq!(s.train.end, s.val.start);
            assert_eq!(s.val.end, s.test.start);
            assert_eq!(s.test.end, t);
        }
    }

    #[test]
    fn split_too_short_for_a_window_errors() {
        let ds = tiny(40); // 24/8/8: no full window fits in val or test
        assert!(matches!(
            chronological_split(&ds, (6, 2, 2), 12, 12),
            Err(DataError::SplitTooShort { .. })
        ));
        // 100 steps leave 20-step validation/test splits, too short for a
        // 12-in/12-out window.
        assert!(matches!(
            chronological_split(&tiny(100), (6, 2, 2), 12, 12),
            Err(DataError::SplitTooShort { .. })
        ));
    }

    #[test]
    fn window_counts() {
        let ds = tiny(100);
        assert_eq!(make_windows(&ds, 0..24, 12, 12).unwrap().len(), 1);
        assert_eq!(make_windows(&ds, 0..30, 12, 12).unwrap().len(), 7);
        assert!(matches!(
            make_windows(&ds, 0..23, 12, 12),
            Err(DataError::RangeTooShort { .. })
        ));
    }

    #[test]
    fn target_follows_input() {
        let ds = tiny(100);
        let ws = make_windows(&ds, 10..40, 12, 12).unwrap();
        let w = ws.window(3);
        let last_in = w.input_timestamps().last().unwrap();
        let first_out = w.target_timestamps().next().unwrap();
        assert_eq!(first_out - last_in, 300);
    }

    #[test]
    fn windows_never_leak_outside_their_range() {
        let ds = tiny(200);
        let s = chronological_split(&ds, (6, 2, 2), 12, 12).unwrap();
        for (range, ws) in [
            (s.train.clone(), make_windows(&ds, s.train.clone(), 12, 12).unwrap()),
            (s.val.clone(), make_windows(&ds, s.val.clone(), 12, 12).unwrap()),
            (s.test.clone(), make_windows(&ds, s.test.clone(), 12, 12).unwrap()),
        ] {
            for w in ws.iter() {
                assert!(w.offset() >= range.start);
                assert!(w.offset() + 24 <= range.end);
            }
        }
    }
}
