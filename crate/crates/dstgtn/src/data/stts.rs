//! The STTS binary container for spatio-temporal series.
//!
//! Little-endian layout, in order:
//!
//! ```text
//! magic            4 bytes  "STTS"
//! version          u32      1
//! t_total          u64
//! nodes            u64
//! channels         u64
//! start_epoch_s    i64
//! interval_s       u32
//! zero_is_missing  u8
//! has_coordinates  u8
//! has_mask         u8
//! node-id table    nodes × (u32 length, UTF-8 bytes)
//! coordinates      nodes × 2 × f64          (iff has_coordinates)
//! values           t_total·nodes·channels × f32
//! mask             ceil(count / 8) bytes, LSB-first, 1 = observed (iff has_mask)
//! ```
//!
//! On ingest, `zero_is_missing` additionally clears mask bits wherever the
//! stored value is exactly 0.0. Writers emit the mask section only when some
//! value is unobserved, so write∘read∘write is byte-identical.

use std::fs;
use std::path::Path;

use crate::data::Dataset;
use crate::error::DataError;

const MAGIC: [u8; 4] = *b"STTS";
const VERSION: u32 = 1;
/// Upper bound on any single extent; rejects nonsense headers before any
/// multiplication can overflow.
const MAX_EXTENT: u64 = 1 << 32;

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.offset + n > self.bytes.len() {
            return Err(DataError::Truncated {
                offset: self.offset as u64,
                expected: (self.offset + n) as u64,
                actual: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DataError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, DataError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, DataError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, DataError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn extent(&mut self, what: &'static str) -> Result<usize, DataError> {
        let at = self.offset as u64;
        let v = self.u64()?;
        if v == 0 || v > MAX_EXTENT {
            return Err(DataError::ExtentOverflow { offset: at, what, value: v });
        }
        Ok(v as usize)
    }
}

pub fn read_stts(path: &Path) -> Result<Dataset, DataError> {
    let bytes = fs::read(path)?;
    parse_stts(&bytes)
}

pub fn parse_stts(bytes: &[u8]) -> Result<Dataset, DataError> {
    let mut r = Reader { bytes, offset: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(DataError::BadMagic { expected: MAGIC, found: magic });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(DataError::UnsupportedVersion(version));
    }
    let t_total = r.extent("t_total")?;
    let nodes = r.extent("nodes")?;
    let channels = r.extent("channels")?;
    let start_epoch_seconds = r.i64()?;
    let interval_seconds = r.u32()?;
    let zero_is_missing = r.u8()? != 0;
    let has_coordinates = r.u8()? != 0;
    let has_mask = r.u8()? != 0;

    let count = t_total
        .checked_mul(nodes)
        .and_then(|v| v.checked_mul(channels))
        .filter(|&v| v as u64 <= MAX_EXTENT)
        .ok_or(DataError::ExtentOverflow {
            offset: 8,
            what: "t_total·nodes·channels",
            value: u64::MAX,
        })?;

    let mut node_ids = Vec::with_capacity(nodes);
    for _ in 0..nodes {
        let at = r.offset as u64;
        let len = r.u32()? as usize;
        if len > 4096 {
            return Err(DataError::Malformed {
                offset: at,
                what: format!("node id of {len} bytes"),
            });
        }
        let raw = r.take(len)?;
        let id = std::str::from_utf8(raw)
            .map_err(|_| DataError::Malformed {
                offset: at,
                what: "node id is not UTF-8".into(),
            })?
            .to_string();
        node_ids.push(id);
    }

    let coordinates = if has_coordinates {
        let mut coords = Vec::with_capacity(nodes);
        for _ in 0..nodes {
            coords.push([r.f64()?, r.f64()?]);
        }
        Some(coords)
    } else {
        None
    };

    // Cheap up-front size check so a truncated payload names the totals.
    let mask_bytes = if has_mask { count.div_ceil(8) } else { 0 };
    let expected_total = r.offset + count * 4 + mask_bytes;
    if bytes.len() != expected_total {
        return Err(DataError::Truncated {
            offset: r.offset as u64,
            expected: expected_total as u64,
            actual: bytes.len() as u64,
        });
    }

    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(r.f32()?);
    }

    let mut mask = if has_mask {
        let packed = r.take(mask_bytes)?;
        let mut m = vec![0u8; count];
        for (i, slot) in m.iter_mut().enumerate() {
            *slot = (packed[i / 8] >> (i % 8)) & 1;
        }
        m
    } else {
        vec![1u8; count]
    };
    if zero_is_missing {
        for (m, &v) in mask.iter_mut().zip(&values) {
            if v == 0.0 {
                *m = 0;
            }
        }
    }

    let ds = Dataset {
        values,
        mask,
        t_total,
        nodes,
        channels,
        start_epoch_seconds,
        interval_seconds,
        zero_is_missing,
        node_ids,
        coordinates,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn write_stts(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    fs::write(path, serialize_stts(ds)?)?;
    Ok(())
}

pub fn serialize_stts(ds: &Dataset) -> Result<Vec<u8>, DataError> {
    ds.validate()?;
    let count = ds.values.len();
    let has_mask = ds.mask.iter().any(|&m| m == 0);
    let mut out = Vec::with_capacity(64 + count * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.t_total as u64).to_le_bytes());
    out.extend_from_slice(&(ds.nodes as u64).to_le_bytes());
    out.extend_from_slice(&(ds.channels as u64).to_le_bytes());
    out.extend_from_slice(&ds.start_epoch_seconds.to_le_bytes());
    out.extend_from_slice(&ds.interval_seconds.to_le_bytes());
    out.push(ds.zero_is_missing as u8);
    out.push(ds.coordinates.is_some() as u8);
    out.push(has_mask as u8);
    for id in &ds.node_ids {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    if let Some(coords) = &ds.coordinates {
        for c in coords {
            out.extend_from_slice(&c[0].to_le_bytes());
            out.extend_from_slice(&c[1].to_le_bytes());
        }
    }
    for v in &ds.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if has_mask {
        let mut packed = vec![0u8; count.div_ceil(8)];
        for (i, &m) in ds.mask.iter().enumerate() {
            if m != 0 {
                packed[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&packed);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(zero_missing: bool) -> Dataset {
        let t_total = 30;
        let nodes = 3;
        let values: Vec<f32> = (0..t_total * nodes).map(|i| (i % 7) as f32 * 0.5).collect();
        let mut mask = vec![1u8; values.len()];
        mask[5] = 0;
        if zero_missing {
            for (m, &v) in mask.iter_mut().zip(&values) {
                if v == 0.0 {
                    *m = 0;
                }
            }
        }
        Dataset {
            values,
            mask,
            t_total,
            nodes,
            channels: 1,
            start_epoch_seconds: 1704067200,
            interval_seconds: 300,
            zero_is_missing: zero_missing,
            node_ids: vec!["s1".into(), "s2".into(), "s3".into()],
            coordinates: Some(vec![[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]]),
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for zero_missing in [false, true] {
            let ds = sample(zero_missing);
            let bytes = serialize_stts(&ds).unwrap();
            let back = parse_stts(&bytes).unwrap();
            assert_eq!(back, ds);
            assert_eq!(serialize_stts(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = serialize_stts(&sample(false)).unwrap();
        bytes[0] = b'X';
        assert!(matches!(parse_stts(&bytes), Err(DataError::BadMagic { .. })));
    }

    #[test]
    fn truncation_names_expected_and_actual() {
        let bytes = serialize_stts(&sample(false)).unwrap();
        let full = bytes.len() as u64;
        match parse_stts(&bytes[..bytes.len() - 10]) {
            Err(DataError::Truncated { expected, actual, .. }) => {
                assert_eq!(expected, full);
                assert_eq!(actual, full - 10);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn absurd_extent_rejected() {
        let mut bytes = serialize_stts(&sample(false)).unwrap();
        bytes[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(parse_stts(&bytes), Err(DataError::ExtentOverflow { .. })));
    }

    #[test]
    fn zero_as_missing_only_when_declared() {
        let mut ds = sample(false);
        ds.values[0] = 0.0;
        ds.mask = vec![1; ds.values.len()];
        let bytes = serialize_stts(&ds).unwrap();
        let kept = parse_stts(&bytes).unwrap();
        assert_eq!(kept.mask[0], 1);

        ds.zero_is_missing = true;
        let bytes = serialize_stts(&ds).unwrap();
        let dropped = parse_stts(&bytes).unwrap();
        assert_eq!(dropped.mask[0], 0);
    }
}
