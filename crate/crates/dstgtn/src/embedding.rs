//! Embedding layer: projects the raw window, tags each step with daily and
//! weekly identity rows, and appends the dynamic spatio-temporal embedding.
//! The output is the concatenation `H ‖ E_day ‖ E_week ‖ E_st` of width
//! `D = d + 2·d1 + d2` per position.

use std::rc::Rc;

use dstgtn_tensor::{Element, Parameter, Tensor};

use crate::config::ModelConfig;
use crate::error::{DataError, ModelError};
use crate::nn::{linear, ParamInit};

pub const SECONDS_PER_DAY: i64 = 86400;

/// Within-day sample slot of an aligned timestamp (UTC, pure arithmetic).
pub fn day_slot(ts: i64, interval_seconds: u32) -> usize {
    (ts.rem_euclid(SECONDS_PER_DAY) / interval_seconds as i64) as usize
}

/// Weekday with Monday = 0, computed in UTC from the epoch (1970-01-01 was a
/// Thursday, index 3).
pub fn weekday(ts: i64) -> usize {
    (ts.div_euclid(SECONDS_PER_DAY) + 3).rem_euclid(7) as usize
}

/// The two periodic identity tables: one row per within-day slot and one per
/// weekday.
pub struct TemporalIdentityTable<T: Element> {
    pub day: Rc<Parameter<T>>,
    pub week: Rc<Parameter<T>>,
    pub samples_per_day: usize,
}

impl<T: Element> TemporalIdentityTable<T> {
    /// Validates alignment and looks up one window's timestamps, returning
    /// `(E_day [T,d1], E_week [T,d1])`.
    pub fn lookup(
        &self,
        timestamps: &[i64],
        interval_seconds: u32,
    ) -> Result<(Tensor<T>, Tensor<T>), ModelError> {
        let (day_idx, week_idx) = self.indices(timestamps, interval_seconds, true)?;
        let e_day = self.day.leaf().gather_rows(&day_idx)?;
        let e_week = self.week.leaf().gather_rows(&week_idx)?;
        Ok((e_day, e_week))
    }

    /// Slot/weekday indices for a flat `[B·T]` timestamp list. Contiguity is
    /// enforced per window when `check_contiguity` is set, so `timestamps`
    /// must then be whole windows of the model's input length.
    pub fn indices(
        &self,
        timestamps: &[i64],
        interval_seconds: u32,
        check_contiguity: bool,
    ) -> Result<(Vec<usize>, Vec<usize>), ModelError> {
        if interval_seconds == 0
            || SECONDS_PER_DAY % interval_seconds as i64 != 0
            || (SECONDS_PER_DAY / interval_seconds as i64) as usize != self.samples_per_day
        {
            return Err(ModelError::Config(format!(
                "identity table holds {} slots per day but the {}s interval implies {}",
                self.samples_per_day,
                interval_seconds,
                SECONDS_PER_DAY / interval_seconds.max(1) as i64
            )));
        }
        let mut day_idx = Vec::with_capacity(timestamps.len());
        let mut week_idx = Vec::with_capacity(timestamps.len());
        for &ts in timestamps {
            if ts.rem_euclid(interval_seconds as i64) != 0 {
                return Err(ModelError::Config(
                    DataError::MisalignedTimestamp {
                        timestamp: ts,
                        interval: interval_seconds,
                    }
                    .to_string(),
                ));
            }
            day_idx.push(day_slot(ts, interval_seconds));
            week_idx.push(weekday(ts));
        }
        if check_contiguity {
            for pair in timestamps.windows(2) {
                let step = pair[1] - pair[0];
                if step != interval_seconds as i64 && step <= 0 {
                    return Err(ModelError::Config(
                        DataError::NonContiguousTimestamps {
                            prev: pair[0],
                            next: pair[1],
                            interval: interval_seconds,
                        }
                        .to_string(),
                    ));
                }
            }
        }
        Ok((day_idx, week_idx))
    }
}

pub struct EmbeddingLayer<T: Element> {
    pub w_in: Rc<Parameter<T>>,
    pub b_in: Rc<Parameter<T>>,
    pub table: TemporalIdentityTable<T>,
    /// Trainable `[T, N, d2]` tensor of time-varying node character, shared
    /// with every graph-generation layer.
    pub dyn_st: Rc<Parameter<T>>,
    t_in: usize,
    nodes: usize,
    channels: usize,
    d: usize,
    d1: usize,
    d2: usize,
}

impl<T: Element> EmbeddingLayer<T> {
    pub fn build(cfg: &ModelConfig, init: &mut ParamInit<T>) -> Result<Self, ModelError> {
        let w_in = init.uniform("embedding.w_in", &[cfg.channels, cfg.d], cfg.channels)?;
        let b_in = init.zeros("embedding.b_in", &[cfg.d])?;
        // Lookup tables have fan-in 1: each output coordinate is read from a
        // single entry, so rows start at unit scale like any embedding.
        let day = init.uniform("embedding.day_table", &[cfg.samples_per_day, cfg.d1], 1)?;
        let week = init.uniform("embedding.week_table", &[7, cfg.d1], 1)?;
        let dyn_st = init.uniform("embedding.dyn_st", &[cfg.t_in, cfg.nodes, cfg.d2], 1)?;
        Ok(EmbeddingLayer {
            w_in,
            b_in,
            table: TemporalIdentityTable {
                day,
                week,
                samples_per_day: cfg.samples_per_day,
            },
            dyn_st,
            t_in: cfg.t_in,
            nodes: cfg.nodes,
            channels: cfg.channels,
            d: cfg.d,
            d1: cfg.d1,
            d2: cfg.d2,
        })
    }

    /// Slice boundaries of the concatenated output, in order
    /// `[H, E_day, E_week, E_st]` as `(start, width)` pairs.
    pub fn segments(&self) -> [(usize, usize); 4] {
        [
            (0, self.d),
            (self.d, self.d1),
            (self.d + self.d1, self.d1),
            (self.d + 2 * self.d1, self.d2),
        ]
    }

    /// `H = x·W_in + b_in` per position: `[B,T,N,C] → [B,T,N,d]`.
    pub fn project_input(&self, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        Ok(linear(x, &self.w_in.leaf(), Some(&self.b_in.leaf()))?)
    }

    /// Full embedding of a batch: `x [B,T,N,C]` with per-sample timestamps
    /// (flat `[B·T]`) to `Z [B,T,N,D]`.
    pub fn forward(
        &self,
        x: &Tensor<T>,
        timestamps: &[i64],
        interval_seconds: u32,
    ) -> Result<Tensor<T>, ModelError> {
        let shape = x.shape();
        if shape.len() != 4
            || shape[1] != self.t_in
            || shape[2] != self.nodes
            || shape[3] != self.channels
        {
            return Err(ModelError::Config(format!(
                "embedding expects [B,{},{},{}], got {:?}",
                self.t_in, self.nodes, self.channels, shape
            )));
        }
        let batch = shape[0];
        if timestamps.len() != batch * self.t_in {
            return Err(ModelError::Config(format!(
                "{} timestamps for a {batch}×{} batch",
                timestamps.len(),
                self.t_in
            )));
        }

        let h = self.project_input(x)?;

        let (day_idx, week_idx) = self.table.indices(timestamps, interval_seconds, false)?;
        let full = [batch, self.t_in, self.nodes, self.d1];
        let e_day = self
            .table
            .day
            .leaf()
            .gather_rows(&day_idx)?
            .reshape(&[batch, self.t_in, 1, self.d1])?
            .broadcast_to(&full)?;
        let e_week = self
            .table
            .week
            .leaf()
            .gather_rows(&week_idx)?
            .reshape(&[batch, self.t_in, 1, self.d1])?
            .broadcast_to(&full)?;
        let e_st = self
            .dyn_st
            .leaf()
            .reshape(&[1, self.t_in, self.nodes, self.d2])?
            .broadcast_to(&[batch, self.t_in, self.nodes, self.d2])?;

        Ok(Tensor::concat_last(&[&h, &e_day, &e_week, &e_st])?)
    }
}
