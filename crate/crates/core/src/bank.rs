//! Feature bank of unit-norm embeddings keyed by sample id.
//!
//! The bank is seeded from the frozen previous-stage model and afterwards
//! changed only by momentum blending with fresh embeddings of the current
//! mini-batch. Entries serve as positive keys for their own sample and as
//! negative keys for every other sample.

use crate::error::{Error, Result};
use crate::model::{ModelParams, Origin, Sample, SampleId};
use crate::numerics::{ensure_finite, l2_normalize};
use rand::Rng;
use std::collections::HashMap;
use std::io::Write;

pub const DEFAULT_MOMENTUM: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct FeatureBank {
    momentum: f64,
    dim: usize,
    ids: Vec<SampleId>,
    origins: Vec<Origin>,
    slots: HashMap<SampleId, usize>,
    /// `ids.len() × dim`, row-major.
    entries: Vec<f64>,
}

impl FeatureBank {
    pub fn new(dim: usize, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::InvalidParameter(format!("momentum {momentum} outside [0, 1]")));
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("embedding dimension must be positive".into()));
        }
        Ok(Self {
            momentum,
            dim,
            ids: Vec::new(),
            origins: Vec::new(),
            slots: HashMap::new(),
            entries: Vec::new(),
        })
    }

    /// Builds the bank with one entry `encode_project(prev_params, x)` per sample.
    pub fn init(prev_params: &ModelParams, samples: &[Sample], momentum: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Degenerate("cannot build a feature bank from no samples".into()));
        }
        let mut bank = Self::new(prev_params.config().embed_dim, momentum)?;
        for s in samples {
            let key = prev_params.encode_project(&s.input)?;
            bank.insert(s.id, s.origin, &key)?;
        }
        Ok(bank)
    }

    /// Adds an entry; `key` is normalized on insertion.
    pub fn insert(&mut self, id: SampleId, origin: Origin, key: &[f64]) -> Result<()> {
        if key.len() != self.dim {
            return Err(Error::dim(self.dim, key.len()));
        }
        if self.slots.contains_key(&id) {
            return Err(Error::DuplicateId(id.0));
        }
        let key = l2_normalize(key)?;
        self.slots.insert(id, self.ids.len());
        self.ids.push(id);
        self.origins.push(origin);
        self.entries.extend_from_slice(&key);
        Ok(())
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: SampleId) -> bool {
        self.slots.contains_key(&id)
    }

    pub fn get(&self, id: SampleId) -> Option<&[f64]> {
        self.slots.get(&id).map(|&slot| self.slot(slot))
    }

    pub fn origin(&self, id: SampleId) -> Option<Origin> {
        self.slots.get(&id).map(|&slot| self.origins[slot])
    }

    fn slot(&self, slot: usize) -> &[f64] {
        &self.entries[slot * self.dim..(slot + 1) * self.dim]
    }

    /// Entries in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (SampleId, Origin, &[f64])> {
        (0..self.len()).map(move |s| (self.ids[s], self.origins[s], self.slot(s)))
    }

    /// `k ← normalize(m·k + (1−m)·fresh)`.
    pub fn momentum_update(&mut self, id: SampleId, fresh: &[f64]) -> Result<()> {
        let slot = *self.slots.get(&id).ok_or(Error::MissingEntry(id.0))?;
        if fresh.len() != self.dim {
            return Err(Error::dim(self.dim, fresh.len()));
        }
        ensure_finite(fresh, "fresh embedding")?;
        let m = self.momentum;
        if m == 1.0 {
            return Ok(());
        }
        let row = &mut self.entries[slot * self.dim..(slot + 1) * self.dim];
        let blended: Vec<f64> = row
            .iter()
            .zip(fresh)
            .map(|(old, new)| m * old + (1.0 - m) * new)
            .collect();
        let normalized = l2_normalize(&blended)?;
        row.copy_from_slice(&normalized);
        Ok(())
    }

    fn check_negatives(&self, exclude: SampleId, count: usize) -> Result<usize> {
        let available = self.len() - usize::from(self.contains(exclude));
        if count > available {
            return Err(Error::InsufficientNegatives {
                requested: count,
                available,
            });
        }
        Ok(available)
    }

    /// Draws `count` distinct entries uniformly at random, never the entry of
    /// `exclude`.
    pub fn draw_negatives<R: Rng>(&self, exclude: SampleId, count: usize, rng: &mut R) -> Result<Vec<&[f64]>> {
        let available = self.check_negatives(exclude, count)?;
        let skip = self.slots.get(&exclude).copied();
        let picks = rand::seq::index::sample(rng, available, count);
        Ok(picks
            .into_iter()
            .map(|i| match skip {
                Some(s) if i >= s => self.slot(i + 1),
                _ => self.slot(i),
            })
            .collect())
    }

    /// Every entry except the one for `exclude`.
    pub fn all_negatives(&self, exclude: SampleId) -> Vec<&[f64]> {
        let skip = self.slots.get(&exclude).copied();
        (0..self.len())
            .filter(|s| Some(*s) != skip)
            .map(|s| self.slot(s))
            .collect()
    }

    /// Writes `sample_id,origin,e_1..e_d` rows.
    pub fn export_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["sample_id".to_string(), "origin".to_string()];
        header.extend((1..=self.dim).map(|i| format!("e_{i}")));
        w.write_record(&header)?;
        for (id, origin, key) in self.iter() {
            let mut row = vec![id.to_string(), origin.to_string()];
            row.extend(key.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}
