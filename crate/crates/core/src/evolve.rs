//! Synthetic log evolution: duplicated, removed and locally shuffled events.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::SequenceRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolutionConfig {
    /// Edit operations per event, in `[0, 1]`.
    pub noise_ratio: f64,
    pub seed: u64,
    pub shuffle_window_max: usize,
    pub duplicate: bool,
    pub remove: bool,
    pub shuffle: bool,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            noise_ratio: 0.3,
            seed: 0,
            shuffle_window_max: 10,
            duplicate: true,
            remove: true,
            shuffle: true,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_ratio) {
            return Err(Error::Config(format!("noise_ratio must be in [0, 1], got {}", self.noise_ratio)));
        }
        if self.shuffle && self.shuffle_window_max < 2 {
            return Err(Error::Config("shuffle_window_max must be at least 2".into()));
        }
        if !(self.duplicate || self.remove || self.shuffle) {
            return Err(Error::Config("at least one evolution operation must be enabled".into()));
        }
        Ok(())
    }

    /// Number of edits for a sequence of `events` events:
    /// `ceil(noise_ratio · events)`, ignoring float noise below 1e-9.
    pub fn edit_count(&self, events: usize) -> usize {
        let x = self.noise_ratio * events as f64;
        (x - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EditKind {
    Duplicate,
    Remove,
    Shuffle,
}

/// Inserts a copy of `events[index]` right after it.
pub fn duplicate_event<T: Clone>(events: &mut Vec<T>, index: usize) {
    let copy = events[index].clone();
    events.insert(index + 1, copy);
}

/// Removes `events[index]`; refuses to empty the sequence.
pub fn remove_event<T>(events: &mut Vec<T>, index: usize) -> Result<T> {
    if events.len() < 2 {
        return Err(Error::Config("cannot remove the last event of a sequence".into()));
    }
    Ok(events.remove(index))
}

/// Replaces `events[start..start + width]` by a uniform permutation of itself.
pub fn shuffle_subsequence<T, R: Rng>(events: &mut [T], start: usize, width: usize, rng: &mut R) -> Result<()> {
    if width < 2 || start + width > events.len() {
        return Err(Error::Config(format!(
            "shuffle window {start}+{width} invalid for {} events",
            events.len()
        )));
    }
    events[start..start + width].shuffle(rng);
    Ok(())
}

/// Generator for one record, derived from the global seed and the record's
/// identity so results do not depend on processing order.
pub fn record_rng(seed: u64, record: &SequenceRecord) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(record.dataset.name().as_bytes());
    h.update([0]);
    h.update(record.sequence_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Applies `edit_count` random edits to a copy of `record`. Records with
/// fewer than two events come back unchanged and `false` is returned.
pub fn evolve_sequence<R: Rng>(record: &SequenceRecord, config: &EvolutionConfig, rng: &mut R) -> (SequenceRecord, bool) {
    let mut out = record.clone();
    if out.events.len() < 2 {
        return (out, false);
    }
    let ops = config.edit_count(record.events.len());
    let mut kinds = Vec::with_capacity(3);
    for _ in 0..ops {
        let len = out.events.len();
        kinds.clear();
        if config.duplicate {
            kinds.push(EditKind::Duplicate);
        }
        if config.remove && len >= 2 {
            kinds.push(EditKind::Remove);
        }
        if config.shuffle && len >= 2 {
            kinds.push(EditKind::Shuffle);
        }
        let Some(&kind) = kinds.choose(rng) else {
            break;
        };
        match kind {
            EditKind::Duplicate => {
                let i = rng.gen_range(0..len);
                duplicate_event(&mut out.events, i);
            }
            EditKind::Remove => {
                let i = rng.gen_range(0..len);
                out.events.remove(i);
            }
            EditKind::Shuffle => {
                let start = rng.gen_range(0..=len - 2);
                let max_width = config.shuffle_window_max.min(len - start);
                let width = rng.gen_range(2..=max_width);
                out.events[start..start + width].shuffle(rng);
            }
        }
    }
    (out, true)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvolveStats {
    pub evolved: usize,
    /// Records too short to edit.
    pub untouched: usize,
}

/// Evolves every record once with its own derived generator.
pub fn evolve_corpus(records: &[SequenceRecord], config: &EvolutionConfig) -> Result<(Vec<SequenceRecord>, EvolveStats)> {
    config.validate()?;
    let mut stats = EvolveStats::default();
    let out = records
        .iter()
        .map(|r| {
            let mut rng = record_rng(config.seed, r);
            let (e, touched) = evolve_sequence(r, config, &mut rng);
            if touched {
                stats.evolved += 1;
            } else {
                stats.untouched += 1;
            }
            e
        })
        .collect();
    Ok((out, stats))
}
