//! Train/test splits, multi-project composition and class weights.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Dataset, SequenceRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.5,
            seed: 0,
            stratified: true,
        }
    }
}

/// Fraction of each dataset's training half kept in the combined set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixSpec {
    pub hdfs: f64,
    pub bgl: f64,
    pub hadoop: f64,
    pub openstack: f64,
}

impl Default for MixSpec {
    fn default() -> Self {
        Self {
            hdfs: 0.40,
            bgl: 0.60,
            hadoop: 0.80,
            openstack: 0.90,
        }
    }
}

impl MixSpec {
    pub fn uniform(f: f64) -> Self {
        Self {
            hdfs: f,
            bgl: f,
            hadoop: f,
            openstack: f,
        }
    }

    pub fn fraction(&self, d: Dataset) -> f64 {
        match d {
            Dataset::Hdfs => self.hdfs,
            Dataset::Bgl => self.bgl,
            Dataset::Hadoop => self.hadoop,
            Dataset::Openstack => self.openstack,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for d in Dataset::ALL {
            let f = self.fraction(d);
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("mix fraction for {d} must be in (0, 1], got {f}")));
            }
        }
        Ok(())
    }
}

/// `round(fraction · n)`, half away from zero.
pub fn take_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

fn canonical(records: &[SequenceRecord]) -> Vec<SequenceRecord> {
    let mut v = records.to_vec();
    v.sort_by(|a, b| a.key().cmp(&b.key()));
    v
}

fn dataset_salt(seed: u64, d: Dataset, part: u64) -> u64 {
    seed ^ ((d as u64 + 1) << 56) ^ part.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Splits into `(train, test)`. Within each dataset, each label class is
/// shuffled and `round(fraction · n)` of it goes to training. A class with
/// fewer than two members makes that dataset fall back to an unstratified
/// split.
pub fn split(records: &[SequenceRecord], spec: &SplitSpec) -> Result<(Vec<SequenceRecord>, Vec<SequenceRecord>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must be in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let mut by_dataset: BTreeMap<Dataset, Vec<SequenceRecord>> = BTreeMap::new();
    for r in canonical(records) {
        by_dataset.entry(r.dataset).or_default().push(r);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (d, recs) in by_dataset {
        let (pos, neg): (Vec<_>, Vec<_>) = recs.iter().cloned().partition(|r| r.label == 1);
        let stratify = spec.stratified && pos.len() >= 2 && neg.len() >= 2;
        if spec.stratified && !stratify {
            log::warn!(
                "{d}: a label class has fewer than 2 members ({} anomalies, {} normal); splitting unstratified",
                pos.len(),
                neg.len()
            );
        }
        let groups = if stratify { vec![neg, pos] } else { vec![recs] };
        for (gi, mut group) in groups.into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(dataset_salt(spec.seed, d, gi as u64));
            group.shuffle(&mut rng);
            let k = take_count(spec.train_fraction, group.len());
            test.extend(group.split_off(k));
            train.extend(group);
        }
    }
    Ok((train, test))
}

/// Samples `round(f · n)` records from each dataset's training half and
/// shuffles the concatenation.
pub fn compose_multi_project(train_halves: &[SequenceRecord], mix: &MixSpec, seed: u64) -> Result<Vec<SequenceRecord>> {
    mix.validate()?;
    let mut by_dataset: BTreeMap<Dataset, Vec<SequenceRecord>> = BTreeMap::new();
    for r in canonical(train_halves) {
        by_dataset.entry(r.dataset).or_default().push(r);
    }
    let mut out = Vec::new();
    for (d, mut recs) in by_dataset {
        let k = take_count(mix.fraction(d), recs.len());
        let mut rng = ChaCha8Rng::seed_from_u64(dataset_salt(seed, d, 7));
        recs.shuffle(&mut rng);
        recs.truncate(k);
        out.extend(recs);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FF_EE00);
    out.shuffle(&mut rng);
    Ok(out)
}

/// Per-dataset share of a combined training set, in dataset order.
pub fn composition(records: &[SequenceRecord]) -> Vec<(Dataset, usize, f64)> {
    let mut counts: BTreeMap<Dataset, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(r.dataset).or_default() += 1;
    }
    let total = records.len().max(1) as f64;
    counts.into_iter().map(|(d, n)| (d, n, n as f64 / total)).collect()
}

/// `#normal / #anomaly` of a training set.
pub fn class_weight(records: &[SequenceRecord]) -> Result<f64> {
    let pos = records.iter().filter(|r| r.label == 1).count();
    let neg = records.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Config(format!(
            "training set needs both classes, has {pos} anomalies and {neg} normal"
        )));
    }
    Ok(neg as f64 / pos as f64)
}
