//! Small HDFS-style corpora with a planted anomaly token, for smoke tests and
//! CI-sized experiments.
//!
//! Every sequence is built from the same line templates with random block
//! ids, addresses, sizes and retry counts. An anomalous sequence has exactly
//! one line whose retry count is the planted number, so the two classes
//! differ only in a handful of characters.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Dataset, SequenceRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub count: usize,
    pub anomaly_fraction: f64,
    pub min_events: usize,
    pub max_events: usize,
    pub planted_token: String,
    pub dataset: Dataset,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 200,
            anomaly_fraction: 0.2,
            min_events: 4,
            max_events: 12,
            planted_token: "4242".into(),
            dataset: Dataset::Hdfs,
            seed: 0,
        }
    }
}

fn addr(rng: &mut ChaCha8Rng) -> String {
    format!(
        "10.{}.{}.{}:{}",
        rng.gen_range(250..=251),
        rng.gen_range(0..32),
        rng.gen_range(1..255),
        rng.gen_range(40000..60000)
    )
}

fn line(rng: &mut ChaCha8Rng, block: &str, retries: &str) -> String {
    let time = format!(
        "081109 {:02}{:02}{:02} {}",
        rng.gen_range(20..24),
        rng.gen_range(0..60),
        rng.gen_range(0..60),
        rng.gen_range(10..3000)
    );
    match rng.gen_range(0..5) {
        0 => format!(
            "{time} INFO dfs.DataNode$DataXceiver: Receiving block {block} src: /{} dest: /{}",
            addr(rng),
            addr(rng)
        ),
        1 => format!(
            "{time} INFO dfs.DataNode$PacketResponder: PacketResponder {} for block {block} terminating",
            rng.gen_range(0..3)
        ),
        2 => format!(
            "{time} INFO dfs.FSNamesystem: BLOCK* NameSystem.addStoredBlock: blockMap updated: {} is added to {block} size {}",
            addr(rng),
            rng.gen_range(1000..67108864)
        ),
        3 => format!(
            "{time} INFO dfs.DataNode$PacketResponder: Received block {block} of size {} from /{}",
            rng.gen_range(1000..67108864),
            addr(rng)
        ),
        _ => format!("{time} INFO dfs.DataBlockScanner: Verification succeeded for {block} after {retries} retries"),
    }
}

fn verification(rng: &mut ChaCha8Rng, block: &str, retries: &str) -> String {
    format!(
        "081109 {:02}{:02}{:02} {} INFO dfs.DataBlockScanner: Verification succeeded for {block} after {retries} retries",
        rng.gen_range(20..24),
        rng.gen_range(0..60),
        rng.gen_range(0..60),
        rng.gen_range(10..3000)
    )
}

/// Generates `config.count` records, `round(anomaly_fraction · count)` of
/// them anomalous, sorted by id.
pub fn generate(config: &SynthConfig) -> Result<Vec<SequenceRecord>> {
    if config.min_events == 0 || config.min_events > config.max_events {
        return Err(Error::Config("synth needs 1 <= min_events <= max_events".into()));
    }
    if !(0.0..=1.0).contains(&config.anomaly_fraction) {
        return Err(Error::Config("anomaly_fraction must be in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let anomalies = (config.anomaly_fraction * config.count as f64).round() as usize;
    let mut labels: Vec<u8> = (0..config.count).map(|i| u8::from(i < anomalies)).collect();
    labels.shuffle(&mut rng);
    let mut out = Vec::with_capacity(config.count);
    for (i, &label) in labels.iter().enumerate() {
        let block = format!("blk_{}{}", if rng.gen_bool(0.5) { "-" } else { "" }, rng.gen_range(1u64 << 40..1u64 << 62));
        let n = rng.gen_range(config.min_events..=config.max_events);
        let mut events: Vec<String> = (0..n)
            .map(|_| {
                let retries = rng.gen_range(0..4).to_string();
                line(&mut rng, &block, &retries)
            })
            .collect();
        if label == 1 {
            let at = rng.gen_range(0..n);
            events[at] = verification(&mut rng, &block, &config.planted_token);
        } else if rng.gen_bool(0.5) {
            let at = rng.gen_range(0..n);
            let retries = rng.gen_range(0..4).to_string();
            events[at] = verification(&mut rng, &block, &retries);
        }
        out.push(SequenceRecord {
            dataset: config.dataset,
            sequence_id: format!("synth-{i:06}"),
            label,
            events,
        });
    }
    Ok(out)
}
