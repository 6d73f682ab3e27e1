//! Mini-batch training, evaluation and result reporting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SequenceRecord;
use crate::layers::{AdamConfig, AdamState};
use crate::model::{predict, EncodedSequence, HierCnn};
use crate::scalar::Scalar;
use crate::tensor::Graph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub threshold: f64,
    pub optimizer: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 70,
            seed: 0,
            threshold: 0.5,
            optimizer: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must be in (0, 1), got {}", self.threshold)));
        }
        Ok(())
    }
}

/// Confusion counts with the derived scores; empty denominators give 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Metrics {
    pub fn from_predictions(labels: &[u8], predictions: &[u8]) -> Self {
        let mut m = Self::default();
        for (&y, &p) in labels.iter().zip(predictions) {
            match (y, p) {
                (1, 1) => m.tp += 1,
                (0, 1) => m.fp += 1,
                (0, 0) => m.tn += 1,
                _ => m.fn_ += 1,
            }
        }
        m
    }

    pub fn from_scores<T: Scalar>(labels: &[u8], scores: &[T], threshold: T) -> Self {
        let preds: Vec<u8> = scores.iter().map(|&s| predict(s, threshold)).collect();
        Self::from_predictions(labels, &preds)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// A named evaluation set.
#[derive(Clone, Debug)]
pub struct TestSet {
    pub name: String,
    pub records: Vec<SequenceRecord>,
}

impl TestSet {
    /// One test set per dataset tag present in `records`.
    pub fn by_dataset(records: &[SequenceRecord]) -> Vec<TestSet> {
        let mut groups: BTreeMap<String, Vec<SequenceRecord>> = BTreeMap::new();
        for r in records {
            groups.entry(r.dataset.name().to_string()).or_default().push(r.clone());
        }
        groups.into_iter().map(|(name, records)| TestSet { name, records }).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub datasets: BTreeMap<String, Metrics>,
}

impl EvalReport {
    pub fn mean_f1(&self) -> f64 {
        if self.datasets.is_empty() {
            return 0.0;
        }
        self.datasets.values().map(Metrics::f1).sum::<f64>() / self.datasets.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub dataset: String,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub rows: Vec<HistoryRow>,
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
}

impl History {
    pub fn push_report(&mut self, epoch: usize, report: &EvalReport) {
        for (name, m) in &report.datasets {
            self.rows.push(HistoryRow {
                epoch,
                dataset: name.clone(),
                metrics: *m,
            });
        }
    }

    /// Metrics of the last recorded epoch.
    pub fn last_report(&self) -> EvalReport {
        let last = self.rows.iter().map(|r| r.epoch).max();
        EvalReport {
            datasets: self
                .rows
                .iter()
                .filter(|r| Some(r.epoch) == last)
                .map(|r| (r.dataset.clone(), r.metrics))
                .collect(),
        }
    }
}

pub fn encode_all<T: Scalar>(model: &HierCnn<T>, records: &[SequenceRecord]) -> Result<Vec<EncodedSequence>> {
    records
        .iter()
        .map(|r| EncodedSequence::encode(r, model.config()))
        .collect()
}

/// Anomaly probabilities for `records`, scored in batches of `batch_size`.
pub fn score<T: Scalar>(model: &HierCnn<T>, records: &[SequenceRecord], batch_size: usize) -> Result<Vec<T>> {
    let enc = encode_all(model, records)?;
    score_encoded(model, &enc, batch_size)
}

fn score_encoded<T: Scalar>(model: &HierCnn<T>, enc: &[EncodedSequence], batch_size: usize) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(enc.len());
    for chunk in enc.chunks(batch_size.max(1)) {
        let batch: Vec<&EncodedSequence> = chunk.iter().collect();
        out.extend(model.predict_proba(&batch)?);
    }
    Ok(out)
}

pub fn evaluate_set<T: Scalar>(
    model: &HierCnn<T>,
    records: &[SequenceRecord],
    threshold: f64,
    batch_size: usize,
) -> Result<Metrics> {
    let scores = score(model, records, batch_size)?;
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    Ok(Metrics::from_scores(&labels, &scores, T::of(threshold)))
}

/// Evaluates each test set separately.
pub fn evaluate<T: Scalar>(model: &HierCnn<T>, tests: &[TestSet], threshold: f64, batch_size: usize) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for t in tests {
        report
            .datasets
            .insert(t.name.clone(), evaluate_set(model, &t.records, threshold, batch_size)?);
    }
    Ok(report)
}

/// Mean weighted loss of `records` under `model`, without updating it.
pub fn mean_loss<T: Scalar>(
    model: &HierCnn<T>,
    records: &[SequenceRecord],
    positive_weight: f64,
    batch_size: usize,
) -> Result<f64> {
    let enc = encode_all(model, records)?;
    let mut total = 0.0;
    for (chunk, recs) in enc.chunks(batch_size).zip(records.chunks(batch_size)) {
        let mut g = Graph::new();
        let batch: Vec<&EncodedSequence> = chunk.iter().collect();
        let fwd = model.forward(&mut g, &batch, false)?;
        let labels: Vec<T> = recs.iter().map(|r| T::of(r.label as f64)).collect();
        let loss = g.weighted_bce(fwd.probs, &labels, T::of(positive_weight))?;
        total += g.value(loss).data()[0].as_f64() * chunk.len() as f64;
    }
    Ok(total / records.len() as f64)
}

pub struct TrainOutcome<T> {
    pub history: History,
    /// Parameters from the epoch with the best mean F1 over the test sets
    /// (the last epoch when there are none).
    pub best: HierCnn<T>,
    pub best_epoch: usize,
}

/// Where per-epoch and best checkpoints go; `None` disables them.
pub struct CheckpointSink<'a> {
    pub dir: &'a Path,
}

/// Trains `model` in place with Adam on the weighted cross-entropy,
/// evaluating every test set after each epoch.
pub fn train<T: Scalar>(
    model: &mut HierCnn<T>,
    records: &[SequenceRecord],
    config: &TrainConfig,
    positive_weight: f64,
    tests: &[TestSet],
    checkpoints: Option<CheckpointSink<'_>>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let anomalies = records.iter().filter(|r| r.label == 1).count();
    if anomalies == 0 || anomalies == records.len() {
        return Err(Error::Training("training set needs both classes".into()));
    }
    let enc = encode_all(model, records)?;
    let labels: Vec<T> = records.iter().map(|r| T::of(r.label as f64)).collect();
    let weight = T::of(positive_weight);
    let mut adam = AdamState::new(config.optimizer);
    let mut history = History::default();
    let mut best = (f64::NEG_INFINITY, 0usize, model.clone());
    let mut order: Vec<usize> = (0..records.len()).collect();

    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&EncodedSequence> = idx.iter().map(|&i| &enc[i]).collect();
            let y: Vec<T> = idx.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let fwd = model.forward(&mut g, &batch, true)?;
            let loss = g.weighted_bce(fwd.probs, &y, weight)?;
            let value = g.value(loss).data()[0].as_f64();
            // The loss clamps probabilities, and a clamp of NaN is not NaN,
            // so the scores themselves have to be checked as well.
            let scores_finite = g.value(fwd.probs).data().iter().all(|p| p.is_finite());
            if !value.is_finite() || !scores_finite {
                let ids: Vec<&str> = idx.iter().map(|&i| records[i].sequence_id.as_str()).collect();
                let norms: Vec<String> = model
                    .parameter_norms()
                    .into_iter()
                    .map(|(n, v)| format!("{n}={v:.4e}"))
                    .collect();
                let what = if value.is_finite() { "non-finite scores".to_string() } else { format!("loss {value}") };
                return Err(Error::Divergence(format!(
                    "epoch {epoch}: {what} on batch {ids:?}; parameter norms: {}",
                    norms.join(", ")
                )));
            }
            epoch_loss += value * idx.len() as f64;
            g.backward(loss)?;
            model.attach_grads(&g, &fwd)?;
            adam.step(&mut model.parameters_mut())?;
        }
        let mean_loss = epoch_loss / records.len() as f64;
        history.losses.push(mean_loss);

        let report = evaluate(model, tests, config.threshold, config.batch_size)?;
        history.push_report(epoch, &report);
        let summary: Vec<String> = report
            .datasets
            .iter()
            .map(|(n, m)| format!("{n} F1={:.4}", m.f1()))
            .collect();
        log::info!("epoch {epoch}: loss {mean_loss:.6} {}", summary.join(" "));

        if let Some(sink) = &checkpoints {
            model.save(&sink.dir.join(format!("epoch_{epoch:03}.hlog")))?;
        }
        let score = if tests.is_empty() { epoch as f64 } else { report.mean_f1() };
        if score > best.0 {
            best = (score, epoch, model.clone());
            if let Some(sink) = &checkpoints {
                model.save(&sink.dir.join("best.hlog"))?;
            }
        }
    }
    Ok(TrainOutcome {
        history,
        best_epoch: best.1,
        best: best.2,
    })
}

pub const CSV_HEADER: [&str; 9] = ["epoch", "dataset", "precision", "recall", "f1", "tp", "fp", "tn", "fn"];

/// Per-epoch results as CSV with six-decimal scores.
pub fn write_history_csv<W: Write>(w: W, history: &History) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in &history.rows {
        let m = &r.metrics;
        out.write_record([
            r.epoch.to_string(),
            r.dataset.clone(),
            format!("{:.6}", m.precision()),
            format!("{:.6}", m.recall()),
            format!("{:.6}", m.f1()),
            m.tp.to_string(),
            m.fp.to_string(),
            m.tn.to_string(),
            m.fn_.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Parsed CSV row; scores are kept as the printed decimals.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct CsvRow {
    pub epoch: usize,
    pub dataset: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

pub fn read_history_csv<R: Read>(r: R) -> Result<Vec<CsvRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Format(format!("unexpected results header {header:?}")));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Plain-text table of one report.
pub fn render_table(title: &str, report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{title}");
    let _ = writeln!(
        s,
        "{:<16} {:>9} {:>9} {:>9} {:>8} {:>8} {:>8} {:>8}",
        "dataset", "precision", "recall", "f1", "tp", "fp", "tn", "fn"
    );
    for (name, m) in &report.datasets {
        let _ = writeln!(
            s,
            "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>8} {:>8} {:>8} {:>8}",
            name,
            m.precision(),
            m.recall(),
            m.f1(),
            m.tp,
            m.fp,
            m.tn,
            m.fn_
        );
    }
    s
}
