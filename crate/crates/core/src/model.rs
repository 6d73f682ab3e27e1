//! Hierarchical character-level CNN: characters → event vectors → sequence
//! vector → anomaly probability.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::SequenceRecord;
use crate::layers::{bind, Activation, ConvBlock, ConvLayer, DenseBlock, DenseLayer, EmbeddingTable, ParamMut};
use crate::scalar::Scalar;
use crate::tensor::{read_checkpoint, write_checkpoint, Checkpoint, Graph, Tensor, Var};

/// Number of character codes: padding, 95 printable ASCII, unknown.
pub const CODEC_SIZE: usize = 97;
pub const PAD_CODE: u8 = 0;
pub const UNKNOWN_CODE: u8 = 96;

/// Byte → code mapping. Printable ASCII 32..=126 maps to 1..=95, everything
/// else (control bytes, UTF-8 continuation bytes) to [`UNKNOWN_CODE`].
#[derive(Clone, Copy, Debug, Default)]
pub struct CharCodec;

impl CharCodec {
    pub fn code(byte: u8) -> u8 {
        match byte {
            32..=126 => byte - 31,
            _ => UNKNOWN_CODE,
        }
    }

    pub fn encode(text: &str, max_chars: usize) -> Vec<u8> {
        text.bytes().take(max_chars).map(Self::code).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Events kept per sequence.
    pub max_events: usize,
    /// Characters kept per event.
    pub max_chars: usize,
    pub char_embedding: usize,
    pub event_widths: Vec<usize>,
    pub event_kernels: Vec<usize>,
    pub sequence_widths: Vec<usize>,
    pub sequence_kernels: Vec<usize>,
    pub dense_widths: Vec<usize>,
    pub vocabulary_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            max_events: 300,
            max_chars: 256,
            char_embedding: 16,
            event_widths: vec![64, 64, 128],
            event_kernels: vec![7, 3, 3],
            sequence_widths: vec![128, 128, 256],
            sequence_kernels: vec![5, 3, 3],
            dense_widths: vec![256, 128, 64, 1],
            vocabulary_size: CODEC_SIZE,
        }
    }
}

impl ModelConfig {
    /// A small network for tests and CI-sized experiments.
    pub fn tiny() -> Self {
        Self {
            max_events: 4,
            max_chars: 6,
            char_embedding: 3,
            event_widths: vec![2, 2],
            event_kernels: vec![3, 3],
            sequence_widths: vec![2, 2],
            sequence_kernels: vec![3, 1],
            dense_widths: vec![3, 1],
            vocabulary_size: CODEC_SIZE,
        }
    }

    /// Narrow enough to train thousands of short sequences per minute on
    /// one core, wide enough to read a whole HDFS-style line.
    pub fn small() -> Self {
        Self {
            max_events: 16,
            max_chars: 160,
            char_embedding: 8,
            event_widths: vec![16, 16],
            event_kernels: vec![5, 3],
            sequence_widths: vec![16],
            sequence_kernels: vec![3],
            dense_widths: vec![16, 1],
            vocabulary_size: CODEC_SIZE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.max_events == 0 || self.max_chars == 0 || self.char_embedding == 0 {
            return fail("max_events, max_chars and char_embedding must be >= 1".into());
        }
        if self.vocabulary_size < CODEC_SIZE {
            return fail(format!("vocabulary_size must be at least {CODEC_SIZE}"));
        }
        for (name, widths, kernels) in [
            ("event", &self.event_widths, &self.event_kernels),
            ("sequence", &self.sequence_widths, &self.sequence_kernels),
        ] {
            if widths.is_empty() || widths.len() != kernels.len() {
                return fail(format!("{name} conv needs equally many widths and kernels"));
            }
            if let Some(k) = kernels.iter().find(|&&k| k % 2 == 0) {
                return fail(format!("{name} conv kernel {k} is even"));
            }
            if widths.contains(&0) {
                return fail(format!("{name} conv width 0"));
            }
        }
        match self.dense_widths.last() {
            Some(1) if !self.dense_widths.contains(&0) => Ok(()),
            _ => fail("dense widths must be positive and end in 1".into()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fingerprint stored in checkpoints so weights and config travel together.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// A record's events as character codes, truncated to the model's limits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSequence {
    pub events: Vec<Vec<u8>>,
}

impl EncodedSequence {
    pub fn encode(record: &SequenceRecord, config: &ModelConfig) -> Result<Self> {
        if record.events.is_empty() {
            return Err(Error::Ingest(format!("sequence {} has no events", record.sequence_id)));
        }
        Ok(Self {
            events: record
                .events
                .iter()
                .take(config.max_events)
                .map(|e| CharCodec::encode(e, config.max_chars))
                .collect(),
        })
    }

    pub fn event_count(&self) -> usize {
        self.events.len()
    }

    pub fn char_counts(&self) -> Vec<usize> {
        self.events.iter().map(Vec::len).collect()
    }

    /// Zero-padded `[max_events, max_chars]` code matrix.
    pub fn to_dense<T: Scalar>(&self, config: &ModelConfig) -> Result<Tensor<T>> {
        let mut t = Tensor::zeros(&[config.max_events, config.max_chars])?;
        let data = t.data_mut();
        for (i, ev) in self.events.iter().enumerate() {
            for (j, &c) in ev.iter().enumerate() {
                data[i * config.max_chars + j] = T::of(c as f64);
            }
        }
        Ok(t)
    }
}

/// Dense codes `[L_s, L_l]`, the true event count and per-event character
/// counts.
pub fn encode_sequence<T: Scalar>(
    record: &SequenceRecord,
    config: &ModelConfig,
) -> Result<(Tensor<T>, usize, Vec<usize>)> {
    let enc = EncodedSequence::encode(record, config)?;
    Ok((enc.to_dense(config)?, enc.event_count(), enc.char_counts()))
}

/// `1` iff `probability >= threshold`.
pub fn predict<T: Scalar>(probability: T, threshold: T) -> u8 {
    u8::from(probability >= threshold)
}

/// How a batch is laid out before the event network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// Only real events, padded to the longest event in the batch.
    Packed,
    /// The full `(B, L_s, L_l)` grid; padding events take part in the event
    /// network and are masked out afterwards.
    Padded,
}

/// Result of a forward pass: probabilities `[B]` and the bound parameter
/// variables, in [`HierCnn::named_parameters`] order.
pub struct Forward {
    pub probs: Var,
    pub params: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierCnn<T> {
    config: ModelConfig,
    embedding: EmbeddingTable<T>,
    event_conv: ConvBlock<T>,
    sequence_conv: ConvBlock<T>,
    dense: DenseBlock<T>,
}

impl<T: Scalar> HierCnn<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = EmbeddingTable::new(config.vocabulary_size, config.char_embedding, &mut rng)?;
        let event_conv = ConvBlock::new(
            config.char_embedding,
            &config.event_widths,
            &config.event_kernels,
            Activation::Relu,
            &mut rng,
        )?;
        let sequence_conv = ConvBlock::new(
            event_conv.out_channels(),
            &config.sequence_widths,
            &config.sequence_kernels,
            Activation::Relu,
            &mut rng,
        )?;
        let dense = DenseBlock::new(sequence_conv.out_channels(), &config.dense_widths, &mut rng)?;
        Ok(Self {
            config,
            embedding,
            event_conv,
            sequence_conv,
            dense,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn embedding(&self) -> &EmbeddingTable<T> {
        &self.embedding
    }

    pub fn event_conv(&self) -> &ConvBlock<T> {
        &self.event_conv
    }

    pub fn sequence_conv(&self) -> &ConvBlock<T> {
        &self.sequence_conv
    }

    pub fn dense(&self) -> &DenseBlock<T> {
        &self.dense
    }

    pub fn forward(&self, g: &mut Graph<T>, batch: &[&EncodedSequence], train: bool) -> Result<Forward> {
        self.forward_with(g, batch, train, Layout::Packed)
    }

    pub fn forward_with(
        &self,
        g: &mut Graph<T>,
        batch: &[&EncodedSequence],
        train: bool,
        layout: Layout,
    ) -> Result<Forward> {
        let params = self.bind(g, train);
        let probs = self.forward_bound(g, batch, &params, layout)?;
        Ok(Forward { probs, params })
    }

    /// Records every parameter on the tape, in
    /// [`named_parameters`](Self::named_parameters) order.
    pub fn bind(&self, g: &mut Graph<T>, train: bool) -> Vec<Var> {
        let mut vars = vec![bind(g, &self.embedding.weights, train)];
        vars.extend(self.event_conv.bind(g, train));
        vars.extend(self.sequence_conv.bind(g, train));
        vars.extend(self.dense.bind(g, train));
        vars
    }

    /// Forward pass over parameters already on the tape (see
    /// [`bind`](Self::bind)); the model itself only supplies structure.
    /// Returns probabilities `[B]`.
    pub fn forward_bound(
        &self,
        g: &mut Graph<T>,
        batch: &[&EncodedSequence],
        params: &[Var],
        layout: Layout,
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Training("empty batch".into()));
        }
        let n_event = 2 * self.event_conv.layers().len();
        let n_seq = 2 * self.sequence_conv.layers().len();
        if params.len() != 1 + n_event + n_seq + 2 * self.dense.layers().len() {
            return Err(Error::Training("parameter binding mismatch".into()));
        }
        let (table, rest) = params.split_first().unwrap();
        let (event_vars, rest) = rest.split_at(n_event);
        let (seq_vars, dense_vars) = rest.split_at(n_seq);
        let cfg = &self.config;
        let b = batch.len();
        let event_counts: Vec<usize> = batch.iter().map(|s| s.event_count().min(cfg.max_events)).collect();
        if let Some(i) = event_counts.iter().position(|&n| n == 0) {
            return Err(Error::Training(format!("batch item {i} has no events")));
        }

        let (indices, index_shape, char_lengths, ls) = match layout {
            Layout::Packed => {
                let lc = batch
                    .iter()
                    .flat_map(|s| s.events.iter().take(cfg.max_events).map(Vec::len))
                    .max()
                    .unwrap_or(1)
                    .clamp(1, cfg.max_chars);
                let ls = *event_counts.iter().max().unwrap();
                let mut indices = Vec::new();
                let mut lengths = Vec::new();
                for s in batch {
                    for ev in &s.events[..s.event_count().min(cfg.max_events)] {
                        let n = ev.len().min(lc);
                        indices.extend(ev[..n].iter().map(|&c| c as usize));
                        indices.extend(std::iter::repeat_n(0, lc - n));
                        lengths.push(n.max(1));
                    }
                }
                let e = lengths.len();
                (indices, vec![e, lc], lengths, ls)
            }
            Layout::Padded => {
                let (ls, lc) = (cfg.max_events, cfg.max_chars);
                let mut indices = vec![0usize; b * ls * lc];
                let mut lengths = vec![1usize; b * ls];
                for (bi, s) in batch.iter().enumerate() {
                    for (ei, ev) in s.events.iter().take(ls).enumerate() {
                        let n = ev.len().min(lc);
                        let base = (bi * ls + ei) * lc;
                        for (j, &c) in ev[..n].iter().enumerate() {
                            indices[base + j] = c as usize;
                        }
                        lengths[bi * ls + ei] = n.max(1);
                    }
                }
                (indices, vec![b, ls, lc], lengths, ls)
            }
        };
        let lc = *index_shape.last().unwrap();

        let chars = self.embedding.apply(g, *table, &indices, &index_shape)?;
        let rows = char_lengths.len();
        let chars = g.reshape(chars, &[rows, lc, cfg.char_embedding])?;
        let events = self.event_conv.apply(g, chars, Some(&char_lengths), event_vars)?;
        let events = g.masked_max(events, 1, &char_lengths)?;
        let c_l = self.event_conv.out_channels();

        let grid = match layout {
            Layout::Packed => {
                let mut targets = Vec::with_capacity(rows);
                for (bi, &n) in event_counts.iter().enumerate() {
                    targets.extend((0..n).map(|ei| bi * ls + ei));
                }
                let scattered = g.scatter_rows(events, &targets, b * ls)?;
                g.reshape(scattered, &[b, ls, c_l])?
            }
            Layout::Padded => g.reshape(events, &[b, ls, c_l])?,
        };
        let seq = self.sequence_conv.apply(g, grid, Some(&event_counts), seq_vars)?;
        let seq = g.masked_max(seq, 1, &event_counts)?;
        let out = self.dense.apply(g, seq, dense_vars)?;
        g.reshape(out, &[b])
    }

    /// Anomaly probabilities for a batch, without gradient tracking.
    pub fn predict_proba(&self, batch: &[&EncodedSequence]) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, batch, false)?;
        Ok(g.value(fwd.probs).data().to_vec())
    }

    pub fn named_parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("embedding.weight".to_string(), &self.embedding.weights)];
        out.extend(self.event_conv.named_parameters("event_conv"));
        out.extend(self.sequence_conv.named_parameters("sequence_conv"));
        out.extend(self.dense.named_parameters("dense"));
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let dim = self.embedding.dim();
        let mut out = vec![ParamMut {
            name: "embedding.weight".to_string(),
            tensor: &mut self.embedding.weights,
            frozen_prefix: dim,
        }];
        out.extend(self.event_conv.parameters_mut("event_conv"));
        out.extend(self.sequence_conv.parameters_mut("sequence_conv"));
        out.extend(self.dense.parameters_mut("dense"));
        out
    }

    /// Copies the gradients of a finished backward pass onto the parameters.
    pub fn attach_grads(&mut self, g: &Graph<T>, fwd: &Forward) -> Result<()> {
        let mut params = self.parameters_mut();
        if params.len() != fwd.params.len() {
            return Err(Error::Training("parameter binding mismatch".into()));
        }
        for (p, &v) in params.iter_mut().zip(&fwd.params) {
            let grad = g
                .grad(v)
                .ok_or_else(|| Error::Training(format!("no gradient recorded for {}", p.name)))?;
            p.tensor.set_grad(grad.to_vec())?;
        }
        Ok(())
    }

    pub fn parameter_norms(&self) -> Vec<(String, f64)> {
        self.named_parameters()
            .into_iter()
            .map(|(n, t)| (n, t.sq_norm().sqrt()))
            .collect()
    }

    pub fn write_checkpoint<W: Write>(&self, w: W) -> Result<()> {
        write_checkpoint(w, self.config.hash(), &self.named_parameters())
    }

    pub fn from_checkpoint(config: ModelConfig, ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.config_hash != config.hash() {
            return Err(Error::Format(format!(
                "checkpoint was written for config hash {:016x}, this config hashes to {:016x}",
                ckpt.config_hash,
                config.hash()
            )));
        }
        let mut model = Self::new(config, 0)?;
        let mut params = model.parameters_mut();
        if params.len() != ckpt.params.len() {
            return Err(Error::Format(format!(
                "expected {} parameters, checkpoint has {}",
                params.len(),
                ckpt.params.len()
            )));
        }
        for p in params.iter_mut() {
            let src = ckpt
                .get(&p.name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {}", p.name)))?;
            if src.shape() != p.tensor.shape() {
                return Err(Error::Format(format!(
                    "{}: checkpoint shape {:?}, model shape {:?}",
                    p.name,
                    src.shape(),
                    p.tensor.shape()
                )));
            }
            *p.tensor = src.cast();
        }
        drop(params);
        model.embedding = EmbeddingTable::from_weights(model.embedding.weights.clone())?;
        Ok(model)
    }

    pub fn read_checkpoint<R: Read>(config: ModelConfig, r: R) -> Result<Self> {
        Self::from_checkpoint(config, &read_checkpoint(r)?)
    }

    /// Writes `<stem>.hlog` and `<stem>.toml` side by side.
    pub fn save(&self, checkpoint_path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(checkpoint_path)?);
        self.write_checkpoint(f)?;
        std::fs::write(checkpoint_path.with_extension("toml"), self.config.to_toml())?;
        Ok(())
    }

    /// Loads a checkpoint and the config file written beside it.
    pub fn load(checkpoint_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(checkpoint_path.with_extension("toml"))?;
        let config = ModelConfig::from_toml(&text)?;
        let f = std::io::BufReader::new(std::fs::File::open(checkpoint_path)?);
        Self::read_checkpoint(config, f)
    }

    /// Builds a model from explicit layer parameters.
    pub fn from_parts(
        config: ModelConfig,
        embedding: EmbeddingTable<T>,
        event_layers: Vec<ConvLayer<T>>,
        sequence_layers: Vec<ConvLayer<T>>,
        dense_layers: Vec<DenseLayer<T>>,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            embedding,
            event_conv: ConvBlock::from_layers(event_layers)?,
            sequence_conv: ConvBlock::from_layers(sequence_layers)?,
            dense: DenseBlock::from_layers(dense_layers)?,
        })
    }
}
