//! Naive reference implementations shared by the integration tests. Every
//! function here is written as plain nested loops over indices, with no
//! sharing of code with the library kernels.
#![allow(dead_code)]

pub mod loghub;

use hierlog::model::{EncodedSequence, HierCnn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// `[m, k] · [k, n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// Same-padded conv of one `[len, c_in]` slice truncated to `valid`
/// positions; positions from `valid` on are zero in the output.
#[allow(clippy::too_many_arguments)]
pub fn conv1d(x: &[f64], w: &[f64], bias: &[f64], len: usize, valid: usize, c_in: usize, c_out: usize, k: usize) -> Vec<f64> {
    let half = (k / 2) as isize;
    let mut out = vec![0.0; len * c_out];
    for t in 0..valid {
        for o in 0..c_out {
            let mut s = bias[o];
            for dt in 0..k {
                let src = t as isize + dt as isize - half;
                if src < 0 || src >= valid as isize {
                    continue;
                }
                for i in 0..c_in {
                    s += x[src as usize * c_in + i] * w[(dt * c_in + i) * c_out + o];
                }
            }
            out[t * c_out + o] = s;
        }
    }
    out
}

/// Max over rows `0..valid` of a `[len, c]` slice.
pub fn column_max(x: &[f64], c: usize, valid: usize) -> Vec<f64> {
    (0..c)
        .map(|j| (0..valid).map(|t| x[t * c + j]).fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

pub fn weighted_bce(p: &[f64], y: &[f64], w: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..p.len() {
        let pc = p[i].clamp(1e-7, 1.0 - 1e-7);
        total += -(w * y[i] * pc.ln() + (1.0 - y[i]) * (1.0 - pc).ln());
    }
    total / p.len() as f64
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

/// One sequence through the network, event by event, with every layer
/// written out as loops over the stored weights.
pub fn model_forward(model: &HierCnn<f64>, seq: &EncodedSequence) -> f64 {
    let cfg = model.config();
    let table = model.embedding().weights.data();
    let ce = cfg.char_embedding;
    let mut event_vectors = Vec::new();
    for ev in seq.events.iter().take(cfg.max_events) {
        let codes: Vec<u8> = ev.iter().take(cfg.max_chars).copied().collect();
        let valid = codes.len().max(1);
        let len = valid;
        let mut x = vec![0.0; len * ce];
        for (t, &c) in codes.iter().enumerate() {
            for d in 0..ce {
                x[t * ce + d] = table[c as usize * ce + d];
            }
        }
        let mut c_in = ce;
        for layer in model.event_conv().layers() {
            let c_out = layer.out_channels();
            x = relu(conv1d(&x, layer.kernel.data(), layer.bias.data(), len, valid, c_in, c_out, layer.kernel_size()));
            c_in = c_out;
        }
        event_vectors.push(column_max(&x, c_in, valid));
    }
    let n = event_vectors.len();
    let mut c_in = event_vectors[0].len();
    let mut x: Vec<f64> = event_vectors.concat();
    for layer in model.sequence_conv().layers() {
        let c_out = layer.out_channels();
        x = relu(conv1d(&x, layer.kernel.data(), layer.bias.data(), n, n, c_in, c_out, layer.kernel_size()));
        c_in = c_out;
    }
    let mut h = column_max(&x, c_in, n);
    let layers = model.dense().layers();
    for (li, layer) in layers.iter().enumerate() {
        let (fan_in, fan_out) = (layer.weight.shape()[0], layer.weight.shape()[1]);
        let mut z = matmul(&h, layer.weight.data(), 1, fan_in, fan_out);
        for (zj, b) in z.iter_mut().zip(layer.bias.data()) {
            *zj += b;
        }
        h = if li + 1 == layers.len() {
            z.into_iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()
        } else {
            relu(z)
        };
    }
    h[0]
}
