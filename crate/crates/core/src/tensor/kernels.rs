//! Slice-level forward and backward loops behind the graph operations.
//!
//! Every routine here works on flat row-major buffers and trusts its caller
//! for shape agreement; [`super::Graph`] performs the checks.

use crate::scalar::Scalar;

/// `out[m, n] = a[m, k] · b[k, n]`.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Accumulates `da += dc · bᵀ` and `db += aᵀ · dc`.
#[allow(clippy::too_many_arguments)]
pub fn matmul_backward<T: Scalar>(
    a: &[T],
    b: &[T],
    dc: &[T],
    m: usize,
    k: usize,
    n: usize,
    da: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    if let Some(da) = da {
        for i in 0..m {
            let g = &dc[i * n..(i + 1) * n];
            for p in 0..k {
                let brow = &b[p * n..(p + 1) * n];
                let mut acc = T::zero();
                for (&gv, &bv) in g.iter().zip(brow) {
                    acc += gv * bv;
                }
                da[i * k + p] += acc;
            }
        }
    }
    if let Some(db) = db {
        for i in 0..m {
            let g = &dc[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == T::zero() {
                    continue;
                }
                let drow = &mut db[p * n..(p + 1) * n];
                for (d, &gv) in drow.iter_mut().zip(g) {
                    *d += av * gv;
                }
            }
        }
    }
}

/// Geometry of a batched, length-masked "same" convolution.
///
/// Input is `[slices, len, c_in]`, kernel `[k, c_in, c_out]`, output
/// `[slices, len, c_out]`. Slice `s` only has `lengths[s]` valid positions:
/// inputs beyond them read as zero and outputs beyond them are zero.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeometry {
    pub slices: usize,
    pub len: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
}

pub fn conv1d<T: Scalar>(
    input: &[T],
    kernel: &[T],
    bias: &[T],
    lengths: &[usize],
    g: ConvGeometry,
) -> Vec<T> {
    let ConvGeometry {
        slices,
        len,
        c_in,
        c_out,
        k,
    } = g;
    let half = (k - 1) / 2;
    let mut out = vec![T::zero(); slices * len * c_out];
    for s in 0..slices {
        let valid = lengths[s];
        for t in 0..valid {
            let row = &mut out[(s * len + t) * c_out..(s * len + t + 1) * c_out];
            row.copy_from_slice(bias);
            for dt in 0..k {
                let Some(src) = (t + dt).checked_sub(half) else {
                    continue;
                };
                if src >= valid {
                    continue;
                }
                let x = &input[(s * len + src) * c_in..(s * len + src + 1) * c_in];
                for (i, &xv) in x.iter().enumerate() {
                    if xv == T::zero() {
                        continue;
                    }
                    let krow = &kernel[(dt * c_in + i) * c_out..(dt * c_in + i + 1) * c_out];
                    for (o, &kv) in row.iter_mut().zip(krow) {
                        *o += xv * kv;
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward<T: Scalar>(
    input: &[T],
    kernel: &[T],
    lengths: &[usize],
    g: ConvGeometry,
    upstream: &[T],
    d_input: Option<&mut [T]>,
    d_kernel: Option<&mut [T]>,
    d_bias: Option<&mut [T]>,
) {
    let ConvGeometry {
        slices,
        len,
        c_in,
        c_out,
        k,
    } = g;
    let half = (k - 1) / 2;
    let mut d_input = d_input;
    let mut d_kernel = d_kernel;
    let mut d_bias = d_bias;
    for s in 0..slices {
        let valid = lengths[s];
        for t in 0..valid {
            let up = &upstream[(s * len + t) * c_out..(s * len + t + 1) * c_out];
            if let Some(db) = d_bias.as_deref_mut() {
                for (d, &u) in db.iter_mut().zip(up) {
                    *d += u;
                }
            }
            for dt in 0..k {
                let Some(src) = (t + dt).checked_sub(half) else {
                    continue;
                };
                if src >= valid {
                    continue;
                }
                let base = (s * len + src) * c_in;
                for i in 0..c_in {
                    let koff = (dt * c_in + i) * c_out;
                    if let Some(dx) = d_input.as_deref_mut() {
                        let krow = &kernel[koff..koff + c_out];
                        let mut acc = T::zero();
                        for (&u, &kv) in up.iter().zip(krow) {
                            acc += u * kv;
                        }
                        dx[base + i] += acc;
                    }
                    if let Some(dk) = d_kernel.as_deref_mut() {
                        let xv = input[base + i];
                        if xv != T::zero() {
                            for (d, &u) in dk[koff..koff + c_out].iter_mut().zip(up) {
                                *d += xv * u;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Maximum over the middle axis of an `[outer, axis, inner]` view, looking
/// only at the first `lengths[o]` positions of each outer slice.
///
/// Returns the maxima (`[outer, inner]`) and the winning axis position of
/// each; ties go to the lowest position.
pub fn masked_max<T: Scalar>(
    input: &[T],
    outer: usize,
    axis: usize,
    inner: usize,
    lengths: &[usize],
) -> (Vec<T>, Vec<usize>) {
    let mut out = vec![T::zero(); outer * inner];
    let mut arg = vec![0usize; outer * inner];
    for o in 0..outer {
        let base = o * axis * inner;
        let dst = &mut out[o * inner..(o + 1) * inner];
        dst.copy_from_slice(&input[base..base + inner]);
        let winners = &mut arg[o * inner..(o + 1) * inner];
        for p in 1..lengths[o] {
            let row = &input[base + p * inner..base + (p + 1) * inner];
            for j in 0..inner {
                if row[j] > dst[j] {
                    dst[j] = row[j];
                    winners[j] = p;
                }
            }
        }
    }
    (out, arg)
}

/// Routes each upstream value to the input position that won the max.
pub fn masked_max_backward<T: Scalar>(
    argmax: &[usize],
    outer: usize,
    axis: usize,
    inner: usize,
    upstream: &[T],
    d_input: &mut [T],
) {
    for o in 0..outer {
        for j in 0..inner {
            let p = argmax[o * inner + j];
            d_input[(o * axis + p) * inner + j] += upstream[o * inner + j];
        }
    }
}

/// Row gather from a `[vocab, dim]` table.
pub fn gather_rows<T: Scalar>(table: &[T], dim: usize, indices: &[usize]) -> Vec<T> {
    let mut out = Vec::with_capacity(indices.len() * dim);
    for &ix in indices {
        out.extend_from_slice(&table[ix * dim..(ix + 1) * dim]);
    }
    out
}

/// Scatter-add of upstream rows into table rows, skipping frozen row 0.
pub fn scatter_add_rows<T: Scalar>(d_table: &mut [T], dim: usize, indices: &[usize], upstream: &[T]) {
    for (n, &ix) in indices.iter().enumerate() {
        if ix == 0 {
            continue;
        }
        let dst = &mut d_table[ix * dim..(ix + 1) * dim];
        for (d, &u) in dst.iter_mut().zip(&upstream[n * dim..(n + 1) * dim]) {
            *d += u;
        }
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Probability clamp bound shared by the loss forward and backward.
pub const PROB_CLAMP: f64 = 1e-7;

/// Weighted binary cross-entropy averaged over the batch.
pub fn weighted_bce<T: Scalar>(probs: &[T], labels: &[T], positive_weight: T) -> T {
    let lo = T::of(PROB_CLAMP);
    let hi = T::one() - lo;
    let mut total = T::zero();
    for (&p, &y) in probs.iter().zip(labels) {
        let pc = p.max(lo).min(hi);
        total += positive_weight * y * pc.ln() + (T::one() - y) * (T::one() - pc).ln();
    }
    -total / T::of(probs.len() as f64)
}

/// d(loss)/d(p); zero where the clamp is active.
pub fn weighted_bce_grad<T: Scalar>(probs: &[T], labels: &[T], positive_weight: T) -> Vec<T> {
    let lo = T::of(PROB_CLAMP);
    let hi = T::one() - lo;
    let scale = T::one() / T::of(probs.len() as f64);
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            if p < lo || p > hi {
                T::zero()
            } else {
                -scale * (positive_weight * y / p - (T::one() - y) / (T::one() - p))
            }
        })
        .collect()
}
