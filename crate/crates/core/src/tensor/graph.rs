use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::kernels::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Conv1d {
        input: Var,
        kernel: Var,
        bias: Var,
        lengths: Vec<usize>,
        geom: ConvGeometry,
    },
    MaskedMax {
        input: Var,
        outer: usize,
        axis: usize,
        inner: usize,
        argmax: Vec<usize>,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Embedding {
        table: Var,
        indices: Vec<usize>,
    },
    Reshape {
        x: Var,
    },
    ScatterRows {
        x: Var,
        rows: Vec<usize>,
    },
    WeightedBce {
        probs: Var,
        labels: Vec<T>,
        weight: T,
    },
    WeightedSum {
        x: Var,
        weights: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Reverse-mode tape.
///
/// Operations append nodes in execution order; [`Graph::backward`] walks them
/// in reverse, so each recorded operation is differentiated exactly once.
/// Gradients live beside the nodes rather than in the tensors so that values
/// stay immutable once recorded.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input; receives a gradient on backward.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Input that is never differentiated.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// The recorded argmax positions of a `masked_max` node.
    pub fn argmax(&self, v: Var) -> Option<&[usize]> {
        match &self.nodes[v.0].op {
            Op::MaskedMax { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    /// Value of `v` with its gradient attached, if one was computed.
    pub fn tensor_with_grad(&self, v: Var) -> Tensor<T> {
        let mut t = self.nodes[v.0].value.clone();
        if let Some(g) = &self.grads[v.0] {
            t.grad = Some(g.clone());
        }
        t
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        if a == b {
            return Err(Error::Config("matmul operands must be distinct variables".into()));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::new(&[m, n], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::MatMul { a, b }))
    }

    /// Adds `bias` (`[n]`) to every length-`n` row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.value(x).shape(), self.value(bias).shape());
        if sb.len() != 1 || *sx.last().unwrap() != sb[0] {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: sx.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let n = sb[0];
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        let out = Tensor::new(self.value(x).shape(), data)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, rg, Op::AddBias { x, bias }))
    }

    /// Length-preserving 1-D convolution with zero "same" padding.
    ///
    /// `input` is `[len, c_in]` or `[slices, len, c_in]`; `kernel` is
    /// `[k, c_in, c_out]` with odd `k`; `bias` is `[c_out]`. When `lengths` is
    /// given, slice `s` is treated as if it ended after `lengths[s]`
    /// positions: later inputs read as zero and later outputs are zero.
    pub fn conv1d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        lengths: Option<&[usize]>,
    ) -> Result<Var> {
        let si = self.value(input).shape().to_vec();
        let sk = self.value(kernel).shape().to_vec();
        let sb = self.value(bias).shape().to_vec();
        if sk.len() != 3 {
            return Err(Error::Shape {
                shape: sk,
                reason: "conv kernel must be [k, c_in, c_out]".into(),
            });
        }
        if sk[0].is_multiple_of(2) {
            return Err(Error::Config(format!(
                "conv1d kernel size must be odd, got {}",
                sk[0]
            )));
        }
        let (slices, len, c_in) = match si.as_slice() {
            [l, c] => (1, *l, *c),
            [n, l, c] => (*n, *l, *c),
            _ => {
                return Err(Error::Dimension {
                    op: "conv1d",
                    lhs: si,
                    rhs: sk,
                })
            }
        };
        if c_in != sk[1] {
            return Err(Error::Dimension {
                op: "conv1d",
                lhs: si,
                rhs: sk,
            });
        }
        if sb != [sk[2]] {
            return Err(Error::Dimension {
                op: "conv1d bias",
                lhs: sk,
                rhs: sb,
            });
        }
        let lengths = match lengths {
            Some(l) => {
                if l.len() != slices {
                    return Err(Error::Dimension {
                        op: "conv1d lengths",
                        lhs: si,
                        rhs: vec![l.len()],
                    });
                }
                if let Some(&bad) = l.iter().find(|&&v| v > len) {
                    return Err(Error::Dimension {
                        op: "conv1d lengths",
                        lhs: si,
                        rhs: vec![bad],
                    });
                }
                l.to_vec()
            }
            None => vec![len; slices],
        };
        let geom = ConvGeometry {
            slices,
            len,
            c_in,
            c_out: sk[2],
            k: sk[0],
        };
        let data = kernels::conv1d(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            &lengths,
            geom,
        );
        let mut out_shape = si.clone();
        *out_shape.last_mut().unwrap() = sk[2];
        let out = Tensor::new(&out_shape, data)?;
        let rg = self.rg(input) || self.rg(kernel) || self.rg(bias);
        Ok(self.push(
            out,
            rg,
            Op::Conv1d {
                input,
                kernel,
                bias,
                lengths,
                geom,
            },
        ))
    }

    /// Maximum over `axis`, restricted per outer slice to the first
    /// `lengths[o]` positions. `lengths` has one entry per combination of
    /// the axes before `axis`. The reduced axis is removed from the shape.
    pub fn masked_max(&mut self, input: Var, axis: usize, lengths: &[usize]) -> Result<Var> {
        let shape = self.value(input).shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape {
                shape,
                reason: format!("no axis {axis}"),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        if lengths.len() != outer {
            return Err(Error::Dimension {
                op: "masked_max lengths",
                lhs: shape,
                rhs: vec![lengths.len()],
            });
        }
        for (slice, &l) in lengths.iter().enumerate() {
            if l == 0 {
                return Err(Error::EmptyReduction { slice });
            }
            if l > axis_len {
                return Err(Error::Dimension {
                    op: "masked_max lengths",
                    lhs: shape,
                    rhs: vec![l],
                });
            }
        }
        let (data, argmax) =
            kernels::masked_max(self.value(input).data(), outer, axis_len, inner, lengths);
        let mut out_shape: Vec<usize> = shape[..axis].iter().chain(&shape[axis + 1..]).copied().collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let out = Tensor::new(&out_shape, data)?;
        let rg = self.rg(input);
        Ok(self.push(
            out,
            rg,
            Op::MaskedMax {
                input,
                outer,
                axis: axis_len,
                inner,
                argmax,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| v.max(T::zero())).collect();
        let out = Tensor::new(src.shape(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(out, rg, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| kernels::sigmoid(v)).collect();
        let out = Tensor::new(src.shape(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(out, rg, Op::Sigmoid { x })
    }

    /// Gathers rows of `table` (`[vocab, dim]`) for each index; the output
    /// shape is `index_shape` followed by `dim`. Row 0 never receives
    /// gradient.
    pub fn embedding(&mut self, table: Var, indices: &[usize], index_shape: &[usize]) -> Result<Var> {
        let st = self.value(table).shape().to_vec();
        if st.len() != 2 {
            return Err(Error::Shape {
                shape: st,
                reason: "embedding table must be [vocab, dim]".into(),
            });
        }
        if index_shape.iter().product::<usize>() != indices.len() {
            return Err(Error::Dimension {
                op: "embedding indices",
                lhs: index_shape.to_vec(),
                rhs: vec![indices.len()],
            });
        }
        let (vocab, dim) = (st[0], st[1]);
        if let Some((position, &index)) = indices.iter().enumerate().find(|(_, &i)| i >= vocab) {
            return Err(Error::Lookup {
                index,
                vocab,
                position,
            });
        }
        let data = kernels::gather_rows(self.value(table).data(), dim, indices);
        let mut shape = index_shape.to_vec();
        shape.push(dim);
        let out = Tensor::new(&shape, data)?;
        let rg = self.rg(table);
        Ok(self.push(
            out,
            rg,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, rg, Op::Reshape { x }))
    }

    /// Places row `i` of `x` (`[m, c]`) at row `rows[i]` of a zero
    /// `[out_rows, c]` tensor. Target rows must be distinct.
    pub fn scatter_rows(&mut self, x: Var, rows: &[usize], out_rows: usize) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        if sx.len() != 2 || rows.len() != sx[0] || rows.iter().any(|&r| r >= out_rows) {
            return Err(Error::Dimension {
                op: "scatter_rows",
                lhs: sx,
                rhs: vec![rows.len(), out_rows],
            });
        }
        let c = sx[1];
        let mut data = vec![T::zero(); out_rows * c];
        let src = self.value(x).data();
        for (i, &r) in rows.iter().enumerate() {
            data[r * c..(r + 1) * c].copy_from_slice(&src[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(&[out_rows, c], data)?;
        let rg = self.rg(x);
        Ok(self.push(
            out,
            rg,
            Op::ScatterRows {
                x,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Mean weighted binary cross-entropy of probabilities against 0/1
    /// labels; the positive term is scaled by `positive_weight`.
    pub fn weighted_bce(&mut self, probs: Var, labels: &[T], positive_weight: T) -> Result<Var> {
        if positive_weight <= T::zero() || !positive_weight.is_finite() {
            return Err(Error::Config(format!(
                "positive_weight must be > 0, got {positive_weight}"
            )));
        }
        let p = self.value(probs);
        if p.len() != labels.len() {
            return Err(Error::Dimension {
                op: "weighted_bce",
                lhs: p.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let loss = kernels::weighted_bce(p.data(), labels, positive_weight);
        let rg = self.rg(probs);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::WeightedBce {
                probs,
                labels: labels.to_vec(),
                weight: positive_weight,
            },
        ))
    }

    /// `Σ x[i] · weights[i]`; projects any tensor to a scalar.
    pub fn weighted_sum(&mut self, x: Var, weights: &[T]) -> Result<Var> {
        let src = self.value(x);
        if src.len() != weights.len() {
            return Err(Error::Dimension {
                op: "weighted_sum",
                lhs: src.shape().to_vec(),
                rhs: vec![weights.len()],
            });
        }
        let total = src.data().iter().zip(weights).map(|(&a, &b)| a * b).sum();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::scalar(total),
            rg,
            Op::WeightedSum {
                x,
                weights: weights.to_vec(),
            },
        ))
    }

    /// Hash of every discrete choice made on the forward pass (ReLU masks,
    /// max winners). Two evaluations with equal signatures lie on the same
    /// smooth piece of the function.
    pub fn signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::MaskedMax { argmax, .. } => argmax.hash(&mut h),
                Op::Relu { x } => {
                    for v in self.nodes[x.0].value.data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::WeightedBce { probs, .. } => {
                    let lo = T::of(kernels::PROB_CLAMP);
                    for &p in self.nodes[probs.0].value.data() {
                        (p < lo || p > T::one() - lo).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Backpropagates from the scalar `output`.
    ///
    /// Every node that requires gradient ends up with a (possibly zero)
    /// gradient buffer. Returns how many recorded operations were visited.
    pub fn backward(&mut self, output: Var) -> Result<usize> {
        if self.value(output).len() != 1 {
            return Err(Error::Shape {
                shape: self.value(output).shape().to_vec(),
                reason: "backward needs a scalar output".into(),
            });
        }
        for (node, grad) in self.nodes.iter().zip(self.grads.iter_mut()) {
            *grad = node.requires_grad.then(|| vec![T::zero(); node.value.len()]);
        }
        if !self.rg(output) {
            return Ok(0);
        }
        self.grads[output.0].as_mut().unwrap()[0] = T::one();

        let mut visited = 0;
        for i in (0..=output.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            visited += 1;
            if !self.nodes[i].requires_grad {
                continue;
            }
            let (before, rest) = self.grads.split_at_mut(i);
            let up = rest[0].as_deref().unwrap();
            let nodes = &self.nodes;
            let val = |v: Var| nodes[v.0].value.data();
            match &nodes[i].op {
                Op::Leaf => unreachable!(),
                Op::MatMul { a, b } => {
                    let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    let (ga, gb) = two_mut(before, *a, *b);
                    kernels::matmul_backward(val(*a), val(*b), up, m, k, n, ga, gb);
                }
                Op::AddBias { x, bias } => {
                    if let Some(gx) = before[x.0].as_deref_mut() {
                        add_into(gx, up);
                    }
                    if let Some(gb) = before[bias.0].as_deref_mut() {
                        let n = gb.len();
                        for row in up.chunks(n) {
                            add_into(gb, row);
                        }
                    }
                }
                Op::Conv1d {
                    input,
                    kernel,
                    bias,
                    lengths,
                    geom,
                } => {
                    let mut gi = before[input.0].take();
                    let mut gk = before[kernel.0].take();
                    let mut gb = before[bias.0].take();
                    kernels::conv1d_backward(
                        val(*input),
                        val(*kernel),
                        lengths,
                        *geom,
                        up,
                        gi.as_deref_mut(),
                        gk.as_deref_mut(),
                        gb.as_deref_mut(),
                    );
                    before[input.0] = gi;
                    before[kernel.0] = gk;
                    before[bias.0] = gb;
                }
                Op::MaskedMax {
                    input,
                    outer,
                    axis,
                    inner,
                    argmax,
                } => {
                    if let Some(gi) = before[input.0].as_deref_mut() {
                        kernels::masked_max_backward(argmax, *outer, *axis, *inner, up, gi);
                    }
                }
                Op::Relu { x } => {
                    if let Some(gx) = before[x.0].as_deref_mut() {
                        for ((g, &u), &xv) in gx.iter_mut().zip(up).zip(val(*x)) {
                            if xv > T::zero() {
                                *g += u;
                            }
                        }
                    }
                }
                Op::Sigmoid { x } => {
                    if let Some(gx) = before[x.0].as_deref_mut() {
                        for ((g, &u), &y) in gx.iter_mut().zip(up).zip(nodes[i].value.data()) {
                            *g += u * y * (T::one() - y);
                        }
                    }
                }
                Op::Embedding { table, indices } => {
                    if let Some(gt) = before[table.0].as_deref_mut() {
                        let dim = nodes[table.0].value.shape()[1];
                        kernels::scatter_add_rows(gt, dim, indices, up);
                    }
                }
                Op::Reshape { x } => {
                    if let Some(gx) = before[x.0].as_deref_mut() {
                        add_into(gx, up);
                    }
                }
                Op::ScatterRows { x, rows } => {
                    if let Some(gx) = before[x.0].as_deref_mut() {
                        let c = nodes[i].value.shape()[1];
                        for (r_in, &r_out) in rows.iter().enumerate() {
                            add_into(&mut gx[r_in * c..(r_in + 1) * c], &up[r_out * c..(r_out + 1) * c]);
                        }
                    }
                }
                Op::WeightedBce {
                    probs,
                    labels,
                    weight,
                } => {
                    if let Some(gp) = before[probs.0].as_deref_mut() {
                        let local = kernels::weighted_bce_grad(val(*probs), labels, *weight);
                        for (g, l) in gp.iter_mut().zip(local) {
                            *g += up[0] * l;
                        }
                    }
                }
                Op::WeightedSum { x, weights } => {
                    if let Some(gx) = before[x.0].as_deref_mut() {
                        for (g, &w) in gx.iter_mut().zip(weights) {
                            *g += up[0] * w;
                        }
                    }
                }
            }
        }
        Ok(visited)
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Mutable access to two distinct gradient slots; `matmul` rejects `a == b`.
fn two_mut<T>(grads: &mut [Option<Vec<T>>], a: Var, b: Var) -> (Option<&mut [T]>, Option<&mut [T]>) {
    let (lo, hi, swapped) = if a.0 < b.0 { (a.0, b.0, false) } else { (b.0, a.0, true) };
    let (left, right) = grads.split_at_mut(hi);
    let first = left[lo].as_deref_mut();
    let second = right[0].as_deref_mut();
    if swapped {
        (second, first)
    } else {
        (first, second)
    }
}
