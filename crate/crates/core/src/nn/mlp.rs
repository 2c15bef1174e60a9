//! Two-hidden-layer dense network with partitioned output heads.
//!
//! Parameters live in one flat buffer in layer order
//! `W0, b0, W1, b1, W2, b2`, with every `W` row-major `(out, in)`. Keeping
//! them flat makes Adam, soft target updates, clipping and checkpointing
//! plain slice operations.
//!
//! Batched passes take row-major `(batch, dim)` buffers and go through the
//! GEMM in [`crate::scalar`].

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Relu => {
                if x > S::zero() {
                    x
                } else {
                    S::zero()
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the post-activation value.
    #[inline]
    fn grad_from_output<S: Scalar>(self, y: S) -> S {
        match self {
            Activation::Relu => {
                if y > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Tanh => S::one() - y * y,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Linear,
    Softmax,
}

impl HeadKind {
    pub fn tag(self) -> &'static str {
        match self {
            HeadKind::Linear => "linear",
            HeadKind::Softmax => "softmax",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "linear" => Some(HeadKind::Linear),
            "softmax" => Some(HeadKind::Softmax),
            _ => None,
        }
    }
}

/// A contiguous slice `[offset, offset + len)` of the output vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Head {
    pub offset: usize,
    pub len: usize,
    pub kind: HeadKind,
}

impl Head {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Builds a head table by laying groups end to end.
pub fn heads_from_groups(groups: &[(usize, HeadKind)]) -> Vec<Head> {
    let mut offset = 0;
    groups
        .iter()
        .map(|&(len, kind)| {
            let h = Head { offset, len, kind };
            offset += len;
            h
        })
        .collect()
}

fn validate_heads(heads: &[Head], output_len: usize) -> Result<()> {
    let mut cursor = 0;
    for h in heads {
        if h.len == 0 {
            return Err(Error::ShapeMismatch("empty output head".into()));
        }
        if h.offset != cursor {
            return Err(Error::ShapeMismatch(format!(
                "heads must tile the output: expected offset {cursor}, got {}",
                h.offset
            )));
        }
        cursor += h.len;
    }
    if cursor != output_len {
        return Err(Error::ShapeMismatch(format!(
            "heads cover {cursor} outputs, network has {output_len}"
        )));
    }
    Ok(())
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place<S: Scalar>(x: &mut [S]) {
    let max = x.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<S: Scalar>(x: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = i;
        }
    }
    best
}

/// Intermediate values of a batched forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct Trace<S> {
    pub batch: usize,
    pub input: Vec<S>,
    pub hidden: [Vec<S>; 2],
    /// Pre-head outputs.
    pub logits: Vec<S>,
    /// Outputs after the head nonlinearities.
    pub output: Vec<S>,
}

impl<S: Scalar> Trace<S> {
    pub fn output_row(&self, b: usize) -> &[S] {
        let n = self.output.len() / self.batch.max(1);
        &self.output[b * n..(b + 1) * n]
    }

    pub fn logits_row(&self, b: usize) -> &[S] {
        let n = self.logits.len() / self.batch.max(1);
        &self.logits[b * n..(b + 1) * n]
    }
}

/// Parameter gradient (flat, same layout as the network) plus the gradient
/// with respect to the input rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle<S> {
    pub params: Vec<S>,
    pub input: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy<S> {
    sizes: [usize; 4],
    activation: Activation,
    heads: Vec<Head>,
    params: Vec<S>,
}

fn param_count(sizes: &[usize; 4]) -> usize {
    (0..3).map(|l| sizes[l + 1] * sizes[l] + sizes[l + 1]).sum()
}

impl<S: Scalar> MlpPolicy<S> {
    /// Zero-initialized network.
    pub fn zeros(sizes: [usize; 4], activation: Activation, heads: Vec<Head>) -> Result<Self> {
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::ShapeMismatch(format!("layer sizes must be positive: {sizes:?}")));
        }
        validate_heads(&heads, sizes[3])?;
        Ok(MlpPolicy { sizes, activation, heads, params: vec![S::zero(); param_count(&sizes)] })
    }

    /// Hidden weights uniform in `±1/sqrt(fan_in)`, output weights uniform
    /// in `±3e-3`, biases zero.
    pub fn init<R: Rng + ?Sized>(
        sizes: [usize; 4],
        activation: Activation,
        heads: Vec<Head>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(sizes, activation, heads)?;
        for l in 0..3 {
            let limit = if l == 2 { 3e-3 } else { 1.0 / (sizes[l] as f64).sqrt() };
            let dist = Uniform::new_inclusive(-limit, limit);
            let (w, _) = net.layer_ranges(l);
            for p in &mut net.params[w] {
                *p = S::lit(dist.sample(rng));
            }
        }
        Ok(net)
    }

    pub fn from_params(
        sizes: [usize; 4],
        activation: Activation,
        heads: Vec<Head>,
        params: Vec<S>,
    ) -> Result<Self> {
        let mut net = Self::zeros(sizes, activation, heads)?;
        if params.len() != net.params.len() {
            return Err(Error::dims("parameter vector", net.params.len(), params.len()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> [usize; 4] {
        self.sizes
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        self.sizes[3]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Same topology and head table.
    pub fn congruent(&self, other: &Self) -> bool {
        self.sizes == other.sizes && self.heads == other.heads
    }

    /// Index ranges of `(weights, bias)` of layer `l` inside the flat buffer.
    pub fn layer_ranges(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        assert!(l < 3);
        let mut off = 0;
        for j in 0..l {
            off += self.sizes[j + 1] * self.sizes[j] + self.sizes[j + 1];
        }
        let w = self.sizes[l + 1] * self.sizes[l];
        (off..off + w, off + w..off + w + self.sizes[l + 1])
    }

    /// Flat index of `W_l[row, col]`.
    pub fn weight_index(&self, l: usize, row: usize, col: usize) -> usize {
        let (w, _) = self.layer_ranges(l);
        w.start + row * self.sizes[l] + col
    }

    /// Forward pass on `batch` row-major input rows.
    pub fn forward_batch(&self, input: &[S], batch: usize) -> Result<Trace<S>> {
        if input.len() != batch * self.sizes[0] {
            return Err(Error::dims("network input", batch * self.sizes[0], input.len()));
        }
        let mut layer_in: &[S] = input;
        let mut hidden: [Vec<S>; 2] = [Vec::new(), Vec::new()];
        let mut logits = Vec::new();
        for l in 0..3 {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (wr, br) = self.layer_ranges(l);
            let w = &self.params[wr];
            let bias = &self.params[br];
            let mut z = vec![S::zero(); batch * n_out];
            gemm(
                S::one(),
                MatRef::row_major(layer_in, batch, n_in),
                MatRef::transposed(w, n_out, n_in),
                S::zero(),
                &mut z,
            );
            for row in z.chunks_exact_mut(n_out) {
                for (v, &b) in row.iter_mut().zip(bias) {
                    *v += b;
                }
            }
            if l < 2 {
                for v in &mut z {
                    *v = self.activation.apply(*v);
                }
                hidden[l] = z;
                layer_in = &hidden[l];
            } else {
                logits = z;
            }
        }
        let mut output = logits.clone();
        let out_len = self.sizes[3];
        for row in output.chunks_exact_mut(out_len) {
            for h in &self.heads {
                if h.kind == HeadKind::Softmax {
                    softmax_in_place(&mut row[h.range()]);
                }
            }
        }
        Ok(Trace { batch, input: input.to_vec(), hidden, logits, output })
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[S]) -> Result<Vec<S>> {
        Ok(self.forward_batch(input, 1)?.output)
    }

    /// Maps a gradient with respect to the head outputs into a gradient with
    /// respect to the logits (softmax Jacobian per group, identity for
    /// linear heads).
    pub fn output_grad_to_logits(&self, trace: &Trace<S>, upstream: &[S]) -> Result<Vec<S>> {
        let n = self.sizes[3];
        if upstream.len() != trace.batch * n {
            return Err(Error::dims("upstream gradient", trace.batch * n, upstream.len()));
        }
        let mut dlogits = upstream.to_vec();
        for (b, row) in dlogits.chunks_exact_mut(n).enumerate() {
            let y = trace.output_row(b);
            for h in &self.heads {
                if h.kind != HeadKind::Softmax {
                    continue;
                }
                let r = h.range();
                let dot: S = row[r.clone()].iter().zip(&y[r.clone()]).map(|(&g, &p)| g * p).sum();
                for k in r {
                    row[k] = y[k] * (row[k] - dot);
                }
            }
        }
        Ok(dlogits)
    }

    /// Backward pass for `L = <upstream, output>` summed over the batch.
    pub fn backward_batch(&self, trace: &Trace<S>, upstream: &[S]) -> Result<GradBundle<S>> {
        let dlogits = self.output_grad_to_logits(trace, upstream)?;
        Ok(self.backward_logits(trace, &dlogits, true))
    }

    /// Backward pass starting from a gradient on the logits. When
    /// `want_params` is false the parameter gradient is left zero, which
    /// skips half of the GEMM work.
    pub fn backward_logits(&self, trace: &Trace<S>, dlogits: &[S], want_params: bool) -> GradBundle<S> {
        let batch = trace.batch;
        assert_eq!(dlogits.len(), batch * self.sizes[3], "logit gradient shape");
        let mut params = vec![S::zero(); self.params.len()];
        let mut delta = dlogits.to_vec();
        let mut input_grad = Vec::new();
        for l in (0..3).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let layer_in: &[S] = if l == 0 { &trace.input } else { &trace.hidden[l - 1] };
            let (wr, br) = self.layer_ranges(l);
            if want_params {
                gemm(
                    S::one(),
                    MatRef::transposed(&delta, batch, n_out),
                    MatRef::row_major(layer_in, batch, n_in),
                    S::zero(),
                    &mut params[wr.clone()],
                );
                let db = &mut params[br];
                for row in delta.chunks_exact(n_out) {
                    for (acc, &d) in db.iter_mut().zip(row) {
                        *acc += d;
                    }
                }
            }
            let mut d_in = vec![S::zero(); batch * n_in];
            gemm(
                S::one(),
                MatRef::row_major(&delta, batch, n_out),
                MatRef::row_major(&self.params[wr], n_out, n_in),
                S::zero(),
                &mut d_in,
            );
            if l > 0 {
                for (d, &y) in d_in.iter_mut().zip(layer_in) {
                    *d *= self.activation.grad_from_output(y);
                }
                delta = d_in;
            } else {
                input_grad = d_in;
            }
        }
        GradBundle { params, input: input_grad }
    }

    /// Single-sample backward pass.
    pub fn backward(&self, input: &[S], upstream: &[S]) -> Result<GradBundle<S>> {
        let trace = self.forward_batch(input, 1)?;
        self.backward_batch(&trace, upstream)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

pub fn global_norm<S: Scalar>(grads: &[S]) -> S {
    grads.iter().map(|&g| g * g).sum::<S>().sqrt()
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm<S: Scalar>(grads: &mut [S], max_norm: S) -> S {
    let norm = global_norm(grads);
    if norm > max_norm && norm > S::zero() {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// `acc += scale * g`
pub fn axpy<S: Scalar>(acc: &mut [S], scale: S, g: &[S]) {
    assert_eq!(acc.len(), g.len());
    for (a, &x) in acc.iter_mut().zip(g) {
        *a += scale * x;
    }
}
