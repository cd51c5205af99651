//! Neural-net primitives with hand-written forward and backward passes:
//! convolutions (same padding, stride 1 or 2), leaky ReLU, 2x2 max
//! pooling, nearest upsampling, token linears, softmax and multi-head
//! self-attention. Everything is plain loops over [`Tensor`] storage;
//! gradient correctness is pinned by finite-difference tests.

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::rngs::StdRng;
use rand::Rng;
use rand_distr::StandardNormal;

pub const LEAKY_SLOPE: f64 = 0.01;

/// 2D convolution, zero-padded so stride 1 preserves the spatial size and
/// stride 2 halves it. Weight layout `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<S> {
    pub weight: Vec<S>,
    pub bias: Vec<S>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: usize,
    pub stride: usize,
}

impl<S: Scalar> Conv2d<S> {
    pub fn zeros(in_ch: usize, out_ch: usize, ksize: usize, stride: usize) -> Self {
        Conv2d {
            weight: vec![S::zero(); out_ch * in_ch * ksize * ksize],
            bias: vec![S::zero(); out_ch],
            in_ch,
            out_ch,
            ksize,
            stride,
        }
    }

    /// He-normal weights, zero biases.
    pub fn he_init(in_ch: usize, out_ch: usize, ksize: usize, stride: usize, rng: &mut StdRng) -> Self {
        let mut layer = Self::zeros(in_ch, out_ch, ksize, stride);
        let std = (2.0 / (in_ch * ksize * ksize) as f64).sqrt();
        for w in layer.weight.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *w = S::of(z * std);
        }
        layer
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_ch, self.out_ch, self.ksize, self.stride)
    }

    #[inline]
    fn w_at(&self, o: usize, i: usize, ky: usize, kx: usize) -> S {
        self.weight[((o * self.in_ch + i) * self.ksize + ky) * self.ksize + kx]
    }

    pub fn forward(&self, input: &Tensor<S>) -> Tensor<S> {
        let (c, h, w) = input.shape();
        assert_eq!(c, self.in_ch, "conv input channels");
        let pad = self.ksize / 2;
        let (oh, ow) = (h / self.stride, w / self.stride);
        let mut out = Tensor::zeros(self.out_ch, oh, ow);
        // Kernel-tap outer loops so the inner loop is a row axpy.
        for o in 0..self.out_ch {
            out.channel_mut(o).iter_mut().for_each(|v| *v = self.bias[o]);
            for i in 0..self.in_ch {
                let in_ch = input.channel(i);
                for ky in 0..self.ksize {
                    for kx in 0..self.ksize {
                        let wgt = self.w_at(o, i, ky, kx);
                        if wgt == S::zero() {
                            continue;
                        }
                        let out_ch = out.channel_mut(o);
                        for y in 0..oh {
                            let sy = y * self.stride + ky;
                            if sy < pad || sy - pad >= h {
                                continue;
                            }
                            let in_row = &in_ch[(sy - pad) * w..(sy - pad) * w + w];
                            let out_row = &mut out_ch[y * ow..y * ow + ow];
                            if self.stride == 1 {
                                // x + kx - pad must land in [0, w).
                                let x_lo = pad.saturating_sub(kx);
                                let x_hi = (w + pad - kx).min(ow);
                                for x in x_lo..x_hi {
                                    out_row[x] += wgt * in_row[x + kx - pad];
                                }
                            } else {
                                for (x, out_v) in out_row.iter_mut().enumerate() {
                                    let sx = x * self.stride + kx;
                                    if sx >= pad && sx - pad < w {
                                        *out_v += wgt * in_row[sx - pad];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Returns `(d_params, d_input)` for the given upstream gradient.
    pub fn backward(&self, input: &Tensor<S>, d_out: &Tensor<S>) -> (Conv2d<S>, Tensor<S>) {
        let (c, h, w) = input.shape();
        let pad = self.ksize / 2;
        let mut grad = self.zeros_like();
        let mut d_input = Tensor::zeros(c, h, w);
        let (_, oh, ow) = d_out.shape();
        for o in 0..self.out_ch {
            let g_ch = d_out.channel(o);
            grad.bias[o] = g_ch.iter().copied().sum();
            for i in 0..self.in_ch {
                let in_ch = input.channel(i);
                for ky in 0..self.ksize {
                    for kx in 0..self.ksize {
                        let widx = ((o * self.in_ch + i) * self.ksize + ky) * self.ksize + kx;
                        let wgt = self.weight[widx];
                        let mut w_acc = S::zero();
                        let din_ch = d_input.channel_mut(i);
                        for y in 0..oh {
                            let sy = y * self.stride + ky;
                            if sy < pad || sy - pad >= h {
                                continue;
                            }
                            let in_row = &in_ch[(sy - pad) * w..(sy - pad) * w + w];
                            let g_row = &g_ch[y * ow..y * ow + ow];
                            let din_row = &mut din_ch[(sy - pad) * w..(sy - pad) * w + w];
                            if self.stride == 1 {
                                let x_lo = pad.saturating_sub(kx);
                                let x_hi = (w + pad - kx).min(ow);
                                for x in x_lo..x_hi {
                                    let g = g_row[x];
                                    w_acc += g * in_row[x + kx - pad];
                                    din_row[x + kx - pad] += g * wgt;
                                }
                            } else {
                                for (x, &g) in g_row.iter().enumerate() {
                                    let sx = x * self.stride + kx;
                                    if sx >= pad && sx - pad < w {
                                        w_acc += g * in_row[sx - pad];
                                        din_row[sx - pad] += g * wgt;
                                    }
                                }
                            }
                        }
                        grad.weight[widx] = w_acc;
                    }
                }
            }
        }
        (grad, d_input)
    }
}

pub fn leaky_relu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let slope = S::of(LEAKY_SLOPE);
    x.map(|v| if v > S::zero() { v } else { v * slope })
}

/// Gradient through leaky ReLU given the pre-activation values.
pub fn leaky_relu_backward<S: Scalar>(pre: &Tensor<S>, d_out: &Tensor<S>) -> Tensor<S> {
    assert_eq!(pre.shape(), d_out.shape());
    let slope = S::of(LEAKY_SLOPE);
    let (c, h, w) = pre.shape();
    let data = pre
        .as_slice()
        .iter()
        .zip(d_out.as_slice())
        .map(|(&p, &g)| if p > S::zero() { g } else { g * slope })
        .collect();
    Tensor::from_vec(c, h, w, data)
}

/// 2x2 max pooling, stride 2; ties go to the first element in scan order.
/// Returns the pooled tensor and the flat input index of each maximum.
pub fn max_pool2<S: Scalar>(x: &Tensor<S>) -> (Tensor<S>, Vec<usize>) {
    let (c, h, w) = x.shape();
    assert!(h % 2 == 0 && w % 2 == 0, "pooling needs even dimensions");
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(c, oh, ow);
    let mut argmax = vec![0usize; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for x_ in 0..ow {
                let mut best = S::neg_infinity();
                let mut best_idx = 0usize;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (sy, sx) = (2 * y + dy, 2 * x_ + dx);
                        let v = x.at(ch, sy, sx);
                        if v > best {
                            best = v;
                            best_idx = (ch * h + sy) * w + sx;
                        }
                    }
                }
                out.set(ch, y, x_, best);
                argmax[(ch * oh + y) * ow + x_] = best_idx;
            }
        }
    }
    (out, argmax)
}

pub fn max_pool2_backward<S: Scalar>(
    input_shape: (usize, usize, usize),
    argmax: &[usize],
    d_out: &Tensor<S>,
) -> Tensor<S> {
    let (c, h, w) = input_shape;
    let mut d_input = Tensor::zeros(c, h, w);
    for (flat, &src) in argmax.iter().enumerate() {
        d_input.as_mut_slice()[src] += d_out.as_slice()[flat];
    }
    d_input
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (c, h, w) = x.shape();
    let mut out = Tensor::zeros(c, 2 * h, 2 * w);
    for ch in 0..c {
        for y in 0..2 * h {
            for x_ in 0..2 * w {
                out.set(ch, y, x_, x.at(ch, y / 2, x_ / 2));
            }
        }
    }
    out
}

pub fn upsample2_backward<S: Scalar>(d_out: &Tensor<S>) -> Tensor<S> {
    let (c, h2, w2) = d_out.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut d_input = Tensor::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h2 {
            for x_ in 0..w2 {
                d_input.add_at(ch, y / 2, x_ / 2, d_out.at(ch, y, x_));
            }
        }
    }
    d_input
}

/// Row-major matrix for token processing (`rows` tokens of `cols` dims).
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn add_at(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] += v;
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Mat<S>) -> Mat<S> {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(r, k);
                if a == S::zero() {
                    continue;
                }
                for c in 0..other.cols {
                    out.add_at(r, c, a * other.at(k, c));
                }
            }
        }
        out
    }

    /// `self * otherᵀ`.
    pub fn matmul_t(&self, other: &Mat<S>) -> Mat<S> {
        assert_eq!(self.cols, other.cols);
        let mut out = Mat::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            for c in 0..other.rows {
                let mut acc = S::zero();
                for k in 0..self.cols {
                    acc += self.at(r, k) * other.at(c, k);
                }
                out.set(r, c, acc);
            }
        }
        out
    }

    /// `selfᵀ * other`.
    pub fn t_matmul(&self, other: &Mat<S>) -> Mat<S> {
        assert_eq!(self.rows, other.rows);
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            for r in 0..self.cols {
                let a = self.at(k, r);
                if a == S::zero() {
                    continue;
                }
                for c in 0..other.cols {
                    out.add_at(r, c, a * other.at(k, c));
                }
            }
        }
        out
    }

    pub fn add_inplace(&mut self, other: &Mat<S>) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scaled(&self, s: S) -> Mat<S> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }
}

/// Token-wise affine map `y = x Wᵀ + b` with weight `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<S> {
    pub weight: Mat<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            weight: Mat::zeros(out_dim, in_dim),
            bias: vec![S::zero(); out_dim],
        }
    }

    pub fn he_init(in_dim: usize, out_dim: usize, rng: &mut StdRng) -> Self {
        let mut l = Self::zeros(in_dim, out_dim);
        let std = (2.0 / in_dim as f64).sqrt();
        for w in l.weight.data.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *w = S::of(z * std);
        }
        l
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.weight.cols, self.weight.rows)
    }

    pub fn forward(&self, x: &Mat<S>) -> Mat<S> {
        let mut out = x.matmul_t(&self.weight);
        for r in 0..out.rows {
            for c in 0..out.cols {
                out.add_at(r, c, self.bias[c]);
            }
        }
        out
    }

    /// Returns `(d_params, d_x)`.
    pub fn backward(&self, x: &Mat<S>, d_out: &Mat<S>) -> (Linear<S>, Mat<S>) {
        let mut grad = self.zeros_like();
        grad.weight = d_out.t_matmul(x);
        for r in 0..d_out.rows {
            for c in 0..d_out.cols {
                grad.bias[c] += d_out.at(r, c);
            }
        }
        let d_x = d_out.matmul(&self.weight);
        (grad, d_x)
    }
}

/// Row-wise softmax; each output row sums to one.
pub fn softmax_rows<S: Scalar>(x: &Mat<S>) -> Mat<S> {
    let mut out = Mat::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let row = x.row(r);
        let m = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
        let mut sum = S::zero();
        for c in 0..x.cols {
            let e = (x.at(r, c) - m).exp();
            out.set(r, c, e);
            sum += e;
        }
        for c in 0..x.cols {
            out.set(r, c, out.at(r, c) / sum);
        }
    }
    out
}

/// Gradient through row-wise softmax given its output `y`.
pub fn softmax_rows_backward<S: Scalar>(y: &Mat<S>, d_out: &Mat<S>) -> Mat<S> {
    let mut d_x = Mat::zeros(y.rows, y.cols);
    for r in 0..y.rows {
        let mut dot = S::zero();
        for c in 0..y.cols {
            dot += y.at(r, c) * d_out.at(r, c);
        }
        for c in 0..y.cols {
            d_x.set(r, c, y.at(r, c) * (d_out.at(r, c) - dot));
        }
    }
    d_x
}

/// Single multi-head self-attention over one token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention<S> {
    pub wq: Linear<S>,
    pub wk: Linear<S>,
    pub wv: Linear<S>,
    pub wo: Linear<S>,
    pub heads: usize,
}

pub struct AttentionCache<S> {
    q: Mat<S>,
    k: Mat<S>,
    v: Mat<S>,
    attn: Vec<Mat<S>>,
    ctx: Mat<S>,
}

impl<S: Scalar> MultiHeadAttention<S> {
    pub fn zeros(dim: usize, heads: usize) -> Self {
        assert_eq!(dim % heads, 0);
        MultiHeadAttention {
            wq: Linear::zeros(dim, dim),
            wk: Linear::zeros(dim, dim),
            wv: Linear::zeros(dim, dim),
            wo: Linear::zeros(dim, dim),
            heads,
        }
    }

    pub fn he_init(dim: usize, heads: usize, rng: &mut StdRng) -> Self {
        assert_eq!(dim % heads, 0);
        MultiHeadAttention {
            wq: Linear::he_init(dim, dim, rng),
            wk: Linear::he_init(dim, dim, rng),
            wv: Linear::he_init(dim, dim, rng),
            wo: Linear::he_init(dim, dim, rng),
            heads,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.wq.weight.cols, self.heads)
    }

    fn head_slice(&self, m: &Mat<S>, h: usize) -> Mat<S> {
        let dh = m.cols / self.heads;
        let mut out = Mat::zeros(m.rows, dh);
        for r in 0..m.rows {
            for c in 0..dh {
                out.set(r, c, m.at(r, h * dh + c));
            }
        }
        out
    }

    pub fn forward(&self, x: &Mat<S>) -> (Mat<S>, AttentionCache<S>) {
        let q = self.wq.forward(x);
        let k = self.wk.forward(x);
        let v = self.wv.forward(x);
        let dh = q.cols / self.heads;
        let scale = S::one() / S::of_usize(dh).sqrt();
        let mut ctx = Mat::zeros(x.rows, q.cols);
        let mut attn = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = (
                self.head_slice(&q, h),
                self.head_slice(&k, h),
                self.head_slice(&v, h),
            );
            let scores = qh.matmul_t(&kh).scaled(scale);
            let a = softmax_rows(&scores);
            let ctx_h = a.matmul(&vh);
            for r in 0..ctx.rows {
                for c in 0..dh {
                    ctx.set(r, h * dh + c, ctx_h.at(r, c));
                }
            }
            attn.push(a);
        }
        let out = self.wo.forward(&ctx);
        (out, AttentionCache { q, k, v, attn, ctx })
    }

    /// Returns `(d_params, d_x)`.
    pub fn backward(
        &self,
        x: &Mat<S>,
        cache: &AttentionCache<S>,
        d_out: &Mat<S>,
    ) -> (MultiHeadAttention<S>, Mat<S>) {
        let dh = cache.q.cols / self.heads;
        let scale = S::one() / S::of_usize(dh).sqrt();
        let (d_wo, d_ctx) = self.wo.backward(&cache.ctx, d_out);
        let mut d_q = Mat::zeros(cache.q.rows, cache.q.cols);
        let mut d_k = Mat::zeros(cache.k.rows, cache.k.cols);
        let mut d_v = Mat::zeros(cache.v.rows, cache.v.cols);
        for h in 0..self.heads {
            let (qh, kh, vh) = (
                self.head_slice(&cache.q, h),
                self.head_slice(&cache.k, h),
                self.head_slice(&cache.v, h),
            );
            let mut d_ctx_h = Mat::zeros(d_ctx.rows, dh);
            for r in 0..d_ctx.rows {
                for c in 0..dh {
                    d_ctx_h.set(r, c, d_ctx.at(r, h * dh + c));
                }
            }
            let a = &cache.attn[h];
            let d_a = d_ctx_h.matmul_t(&vh);
            let d_vh = a.t_matmul(&d_ctx_h);
            let d_scores = softmax_rows_backward(a, &d_a).scaled(scale);
            let d_qh = d_scores.matmul(&kh);
            let d_kh = d_scores.t_matmul(&qh);
            for r in 0..d_q.rows {
                for c in 0..dh {
                    d_q.add_at(r, h * dh + c, d_qh.at(r, c));
                    d_k.add_at(r, h * dh + c, d_kh.at(r, c));
                    d_v.add_at(r, h * dh + c, d_vh.at(r, c));
                }
            }
        }
        let (d_wq, dx_q) = self.wq.backward(x, &d_q);
        let (d_wk, dx_k) = self.wk.backward(x, &d_k);
        let (d_wv, dx_v) = self.wv.backward(x, &d_v);
        let mut d_x = dx_q;
        d_x.add_inplace(&dx_k);
        d_x.add_inplace(&dx_v);
        (
            MultiHeadAttention {
                wq: d_wq,
                wk: d_wk,
                wv: d_wv,
                wo: d_wo,
                heads: self.heads,
            },
            d_x,
        )
    }
}
