//! Toy trainable multi-view denoiser: per-slot conv encoder with a
//! learned timestep embedding, one multi-head self-attention over the
//! concatenated tokens of all slots (the cross-view information path),
//! and a conv decoder back to latent channels. Small by design; it exists
//! to exercise the conditioning contract, not to chase capacity.

use super::VDenoiser;
use crate::assembly::SlotBatch;
use crate::camera::ModelConfig;
use crate::nn::{
    leaky_relu, leaky_relu_backward, upsample2, upsample2_backward, AttentionCache, Conv2d, Mat,
    MultiHeadAttention,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub width: usize,
    pub heads: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            width: 32,
            heads: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams<S> {
    pub model: ModelConfig,
    pub width: usize,
    pub heads: usize,
    pub timesteps: usize,
    /// 1x1 projection from the concatenated input channels to `width`.
    pub proj: Conv2d<S>,
    pub conv1: Conv2d<S>,
    /// Stride-2 conv producing the `n/2 x n/2` token grid.
    pub down: Conv2d<S>,
    pub attn: MultiHeadAttention<S>,
    pub dec: Conv2d<S>,
    /// 1x1 conv to the `k` output channels.
    pub out: Conv2d<S>,
    /// Learned per-timestep embedding added to the first conv activations.
    pub temb: Vec<Vec<S>>,
}

impl<S: Scalar> DenoiserParams<S> {
    pub fn init(
        model: &ModelConfig,
        cfg: &DenoiserConfig,
        timesteps: usize,
        seed: u64,
    ) -> Self {
        assert!(model.latent_res % 2 == 0, "token grid needs even n");
        let mut rng = StdRng::seed_from_u64(seed);
        let (w, cin, k) = (cfg.width, model.input_channels(), model.latent_channels);
        let temb = (0..=timesteps)
            .map(|_| {
                (0..w)
                    .map(|_| S::of(rng.sample::<f64, _>(StandardNormal) * 0.02))
                    .collect()
            })
            .collect();
        DenoiserParams {
            model: *model,
            width: w,
            heads: cfg.heads,
            timesteps,
            proj: Conv2d::he_init(cin, w, 1, 1, &mut rng),
            conv1: Conv2d::he_init(w, w, 3, 1, &mut rng),
            down: Conv2d::he_init(w, w, 3, 2, &mut rng),
            attn: MultiHeadAttention::he_init(w, cfg.heads, &mut rng),
            dec: Conv2d::he_init(w, w, 3, 1, &mut rng),
            out: Conv2d::he_init(w, k, 1, 1, &mut rng),
            temb,
        }
    }

    pub fn zeros_like(&self) -> Self {
        DenoiserParams {
            model: self.model,
            width: self.width,
            heads: self.heads,
            timesteps: self.timesteps,
            proj: self.proj.zeros_like(),
            conv1: self.conv1.zeros_like(),
            down: self.down.zeros_like(),
            attn: self.attn.zeros_like(),
            dec: self.dec.zeros_like(),
            out: self.out.zeros_like(),
            temb: vec![vec![S::zero(); self.width]; self.timesteps + 1],
        }
    }

    /// All parameter vectors in a fixed order, for the optimizer and the
    /// checkpoint format.
    pub fn flat_slices(&self) -> Vec<(String, &Vec<S>)> {
        let mut out: Vec<(String, &Vec<S>)> = vec![
            ("proj.weight".into(), &self.proj.weight),
            ("proj.bias".into(), &self.proj.bias),
            ("conv1.weight".into(), &self.conv1.weight),
            ("conv1.bias".into(), &self.conv1.bias),
            ("down.weight".into(), &self.down.weight),
            ("down.bias".into(), &self.down.bias),
            ("attn.wq.weight".into(), &self.attn.wq.weight.data),
            ("attn.wq.bias".into(), &self.attn.wq.bias),
            ("attn.wk.weight".into(), &self.attn.wk.weight.data),
            ("attn.wk.bias".into(), &self.attn.wk.bias),
            ("attn.wv.weight".into(), &self.attn.wv.weight.data),
            ("attn.wv.bias".into(), &self.attn.wv.bias),
            ("attn.wo.weight".into(), &self.attn.wo.weight.data),
            ("attn.wo.bias".into(), &self.attn.wo.bias),
            ("dec.weight".into(), &self.dec.weight),
            ("dec.bias".into(), &self.dec.bias),
            ("out.weight".into(), &self.out.weight),
            ("out.bias".into(), &self.out.bias),
        ];
        for (t, row) in self.temb.iter().enumerate() {
            out.push((format!("temb.{t}"), row));
        }
        out
    }

    pub fn flat_slices_mut(&mut self) -> Vec<&mut Vec<S>> {
        let mut out: Vec<&mut Vec<S>> = vec![
            &mut self.proj.weight,
            &mut self.proj.bias,
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.down.weight,
            &mut self.down.bias,
            &mut self.attn.wq.weight.data,
            &mut self.attn.wq.bias,
            &mut self.attn.wk.weight.data,
            &mut self.attn.wk.bias,
            &mut self.attn.wv.weight.data,
            &mut self.attn.wv.bias,
            &mut self.attn.wo.weight.data,
            &mut self.attn.wo.bias,
            &mut self.dec.weight,
            &mut self.dec.bias,
            &mut self.out.weight,
            &mut self.out.bias,
        ];
        out.extend(self.temb.iter_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.flat_slices().iter().map(|(_, v)| v.len()).sum()
    }

    pub fn forward(&self, batch: &SlotBatch<S>) -> Vec<Tensor<S>> {
        self.forward_cached(batch).0
    }

    pub fn forward_cached(&self, batch: &SlotBatch<S>) -> (Vec<Tensor<S>>, ToyCache<S>) {
        let v = batch.slots.len();
        let n = self.model.latent_res;
        let m = n / 2;
        let t = batch.t.min(self.timesteps);
        let mut inputs = Vec::with_capacity(v);
        let mut h0s = Vec::with_capacity(v);
        let mut h1pres = Vec::with_capacity(v);
        let mut h1s = Vec::with_capacity(v);
        let mut h2pres = Vec::with_capacity(v);
        let mut tokens = Mat::zeros(v * m * m, self.width);
        for (s, slot) in batch.slots.iter().enumerate() {
            let x = slot.to_input();
            let h0 = self.proj.forward(&x);
            let mut h1pre = self.conv1.forward(&h0);
            for c in 0..self.width {
                let bias = self.temb[t][c];
                h1pre.channel_mut(c).iter_mut().for_each(|v| *v += bias);
            }
            let h1 = leaky_relu(&h1pre);
            let h2pre = self.down.forward(&h1);
            let h2 = leaky_relu(&h2pre);
            for i in 0..m {
                for j in 0..m {
                    let row = s * m * m + i * m + j;
                    for c in 0..self.width {
                        tokens.set(row, c, h2.at(c, i, j));
                    }
                }
            }
            inputs.push(x);
            h0s.push(h0);
            h1pres.push(h1pre);
            h1s.push(h1);
            h2pres.push(h2pre);
        }
        let (attn_out, attn_cache) = self.attn.forward(&tokens);
        let mut y = tokens.clone();
        y.add_inplace(&attn_out);

        let mut ups = Vec::with_capacity(v);
        let mut d1pres = Vec::with_capacity(v);
        let mut outputs = Vec::with_capacity(v);
        for s in 0..v {
            let mut ys = Tensor::zeros(self.width, m, m);
            for i in 0..m {
                for j in 0..m {
                    let row = s * m * m + i * m + j;
                    for c in 0..self.width {
                        ys.set(c, i, j, y.at(row, c));
                    }
                }
            }
            let up = upsample2(&ys);
            let d1pre = self.dec.forward(&up);
            let d1 = leaky_relu(&d1pre);
            outputs.push(self.out.forward(&d1));
            ups.push(up);
            d1pres.push(d1pre);
        }
        (
            outputs,
            ToyCache {
                t,
                inputs,
                h0s,
                h1pres,
                h1s,
                h2pres,
                tokens,
                attn_cache,
                ups,
                d1pres,
            },
        )
    }

    /// Analytic gradients for every parameter and for each slot's input
    /// tensor, given upstream gradients on the per-slot outputs.
    pub fn backward(
        &self,
        cache: &ToyCache<S>,
        upstream: &[Tensor<S>],
    ) -> (DenoiserParams<S>, Vec<Tensor<S>>) {
        let v = cache.inputs.len();
        assert_eq!(upstream.len(), v);
        let n = self.model.latent_res;
        let m = n / 2;
        let mut grads = self.zeros_like();
        let mut d_y = Mat::zeros(v * m * m, self.width);
        for s in 0..v {
            let d1 = leaky_relu(&cache.d1pres[s]);
            let (g_out, d_d1) = self.out.backward(&d1, &upstream[s]);
            acc_conv(&mut grads.out, &g_out);
            let d_d1pre = leaky_relu_backward(&cache.d1pres[s], &d_d1);
            let (g_dec, d_up) = self.dec.backward(&cache.ups[s], &d_d1pre);
            acc_conv(&mut grads.dec, &g_dec);
            let d_ys = upsample2_backward(&d_up);
            for i in 0..m {
                for j in 0..m {
                    let row = s * m * m + i * m + j;
                    for c in 0..self.width {
                        d_y.set(row, c, d_ys.at(c, i, j));
                    }
                }
            }
        }
        // Residual: y = tokens + attn(tokens).
        let (g_attn, d_tokens_attn) = self.attn.backward(&cache.tokens, &cache.attn_cache, &d_y);
        grads.attn = g_attn;
        let mut d_tokens = d_y;
        d_tokens.add_inplace(&d_tokens_attn);

        let mut d_inputs = Vec::with_capacity(v);
        for s in 0..v {
            let mut d_h2 = Tensor::zeros(self.width, m, m);
            for i in 0..m {
                for j in 0..m {
                    let row = s * m * m + i * m + j;
                    for c in 0..self.width {
                        d_h2.set(c, i, j, d_tokens.at(row, c));
                    }
                }
            }
            let d_h2pre = leaky_relu_backward(&cache.h2pres[s], &d_h2);
            let (g_down, d_h1) = self.down.backward(&cache.h1s[s], &d_h2pre);
            acc_conv(&mut grads.down, &g_down);
            let d_h1pre = leaky_relu_backward(&cache.h1pres[s], &d_h1);
            for c in 0..self.width {
                let sum: S = d_h1pre.channel(c).iter().copied().sum();
                grads.temb[cache.t][c] += sum;
            }
            let (g_conv1, d_h0) = self.conv1.backward(&cache.h0s[s], &d_h1pre);
            acc_conv(&mut grads.conv1, &g_conv1);
            let (g_proj, d_x) = self.proj.backward(&cache.inputs[s], &d_h0);
            acc_conv(&mut grads.proj, &g_proj);
            d_inputs.push(d_x);
        }
        (grads, d_inputs)
    }
}

fn acc_conv<S: Scalar>(into: &mut Conv2d<S>, from: &Conv2d<S>) {
    for (a, b) in into.weight.iter_mut().zip(&from.weight) {
        *a += *b;
    }
    for (a, b) in into.bias.iter_mut().zip(&from.bias) {
        *a += *b;
    }
}

pub struct ToyCache<S> {
    t: usize,
    inputs: Vec<Tensor<S>>,
    h0s: Vec<Tensor<S>>,
    h1pres: Vec<Tensor<S>>,
    h1s: Vec<Tensor<S>>,
    h2pres: Vec<Tensor<S>>,
    tokens: Mat<S>,
    attn_cache: AttentionCache<S>,
    ups: Vec<Tensor<S>>,
    d1pres: Vec<Tensor<S>>,
}

impl<S: Scalar> VDenoiser<S> for DenoiserParams<S> {
    fn predict(&self, batch: &SlotBatch<S>) -> Vec<Tensor<S>> {
        self.forward(batch)
    }
}
