//! The generalizable appearance encoder: a shallow convolutional network
//! that compresses a view latent into a d-dimensional global appearance
//! vector, plus its analytic gradients, spatial broadcast, and the
//! embedding clustering analysis.
//!
//! Architecture: alternating 3x3 same-padding convolutions with
//! leaky-ReLU(0.01) and 2x2 max pooling down to a 2x2 grid, flattened to
//! `d`. The layer count is `log2(n) - 1`; the channel schedule keeps a
//! head of 16-channel layers and a `(4, d/4)` tail, so the paper-scale
//! n=64 encoder is 16,16,16,4,2 and the flattened output dimension is
//! always `4 * (d/4) = d`. The bottleneck is structural: whatever the
//! input content, only `d` numbers come out.

mod cluster;

pub use cluster::{cluster_embeddings, cluster_purity, ClusterResult};

use crate::camera::ModelConfig;
use crate::nn::{
    leaky_relu, leaky_relu_backward, max_pool2, max_pool2_backward, Conv2d,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::rngs::StdRng;
use rand::SeedableRng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppearanceError {
    #[error("latent shape {got:?} does not match encoder input {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("invalid encoder geometry: {0}")]
    Geometry(String),
    #[error("clustering needs at least as many samples as clusters ({samples} < {clusters})")]
    TooFewSamples { samples: usize, clusters: usize },
}

/// Global appearance vector of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceEmbedding<S>(pub Vec<S>);

impl<S: Scalar> AppearanceEmbedding<S> {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn l2_distance(&self, other: &Self) -> S {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<S>()
            .sqrt()
    }
}

/// Conv channel schedule for a given latent resolution and embedding dim.
pub fn channel_schedule(latent_res: usize, appearance_dim: usize) -> Result<Vec<usize>, AppearanceError> {
    if !latent_res.is_power_of_two() || latent_res < 4 {
        return Err(AppearanceError::Geometry(format!(
            "latent resolution {latent_res} must be a power of two >= 4"
        )));
    }
    if appearance_dim % 4 != 0 || appearance_dim == 0 {
        return Err(AppearanceError::Geometry(format!(
            "appearance dim {appearance_dim} must be a positive multiple of 4 (2x2 spatial tail)"
        )));
    }
    let layers = latent_res.trailing_zeros() as usize - 1;
    let tail_ch = appearance_dim / 4;
    let schedule = if layers == 1 {
        vec![tail_ch]
    } else {
        let mut s = vec![16; layers - 2];
        s.push(4);
        s.push(tail_ch);
        s
    };
    Ok(schedule)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceEncoderParams<S> {
    pub layers: Vec<Conv2d<S>>,
    pub latent_channels: usize,
    pub latent_res: usize,
    pub appearance_dim: usize,
}

impl<S: Scalar> AppearanceEncoderParams<S> {
    /// He-normal kernels, zero biases, deterministic in the seed.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, AppearanceError> {
        let schedule = channel_schedule(cfg.latent_res, cfg.appearance_dim)?;
        let mut rng = StdRng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(schedule.len());
        let mut in_ch = cfg.latent_channels;
        for &out_ch in &schedule {
            layers.push(Conv2d::he_init(in_ch, out_ch, 3, 1, &mut rng));
            in_ch = out_ch;
        }
        Ok(AppearanceEncoderParams {
            layers,
            latent_channels: cfg.latent_channels,
            latent_res: cfg.latent_res,
            appearance_dim: cfg.appearance_dim,
        })
    }

    pub fn zeros_like(&self) -> Self {
        AppearanceEncoderParams {
            layers: self.layers.iter().map(|l| l.zeros_like()).collect(),
            ..self.clone()
        }
    }

    fn check_input(&self, latent: &Tensor<S>) -> Result<(), AppearanceError> {
        let expected = (self.latent_channels, self.latent_res, self.latent_res);
        if latent.shape() != expected {
            return Err(AppearanceError::ShapeMismatch {
                expected,
                got: latent.shape(),
            });
        }
        Ok(())
    }
}

/// Deterministic encoder forward pass: conv -> leaky-ReLU -> pool per
/// layer, then channel-major flatten of the final 2x2 grid.
pub fn encode_appearance<S: Scalar>(
    params: &AppearanceEncoderParams<S>,
    latent: &Tensor<S>,
) -> Result<AppearanceEmbedding<S>, AppearanceError> {
    params.check_input(latent)?;
    let mut x = latent.clone();
    for layer in &params.layers {
        let pre = layer.forward(&x);
        let act = leaky_relu(&pre);
        let (pooled, _) = max_pool2(&act);
        x = pooled;
    }
    debug_assert_eq!(x.height(), 2);
    Ok(AppearanceEmbedding(x.as_slice().to_vec()))
}

/// Analytic gradients of `<upstream, A(latent)>` with respect to encoder
/// parameters and the input latent.
pub fn encode_appearance_backward<S: Scalar>(
    params: &AppearanceEncoderParams<S>,
    latent: &Tensor<S>,
    upstream: &[S],
) -> Result<(AppearanceEncoderParams<S>, Tensor<S>), AppearanceError> {
    params.check_input(latent)?;
    assert_eq!(upstream.len(), params.appearance_dim);

    // Forward with cached intermediates.
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pres = Vec::with_capacity(params.layers.len());
    let mut argmaxes = Vec::with_capacity(params.layers.len());
    let mut x = latent.clone();
    for layer in &params.layers {
        let pre = layer.forward(&x);
        let act = leaky_relu(&pre);
        let (pooled, argmax) = max_pool2(&act);
        inputs.push(x);
        pres.push(pre);
        argmaxes.push(argmax);
        x = pooled;
    }

    let mut grads = params.zeros_like();
    let tail_ch = params.appearance_dim / 4;
    let mut d_x = Tensor::from_vec(tail_ch, 2, 2, upstream.to_vec());
    for (idx, layer) in params.layers.iter().enumerate().rev() {
        let act_shape = pres[idx].shape();
        let d_act = max_pool2_backward(act_shape, &argmaxes[idx], &d_x);
        let d_pre = leaky_relu_backward(&pres[idx], &d_act);
        let (d_layer, d_input) = layer.backward(&inputs[idx], &d_pre);
        grads.layers[idx] = d_layer;
        d_x = d_input;
    }
    Ok((grads, d_x))
}

/// Copies the embedding across every spatial position: `d x n x n`.
pub fn broadcast_embedding<S: Scalar>(e: &AppearanceEmbedding<S>, n: usize) -> Tensor<S> {
    let d = e.dim();
    let mut out = Tensor::zeros(d, n, n);
    for (c, &v) in e.0.iter().enumerate() {
        out.channel_mut(c).iter_mut().for_each(|x| *x = v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cfg(n: usize, k: usize, d: usize) -> ModelConfig {
        ModelConfig {
            slots: 2,
            latent_channels: k,
            appearance_dim: d,
            latent_res: n,
            image_res: n * 2,
        }
    }

    fn rand_latent(k: usize, n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = StdRng::seed_from_u64(seed);
        Tensor::from_vec(
            k,
            n,
            n,
            (0..k * n * n).map(|_| rng.gen::<f64>() - 0.5).collect(),
        )
    }

    #[test]
    fn paper_scale_schedule_and_shape() {
        // n=64 with d=8: five conv+pool layers, 16,16,16,4,2 channels,
        // spatial 64->32->16->8->4->2, flattened to 2*2*2 = 8.
        assert_eq!(channel_schedule(64, 8).unwrap(), vec![16, 16, 16, 4, 2]);
        let params = AppearanceEncoderParams::<f64>::init(&cfg(64, 4, 8), 0).unwrap();
        let e = encode_appearance(&params, &rand_latent(4, 64, 1)).unwrap();
        assert_eq!(e.dim(), 8);
    }

    #[test]
    fn desk_scale_schedule_and_shape() {
        // n=16: three conv+pool layers to reach 2x2; head trimmed to one
        // 16-channel layer, 2*2*2 = 8 = d.
        assert_eq!(channel_schedule(16, 8).unwrap(), vec![16, 4, 2]);
        let params = AppearanceEncoderParams::<f64>::init(&cfg(16, 12, 8), 0).unwrap();
        let e = encode_appearance(&params, &rand_latent(12, 16, 2)).unwrap();
        assert_eq!(e.dim(), 8);
        // Bottleneck dimension is content-independent.
        let e2 = encode_appearance(&params, &rand_latent(12, 16, 3)).unwrap();
        assert_eq!(e2.dim(), 8);
        assert!(channel_schedule(16, 6).is_err());
    }

    #[test]
    fn zero_params_give_zero_embedding() {
        let params = AppearanceEncoderParams::<f64>::init(&cfg(8, 3, 8), 0)
            .unwrap()
            .zeros_like();
        let e = encode_appearance(&params, &rand_latent(3, 8, 4)).unwrap();
        assert!(e.0.iter().all(|&v| v == 0.0));
        // Zero latent through real params with zero biases is also zero:
        // convolution of zeros is zero, leaky-ReLU(0) = 0.
        let real = AppearanceEncoderParams::<f64>::init(&cfg(8, 3, 8), 7).unwrap();
        let z = encode_appearance(&real, &Tensor::zeros(3, 8, 8)).unwrap();
        assert!(z.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_forward() {
        let params = AppearanceEncoderParams::<f64>::init(&cfg(16, 12, 8), 11).unwrap();
        let latent = rand_latent(12, 16, 5);
        assert_eq!(
            encode_appearance(&params, &latent).unwrap(),
            encode_appearance(&params, &latent).unwrap()
        );
        assert!(encode_appearance(&params, &rand_latent(12, 8, 5)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in [0u64, 1, 2] {
            let params = AppearanceEncoderParams::<f64>::init(&cfg(8, 3, 8), seed).unwrap();
            let latent = rand_latent(3, 8, 100 + seed);
            let mut rng = StdRng::seed_from_u64(200 + seed);
            let upstream: Vec<f64> = (0..8).map(|_| rng.gen::<f64>() - 0.5).collect();
            let loss = |p: &AppearanceEncoderParams<f64>, l: &Tensor<f64>| -> f64 {
                let e = encode_appearance(p, l).unwrap();
                e.0.iter().zip(&upstream).map(|(a, b)| a * b).sum()
            };
            let (grads, d_latent) = encode_appearance_backward(&params, &latent, &upstream).unwrap();

            let eps = 1e-4;
            for li in 0..params.layers.len() {
                for wi in 0..params.layers[li].weight.len() {
                    let mut p = params.clone();
                    p.layers[li].weight[wi] += eps;
                    let mut m = params.clone();
                    m.layers[li].weight[wi] -= eps;
                    let num = (loss(&p, &latent) - loss(&m, &latent)) / (2.0 * eps);
                    let a = grads.layers[li].weight[wi];
                    let denom = a.abs().max(num.abs()).max(1e-4);
                    assert!(
                        (a - num).abs() / denom < 1e-4,
                        "seed {seed} layer {li} w{wi}: {a} vs {num}"
                    );
                }
                for bi in 0..params.layers[li].bias.len() {
                    let mut p = params.clone();
                    p.layers[li].bias[bi] += eps;
                    let mut m = params.clone();
                    m.layers[li].bias[bi] -= eps;
                    let num = (loss(&p, &latent) - loss(&m, &latent)) / (2.0 * eps);
                    let a = grads.layers[li].bias[bi];
                    let denom = a.abs().max(num.abs()).max(1e-4);
                    assert!((a - num).abs() / denom < 1e-4);
                }
            }
            for idx in 0..latent.len() {
                let mut p = latent.clone();
                p.as_mut_slice()[idx] += eps;
                let mut m = latent.clone();
                m.as_mut_slice()[idx] -= eps;
                let num = (loss(&params, &p) - loss(&params, &m)) / (2.0 * eps);
                let a = d_latent.as_slice()[idx];
                let denom = a.abs().max(num.abs()).max(1e-4);
                assert!((a - num).abs() / denom < 1e-4);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let params = AppearanceEncoderParams::<f64>::init(&cfg(8, 3, 8), 3).unwrap();
        let latent = rand_latent(3, 8, 6);
        let (grads, d_latent) =
            encode_appearance_backward(&params, &latent, &vec![0.0; 8]).unwrap();
        assert!(d_latent.as_slice().iter().all(|&v| v == 0.0));
        for l in &grads.layers {
            assert!(l.weight.iter().all(|&v| v == 0.0));
            assert!(l.bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gradient_flows_only_through_pool_argmax() {
        // Perturbing a non-argmax input below the pooling gap leaves the
        // embedding unchanged; perturbing the argmax entry changes it.
        let params = AppearanceEncoderParams::<f64>::init(&cfg(4, 2, 8), 9).unwrap();
        let latent = rand_latent(2, 4, 7);
        let (_, d_latent) = encode_appearance_backward(
            &params,
            &latent,
            &(0..8).map(|i| 1.0 + i as f64).collect::<Vec<_>>(),
        )
        .unwrap();
        let base = encode_appearance(&params, &latent).unwrap();
        for idx in 0..latent.len() {
            if d_latent.as_slice()[idx] != 0.0 {
                continue;
            }
            // Zero-gradient coordinate: a tiny perturbation must not move
            // the output (it only feeds non-argmax pool entries).
            let mut p = latent.clone();
            p.as_mut_slice()[idx] += 1e-9;
            let e = encode_appearance(&params, &p).unwrap();
            for (a, b) in base.0.iter().zip(&e.0) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn broadcast_is_spatially_constant() {
        let e = AppearanceEmbedding((0..8).map(|i| i as f64 * 0.5).collect());
        let grid = broadcast_embedding(&e, 16);
        assert_eq!(grid.shape(), (8, 16, 16));
        for c in 0..8 {
            for i in 0..16 {
                for j in 0..16 {
                    assert_eq!(grid.at(c, i, j), e.0[c]);
                }
            }
        }
    }
}
