//! Joint training of the toy denoiser and the appearance encoder:
//! velocity-prediction MSE over unobserved slots only, Adam updates,
//! per-batch classifier-free-guidance dropout, and the channel-zeroing
//! ablation modes.

use super::toy::{DenoiserConfig, DenoiserParams};
use crate::appearance::{encode_appearance_backward, AppearanceEncoderParams};
use crate::assembly::{
    apply_ablation, cfg_branches, Ablation, BatchBuilder, CfgOptions, SlotBatch, TrainTargets,
};
use crate::camera::ModelConfig;
use crate::codec::Codec;
use crate::scalar::Scalar;
use crate::scenefmt::Scene;
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Probability of training a batch on its unconditional CFG branch.
    pub cfg_drop_prob: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 400,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            cfg_drop_prob: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel<S> {
    pub denoiser: DenoiserParams<S>,
    pub encoder: AppearanceEncoderParams<S>,
    pub ablation: Ablation,
    pub log: Vec<TrainLogEntry>,
}

/// Adam over a flat list of parameter vectors.
pub struct Adam<S> {
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    step: usize,
    lr: S,
    beta1: S,
    beta2: S,
    eps: S,
}

impl<S: Scalar> Adam<S> {
    pub fn new(shapes: &[usize], cfg: &TrainConfig) -> Self {
        Adam {
            m: shapes.iter().map(|&n| vec![S::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![S::zero(); n]).collect(),
            step: 0,
            lr: S::of(cfg.lr),
            beta1: S::of(cfg.beta1),
            beta2: S::of(cfg.beta2),
            eps: S::of(cfg.eps),
        }
    }

    pub fn update(&mut self, params: Vec<&mut Vec<S>>, grads: Vec<&Vec<S>>) {
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let t = S::of_usize(self.step);
        let bc1 = S::one() - self.beta1.powf(t);
        let bc2 = S::one() - self.beta2.powf(t);
        for ((param, grad), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (S::one() - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (S::one() - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// MSE over the masked (unobserved) slots; the upstream gradient tensors
/// are zero for every other slot, so observed-slot targets never receive
/// gradient.
fn masked_mse<S: Scalar>(
    preds: &[Tensor<S>],
    targets: &TrainTargets<S>,
) -> (S, Vec<Tensor<S>>) {
    let masked: Vec<usize> = targets
        .loss_mask
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect();
    let count = masked.len() * preds[0].len();
    let norm = S::of_usize(count);
    let mut loss = S::zero();
    let mut d_preds = Vec::with_capacity(preds.len());
    for (i, pred) in preds.iter().enumerate() {
        if targets.loss_mask[i] {
            let diff = pred.sub(&targets.v_targets[i]);
            loss += diff.as_slice().iter().map(|&d| d * d).sum::<S>();
            d_preds.push(diff.scaled(S::two() / norm));
        } else {
            let (c, h, w) = pred.shape();
            d_preds.push(Tensor::zeros(c, h, w));
        }
    }
    (loss / norm, d_preds)
}

/// One training step's loss and gradients for a prepared batch. Gradients
/// flow into the appearance encoder only when the ablation mode keeps the
/// appearance channels.
pub fn train_step_grads<S: Scalar>(
    denoiser: &DenoiserParams<S>,
    encoder: &AppearanceEncoderParams<S>,
    cfg: &ModelConfig,
    batch: &SlotBatch<S>,
    targets: &TrainTargets<S>,
    ablation: Ablation,
) -> (S, DenoiserParams<S>, AppearanceEncoderParams<S>) {
    let (preds, cache) = denoiser.forward_cached(batch);
    let (loss, d_preds) = masked_mse(&preds, targets);
    let (theta_grads, d_inputs) = denoiser.backward(&cache, &d_preds);

    let mut phi_grads = encoder.zeros_like();
    if ablation.uses_appearance() {
        let range = cfg.appearance_range();
        for (slot_idx, d_input) in d_inputs.iter().enumerate() {
            // d(appearance channels) collapses over spatial positions
            // because the embedding was broadcast.
            let mut d_embedding = vec![S::zero(); cfg.appearance_dim];
            for (c, d_e) in d_embedding.iter_mut().enumerate() {
                *d_e = d_input
                    .channel(range.start + c)
                    .iter()
                    .copied()
                    .sum();
            }
            let (g, _) = encode_appearance_backward(
                encoder,
                &targets.clean_latents[slot_idx],
                &d_embedding,
            )
            .expect("encoder shapes match builder output");
            for (acc, layer) in phi_grads.layers.iter_mut().zip(&g.layers) {
                for (a, b) in acc.weight.iter_mut().zip(&layer.weight) {
                    *a += *b;
                }
                for (a, b) in acc.bias.iter_mut().zip(&layer.bias) {
                    *a += *b;
                }
            }
        }
    }
    (loss, theta_grads, phi_grads)
}

fn encoder_slices(enc: &AppearanceEncoderParams<impl Scalar>) -> Vec<usize> {
    enc.layers
        .iter()
        .flat_map(|l| [l.weight.len(), l.bias.len()])
        .collect()
}

fn encoder_slices_ref<S: Scalar>(enc: &AppearanceEncoderParams<S>) -> Vec<&Vec<S>> {
    enc.layers
        .iter()
        .flat_map(|l| [&l.weight, &l.bias])
        .collect()
}

fn encoder_slices_mut<S: Scalar>(enc: &mut AppearanceEncoderParams<S>) -> Vec<&mut Vec<S>> {
    enc.layers
        .iter_mut()
        .flat_map(|l| [&mut l.weight, &mut l.bias])
        .collect()
}

/// Trains denoiser and appearance encoder jointly on velocity MSE over
/// unobserved slots. Deterministic in the seed: data order, view
/// selection, timesteps, noise and CFG dropout all come from one RNG.
pub fn train<S: Scalar>(
    dataset: &[Scene<S>],
    model_cfg: &ModelConfig,
    denoiser_cfg: &DenoiserConfig,
    schedule: &NoiseSchedule<S>,
    ablation: Ablation,
    train_cfg: &TrainConfig,
) -> TrainedModel<S> {
    assert!(!dataset.is_empty(), "training needs at least one scene");
    let codec = Codec::new(model_cfg.image_res, model_cfg.latent_res)
        .expect("model config resolutions");
    let mut denoiser =
        DenoiserParams::init(model_cfg, denoiser_cfg, schedule.timesteps(), train_cfg.seed);
    let mut encoder = AppearanceEncoderParams::init(model_cfg, train_cfg.seed ^ 0x5eed)
        .expect("encoder geometry");
    let mut rng = StdRng::seed_from_u64(train_cfg.seed);

    let mut theta_shapes: Vec<usize> = denoiser
        .flat_slices()
        .iter()
        .map(|(_, v)| v.len())
        .collect();
    let phi_offset = theta_shapes.len();
    theta_shapes.extend(encoder_slices(&encoder));
    let mut adam = Adam::<S>::new(&theta_shapes, train_cfg);

    let mut log = Vec::with_capacity(train_cfg.steps);
    for step in 0..train_cfg.steps {
        let scene = &dataset[rng.gen_range(0..dataset.len())];
        let num_views = scene.views.len();
        let observed = rng.gen_range(0..num_views);
        let targets_needed = model_cfg.slots - 1;
        let mut target_idx = Vec::with_capacity(targets_needed);
        for _ in 0..targets_needed {
            // Random unobserved views; duplicates allowed when the scene
            // is smaller than the slot count.
            let mut pick = rng.gen_range(0..num_views);
            if num_views > 1 {
                while pick == observed {
                    pick = rng.gen_range(0..num_views);
                }
            }
            target_idx.push(pick);
        }
        let t = rng.gen_range(1..=schedule.timesteps());
        let builder = BatchBuilder::new(model_cfg, &codec, schedule, &encoder);
        let (mut batch, train_targets) = builder
            .training_batch(scene, &[observed], &target_idx, t, &mut rng)
            .expect("training batch");
        if rng.gen::<f64>() < train_cfg.cfg_drop_prob {
            batch = cfg_branches(&batch, &CfgOptions::default()).1;
        }
        apply_ablation(&mut batch, ablation);

        let (loss, theta_grads, phi_grads) = train_step_grads(
            &denoiser,
            &encoder,
            model_cfg,
            &batch,
            &train_targets,
            ablation,
        );
        log.push(TrainLogEntry {
            step,
            loss: loss.lossy_f64(),
        });

        let mut params: Vec<&mut Vec<S>> = denoiser.flat_slices_mut();
        params.extend(encoder_slices_mut(&mut encoder));
        let theta_slices = theta_grads.flat_slices();
        let mut grads: Vec<&Vec<S>> = theta_slices.iter().map(|(_, v)| *v).collect();
        grads.extend(encoder_slices_ref(&phi_grads));
        debug_assert_eq!(params.len(), grads.len());
        debug_assert!(params.len() > phi_offset);
        adam.update(params, grads);
    }
    TrainedModel {
        denoiser,
        encoder,
        ablation,
        log,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{make_schedule, BaseSchedule};
    use crate::synthdata::{generate_dataset, SynthConfig};

    fn tiny_setup() -> (Vec<Scene<f64>>, ModelConfig, NoiseSchedule<f64>) {
        let synth = SynthConfig {
            resolution: 16,
            num_views: 4,
            ..SynthConfig::default()
        };
        let model = ModelConfig {
            slots: 3,
            latent_channels: 12,
            appearance_dim: 8,
            latent_res: 8,
            image_res: 16,
        };
        (
            generate_dataset(&synth, 3),
            model,
            make_schedule(8, BaseSchedule::Cosine),
        )
    }

    #[test]
    fn loss_decreases_on_fixed_batch() {
        let (scenes, model, sched) = tiny_setup();
        let codec = Codec::new(model.image_res, model.latent_res).unwrap();
        let encoder = AppearanceEncoderParams::<f64>::init(&model, 1).unwrap();
        let mut denoiser = DenoiserParams::init(
            &model,
            &DenoiserConfig {
                width: 16,
                heads: 2,
            },
            sched.timesteps(),
            1,
        );
        let builder = BatchBuilder::new(&model, &codec, &sched, &encoder);
        let mut rng = StdRng::seed_from_u64(3);
        let (batch, targets) = builder
            .training_batch(&scenes[0], &[0], &[1, 2], 4, &mut rng)
            .unwrap();
        let cfg = TrainConfig::default();
        let shapes: Vec<usize> = denoiser.flat_slices().iter().map(|(_, v)| v.len()).collect();
        let mut adam = Adam::new(&shapes, &cfg);
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..50 {
            let (loss, grads, _) = train_step_grads(
                &denoiser,
                &encoder,
                &model,
                &batch,
                &targets,
                Ablation::Full,
            );
            let slices = grads.flat_slices();
            adam.update(
                denoiser.flat_slices_mut(),
                slices.iter().map(|(_, v)| *v).collect(),
            );
            first.get_or_insert(loss);
            last = loss;
        }
        let first = first.unwrap();
        assert!(
            last < first * 0.8,
            "loss should drop by >20%: {first} -> {last}"
        );
    }

    #[test]
    fn observed_slot_targets_get_no_gradient() {
        let (scenes, model, sched) = tiny_setup();
        let codec = Codec::new(model.image_res, model.latent_res).unwrap();
        let encoder = AppearanceEncoderParams::<f64>::init(&model, 1).unwrap();
        let denoiser = DenoiserParams::init(
            &model,
            &DenoiserConfig {
                width: 8,
                heads: 2,
            },
            sched.timesteps(),
            1,
        );
        let builder = BatchBuilder::new(&model, &codec, &sched, &encoder);
        let mut rng = StdRng::seed_from_u64(4);
        let (batch, mut targets) = builder
            .training_batch(&scenes[0], &[0], &[1, 2], 4, &mut rng)
            .unwrap();
        let (loss_a, _, _) = train_step_grads(
            &denoiser,
            &encoder,
            &model,
            &batch,
            &targets,
            Ablation::Full,
        );
        // Perturbing the observed slot's (unused) target leaves the loss
        // bit-identical.
        targets.v_targets[0].as_mut_slice()[0] += 123.0;
        let (loss_b, _, _) = train_step_grads(
            &denoiser,
            &encoder,
            &model,
            &batch,
            &targets,
            Ablation::Full,
        );
        assert_eq!(loss_a, loss_b);
    }

    #[test]
    fn joint_gradients_match_finite_differences() {
        // End-to-end check through batch construction: theta and phi both,
        // with the batch rebuilt from phi so encoder gradients include the
        // appearance-channel path.
        let (scenes, model, sched) = tiny_setup();
        let codec = Codec::new(model.image_res, model.latent_res).unwrap();
        for seed in [0u64, 1, 2] {
            let encoder = AppearanceEncoderParams::<f64>::init(&model, 40 + seed).unwrap();
            let denoiser = DenoiserParams::init(
                &model,
                &DenoiserConfig {
                    width: 8,
                    heads: 2,
                },
                sched.timesteps(),
                50 + seed,
            );
            let loss_of = |d: &DenoiserParams<f64>, e: &AppearanceEncoderParams<f64>| -> f64 {
                let builder = BatchBuilder::new(&model, &codec, &sched, e);
                let mut rng = StdRng::seed_from_u64(60 + seed);
                let (batch, targets) = builder
                    .training_batch(&scenes[0], &[0], &[1, 2], 3, &mut rng)
                    .unwrap();
                let (loss, _) = masked_mse(&d.forward(&batch), &targets);
                loss
            };
            let builder = BatchBuilder::new(&model, &codec, &sched, &encoder);
            let mut rng = StdRng::seed_from_u64(60 + seed);
            let (batch, targets) = builder
                .training_batch(&scenes[0], &[0], &[1, 2], 3, &mut rng)
                .unwrap();
            let (_, theta_grads, phi_grads) = train_step_grads(
                &denoiser,
                &encoder,
                &model,
                &batch,
                &targets,
                Ablation::Full,
            );

            // Smaller step than the dedicated per-module checks: the
            // quadratic loss makes leaky-ReLU kink crossings inside the
            // central-difference window visible.
            let eps = 1e-5;
            let theta_slices = theta_grads.flat_slices();
            for (slice_idx, (name, grad)) in theta_slices.iter().enumerate() {
                let len = grad.len();
                for idx in (0..len).step_by((len / 3).max(1)) {
                    let mut p = denoiser.clone();
                    p.flat_slices_mut()[slice_idx][idx] += eps;
                    let mut m = denoiser.clone();
                    m.flat_slices_mut()[slice_idx][idx] -= eps;
                    let num = (loss_of(&p, &encoder) - loss_of(&m, &encoder)) / (2.0 * eps);
                    let a = grad[idx];
                    let denom = a.abs().max(num.abs()).max(1e-5);
                    assert!(
                        (a - num).abs() / denom < 1e-4,
                        "seed {seed} theta {name}[{idx}]: {a} vs {num}"
                    );
                }
            }
            // Spot-check phi parameters (flow through appearance channels).
            let mut phi_nonzero = 0usize;
            for li in 0..encoder.layers.len() {
                let len = encoder.layers[li].weight.len();
                for idx in (0..len).step_by((len / 4).max(1)) {
                    let mut p = encoder.clone();
                    p.layers[li].weight[idx] += eps;
                    let mut m = encoder.clone();
                    m.layers[li].weight[idx] -= eps;
                    let num = (loss_of(&denoiser, &p) - loss_of(&denoiser, &m)) / (2.0 * eps);
                    let a = phi_grads.layers[li].weight[idx];
                    if a.abs() > 1e-12 {
                        phi_nonzero += 1;
                    }
                    let denom = a.abs().max(num.abs()).max(1e-5);
                    assert!(
                        (a - num).abs() / denom < 1e-4,
                        "seed {seed} phi layer {li} [{idx}]: {a} vs {num}"
                    );
                }
            }
            assert!(phi_nonzero > 0, "appearance path must carry gradient");
        }
    }

    #[test]
    fn training_is_deterministic_and_loss_trends_down() {
        let (scenes, model, sched) = tiny_setup();
        let cfg = TrainConfig {
            steps: 60,
            seed: 9,
            ..TrainConfig::default()
        };
        let dcfg = DenoiserConfig {
            width: 12,
            heads: 2,
        };
        let a = train(&scenes, &model, &dcfg, &sched, Ablation::Full, &cfg);
        let b = train(&scenes, &model, &dcfg, &sched, Ablation::Full, &cfg);
        for ((na, va), (nb, vb)) in a
            .denoiser
            .flat_slices()
            .iter()
            .zip(b.denoiser.flat_slices().iter())
        {
            assert_eq!(na, nb);
            assert_eq!(va, vb, "denoiser params must be bit-identical");
        }
        assert_eq!(a.log.len(), 60);
        let head: f64 = a.log[..10].iter().map(|e| e.loss).sum::<f64>() / 10.0;
        let tail: f64 = a.log[50..].iter().map(|e| e.loss).sum::<f64>() / 10.0;
        assert!(tail < head, "smoothed loss should decrease: {head} -> {tail}");
    }

    #[test]
    fn no_app_ablation_freezes_encoder() {
        let (scenes, model, sched) = tiny_setup();
        let cfg = TrainConfig {
            steps: 20,
            seed: 11,
            ..TrainConfig::default()
        };
        let dcfg = DenoiserConfig {
            width: 8,
            heads: 2,
        };
        let out = train(&scenes, &model, &dcfg, &sched, Ablation::NoWarpNoApp, &cfg);
        let init = AppearanceEncoderParams::<f64>::init(&model, cfg.seed ^ 0x5eed).unwrap();
        for (a, b) in out.encoder.layers.iter().zip(&init.layers) {
            assert_eq!(a.weight, b.weight, "encoder must not move without appearance");
        }
        // Full mode does move it.
        let full = train(&scenes, &model, &dcfg, &sched, Ablation::Full, &cfg);
        let moved = full
            .encoder
            .layers
            .iter()
            .zip(&init.layers)
            .any(|(a, b)| a.weight != b.weight);
        assert!(moved);
    }
}
