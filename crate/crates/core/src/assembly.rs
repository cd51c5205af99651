//! Slot-tensor assembly: multi-view training and inference batches,
//! appearance injection, appearance-aware classifier-free guidance
//! branching, and evaluation target grouping.
//!
//! Each of the `v` slots concatenates, in order: `k` latent channels,
//! `k` warp-latent channels, `d` broadcast appearance channels, a
//! 6-channel raymap, and a 1-channel observed mask, for `2k + d + 7`
//! channels total. Slot 0 is always the first observed view; it is the
//! warp source and the reference for pose relativization and scale
//! normalization.

use crate::appearance::{
    broadcast_embedding, encode_appearance, AppearanceEmbedding, AppearanceEncoderParams,
};
use crate::camera::{
    normalize_scale, plucker_raymap, relativize_poses, CameraError, Intrinsics, ModelConfig,
};
use crate::codec::{Codec, CodecError};
use crate::math::Rigid;
use crate::scalar::Scalar;
use crate::scenefmt::{sparse_depths_for_view, Scene};
use crate::schedule::{forward_diffuse, v_target, NoiseSchedule};
use crate::tensor::Tensor;
use crate::warp::{warp_to_all_slots, WarpError, WarpOptions};
use rand::rngs::StdRng;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("slot count mismatch: {observed} observed + {targets} targets != {slots} slots")]
    SlotCount {
        observed: usize,
        targets: usize,
        slots: usize,
    },
    #[error("first slot must be an observed view")]
    FirstSlotUnobserved,
    #[error(transparent)]
    Warp(#[from] WarpError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Appearance(#[from] crate::appearance::AppearanceError),
}

#[derive(Debug, Clone)]
pub struct Slot<S> {
    pub latent: Tensor<S>,
    pub warp_latent: Tensor<S>,
    pub appearance: Tensor<S>,
    pub raymap: Tensor<S>,
    pub mask: Tensor<S>,
    pub observed: bool,
}

impl<S: Scalar> Slot<S> {
    /// Concatenated denoiser input for this slot.
    pub fn to_input(&self) -> Tensor<S> {
        Tensor::concat_channels(&[
            &self.latent,
            &self.warp_latent,
            &self.appearance,
            &self.raymap,
            &self.mask,
        ])
    }

    pub fn input_channels(&self) -> usize {
        self.latent.channels() * 2
            + self.appearance.channels()
            + self.raymap.channels()
            + self.mask.channels()
    }
}

#[derive(Debug, Clone)]
pub struct SlotBatch<S> {
    pub slots: Vec<Slot<S>>,
    pub t: usize,
}

impl<S: Scalar> SlotBatch<S> {
    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }
}

/// Training-only companions to a [`SlotBatch`].
#[derive(Debug, Clone)]
pub struct TrainTargets<S> {
    /// Per-slot velocity targets; zero tensors for observed slots.
    pub v_targets: Vec<Tensor<S>>,
    /// True exactly for the unobserved slots the loss covers.
    pub loss_mask: Vec<bool>,
    /// Clean latents per slot, the appearance encoder inputs (needed to
    /// chain gradients into the encoder).
    pub clean_latents: Vec<Tensor<S>>,
}

/// Everything the batch builders need besides the scene.
pub struct BatchBuilder<'a, S> {
    pub cfg: &'a ModelConfig,
    pub codec: &'a Codec,
    pub schedule: &'a NoiseSchedule<S>,
    pub encoder: &'a AppearanceEncoderParams<S>,
    pub warp_opts: WarpOptions,
}

impl<'a, S: Scalar> BatchBuilder<'a, S> {
    pub fn new(
        cfg: &'a ModelConfig,
        codec: &'a Codec,
        schedule: &'a NoiseSchedule<S>,
        encoder: &'a AppearanceEncoderParams<S>,
    ) -> Self {
        BatchBuilder {
            cfg,
            codec,
            schedule,
            encoder,
            warp_opts: WarpOptions::default(),
        }
    }

    /// Raymaps for the slot cameras: poses relativized to slot 0, then
    /// translations divided by the 10th percentile of slot 0's sparse
    /// depths.
    fn raymaps(
        &self,
        scene: &Scene<S>,
        ref_view: usize,
        cameras: &[(Intrinsics<S>, Rigid<S>)],
    ) -> Result<Vec<Tensor<S>>, AssemblyError> {
        let poses: Vec<Rigid<S>> = cameras.iter().map(|(_, p)| *p).collect();
        let relative = relativize_poses(&poses);
        let depths: Vec<S> = sparse_depths_for_view(scene, ref_view)
            .iter()
            .map(|sd| sd.depth)
            .collect();
        let (normalized, _scale) = normalize_scale(&relative, &depths)?;
        cameras
            .iter()
            .zip(&normalized)
            .map(|((intr, _), pose)| {
                Ok(plucker_raymap(intr, pose, self.cfg.latent_res, self.cfg.image_res)?.0)
            })
            .collect()
    }

    fn warp_latents(
        &self,
        scene: &Scene<S>,
        source: usize,
        cameras: &[(Intrinsics<S>, Rigid<S>)],
    ) -> Result<Vec<Tensor<S>>, AssemblyError> {
        let warps = warp_to_all_slots(scene, source, cameras, &self.warp_opts)?;
        warps
            .iter()
            .map(|w| Ok(self.codec.encode(&w.rgb)?))
            .collect()
    }

    /// Training batch: observed slots carry clean latents, unobserved
    /// slots forward-diffused latents at `t`; every slot's appearance
    /// comes from its own clean latent; warps come from the first
    /// observed view. Duplicate view indices are allowed.
    pub fn training_batch(
        &self,
        scene: &Scene<S>,
        observed_idx: &[usize],
        target_idx: &[usize],
        t: usize,
        rng: &mut StdRng,
    ) -> Result<(SlotBatch<S>, TrainTargets<S>), AssemblyError> {
        if observed_idx.len() + target_idx.len() != self.cfg.slots {
            return Err(AssemblyError::SlotCount {
                observed: observed_idx.len(),
                targets: target_idx.len(),
                slots: self.cfg.slots,
            });
        }
        if observed_idx.is_empty() {
            return Err(AssemblyError::FirstSlotUnobserved);
        }
        let view_indices: Vec<usize> = observed_idx.iter().chain(target_idx).copied().collect();
        let cameras: Vec<(Intrinsics<S>, Rigid<S>)> = view_indices
            .iter()
            .map(|&i| (scene.views[i].intrinsics, scene.views[i].pose))
            .collect();
        let raymaps = self.raymaps(scene, observed_idx[0], &cameras)?;
        let warp_latents = self.warp_latents(scene, observed_idx[0], &cameras)?;

        let n = self.cfg.latent_res;
        let mut slots = Vec::with_capacity(self.cfg.slots);
        let mut v_targets = Vec::with_capacity(self.cfg.slots);
        let mut loss_mask = Vec::with_capacity(self.cfg.slots);
        let mut clean_latents = Vec::with_capacity(self.cfg.slots);
        for (slot_idx, (&view_idx, (raymap, warp_latent))) in view_indices
            .iter()
            .zip(raymaps.into_iter().zip(warp_latents))
            .enumerate()
        {
            let observed = slot_idx < observed_idx.len();
            let clean = self.codec.encode(&scene.views[view_idx].image)?;
            let appearance =
                broadcast_embedding(&encode_appearance(self.encoder, &clean)?, n);
            let (latent, v_tgt) = if observed {
                (clean.clone(), Tensor::zeros(clean.channels(), n, n))
            } else {
                let eps = randn_like(&clean, rng);
                let noised = forward_diffuse(self.schedule, &clean, t, &eps);
                let v_tgt = v_target(self.schedule, &clean, &eps, t);
                (noised, v_tgt)
            };
            slots.push(Slot {
                latent,
                warp_latent,
                appearance,
                raymap,
                mask: mask_plane(observed, n),
                observed,
            });
            v_targets.push(v_tgt);
            loss_mask.push(!observed);
            clean_latents.push(clean);
        }
        Ok((
            SlotBatch { slots, t },
            TrainTargets {
                v_targets,
                loss_mask,
                clean_latents,
            },
        ))
    }

    /// Inference batch: unobserved latents are standard normal noise, and
    /// every unobserved slot's appearance channels carry the injected
    /// embedding (the appearance source view's, or an external one for
    /// appearance transfer). Observed slots keep their own appearance.
    pub fn inference_batch(
        &self,
        scene: &Scene<S>,
        observed_idx: &[usize],
        target_cameras: &[(Intrinsics<S>, Rigid<S>)],
        opts: &InferenceOptions<S>,
        rng: &mut StdRng,
    ) -> Result<SlotBatch<S>, AssemblyError> {
        if observed_idx.is_empty() {
            return Err(AssemblyError::FirstSlotUnobserved);
        }
        if observed_idx.len() + target_cameras.len() != self.cfg.slots {
            return Err(AssemblyError::SlotCount {
                observed: observed_idx.len(),
                targets: target_cameras.len(),
                slots: self.cfg.slots,
            });
        }
        let mut cameras: Vec<(Intrinsics<S>, Rigid<S>)> = observed_idx
            .iter()
            .map(|&i| (scene.views[i].intrinsics, scene.views[i].pose))
            .collect();
        cameras.extend_from_slice(target_cameras);
        let raymaps = self.raymaps(scene, observed_idx[0], &cameras)?;
        let warp_latents = self.warp_latents(scene, observed_idx[0], &cameras)?;

        let observed_latents: Vec<Tensor<S>> = observed_idx
            .iter()
            .map(|&i| Ok(self.codec.encode(&scene.views[i].image)?))
            .collect::<Result<_, AssemblyError>>()?;
        let injected = match &opts.external_appearance {
            Some(e) => e.clone(),
            None => encode_appearance(
                self.encoder,
                &observed_latents[opts.appearance_from.min(observed_idx.len() - 1)],
            )?,
        };

        let n = self.cfg.latent_res;
        let k = self.cfg.latent_channels;
        let mut slots = Vec::with_capacity(self.cfg.slots);
        for (slot_idx, (raymap, warp_latent)) in raymaps.into_iter().zip(warp_latents).enumerate()
        {
            let observed = slot_idx < observed_idx.len();
            let (latent, appearance) = if observed {
                let clean = observed_latents[slot_idx].clone();
                let own = encode_appearance(self.encoder, &clean)?;
                (clean, broadcast_embedding(&own, n))
            } else {
                let mut noise = Tensor::zeros(k, n, n);
                for v in noise.as_mut_slice() {
                    *v = S::of(rng.sample(StandardNormal));
                }
                (noise, broadcast_embedding(&injected, n))
            };
            slots.push(Slot {
                latent,
                warp_latent,
                appearance,
                raymap,
                mask: mask_plane(observed, n),
                observed,
            });
        }
        Ok(SlotBatch {
            slots,
            t: self.schedule.timesteps(),
        })
    }
}

fn mask_plane<S: Scalar>(observed: bool, n: usize) -> Tensor<S> {
    Tensor::full(1, n, n, if observed { S::one() } else { S::zero() })
}

fn randn_like<S: Scalar>(like: &Tensor<S>, rng: &mut StdRng) -> Tensor<S> {
    let (c, h, w) = like.shape();
    let data = (0..c * h * w)
        .map(|_| S::of(rng.sample(StandardNormal)))
        .collect();
    Tensor::from_vec(c, h, w, data)
}

#[derive(Debug, Clone)]
pub struct InferenceOptions<S> {
    /// Index into the observed list whose appearance is injected into the
    /// unobserved slots (interpolation uses the start or end view).
    pub appearance_from: usize,
    /// External embedding for appearance transfer; replaces the injected
    /// view embedding in all unobserved slots.
    pub external_appearance: Option<AppearanceEmbedding<S>>,
}

impl<S> Default for InferenceOptions<S> {
    fn default() -> Self {
        InferenceOptions {
            appearance_from: 0,
            external_appearance: None,
        }
    }
}

/// What the unconditional CFG branch drops. Appearance channels are never
/// dropped: both branches keep every appearance embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CfgOptions {
    /// Zero the warp latents of every slot (warps derive from the
    /// observed view, hence count as observed-view conditioning).
    pub zero_warp: bool,
    /// Zero the mask channel of observed slots.
    pub zero_observed_mask: bool,
}

impl Default for CfgOptions {
    fn default() -> Self {
        CfgOptions {
            zero_warp: true,
            zero_observed_mask: true,
        }
    }
}

/// Conditional and unconditional guidance branches. The conditional
/// branch is the batch unchanged; the unconditional branch zeroes
/// observed-slot latents, all warp latents, observed-slot raymaps and
/// (by default) observed-slot masks, while appearance channels of every
/// slot are kept bit-identical.
pub fn cfg_branches<S: Scalar>(
    batch: &SlotBatch<S>,
    opts: &CfgOptions,
) -> (SlotBatch<S>, SlotBatch<S>) {
    let cond = batch.clone();
    let mut uncond = batch.clone();
    for slot in uncond.slots.iter_mut() {
        if slot.observed {
            slot.latent.fill(S::zero());
            slot.raymap.fill(S::zero());
            if opts.zero_observed_mask {
                slot.mask.fill(S::zero());
            }
        }
        if opts.zero_warp {
            slot.warp_latent.fill(S::zero());
        }
    }
    (cond, uncond)
}

/// Classifier-free guidance extrapolation `uncond + s * (cond - uncond)`.
pub fn guide<S: Scalar>(v_cond: &[Tensor<S>], v_uncond: &[Tensor<S>], scale: S) -> Vec<Tensor<S>> {
    assert_eq!(v_cond.len(), v_uncond.len());
    v_cond
        .iter()
        .zip(v_uncond)
        .map(|(c, u)| u.lin_comb(S::one() - scale, c, scale))
        .collect()
}

/// Splits target indices into groups of at most `capacity`, padding the
/// final group by duplicating its own last target so every batch fills
/// all slots.
pub fn group_targets(num_targets: usize, capacity: usize) -> Vec<Vec<usize>> {
    assert!(capacity >= 1);
    let mut groups = Vec::new();
    let mut start = 0;
    while start < num_targets {
        let end = (start + capacity).min(num_targets);
        let mut group: Vec<usize> = (start..end).collect();
        while group.len() < capacity {
            group.push(end - 1);
        }
        groups.push(group);
        start = end;
    }
    groups
}

/// Evaluation grouping with one source view: groups of `v - 1` targets.
pub fn group_eval_targets(num_targets: usize, slots: usize) -> Vec<Vec<usize>> {
    assert!(slots >= 2);
    group_targets(num_targets, slots - 1)
}

/// Channel-zeroing ablations applied to every batch during training and
/// evaluation of the reduced models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoWarp,
    NoWarpNoApp,
}

impl Ablation {
    pub fn uses_warp(&self) -> bool {
        matches!(self, Ablation::Full)
    }

    pub fn uses_appearance(&self) -> bool {
        !matches!(self, Ablation::NoWarpNoApp)
    }
}

pub fn apply_ablation<S: Scalar>(batch: &mut SlotBatch<S>, mode: Ablation) {
    for slot in batch.slots.iter_mut() {
        if !mode.uses_warp() {
            slot.warp_latent.fill(S::zero());
        }
        if !mode.uses_appearance() {
            slot.appearance.fill(S::zero());
        }
    }
}
