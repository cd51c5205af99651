//! Image metrics and the ablation/evaluation harness.
//!
//! PSNR and SSIM follow the standard definitions (11x11 Gaussian window,
//! sigma 1.5, C1 = 0.01^2, C2 = 0.03^2, channel-averaged, valid-mode
//! windows). Appearance consistency is the self-contained style metric:
//! mean embedding-space L2 distance between generated views and the
//! reference appearance, always measured with one fixed encoder so model
//! rows stay comparable.

use crate::appearance::{encode_appearance, AppearanceEmbedding, AppearanceEncoderParams};
use crate::assembly::{Ablation, AssemblyError, BatchBuilder, InferenceOptions};
use crate::camera::ModelConfig;
use crate::codec::Codec;
use crate::denoiser::{generate_views, DenoiserParams, SampleOptions};
use crate::scalar::Scalar;
use crate::scenefmt::Scene;
use crate::schedule::NoiseSchedule;
use crate::synthdata::{apply_appearance_transform, AppearanceTransform};
use crate::tensor::Tensor;
use crate::warp::{warp_to_all_slots, WarpOptions};

/// PSNR in dB for images in [0, 1]; identical images return infinity.
pub fn psnr<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> f64 {
    let mse = a.mse(b).lossy_f64();
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// PSNR restricted to pixels where `mask` is true (all channels of the
/// pixel participate). Returns infinity when nothing differs or the mask
/// is empty.
pub fn psnr_masked<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, mask: &[bool]) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let (c, h, w) = a.shape();
    assert_eq!(mask.len(), h * w);
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            for ch in 0..c {
                let d = (a.at(ch, y, x) - b.at(ch, y, x)).lossy_f64();
                sum += d * d;
                count += 1;
            }
        }
    }
    if count == 0 || sum == 0.0 {
        return f64::INFINITY;
    }
    -10.0 * (sum / count as f64).log10()
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let d2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
            let v = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            k[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Standard SSIM, averaged over channels and valid window positions.
pub fn ssim<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let (c, h, w) = a.shape();
    assert!(
        h >= SSIM_WINDOW && w >= SSIM_WINDOW,
        "image smaller than the SSIM window"
    );
    let kernel = gaussian_kernel();
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        for y0 in 0..=(h - SSIM_WINDOW) {
            for x0 in 0..=(w - SSIM_WINDOW) {
                let (mut mx, mut my) = (0.0, 0.0);
                for ky in 0..SSIM_WINDOW {
                    for kx in 0..SSIM_WINDOW {
                        let k = kernel[ky * SSIM_WINDOW + kx];
                        mx += k * a.at(ch, y0 + ky, x0 + kx).lossy_f64();
                        my += k * b.at(ch, y0 + ky, x0 + kx).lossy_f64();
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for ky in 0..SSIM_WINDOW {
                    for kx in 0..SSIM_WINDOW {
                        let k = kernel[ky * SSIM_WINDOW + kx];
                        let da = a.at(ch, y0 + ky, x0 + kx).lossy_f64() - mx;
                        let db = b.at(ch, y0 + ky, x0 + kx).lossy_f64() - my;
                        vx += k * da * da;
                        vy += k * db * db;
                        cov += k * da * db;
                    }
                }
                let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2);
                let den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2);
                total += num / den;
                count += 1;
            }
        }
    }
    total / count as f64
}

/// Mean L2 distance between each generated view's appearance embedding
/// and the reference embedding; invariant to view order.
pub fn appearance_consistency<S: Scalar>(
    generated: &[Tensor<S>],
    reference: &AppearanceEmbedding<S>,
    encoder: &AppearanceEncoderParams<S>,
    codec: &Codec,
) -> f64 {
    assert!(!generated.is_empty());
    let sum: f64 = generated
        .iter()
        .map(|img| {
            let latent = codec.encode(img).expect("generated image shape");
            let e = encode_appearance(encoder, &latent).expect("encoder shapes");
            e.l2_distance(reference).lossy_f64()
        })
        .sum();
    sum / generated.len() as f64
}

/// The reference a generated target view is judged against: the target's
/// clean render re-lit with the source view's appearance transform (what
/// appearance-conditioned inference is asked to produce), quantized like
/// every stored image. Falls back to the stored target image when the
/// synthetic metadata is absent.
pub fn appearance_matched_reference<S: Scalar>(
    scene: &Scene<S>,
    source_idx: usize,
    target_idx: usize,
) -> Tensor<S> {
    let target = &scene.views[target_idx];
    match (&target.clean_image, &scene.views[source_idx].appearance) {
        (Some(clean), Some(meta)) => {
            let transform = AppearanceTransform::from_meta(meta);
            apply_appearance_transform(clean, &transform).map(|v| {
                (v.max(S::zero()).min(S::one()) * S::of(255.0)).round() / S::of(255.0)
            })
        }
        _ => target.image.clone(),
    }
}

#[derive(Debug, Clone)]
pub struct ViewMetrics {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub appearance_distance: f64,
    pub coverage_psnr: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub psnr: f64,
    pub ssim: f64,
    pub appearance_consistency: f64,
    pub coverage_psnr: f64,
    pub per_view: Vec<ViewMetrics>,
}

impl EvalReport {
    fn from_views(per_view: Vec<ViewMetrics>) -> Self {
        let n = per_view.len() as f64;
        let finite_mean = |f: &dyn Fn(&ViewMetrics) -> f64| -> f64 {
            per_view.iter().map(|v| f(v)).sum::<f64>() / n
        };
        EvalReport {
            psnr: finite_mean(&|v| v.psnr),
            ssim: finite_mean(&|v| v.ssim),
            appearance_consistency: finite_mean(&|v| v.appearance_distance),
            coverage_psnr: finite_mean(&|v| v.coverage_psnr),
            per_view,
        }
    }
}

/// Everything needed to evaluate trained weights on scenes.
pub struct EvalContext<'a, S> {
    pub model_cfg: &'a ModelConfig,
    pub codec: &'a Codec,
    pub schedule: &'a NoiseSchedule<S>,
    /// Fixed measuring encoder for the appearance-consistency metric,
    /// shared across all evaluated models.
    pub metric_encoder: &'a AppearanceEncoderParams<S>,
    pub sample_steps: usize,
    pub cfg_scale: f64,
    pub seed: u64,
}

/// Generates every non-source view of a scene from view `source_idx` and
/// scores the results against appearance-matched references.
pub fn evaluate_scene<S: Scalar>(
    ctx: &EvalContext<'_, S>,
    denoiser: &DenoiserParams<S>,
    encoder: &AppearanceEncoderParams<S>,
    ablation: Ablation,
    scene: &Scene<S>,
    source_idx: usize,
) -> Result<Vec<ViewMetrics>, AssemblyError> {
    let builder = BatchBuilder::new(ctx.model_cfg, ctx.codec, ctx.schedule, encoder);
    let target_views: Vec<usize> = (0..scene.views.len())
        .filter(|&i| i != source_idx)
        .collect();
    let cameras: Vec<_> = target_views
        .iter()
        .map(|&i| (scene.views[i].intrinsics, scene.views[i].pose))
        .collect();
    let opts = SampleOptions {
        steps: ctx.sample_steps,
        cfg_scale: S::of(ctx.cfg_scale),
        ablation,
        ..SampleOptions::new(ctx.sample_steps, S::of(ctx.cfg_scale))
    };
    let images = generate_views(
        denoiser,
        &builder,
        scene,
        &[source_idx],
        &cameras,
        &opts,
        &InferenceOptions::default(),
        ctx.seed,
    )?;

    // Warp coverage masks for the coverage-restricted PSNR.
    let warps = warp_to_all_slots(scene, source_idx, &cameras, &WarpOptions::default())?;

    let source_latent = ctx.codec.encode(&scene.views[source_idx].image)?;
    let reference_embedding = encode_appearance(ctx.metric_encoder, &source_latent)?;

    let mut metrics = Vec::with_capacity(target_views.len());
    for ((&view, image), warp) in target_views.iter().zip(&images).zip(&warps) {
        let reference = appearance_matched_reference(scene, source_idx, view);
        let distance = appearance_consistency(
            std::slice::from_ref(image),
            &reference_embedding,
            ctx.metric_encoder,
            ctx.codec,
        );
        metrics.push(ViewMetrics {
            view,
            psnr: psnr(image, &reference),
            ssim: ssim(image, &reference),
            appearance_distance: distance,
            coverage_psnr: psnr_masked(image, &reference, &warp.coverage),
        });
    }
    Ok(metrics)
}

/// Evaluates one trained model over a scene list (source is always view
/// 0), averaging per-view metrics.
pub fn evaluate_model<S: Scalar>(
    ctx: &EvalContext<'_, S>,
    denoiser: &DenoiserParams<S>,
    encoder: &AppearanceEncoderParams<S>,
    ablation: Ablation,
    scenes: &[Scene<S>],
) -> Result<EvalReport, AssemblyError> {
    let mut per_view = Vec::new();
    for scene in scenes {
        per_view.extend(evaluate_scene(ctx, denoiser, encoder, ablation, scene, 0)?);
    }
    Ok(EvalReport::from_views(per_view))
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub report: EvalReport,
}

/// Evaluates the three ablation variants on a fixed scene set, producing
/// one table row per model.
pub fn run_ablation_suite<S: Scalar>(
    ctx: &EvalContext<'_, S>,
    models: &[(Ablation, &DenoiserParams<S>, &AppearanceEncoderParams<S>)],
    scenes: &[Scene<S>],
) -> Result<Vec<AblationRow>, AssemblyError> {
    models
        .iter()
        .map(|(ablation, denoiser, encoder)| {
            Ok(AblationRow {
                ablation: *ablation,
                report: evaluate_model(ctx, denoiser, encoder, *ablation, scenes)?,
            })
        })
        .collect()
}

/// CSV rendering of ablation rows (documented header order).
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("ablation,psnr,ssim,appearance_consistency,coverage_psnr\n");
    for row in rows {
        let name = match row.ablation {
            Ablation::Full => "full",
            Ablation::NoWarp => "no_warp",
            Ablation::NoWarpNoApp => "no_warp_no_app",
        };
        out.push_str(&format!(
            "{name},{:.6},{:.6},{:.6},{:.6}\n",
            row.report.psnr,
            row.report.ssim,
            row.report.appearance_consistency,
            row.report.coverage_psnr
        ));
    }
    out
}
