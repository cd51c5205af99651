//! Closed-form optimal denoiser for elementwise Gaussian data
//! `x0 ~ N(mean, variance)`: the only denoiser whose exact posterior is
//! known, which makes it the verification oracle for the sampler.

use super::VDenoiser;
use crate::assembly::SlotBatch;
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GaussianDataModel<S> {
    pub mean: Tensor<S>,
    /// Isotropic per-element variance of the data distribution.
    pub variance: S,
}

/// Optimal velocity for Gaussian data:
/// `E[x0|xt] = (a σ² xt + b² μ) / (a² σ² + b²)`,
/// `E[eps|xt] = (xt - a E[x0|xt]) / b` (zero at b = 0),
/// `v = a E[eps|xt] - b E[x0|xt]`.
pub fn oracle_v<S: Scalar>(
    model: &GaussianDataModel<S>,
    sched: &NoiseSchedule<S>,
    xt: &Tensor<S>,
    t: usize,
) -> Tensor<S> {
    let a = sched.signal(t);
    let b = sched.noise(t);
    let var = model.variance;
    let (c, h, w) = xt.shape();
    let mut out = Tensor::zeros(c, h, w);
    for (i, (&x, &mu)) in xt
        .as_slice()
        .iter()
        .zip(model.mean.as_slice())
        .enumerate()
    {
        let (x0, eps) = if b == S::zero() {
            // Zero noise: the sample is the clean value.
            (x, S::zero())
        } else {
            let denom = a * a * var + b * b;
            let x0 = (a * var * x + b * b * mu) / denom;
            ((x0), (x - a * x0) / b)
        };
        out.as_mut_slice()[i] = a * eps - b * x0;
    }
    out
}

/// [`VDenoiser`] wrapper: applies the oracle to every slot's latent
/// channels, ignoring all conditioning.
pub struct OracleDenoiser<'a, S> {
    pub model: &'a GaussianDataModel<S>,
    pub schedule: &'a NoiseSchedule<S>,
}

impl<S: Scalar> VDenoiser<S> for OracleDenoiser<'_, S> {
    fn predict(&self, batch: &SlotBatch<S>) -> Vec<Tensor<S>> {
        batch
            .slots
            .iter()
            .map(|slot| oracle_v(self.model, self.schedule, &slot.latent, batch.t))
            .collect()
    }
}
