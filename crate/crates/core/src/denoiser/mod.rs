//! Per-slot velocity-prediction denoisers and the drivers around them:
//! an analytic Gaussian oracle used to verify the sampler, a toy
//! trainable multi-view network whose cross-view attention exercises the
//! full conditioning contract, the joint training loop, and the DDIM
//! sampling driver with appearance-aware classifier-free guidance.

mod oracle;
mod sample;
mod toy;
mod train;

pub use oracle::{oracle_v, GaussianDataModel, OracleDenoiser};
pub use sample::{generate_views, sample, SampleOptions};
pub use toy::{DenoiserConfig, DenoiserParams, ToyCache};
pub use train::{train, train_step_grads, Adam, TrainConfig, TrainLogEntry, TrainedModel};

use crate::assembly::SlotBatch;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A denoiser predicting per-slot velocity tensors (`k x n x n` each)
/// from a slot batch at the batch's timestep.
pub trait VDenoiser<S: Scalar> {
    fn predict(&self, batch: &SlotBatch<S>) -> Vec<Tensor<S>>;
}
