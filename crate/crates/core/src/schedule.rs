//! Noise schedule with zero terminal SNR, velocity-parameterization algebra
//! and the deterministic DDIM update.
//!
//! The schedule stores `alpha_bar[0..=T]` with `alpha_bar[0] = 1` (clean
//! data) and `alpha_bar[T] = 0` exactly: the base schedule is rescaled in
//! `sqrt(alpha_bar)` space so the final timestep is pure noise, which is
//! what makes velocity prediction mandatory (an epsilon target is
//! unidentifiable at zero SNR).

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseSchedule {
    Cosine,
    Linear,
}

/// Serializable schedule description (the schedule itself is derived).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub base: BaseSchedule,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            timesteps: 64,
            base: BaseSchedule::Cosine,
        }
    }
}

impl ScheduleConfig {
    pub fn build<S: Scalar>(&self) -> NoiseSchedule<S> {
        make_schedule(self.timesteps, self.base)
    }
}

#[derive(Debug, Clone)]
pub struct NoiseSchedule<S> {
    alpha_bar: Vec<S>,
}

impl<S: Scalar> NoiseSchedule<S> {
    /// Number of diffusion timesteps `T`; valid indices are `0..=T`.
    pub fn timesteps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    #[inline]
    pub fn alpha_bar(&self, t: usize) -> S {
        self.alpha_bar[t]
    }

    /// `a_t = sqrt(alpha_bar_t)`, the signal coefficient.
    #[inline]
    pub fn signal(&self, t: usize) -> S {
        self.alpha_bar[t].sqrt()
    }

    /// `b_t = sqrt(1 - alpha_bar_t)`, the noise coefficient.
    #[inline]
    pub fn noise(&self, t: usize) -> S {
        (S::one() - self.alpha_bar[t]).sqrt()
    }

    pub fn validate(&self) -> bool {
        let t_count = self.timesteps();
        self.alpha_bar[0] == S::one()
            && self.alpha_bar[t_count] == S::zero()
            && self.alpha_bar.windows(2).all(|w| w[1] < w[0])
            && self.alpha_bar.iter().all(|a| a.is_finite())
    }

    /// Uniformly strided sampling timesteps from `T` down to `0`, inclusive.
    pub fn ddim_timesteps(&self, steps: usize) -> Vec<usize> {
        let t_count = self.timesteps();
        let steps = steps.clamp(1, t_count);
        let mut ts: Vec<usize> = (0..=steps)
            .map(|i| ((t_count * (steps - i)) as f64 / steps as f64).round() as usize)
            .collect();
        ts.dedup();
        ts
    }
}

/// Builds the schedule: base `sqrt(alpha_bar)` curve, then the terminal
/// rescale `s'_t = (s_t - s_T) * s_1 / (s_1 - s_T)` applied for `t >= 1`,
/// which pins `s'_T = 0` while leaving `s'_1 = s_1`.
pub fn make_schedule<S: Scalar>(t_count: usize, base: BaseSchedule) -> NoiseSchedule<S> {
    assert!(t_count >= 2, "need at least two timesteps");
    let mut alpha_bar = vec![1.0f64; t_count + 1];
    match base {
        BaseSchedule::Cosine => {
            let f = |t: f64| {
                let s = 0.008;
                ((t / t_count as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2)
                    .cos()
                    .powi(2)
            };
            for t in 1..=t_count {
                let beta = (1.0 - f(t as f64) / f(t as f64 - 1.0)).min(0.999);
                alpha_bar[t] = alpha_bar[t - 1] * (1.0 - beta);
            }
        }
        BaseSchedule::Linear => {
            // DDPM linear betas, scaled so the range is invariant to T.
            let scale = 1000.0 / t_count as f64;
            let (b0, b1) = (1e-4 * scale, 0.02 * scale);
            for t in 1..=t_count {
                let beta = (b0 + (b1 - b0) * (t - 1) as f64 / (t_count - 1) as f64).min(0.999);
                alpha_bar[t] = alpha_bar[t - 1] * (1.0 - beta);
            }
        }
    }

    let s: Vec<f64> = alpha_bar.iter().map(|a| a.sqrt()).collect();
    let (s1, st) = (s[1], s[t_count]);
    let mut out = vec![S::one(); t_count + 1];
    for t in 1..=t_count {
        let rescaled = (s[t] - st) * s1 / (s1 - st);
        out[t] = S::of(rescaled * rescaled);
    }
    out[t_count] = S::zero();
    let sched = NoiseSchedule { alpha_bar: out };
    debug_assert!(sched.validate());
    sched
}

/// `x_t = a_t * x0 + b_t * eps`.
pub fn forward_diffuse<S: Scalar>(
    sched: &NoiseSchedule<S>,
    x0: &Tensor<S>,
    t: usize,
    eps: &Tensor<S>,
) -> Tensor<S> {
    x0.lin_comb(sched.signal(t), eps, sched.noise(t))
}

/// Velocity target `v = a_t * eps - b_t * x0`.
pub fn v_target<S: Scalar>(
    sched: &NoiseSchedule<S>,
    x0: &Tensor<S>,
    eps: &Tensor<S>,
    t: usize,
) -> Tensor<S> {
    eps.lin_comb(sched.signal(t), x0, -sched.noise(t))
}

/// `x0 = a_t * x_t - b_t * v`.
pub fn x0_from_v<S: Scalar>(
    sched: &NoiseSchedule<S>,
    xt: &Tensor<S>,
    v: &Tensor<S>,
    t: usize,
) -> Tensor<S> {
    xt.lin_comb(sched.signal(t), v, -sched.noise(t))
}

/// `eps = b_t * x_t + a_t * v`.
pub fn eps_from_v<S: Scalar>(
    sched: &NoiseSchedule<S>,
    xt: &Tensor<S>,
    v: &Tensor<S>,
    t: usize,
) -> Tensor<S> {
    xt.lin_comb(sched.noise(t), v, sched.signal(t))
}

/// Deterministic DDIM update from `t` to `t_next`.
pub fn ddim_step<S: Scalar>(
    sched: &NoiseSchedule<S>,
    xt: &Tensor<S>,
    v_pred: &Tensor<S>,
    t: usize,
    t_next: usize,
) -> Tensor<S> {
    let x0 = x0_from_v(sched, xt, v_pred, t);
    let eps = eps_from_v(sched, xt, v_pred, t);
    x0.lin_comb(sched.signal(t_next), &eps, sched.noise(t_next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn randn(c: usize, h: usize, w: usize, rng: &mut StdRng) -> Tensor<f64> {
        let data = (0..c * h * w).map(|_| rng.sample(StandardNormal)).collect();
        Tensor::from_vec(c, h, w, data)
    }

    #[test]
    fn terminal_snr_is_exactly_zero() {
        for base in [BaseSchedule::Cosine, BaseSchedule::Linear] {
            let sched = make_schedule::<f64>(64, base);
            assert_eq!(sched.alpha_bar(64), 0.0);
            assert_eq!(sched.alpha_bar(0), 1.0);
            assert_eq!(sched.signal(64), 0.0);
        }
    }

    #[test]
    fn strictly_decreasing_t64() {
        for base in [BaseSchedule::Cosine, BaseSchedule::Linear] {
            let sched = make_schedule::<f64>(64, base);
            for t in 1..=64 {
                assert!(
                    sched.alpha_bar(t) < sched.alpha_bar(t - 1),
                    "{base:?} not strictly decreasing at t={t}"
                );
            }
        }
    }

    #[test]
    fn rescale_preserves_first_step() {
        // Independent recomputation of the base cosine alpha_bar at t=1.
        let t_count = 64usize;
        let s = 0.008;
        let f = |t: f64| {
            ((t / t_count as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2)
                .cos()
                .powi(2)
        };
        let base_s1 = (f(1.0) / f(0.0)).sqrt();
        let sched = make_schedule::<f64>(t_count, BaseSchedule::Cosine);
        assert!((sched.signal(1) - base_s1).abs() < 1e-12);
    }

    #[test]
    fn forward_diffuse_endpoints() {
        let sched = make_schedule::<f64>(16, BaseSchedule::Cosine);
        let mut rng = StdRng::seed_from_u64(1);
        let x0 = randn(2, 3, 3, &mut rng);
        let eps = randn(2, 3, 3, &mut rng);
        assert_eq!(forward_diffuse(&sched, &x0, 0, &eps), x0);
        assert_eq!(forward_diffuse(&sched, &x0, 16, &eps), eps);
    }

    #[test]
    fn forward_diffuse_variance_monte_carlo() {
        let sched = make_schedule::<f64>(64, BaseSchedule::Cosine);
        let mut rng = StdRng::seed_from_u64(7);
        let x0 = Tensor::<f64>::zeros(1, 1, 1);
        for t in [13, 32, 50] {
            let n = 10_000;
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..n {
                let eps = randn(1, 1, 1, &mut rng);
                let xt = forward_diffuse(&sched, &x0, t, &eps).as_slice()[0];
                sum += xt;
                sum_sq += xt * xt;
            }
            let var = sum_sq / n as f64 - (sum / n as f64).powi(2);
            let expected = 1.0 - sched.alpha_bar(t);
            assert!(
                (var - expected).abs() / expected < 0.02,
                "t={t}: var {var} vs {expected}"
            );
        }
    }

    #[test]
    fn v_algebra_round_trips_every_timestep() {
        let sched = make_schedule::<f64>(32, BaseSchedule::Cosine);
        let mut rng = StdRng::seed_from_u64(3);
        let x0 = randn(2, 4, 4, &mut rng);
        let eps = randn(2, 4, 4, &mut rng);
        for t in 0..=32 {
            let xt = forward_diffuse(&sched, &x0, t, &eps);
            let v = v_target(&sched, &x0, &eps, t);
            assert!(x0_from_v(&sched, &xt, &v, t).max_abs_diff(&x0) < 1e-12);
            assert!(eps_from_v(&sched, &xt, &v, t).max_abs_diff(&eps) < 1e-12);
        }
    }

    #[test]
    fn v_target_degenerate_endpoints() {
        let sched = make_schedule::<f64>(8, BaseSchedule::Cosine);
        let mut rng = StdRng::seed_from_u64(4);
        let x0 = randn(1, 2, 2, &mut rng);
        let eps = randn(1, 2, 2, &mut rng);
        // alpha_bar = 1 at t=0 -> v = eps; alpha_bar = 0 at t=T -> v = -x0.
        assert_eq!(v_target(&sched, &x0, &eps, 0), eps);
        assert!(v_target(&sched, &x0, &eps, 8)
            .max_abs_diff(&x0.scaled(-1.0))
            .abs()
            < 1e-15);
        // At zero SNR the x0 reconstruction stays well-defined: x0 = -v.
        let xt = forward_diffuse(&sched, &x0, 8, &eps);
        let v = v_target(&sched, &x0, &eps, 8);
        assert!(x0_from_v(&sched, &xt, &v, 8).max_abs_diff(&x0) < 1e-15);
    }

    #[test]
    fn ddim_final_step_returns_x0_prediction() {
        let sched = make_schedule::<f64>(16, BaseSchedule::Cosine);
        let mut rng = StdRng::seed_from_u64(5);
        let xt = randn(1, 2, 2, &mut rng);
        let v = randn(1, 2, 2, &mut rng);
        let stepped = ddim_step(&sched, &xt, &v, 16, 0);
        assert!(stepped.max_abs_diff(&x0_from_v(&sched, &xt, &v, 16)) < 1e-15);
    }

    #[test]
    fn ddim_chain_preserves_delta_data() {
        // For data concentrated at a constant c the optimal velocity is
        // analytic: E[x0|xt] = c, E[eps|xt] = (xt - a*c)/b.
        let sched = make_schedule::<f64>(64, BaseSchedule::Cosine);
        let c = 0.37;
        let target = Tensor::<f64>::full(1, 4, 4, c);
        let mut rng = StdRng::seed_from_u64(6);
        let mut x = randn(1, 4, 4, &mut rng);
        let ts = sched.ddim_timesteps(64);
        assert_eq!(ts.len(), 65);
        for pair in ts.windows(2) {
            let (t, t_next) = (pair[0], pair[1]);
            let (a, b) = (sched.signal(t), sched.noise(t));
            let eps_hat = x.map(|xt| (xt - a * c) / b);
            let v = eps_hat.lin_comb(a, &target, -b);
            x = ddim_step(&sched, &x, &v, t, t_next);
        }
        assert!(x.max_abs_diff(&target) < 1e-6);
    }

    #[test]
    fn ddim_timestep_subset_covers_range() {
        let sched = make_schedule::<f64>(1000, BaseSchedule::Cosine);
        let ts = sched.ddim_timesteps(64);
        assert_eq!(*ts.first().unwrap(), 1000);
        assert_eq!(*ts.last().unwrap(), 0);
        assert!(ts.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(ts.len(), 65);
    }

    #[test]
    fn generic_over_f32() {
        let sched = make_schedule::<f32>(16, BaseSchedule::Cosine);
        assert_eq!(sched.alpha_bar(16), 0.0f32);
        assert!(sched.validate());
    }
}
