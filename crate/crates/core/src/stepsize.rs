//! Step-size adaptation: cumulative step-size adaptation (CSA) and two-point
//! adaptation (TPA), each in its original form and in the form that measures
//! norms only along effective directions (weighted by an effectiveness vector
//! `v ∈ [0,1]^N` expressed in the covariance eigenbasis).

use rand::Rng;
use rand_distr::StandardNormal;

use crate::cmaes::{StepSizeMode, StrategyParams};
use crate::vecmat::{dot, norm, EigenPair};

pub const SIGMA_MIN: f64 = 1e-32;
pub const SIGMA_MAX: f64 = 1e32;

/// Multiplier for σ together with the Heaviside gate `h_σ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepUpdate {
    pub sigma_mult: f64,
    pub h_sigma: bool,
}

/// `σ · mult`, clamped to `[SIGMA_MIN, SIGMA_MAX]`.
pub fn apply_multiplier(sigma: f64, mult: f64) -> f64 {
    (sigma * mult).clamp(SIGMA_MIN, SIGMA_MAX)
}

/// `E‖N(0, I_n)‖ ≈ √n (1 − 1/(4n) + 1/(21n²))`
pub fn expected_norm(n: f64) -> f64 {
    n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsaState {
    pub p_sigma: Vec<f64>,
    /// Accumulated effectiveness; only used by the masked variant.
    pub p_v: Vec<f64>,
}

impl CsaState {
    pub fn new(n: usize) -> Self {
        Self {
            p_sigma: vec![0.0; n],
            p_v: vec![0.0; n],
        }
    }

    fn accumulate(&mut self, input: &[f64], params: &StrategyParams) {
        let c = params.c_sigma;
        let gain = (c * (2.0 - c) * params.mu_eff).sqrt();
        for (p, z) in self.p_sigma.iter_mut().zip(input) {
            *p = (1.0 - c) * *p + gain * z;
        }
    }

    /// Original CSA. `t` is the 0-based iteration index.
    pub fn update(&mut self, z_avg: &[f64], params: &StrategyParams, t: usize) -> StepUpdate {
        self.accumulate(z_avg, params);
        let n = self.p_sigma.len() as f64;
        let c = params.c_sigma;
        let chi = expected_norm(n);
        let len = norm(&self.p_sigma);
        let sigma_mult = ((c / params.d_sigma) * (len / chi - 1.0)).exp();
        let correction = (1.0 - (1.0 - c).powf(2.0 * (t as f64 + 1.0))).sqrt();
        let h_sigma = len / correction < (1.4 + 2.0 / (n + 1.0)) * chi;
        StepUpdate {
            sigma_mult,
            h_sigma,
        }
    }

    /// CSA with the path input masked by `√v` in the eigenbasis of `eigen`
    /// (`B (√v ∘ Bᵀ⟨z⟩_w)`), normalized by the accumulated effectiveness.
    /// With `eigen = None` the mask is applied coordinate-wise.
    pub fn update_led(
        &mut self,
        z_avg: &[f64],
        v: &[f64],
        eigen: Option<&EigenPair>,
        params: &StrategyParams,
        n_eff_hat: f64,
        t: usize,
    ) -> StepUpdate {
        let root_v: Vec<f64> = v.iter().map(|x| x.max(0.0).sqrt()).collect();
        let masked = match eigen {
            Some(e) => e.apply_spectral(&root_v, z_avg),
            None => z_avg.iter().zip(&root_v).map(|(z, r)| z * r).collect(),
        };
        self.accumulate(&masked, params);
        let c = params.c_sigma;
        for (p, vi) in self.p_v.iter_mut().zip(v) {
            *p = (1.0 - c).powi(2) * *p + c * (2.0 - c) * vi;
        }
        let p_v_sum: f64 = self.p_v.iter().sum();
        if p_v_sum <= 0.0 {
            return StepUpdate {
                sigma_mult: 1.0,
                h_sigma: true,
            };
        }
        let sq = dot(&self.p_sigma, &self.p_sigma);
        let sigma_mult = ((c / params.d_sigma) * (sq / p_v_sum - 1.0)).exp();
        let correction = 1.0 - (1.0 - c).powf(2.0 * (t as f64 + 1.0));
        let h_sigma = sq / correction < (1.4 + 2.0 / (n_eff_hat + 1.0)).powi(2) * p_v_sum;
        StepUpdate {
            sigma_mult,
            h_sigma,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TpaState {
    pub s: f64,
    /// Previous iteration's mean shift; `None` before the first update.
    pub prev_delta_m: Option<Vec<f64>>,
}

/// Line-search pair `m ± σ ‖n‖ Δm / √(Δmᵀ C⁻¹ Δm)`.
pub fn tpa_points(
    mean: &[f64],
    sigma: f64,
    eigen: &EigenPair,
    delta_m: &[f64],
    noise: &[f64],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let rotated = eigen.basis.tr_mul_vec(delta_m);
    let mahalanobis_sq: f64 = rotated
        .iter()
        .zip(eigen.floored_values())
        .map(|(d, l)| d * d / l)
        .sum();
    symmetric_pair(mean, sigma * norm(noise), delta_m, mahalanobis_sq)
}

/// Masked line-search pair
/// `m ± σ ‖n ∘ v‖ Δm / √((v ∘ Δm̄)ᵀ Λ⁻¹ (v ∘ Δm̄))` with `Δm̄ = Bᵀ Δm`.
pub fn led_tpa_points(
    mean: &[f64],
    sigma: f64,
    eigen: &EigenPair,
    delta_m: &[f64],
    v: &[f64],
    noise: &[f64],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let rotated = eigen.basis.tr_mul_vec(delta_m);
    let mahalanobis_sq: f64 = rotated
        .iter()
        .zip(v)
        .zip(eigen.floored_values())
        .map(|((d, vi), l)| (vi * d).powi(2) / l)
        .sum();
    let length: f64 = noise
        .iter()
        .zip(v)
        .map(|(n, vi)| (n * vi).powi(2))
        .sum::<f64>()
        .sqrt();
    symmetric_pair(mean, sigma * length, delta_m, mahalanobis_sq)
}

fn symmetric_pair(
    mean: &[f64],
    length: f64,
    delta_m: &[f64],
    denom_sq: f64,
) -> Option<(Vec<f64>, Vec<f64>)> {
    if !(denom_sq > 0.0) || !denom_sq.is_finite() {
        return None;
    }
    let scale = length / denom_sq.sqrt();
    let step: Vec<f64> = delta_m.iter().map(|d| scale * d).collect();
    let plus = mean.iter().zip(&step).map(|(m, s)| m + s).collect();
    let minus = mean.iter().zip(&step).map(|(m, s)| m - s).collect();
    Some((plus, minus))
}

impl TpaState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Original TPA pair for this iteration, or `None` on the first iteration
    /// or for a zero previous shift. Draws `N` normals from `rng` only when a
    /// previous shift exists.
    pub fn inject<R: Rng + ?Sized>(
        &self,
        mean: &[f64],
        sigma: f64,
        eigen: &EigenPair,
        rng: &mut R,
    ) -> Option<(Vec<f64>, Vec<f64>)> {
        let dm = self.prev_delta_m.as_ref()?;
        let noise = draw(dm.len(), rng);
        tpa_points(mean, sigma, eigen, dm, &noise)
    }

    pub fn inject_led<R: Rng + ?Sized>(
        &self,
        mean: &[f64],
        sigma: f64,
        eigen: &EigenPair,
        v: &[f64],
        rng: &mut R,
    ) -> Option<(Vec<f64>, Vec<f64>)> {
        let dm = self.prev_delta_m.as_ref()?;
        let noise = draw(dm.len(), rng);
        led_tpa_points(mean, sigma, eigen, dm, v, &noise)
    }

    /// Accumulates the rank difference of the injected pair (1-based ranks
    /// `(rank(x₊), rank(x₋))` among all λ samples); with `None` the
    /// accumulator only decays.
    pub fn update(&mut self, ranks: Option<(usize, usize)>, params: &StrategyParams) -> StepUpdate {
        let c = params.c_sigma;
        let signal = match ranks {
            Some((plus, minus)) => {
                c * (minus as f64 - plus as f64) / (params.lambda as f64 - 1.0)
            }
            None => 0.0,
        };
        self.s = (1.0 - c) * self.s + signal;
        StepUpdate {
            sigma_mult: (self.s / params.d_sigma).exp(),
            h_sigma: self.s < 0.5,
        }
    }
}

fn draw<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Accumulator state of whichever rule is active.
#[derive(Clone, Debug, PartialEq)]
pub enum StepSizeState {
    Csa(CsaState),
    Tpa(TpaState),
}

impl StepSizeState {
    pub fn new(mode: StepSizeMode, n: usize) -> Self {
        match mode {
            StepSizeMode::Csa => StepSizeState::Csa(CsaState::new(n)),
            StepSizeMode::Tpa => StepSizeState::Tpa(TpaState::new()),
        }
    }

    pub fn mode(&self) -> StepSizeMode {
        match self {
            StepSizeState::Csa(_) => StepSizeMode::Csa,
            StepSizeState::Tpa(_) => StepSizeMode::Tpa,
        }
    }
}
