//! Effectiveness estimation for problems with low effective dimensionality.
//!
//! Update directions of the mean and covariance are rotated into the
//! eigenbasis of the sampling covariance. Per coordinate, an exponentially
//! smoothed sign sequence gives a signal-to-noise estimate that is close to
//! zero on redundant directions and close to one on directions with a
//! consistent update. A sigmoid around a dimension-dependent threshold turns
//! the estimate into an effectiveness `v ∈ [0,1]^N`, whose sum is the
//! estimated effective dimension.

use crate::cmaes::StrategyParams;
use crate::vecmat::{EigenPair, Matrix};

pub const BETA: f64 = 0.01;
const THRESH_COEFFS: [f64; 4] = [0.106, 0.0776, 0.0665, 0.947];
const GAIN_MIN: f64 = -2.0;
const GAIN_MAX: f64 = 3.0;

/// Update directions expressed in the covariance eigenbasis.
#[derive(Clone, Debug, PartialEq)]
pub struct RotatedDirections {
    /// `Bᵀ Δm`
    pub delta_m_bar: Vec<f64>,
    /// `diag(Bᵀ Δ_μC B)`
    pub delta_c_bar: Vec<f64>,
}

/// Rotates the mean shift and rank-μ direction into the basis of `eigen`
/// (the basis the population was sampled in).
pub fn rotate_directions(delta_m: &[f64], delta_mu: &Matrix, eigen: &EigenPair) -> RotatedDirections {
    let b = &eigen.basis;
    let n = b.rows();
    let delta_m_bar = b.tr_mul_vec(delta_m);
    // Column i of Δ·B dotted with b_i.
    let db = delta_mu.matmul(b);
    let mut delta_c_bar = vec![0.0; n];
    for j in 0..n {
        for (acc, (bji, dbji)) in delta_c_bar.iter_mut().zip(b.row(j).iter().zip(db.row(j))) {
            *acc += bji * dbji;
        }
    }
    RotatedDirections {
        delta_m_bar,
        delta_c_bar,
    }
}

/// `(0.106 + 0.0776 ln N)(0.0665 + 0.947/√λ)`
pub fn xi_thresh(n: usize, lambda: usize) -> f64 {
    let [a1, a2, a3, a4] = THRESH_COEFFS;
    (a1 + a2 * (n as f64).ln()) * (a3 + a4 / (lambda as f64).sqrt())
}

/// `10^{5 max(v_snr) − 2}`
pub fn xi_gain(max_v_snr: f64) -> f64 {
    10f64.powf((GAIN_MAX - GAIN_MIN) * max_v_snr + GAIN_MIN)
}

fn logistic(gain: f64, x: f64) -> f64 {
    let e = gain * x;
    if e >= 0.0 {
        1.0 / (1.0 + (-e).exp())
    } else {
        let t = e.exp();
        t / (1.0 + t)
    }
}

/// `v_i = min(ς(v_snr,i − ξ_thresh) / ς(1), 1)` with gain `ξ_gain`, and
/// `N̂ = max(Σv, 1)`.
pub fn effectiveness(v_snr: &[f64], thresh: f64, gain: f64) -> (Vec<f64>, f64) {
    let top = logistic(gain, 1.0);
    let v: Vec<f64> = v_snr
        .iter()
        .map(|s| (logistic(gain, s - thresh) / top).min(1.0))
        .collect();
    let n_hat = v.iter().sum::<f64>().max(1.0);
    (v, n_hat)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LedState {
    pub s_m: Vec<f64>,
    pub gamma_m: Vec<f64>,
    pub s_c: Vec<f64>,
    pub gamma_c: Vec<f64>,
    pub v_snr: Vec<f64>,
    pub v: Vec<f64>,
    pub n_eff_hat: f64,
    pub beta: f64,
    pub xi_thresh: f64,
    /// Gain used for the most recent `v`.
    pub xi_gain: f64,
}

impl LedState {
    /// Fresh state: zero accumulators, full effectiveness.
    pub fn new(n: usize, lambda: usize) -> Self {
        Self {
            s_m: vec![0.0; n],
            gamma_m: vec![0.0; n],
            s_c: vec![0.0; n],
            gamma_c: vec![0.0; n],
            v_snr: vec![0.0; n],
            v: vec![1.0; n],
            n_eff_hat: n as f64,
            beta: BETA,
            xi_thresh: xi_thresh(n, lambda),
            xi_gain: xi_gain(0.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn update_accumulators(&mut self, dirs: &RotatedDirections) {
        let b = self.beta;
        let decay = 1.0 - b;
        let gain = (b * (2.0 - b)).sqrt();
        let feed = b * (2.0 - b);
        for i in 0..self.dim() {
            self.s_m[i] = decay * self.s_m[i] + gain * sign(dirs.delta_m_bar[i]);
            self.s_c[i] = decay * self.s_c[i] + gain * sign(dirs.delta_c_bar[i]);
            self.gamma_m[i] = decay * decay * self.gamma_m[i] + feed;
            self.gamma_c[i] = decay * decay * self.gamma_c[i] + feed;
        }
    }

    /// `v_snr,i = β/(2−β) · max(s_m,i²/γ_m,i, s_C,i²/γ_C,i)`. Coordinates
    /// whose accumulators were never fed report zero.
    pub fn snr_estimate(&self) -> Vec<f64> {
        let scale = self.beta / (2.0 - self.beta);
        let ratio = |s: f64, g: f64| if g > 0.0 { s * s / g } else { 0.0 };
        (0..self.dim())
            .map(|i| {
                scale * ratio(self.s_m[i], self.gamma_m[i]).max(ratio(self.s_c[i], self.gamma_c[i]))
            })
            .collect()
    }

    /// One full estimator step: accumulators, SNR, gain and effectiveness.
    pub fn update(&mut self, dirs: &RotatedDirections) {
        self.update_accumulators(dirs);
        self.v_snr = self.snr_estimate();
        let peak = self.v_snr.iter().copied().fold(0.0, f64::max);
        self.xi_gain = xi_gain(peak);
        let (v, n_hat) = effectiveness(&self.v_snr, self.xi_thresh, self.xi_gain);
        self.v = v;
        self.n_eff_hat = n_hat;
    }

    pub fn max_snr(&self) -> f64 {
        self.v_snr.iter().copied().fold(0.0, f64::max)
    }
}

/// Strategy constants recomputed for the estimated effective dimension;
/// λ and the weights stay as in `base`.
pub fn adapt_hyperparameters(base: &StrategyParams, n_eff_hat: f64) -> StrategyParams {
    let mut p = base.clone();
    p.set_dimension(n_eff_hat);
    p
}
