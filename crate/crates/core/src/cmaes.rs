//! The CMA-ES distribution update: sampling, ranking, weighted recombination,
//! the rank-one evolution path and the rank-μ / rank-one covariance update,
//! plus the default strategy parameters.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{config_err, Error, Result};
use crate::vecmat::{sym_eigendecompose_from, EigenPair, Matrix};

/// Which step-size rule the constants `c_σ`, `d_σ` are set for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StepSizeMode {
    Csa,
    Tpa,
}

impl StepSizeMode {
    pub fn name(self) -> &'static str {
        match self {
            StepSizeMode::Csa => "csa",
            StepSizeMode::Tpa => "tpa",
        }
    }
}

/// `4 + ⌊3 ln n⌋`
pub fn default_lambda(n: usize) -> usize {
    4 + (3.0 * (n as f64).ln()).floor() as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrategyParams {
    pub lambda: usize,
    pub mu: usize,
    /// Positive recombination weights, strictly decreasing, summing to one.
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_m: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub mode: StepSizeMode,
    /// The dimension the learning rates were computed for.
    pub dim: f64,
}

/// Default strategy parameters for dimension `n` (real-valued so that an
/// estimated effective dimension can be passed) and sample size `lambda`.
pub fn default_params(n: f64, lambda: usize, mode: StepSizeMode) -> Result<StrategyParams> {
    if lambda < 4 {
        return Err(config_err(format!("sample size {lambda} is below 4")));
    }
    if !(n > 0.0) || !n.is_finite() {
        return Err(config_err(format!("dimension {n} must be positive")));
    }
    let half = ((lambda as f64 + 1.0) / 2.0).ln();
    let raw: Vec<f64> = (1..=lambda)
        .map(|i| (half - (i as f64).ln()).max(0.0))
        .take_while(|&w| w > 0.0)
        .collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let mut params = StrategyParams {
        lambda,
        mu: weights.len(),
        weights,
        mu_eff,
        c_m: 1.0,
        c_c: 0.0,
        c_1: 0.0,
        c_mu: 0.0,
        c_sigma: 0.0,
        d_sigma: 0.0,
        mode,
        dim: n,
    };
    params.set_dimension(n);
    Ok(params)
}

impl StrategyParams {
    /// Recomputes the learning rates and step-size constants for dimension
    /// `n`, leaving λ, μ and the weights as they are.
    pub fn set_dimension(&mut self, n: f64) {
        let mu_eff = self.mu_eff;
        self.dim = n;
        self.c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        self.c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        self.c_mu = (1.0 - self.c_1)
            .min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
        match self.mode {
            StepSizeMode::Csa => {
                self.c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
                self.d_sigma = 1.0
                    + self.c_sigma
                    + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0);
            }
            StepSizeMode::Tpa => {
                self.c_sigma = 0.3;
                self.d_sigma = n.sqrt();
            }
        }
    }
}

/// Mean, covariance (with its eigendecomposition), step-size and the
/// rank-one evolution path.
#[derive(Clone, Debug)]
pub struct DistributionState {
    pub mean: Vec<f64>,
    pub cov: Matrix,
    /// Always the eigendecomposition of `cov`.
    pub eigen: EigenPair,
    /// `√Λ` on floored eigenvalues, cached for sampling.
    sqrt_values: Vec<f64>,
    pub sigma: f64,
    pub p_c: Vec<f64>,
    pub iteration: usize,
}

impl DistributionState {
    /// `N(mean, sigma² I)` with a zero evolution path.
    pub fn new(mean: Vec<f64>, sigma: f64) -> Self {
        let n = mean.len();
        Self {
            cov: Matrix::identity(n),
            eigen: EigenPair::identity(n),
            sqrt_values: vec![1.0; n],
            sigma,
            p_c: vec![0.0; n],
            mean,
            iteration: 0,
        }
    }

    /// Starts from an explicit covariance matrix.
    pub fn with_covariance(mean: Vec<f64>, sigma: f64, cov: Matrix) -> Result<Self> {
        let mut s = Self::new(mean, sigma);
        s.set_covariance(cov, s.iteration)?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `√C v` via the cached eigenpair.
    pub fn sqrt_cov_mul(&self, v: &[f64]) -> Vec<f64> {
        self.eigen.apply_spectral(&self.sqrt_values, v)
    }

    /// `C^{-1/2} v` via the cached eigenpair (floored eigenvalues).
    pub fn inv_sqrt_cov_mul(&self, v: &[f64]) -> Vec<f64> {
        let inv: Vec<f64> = self.sqrt_values.iter().map(|s| 1.0 / s).collect();
        self.eigen.apply_spectral(&inv, v)
    }

    fn set_covariance(&mut self, mut cov: Matrix, iteration: usize) -> Result<()> {
        cov.symmetrize();
        if !cov.is_finite() {
            return Err(Error::NonFiniteCovariance(iteration));
        }
        self.eigen = sym_eigendecompose_from(&cov, &self.eigen.basis)?;
        self.sqrt_values = self.eigen.floored_values().iter().map(|l| l.sqrt()).collect();
        self.cov = cov;
        Ok(())
    }
}

/// λ candidates and (once evaluated) their fitness and ranking.
#[derive(Clone, Debug)]
pub struct Population {
    pub z: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    pub f: Vec<f64>,
    /// Sample indices from best to worst.
    pub order: Vec<usize>,
}

impl Population {
    /// Candidates `x_k = m + σ √C z_k` for the given standard-normal draws.
    pub fn from_noise(state: &DistributionState, z: Vec<Vec<f64>>) -> Self {
        let y: Vec<Vec<f64>> = z.iter().map(|zk| state.sqrt_cov_mul(zk)).collect();
        let x = y
            .iter()
            .map(|yk| {
                state
                    .mean
                    .iter()
                    .zip(yk)
                    .map(|(m, v)| m + state.sigma * v)
                    .collect()
            })
            .collect();
        Self {
            z,
            y,
            x,
            f: Vec::new(),
            order: Vec::new(),
        }
    }

    /// Overwrites sample `k` with an externally chosen point.
    pub fn replace(&mut self, k: usize, x: Vec<f64>, state: &DistributionState) {
        let y: Vec<f64> = x
            .iter()
            .zip(&state.mean)
            .map(|(xi, m)| (xi - m) / state.sigma)
            .collect();
        self.z[k] = state.inv_sqrt_cov_mul(&y);
        self.y[k] = y;
        self.x[k] = x;
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Sets fitness values and ranks them.
    pub fn set_fitness(&mut self, f: Vec<f64>) -> Result<()> {
        self.order = rank(&f)?;
        self.f = f;
        Ok(())
    }

    /// Best-first `y` vectors.
    pub fn ranked_y(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.order.iter().map(move |&k| &self.y[k])
    }
}

/// Draws `λ·N` standard-normal values, sample-major, and builds the
/// population.
pub fn sample_population<R: Rng + ?Sized>(
    state: &DistributionState,
    params: &StrategyParams,
    rng: &mut R,
) -> Population {
    let z = draw_noise(params.lambda, state.dim(), rng);
    Population::from_noise(state, z)
}

pub fn draw_noise<R: Rng + ?Sized>(lambda: usize, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..lambda)
        .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// Indices sorted by ascending fitness; ties keep sample order.
pub fn rank(f: &[f64]) -> Result<Vec<usize>> {
    if let Some(k) = f.iter().position(|v| v.is_nan()) {
        return Err(Error::NonFiniteFitness(k));
    }
    let mut order: Vec<usize> = (0..f.len()).collect();
    order.sort_by(|&a, &b| f[a].total_cmp(&f[b]));
    Ok(order)
}

/// `(Δm, ⟨z⟩_w)` with `Δm = σ Σ w_i y_{i:λ}` and `⟨z⟩_w = C^{-1/2} Δm / σ`.
pub fn mean_direction(
    pop: &Population,
    params: &StrategyParams,
    state: &DistributionState,
) -> (Vec<f64>, Vec<f64>) {
    let n = state.dim();
    let mut y_w = vec![0.0; n];
    for (w, y) in params.weights.iter().zip(pop.ranked_y()) {
        for (acc, v) in y_w.iter_mut().zip(y) {
            *acc += w * v;
        }
    }
    let z_avg = state.inv_sqrt_cov_mul(&y_w);
    let delta_m = y_w.iter().map(|v| state.sigma * v).collect();
    (delta_m, z_avg)
}

/// `m + c_m Δm`
pub fn update_mean(mean: &[f64], delta_m: &[f64], params: &StrategyParams) -> Vec<f64> {
    mean.iter()
        .zip(delta_m)
        .map(|(m, d)| m + params.c_m * d)
        .collect()
}

/// `Σ w_i (y_{i:λ} y_{i:λ}ᵀ − C)`
pub fn rank_mu_direction(pop: &Population, params: &StrategyParams, cov: &Matrix) -> Matrix {
    let n = cov.rows();
    let mut out = Matrix::zeros(n, n);
    for (w, y) in params.weights.iter().zip(pop.ranked_y()) {
        for i in 0..n {
            let wy = w * y[i];
            for (o, yj) in out.row_mut(i)[i..].iter_mut().zip(&y[i..]) {
                *o += wy * yj;
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            out[(i, j)] = out[(j, i)];
        }
    }
    let w_sum: f64 = params.weights.iter().sum();
    out.add_scaled(-w_sum, cov);
    out
}

/// `(1 − c_c) p_c + h_σ √(c_c(2 − c_c)μ_eff) Δm/σ`
pub fn update_pc(
    p_c: &[f64],
    delta_m: &[f64],
    sigma: f64,
    h_sigma: bool,
    params: &StrategyParams,
) -> Vec<f64> {
    let c_c = params.c_c;
    let gain = if h_sigma {
        (c_c * (2.0 - c_c) * params.mu_eff).sqrt() / sigma
    } else {
        0.0
    };
    p_c.iter()
        .zip(delta_m)
        .map(|(p, d)| (1.0 - c_c) * p + gain * d)
        .collect()
}

/// `p_c p_cᵀ − C`
pub fn rank_one_direction(p_c: &[f64], cov: &Matrix) -> Matrix {
    let mut out = Matrix::outer(p_c, p_c);
    out.add_scaled(-1.0, cov);
    out
}

/// `C ← (1 + (1 − h_σ) c_1 c_c (2 − c_c)) C + c_μ Δ_μC + c_1 Δ_1C`, then
/// symmetrizes and refreshes the eigendecomposition.
pub fn update_covariance(
    state: &mut DistributionState,
    delta_mu: &Matrix,
    delta_one: &Matrix,
    h_sigma: bool,
    params: &StrategyParams,
) -> Result<()> {
    let stall = if h_sigma {
        0.0
    } else {
        params.c_1 * params.c_c * (2.0 - params.c_c)
    };
    let mut cov = state.cov.clone();
    cov.scale(1.0 + stall);
    cov.add_scaled(params.c_mu, delta_mu);
    cov.add_scaled(params.c_1, delta_one);
    let t = state.iteration;
    state.set_covariance(cov, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(n: f64, lambda: usize) -> StrategyParams {
        default_params(n, lambda, StepSizeMode::Csa).unwrap()
    }

    #[test]
    fn weights_for_lambda_ten() {
        let p = params(8.0, 10);
        assert_eq!(p.mu, 5);
        for (w, e) in p.weights.iter().zip([0.4563, 0.2708, 0.1622, 0.0852, 0.0255]) {
            assert_abs_diff_eq!(*w, e, epsilon = 5e-5);
        }
        assert_abs_diff_eq!(p.mu_eff, 3.167, epsilon = 5e-4);
        assert!(p.weights.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn learning_rates_for_dimension_eight() {
        let p = params(8.0, 10);
        assert_abs_diff_eq!(p.c_c, 0.3437, epsilon = 5e-5);
        assert_abs_diff_eq!(p.c_1, 0.02231, epsilon = 5e-6);
        assert_abs_diff_eq!(p.c_mu, 0.02875, epsilon = 5e-6);
        assert_abs_diff_eq!(p.c_sigma, 0.3196, epsilon = 5e-5);
        assert_eq!(p.c_m, 1.0);

        let t = default_params(8.0, 10, StepSizeMode::Tpa).unwrap();
        assert_eq!(t.c_sigma, 0.3);
        assert_abs_diff_eq!(t.d_sigma, 8f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn default_sample_sizes() {
        assert_eq!(default_lambda(8), 10);
        assert_eq!(default_lambda(136), 18);
        assert_eq!(default_lambda(72), 16);
        assert!(default_params(8.0, 3, StepSizeMode::Csa).is_err());
    }

    #[test]
    fn sampling_reduces_to_shift_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = DistributionState::new(vec![0.0; 3], 1.0);
        let pop = sample_population(&s, &params(3.0, 6), &mut rng);
        assert_eq!(pop.len(), 6);
        for (x, z) in pop.x.iter().zip(&pop.z) {
            assert_eq!(x, z);
        }

        let s = DistributionState::new(vec![5.0; 3], 2.0);
        let pop = Population::from_noise(&s, vec![vec![1.0, -0.5, 0.25]]);
        assert_eq!(pop.x[0], vec![7.0, 4.0, 5.5]);
    }

    #[test]
    fn sampling_applies_covariance_root() {
        let s = DistributionState::with_covariance(vec![0.0; 2], 1.0, Matrix::from_diag(&[4.0, 1.0]))
            .unwrap();
        let pop = Population::from_noise(&s, vec![vec![1.0, 1.0]]);
        assert_abs_diff_eq!(pop.y[0][0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pop.y[0][1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn ranking_is_stable_and_rejects_nan() {
        assert_eq!(rank(&[3.0, 1.0, 2.0]).unwrap(), vec![1, 2, 0]);
        assert_eq!(rank(&[1.0, 1.0, 2.0]).unwrap(), vec![0, 1, 2]);
        let f = [0.3, -1.2, 4.0, 0.1];
        let g: Vec<f64> = f.iter().map(|v: &f64| v.exp()).collect();
        assert_eq!(rank(&f).unwrap(), rank(&g).unwrap());
        assert!(matches!(rank(&[1.0, f64::NAN]), Err(Error::NonFiniteFitness(1))));
    }

    fn single_weight() -> StrategyParams {
        let mut p = params(2.0, 4);
        p.weights = vec![1.0];
        p.mu = 1;
        p.mu_eff = 1.0;
        p
    }

    #[test]
    fn mean_direction_examples() {
        let s = DistributionState::new(vec![0.0; 2], 0.5);
        let mut pop = Population::from_noise(&s, vec![vec![1.0, 2.0], vec![3.0, 0.0]]);
        pop.set_fitness(vec![2.0, 1.0]).unwrap();
        let (dm, z) = mean_direction(&pop, &single_weight(), &s);
        assert_eq!(dm, vec![1.5, 0.0]);
        assert_eq!(z, vec![3.0, 0.0]);

        // Symmetric pair with equal fitness: index order decides.
        let mut p = params(2.0, 4);
        p.weights = vec![0.75, 0.25];
        let mut pop = Population::from_noise(&s, vec![vec![1.0, -1.0], vec![-1.0, 1.0]]);
        pop.set_fitness(vec![1.0, 1.0]).unwrap();
        let (dm, _) = mean_direction(&pop, &p, &s);
        assert_abs_diff_eq!(dm[0], 0.5 * 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(dm[1], -0.5 * 0.5, epsilon = 1e-15);
    }

    #[test]
    fn mean_update_examples() {
        let mut p = params(2.0, 4);
        assert_eq!(update_mean(&[1.0, 2.0], &[0.0, 0.0], &p), vec![1.0, 2.0]);
        assert_eq!(update_mean(&[0.0, 0.0], &[1.0, 2.0], &p), vec![1.0, 2.0]);
        p.c_m = 0.5;
        assert_eq!(update_mean(&[0.0, 0.0], &[2.0, 0.0], &p), vec![1.0, 0.0]);
    }

    #[test]
    fn rank_mu_examples() {
        let s = DistributionState::new(vec![0.0; 2], 1.0);
        let mut pop = Population::from_noise(&s, vec![vec![1.0, 0.0]]);
        pop.set_fitness(vec![0.0]).unwrap();
        let d = rank_mu_direction(&pop, &single_weight(), &s.cov);
        assert_eq!(d, Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, -1.0]]));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = params(4.0, 8);
        let s = DistributionState::new(vec![0.0; 4], 1.0);
        let mut pop = sample_population(&s, &p, &mut rng);
        let f: Vec<f64> = pop.x.iter().map(|x| x[0]).collect();
        pop.set_fitness(f).unwrap();
        let d = rank_mu_direction(&pop, &p, &s.cov);
        assert!(d.is_symmetric());
        let expect: f64 = p
            .weights
            .iter()
            .zip(pop.ranked_y())
            .map(|(w, y)| w * (y.iter().map(|v| v * v).sum::<f64>() - s.cov.trace()))
            .sum();
        assert_abs_diff_eq!(d.trace(), expect, epsilon = 1e-12);
    }

    #[test]
    fn evolution_path_examples() {
        let p = params(8.0, 10);
        let decayed = update_pc(&[1.0, -2.0], &[5.0, 5.0], 1.0, false, &p);
        assert_eq!(decayed, vec![1.0 - p.c_c, -2.0 * (1.0 - p.c_c)]);

        let g = (p.c_c * (2.0 - p.c_c) * p.mu_eff).sqrt();
        let first = update_pc(&[0.0, 0.0], &[0.6, 0.2], 2.0, true, &p);
        assert_abs_diff_eq!(first[0], g * 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(first[1], g * 0.1, epsilon = 1e-15);

        let mut pc = vec![0.0];
        for _ in 0..2000 {
            pc = update_pc(&pc, &[1.0], 1.0, true, &p);
        }
        assert_abs_diff_eq!(pc[0], g / p.c_c, epsilon = 1e-10);
    }

    #[test]
    fn rank_one_examples() {
        let i2 = Matrix::identity(2);
        let mut neg = i2.clone();
        neg.scale(-1.0);
        assert_eq!(rank_one_direction(&[0.0, 0.0], &i2), neg);
        assert_eq!(
            rank_one_direction(&[1.0, 0.0], &i2),
            Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, -1.0]])
        );
    }

    #[test]
    fn covariance_update_examples() {
        let p = params(2.0, 6);
        let base = Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]);
        let zero = Matrix::zeros(2, 2);

        let mut s = DistributionState::with_covariance(vec![0.0; 2], 1.0, base.clone()).unwrap();
        update_covariance(&mut s, &zero, &zero, true, &p).unwrap();
        assert_eq!(s.cov, base);

        let mut minus_c = base.clone();
        minus_c.scale(-1.0);
        let mut s = DistributionState::with_covariance(vec![0.0; 2], 1.0, base.clone()).unwrap();
        update_covariance(&mut s, &zero, &minus_c, false, &p).unwrap();
        let factor = 1.0 + p.c_1 * p.c_c * (2.0 - p.c_c) - p.c_1;
        let mut expect = base.clone();
        expect.scale(factor);
        assert!(s.cov.max_abs_diff(&expect) < 1e-15);

        let mut q = p.clone();
        q.c_1 = 0.0;
        q.c_mu = 0.0;
        let junk = Matrix::from_rows(&[vec![3.0, 1.0], vec![1.0, -7.0]]);
        let mut s = DistributionState::with_covariance(vec![0.0; 2], 1.0, base.clone()).unwrap();
        update_covariance(&mut s, &junk, &junk, true, &q).unwrap();
        assert_eq!(s.cov, base);
        // Eigenpair follows the covariance.
        assert!(s.eigen.compose(&s.eigen.values).max_abs_diff(&base) < 1e-12);
    }
}
