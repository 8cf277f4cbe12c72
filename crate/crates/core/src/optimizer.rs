//! One optimizer instance: CMA-ES with CSA or TPA, optionally with the
//! effectiveness estimator driving its hyperparameters and step-size norm.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::cmaes::{
    default_params, draw_noise, mean_direction, rank_mu_direction, rank_one_direction,
    update_covariance, update_mean, update_pc, DistributionState, Population, StepSizeMode,
    StrategyParams,
};
use crate::error::{config_err, Error, Result};
use crate::led::{adapt_hyperparameters, rotate_directions, LedState};
use crate::objective::Objective;
use crate::stepsize::{
    apply_multiplier, led_tpa_points, tpa_points, StepSizeState, StepUpdate,
};

/// Which parts of the effectiveness machinery are switched on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    /// Plain CMA-ES.
    Cmaes,
    /// Hyperparameters from `N̂` and step-size norm restricted to `v`.
    Led,
    /// Hyperparameters from `N̂` only.
    LedHyperOnly,
    /// Step-size norm restricted to `v` only.
    LedNormOnly,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Cmaes,
        Algorithm::Led,
        Algorithm::LedHyperOnly,
        Algorithm::LedNormOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Cmaes => "cmaes",
            Algorithm::Led => "led",
            Algorithm::LedHyperOnly => "led-hyper",
            Algorithm::LedNormOnly => "led-norm",
        }
    }

    pub fn adapts_hyperparameters(self) -> bool {
        matches!(self, Algorithm::Led | Algorithm::LedHyperOnly)
    }

    pub fn masks_step_size(self) -> bool {
        matches!(self, Algorithm::Led | Algorithm::LedNormOnly)
    }

    pub fn uses_estimator(self) -> bool {
        self != Algorithm::Cmaes
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cmaes" => Ok(Algorithm::Cmaes),
            "led" | "cmaes-led" => Ok(Algorithm::Led),
            "led-hyper" => Ok(Algorithm::LedHyperOnly),
            "led-norm" => Ok(Algorithm::LedNormOnly),
            _ => Err(config_err(format!("unknown algorithm '{s}'"))),
        }
    }
}

impl FromStr for StepSizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csa" => Ok(StepSizeMode::Csa),
            "tpa" => Ok(StepSizeMode::Tpa),
            _ => Err(config_err(format!("unknown step-size rule '{s}'"))),
        }
    }
}

/// Summary of one completed iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationReport {
    /// Number of completed iterations, starting at 1.
    pub iteration: usize,
    /// Evaluations spent by this optimizer so far.
    pub evals: u64,
    pub best_f: f64,
    pub median_f: f64,
    /// σ after the update.
    pub sigma: f64,
    pub n_eff_hat: f64,
    pub h_sigma: bool,
    pub tpa_injected: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Completed(IterationReport),
    /// The objective refused an evaluation; the iteration was abandoned.
    BudgetExhausted,
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub algorithm: Algorithm,
    /// Parameters for the full dimension; the adapted ones derive from these.
    pub base_params: StrategyParams,
    /// Parameters in effect for the next iteration.
    pub params: StrategyParams,
    pub state: DistributionState,
    pub step_size: StepSizeState,
    /// Present when the estimator runs, either because the algorithm uses it
    /// or because it was requested for monitoring.
    pub led: Option<LedState>,
    pub evals: u64,
    pub best_f: f64,
    pub best_x: Vec<f64>,
}

impl Optimizer {
    /// Fresh optimizer at `N(mean, σ² I)` with sample size `lambda`.
    pub fn new(
        algorithm: Algorithm,
        mode: StepSizeMode,
        mean: Vec<f64>,
        sigma: f64,
        lambda: usize,
    ) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(config_err("dimension must be at least 1"));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(config_err(format!("initial step-size {sigma} must be positive")));
        }
        if mode == StepSizeMode::Tpa && lambda < 4 {
            return Err(config_err("two-point adaptation needs λ ≥ 4"));
        }
        let params = default_params(n as f64, lambda, mode)?;
        Ok(Self {
            algorithm,
            base_params: params.clone(),
            params,
            state: DistributionState::new(mean, sigma),
            step_size: StepSizeState::new(mode, n),
            led: algorithm.uses_estimator().then(|| LedState::new(n, lambda)),
            evals: 0,
            best_f: f64::INFINITY,
            best_x: Vec::new(),
        })
    }

    /// Runs the estimator even when the algorithm ignores it.
    pub fn with_led_tracking(mut self) -> Self {
        if self.led.is_none() {
            self.led = Some(LedState::new(self.dim(), self.params.lambda));
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.state.dim()
    }

    pub fn lambda(&self) -> usize {
        self.params.lambda
    }

    pub fn mode(&self) -> StepSizeMode {
        self.step_size.mode()
    }

    pub fn iteration(&self) -> usize {
        self.state.iteration
    }

    /// Current estimate of the effective dimension, `N` without estimator.
    pub fn n_eff_hat(&self) -> f64 {
        self.led.as_ref().map_or(self.dim() as f64, |l| l.n_eff_hat)
    }

    fn tpa_pending(&self) -> bool {
        matches!(&self.step_size, StepSizeState::Tpa(t) if t.prev_delta_m.is_some())
    }

    /// One iteration drawing sample noise from `sampling` and the TPA length
    /// noise from `tpa` (only consumed when a pair is injected).
    pub fn step<O, R1, R2>(&mut self, obj: &mut O, sampling: &mut R1, tpa: &mut R2) -> Result<StepOutcome>
    where
        O: Objective + ?Sized,
        R1: Rng + ?Sized,
        R2: Rng + ?Sized,
    {
        let n = self.dim();
        let z = draw_noise(self.params.lambda, n, sampling);
        let tpa_noise: Option<Vec<f64>> = self
            .tpa_pending()
            .then(|| (0..n).map(|_| tpa.sample(StandardNormal)).collect());
        self.step_with_noise(obj, z, tpa_noise.as_deref())
    }

    /// One iteration with caller-supplied standard-normal draws: `z` holds λ
    /// vectors of length N, `tpa_noise` the N-vector whose length scales the
    /// injected pair.
    pub fn step_with_noise<O: Objective + ?Sized>(
        &mut self,
        obj: &mut O,
        z: Vec<Vec<f64>>,
        tpa_noise: Option<&[f64]>,
    ) -> Result<StepOutcome> {
        let n = self.dim();
        let lambda = self.params.lambda;
        if obj.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: obj.dim(),
            });
        }
        if z.len() != lambda {
            return Err(Error::DimensionMismatch {
                expected: lambda,
                got: z.len(),
            });
        }
        if let Some(bad) = z.iter().find(|zk| zk.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: bad.len(),
            });
        }

        let mut pop = Population::from_noise(&self.state, z);
        let tpa_injected = self.inject_pair(&mut pop, tpa_noise);

        let mut f = Vec::with_capacity(lambda);
        for x in &pop.x {
            match obj.evaluate(x) {
                Ok(v) => {
                    self.evals += 1;
                    f.push(v);
                }
                Err(_) => return Ok(StepOutcome::BudgetExhausted),
            }
        }
        pop.set_fitness(f)?;
        let best = pop.order[0];
        if pop.f[best] < self.best_f {
            self.best_f = pop.f[best];
            self.best_x = pop.x[best].clone();
        }

        let t = self.state.iteration;
        let params = self.params.clone();
        let (delta_m, z_avg) = mean_direction(&pop, &params, &self.state);
        let delta_mu = rank_mu_direction(&pop, &params, &self.state.cov);
        let rotated = self
            .led
            .as_ref()
            .map(|_| rotate_directions(&delta_m, &delta_mu, &self.state.eigen));

        self.state.mean = update_mean(&self.state.mean, &delta_m, &params);

        let update = match &mut self.step_size {
            StepSizeState::Csa(csa) => match (&self.led, self.algorithm.masks_step_size()) {
                (Some(led), true) => csa.update_led(
                    &z_avg,
                    &led.v,
                    Some(&self.state.eigen),
                    &params,
                    led.n_eff_hat,
                    t,
                ),
                _ => csa.update(&z_avg, &params, t),
            },
            StepSizeState::Tpa(tpa) => {
                let ranks = tpa_injected.then(|| {
                    let mut rank_of = vec![0; lambda];
                    for (r, &k) in pop.order.iter().enumerate() {
                        rank_of[k] = r + 1;
                    }
                    (rank_of[lambda - 2], rank_of[lambda - 1])
                });
                let u = tpa.update(ranks, &params);
                tpa.prev_delta_m = Some(delta_m.clone());
                u
            }
        };
        let StepUpdate { sigma_mult, h_sigma } = update;

        let sigma = self.state.sigma;
        self.state.p_c = update_pc(&self.state.p_c, &delta_m, sigma, h_sigma, &params);
        let delta_one = rank_one_direction(&self.state.p_c, &self.state.cov);
        update_covariance(&mut self.state, &delta_mu, &delta_one, h_sigma, &params)?;
        self.state.sigma = apply_multiplier(sigma, sigma_mult);

        if let (Some(led), Some(dirs)) = (self.led.as_mut(), rotated) {
            led.update(&dirs);
            if self.algorithm.adapts_hyperparameters() {
                self.params = adapt_hyperparameters(&self.base_params, led.n_eff_hat);
            }
        }
        self.state.iteration += 1;

        Ok(StepOutcome::Completed(IterationReport {
            iteration: self.state.iteration,
            evals: self.evals,
            best_f: pop.f[best],
            median_f: median(&pop.f, &pop.order),
            sigma: self.state.sigma,
            n_eff_hat: self.n_eff_hat(),
            h_sigma,
            tpa_injected,
        }))
    }

    /// Replaces the last two samples with the TPA pair when one is due.
    fn inject_pair(&self, pop: &mut Population, noise: Option<&[f64]>) -> bool {
        let (StepSizeState::Tpa(tpa), Some(noise)) = (&self.step_size, noise) else {
            return false;
        };
        let Some(dm) = tpa.prev_delta_m.as_ref() else {
            return false;
        };
        let st = &self.state;
        let pair = match (&self.led, self.algorithm.masks_step_size()) {
            (Some(led), true) => led_tpa_points(&st.mean, st.sigma, &st.eigen, dm, &led.v, noise),
            _ => tpa_points(&st.mean, st.sigma, &st.eigen, dm, noise),
        };
        let Some((plus, minus)) = pair else {
            return false;
        };
        let lambda = pop.len();
        pop.replace(lambda - 2, plus, st);
        pop.replace(lambda - 1, minus, st);
        true
    }
}

fn median(f: &[f64], order: &[usize]) -> f64 {
    let k = order.len();
    if k % 2 == 1 {
        f[order[k / 2]]
    } else {
        0.5 * (f[order[k / 2 - 1]] + f[order[k / 2]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::FnObjective;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn run(alg: Algorithm, mode: StepSizeMode, iters: usize) -> Optimizer {
        let mut opt = Optimizer::new(alg, mode, vec![1.0; 6], 0.5, 10).unwrap();
        let mut obj = FnObjective::new(6, sphere);
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..iters {
            opt.step(&mut obj, &mut r1, &mut r2).unwrap();
        }
        opt
    }

    #[test]
    fn every_variant_descends_on_sphere() {
        for alg in Algorithm::ALL {
            for mode in [StepSizeMode::Csa, StepSizeMode::Tpa] {
                let opt = run(alg, mode, 300);
                assert!(opt.best_f < 1e-8, "{alg} {mode:?}: {}", opt.best_f);
                assert_eq!(opt.evals, 3000);
            }
        }
    }

    #[test]
    fn first_tpa_iteration_injects_nothing() {
        let mut opt = Optimizer::new(Algorithm::Cmaes, StepSizeMode::Tpa, vec![1.0; 3], 1.0, 6).unwrap();
        let mut obj = FnObjective::new(3, sphere);
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(4);
        let StepOutcome::Completed(a) = opt.step(&mut obj, &mut r, &mut r2).unwrap() else {
            panic!()
        };
        let StepOutcome::Completed(b) = opt.step(&mut obj, &mut r, &mut r2).unwrap() else {
            panic!()
        };
        assert!(!a.tpa_injected);
        assert!(b.tpa_injected);
    }

    #[test]
    fn passive_tracking_leaves_trajectory_unchanged() {
        let mut a = Optimizer::new(Algorithm::Cmaes, StepSizeMode::Csa, vec![2.0; 5], 1.0, 8).unwrap();
        let mut b = a.clone().with_led_tracking();
        let mut obj = FnObjective::new(5, sphere);
        for seed in 0..40 {
            let z = draw_noise(8, 5, &mut ChaCha8Rng::seed_from_u64(seed));
            a.step_with_noise(&mut obj, z.clone(), None).unwrap();
            b.step_with_noise(&mut obj, z, None).unwrap();
        }
        assert_eq!(a.state.mean, b.state.mean);
        assert_eq!(a.state.sigma, b.state.sigma);
        assert!(b.led.unwrap().n_eff_hat < 5.0 + 1e-12);
    }

    #[test]
    fn rejects_wrong_noise_shape() {
        let mut opt = Optimizer::new(Algorithm::Cmaes, StepSizeMode::Csa, vec![0.0; 2], 1.0, 6).unwrap();
        let mut obj = FnObjective::new(2, sphere);
        assert!(opt.step_with_noise(&mut obj, vec![vec![0.0; 2]; 5], None).is_err());
        assert!(opt.step_with_noise(&mut obj, vec![vec![0.0; 3]; 6], None).is_err());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("nope".parse::<Algorithm>().is_err());
    }
}
