//! Stopping criteria and the run driver, optionally restarting with a doubled
//! sample size (IPOP) each time a criterion fires.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cmaes::{DistributionState, StepSizeMode};
use crate::error::{config_err, Error, Result};
use crate::objective::LedProblem;
use crate::optimizer::{Algorithm, IterationReport, Optimizer, StepOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StopReason {
    MaxIter,
    TolHistFun,
    Stagnation,
    TolX,
    ConditionCov,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::MaxIter => "maxiter",
            StopReason::TolHistFun => "tolhistfun",
            StopReason::Stagnation => "stagnation",
            StopReason::TolX => "tolx",
            StopReason::ConditionCov => "conditioncov",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RestartMode {
    None,
    Ipop,
}

impl RestartMode {
    pub fn name(self) -> &'static str {
        match self {
            RestartMode::None => "none",
            RestartMode::Ipop => "ipop",
        }
    }
}

impl std::str::FromStr for RestartMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RestartMode::None),
            "ipop" => Ok(RestartMode::Ipop),
            _ => Err(config_err(format!("unknown restart strategy '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StopConfig {
    pub tol_hist_fun: f64,
    pub tol_x_factor: f64,
    pub cond_limit: f64,
    pub stagnation_cap: f64,
    /// Compare the max-iteration bound against evaluations instead.
    pub max_iter_as_evals: bool,
    pub max_iter: bool,
    pub stagnation: bool,
}

impl Default for StopConfig {
    fn default() -> Self {
        Self {
            tol_hist_fun: 1e-12,
            tol_x_factor: 1e-12,
            cond_limit: 1e20,
            stagnation_cap: 20000.0,
            max_iter_as_evals: false,
            max_iter: true,
            stagnation: true,
        }
    }
}

impl StopConfig {
    /// The subset that only ends hopeless runs: flat history, collapsed
    /// distribution, degenerate covariance.
    pub fn terminal_only() -> Self {
        Self {
            max_iter: false,
            stagnation: false,
            ..Self::default()
        }
    }
}

/// Per-iteration best and median values, newest last.
#[derive(Clone, Debug, PartialEq)]
pub struct RunHistory {
    best: VecDeque<f64>,
    median: VecDeque<f64>,
    capacity: usize,
}

impl RunHistory {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            best: VecDeque::with_capacity(capacity.min(1 << 16)),
            median: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        }
    }

    /// Enough room for the longest stagnation window at `(n, lambda)`.
    pub fn for_problem(n: usize, lambda: usize, cfg: &StopConfig) -> Self {
        let floor = 120.0 + 30.0 * n as f64 / lambda as f64;
        Self::new(cfg.stagnation_cap.max(floor).ceil() as usize + 1)
    }

    pub fn push(&mut self, best: f64, median: f64) {
        if self.best.len() == self.capacity {
            self.best.pop_front();
            self.median.pop_front();
        }
        self.best.push_back(best);
        self.median.push_back(median);
    }

    pub fn len(&self) -> usize {
        self.best.len()
    }

    pub fn is_empty(&self) -> bool {
        self.best.is_empty()
    }

    pub fn best(&self) -> &VecDeque<f64> {
        &self.best
    }

    pub fn median(&self) -> &VecDeque<f64> {
        &self.median
    }
}

fn median_of(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// `100 + 50(N+3)²/√λ`
pub fn max_iter_bound(n: usize, lambda: usize) -> f64 {
    100.0 + 50.0 * ((n + 3) as f64).powi(2) / (lambda as f64).sqrt()
}

/// `10 + ⌈30N/λ⌉`
pub fn tol_hist_window(n: usize, lambda: usize) -> usize {
    10 + (30.0 * n as f64 / lambda as f64).ceil() as usize
}

/// `max(min(0.2t, cap), 120 + 30N/λ)`
pub fn stagnation_span(n: usize, lambda: usize, t: usize, cap: f64) -> f64 {
    (0.2 * t as f64).min(cap).max(120.0 + 30.0 * n as f64 / lambda as f64)
}

/// Everything the criteria look at.
#[derive(Clone, Copy, Debug)]
pub struct StopInput<'a> {
    pub state: &'a DistributionState,
    pub lambda: usize,
    pub history: &'a RunHistory,
    /// Completed iterations in this run.
    pub iterations: usize,
    /// Evaluations spent in this run.
    pub evals: u64,
    pub sigma0: f64,
}

/// First criterion that fires, in the order MaxIter, TolHistFun,
/// Stagnation, TolX, ConditionCov.
pub fn check_stop(input: &StopInput<'_>, cfg: &StopConfig) -> Option<StopReason> {
    let st = input.state;
    let n = st.dim();
    let lambda = input.lambda;
    let t = input.iterations;

    if cfg.max_iter {
        let used = if cfg.max_iter_as_evals {
            input.evals as f64
        } else {
            t as f64
        };
        if used > max_iter_bound(n, lambda) {
            return Some(StopReason::MaxIter);
        }
    }

    let best = input.history.best();
    let window = tol_hist_window(n, lambda);
    if best.len() >= window {
        let recent = best.iter().skip(best.len() - window);
        let (lo, hi) = recent.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        if hi - lo < cfg.tol_hist_fun {
            return Some(StopReason::TolHistFun);
        }
    }

    if cfg.stagnation {
        let span = stagnation_span(n, lambda, t, cfg.stagnation_cap);
        let len = span.ceil() as usize;
        let half = (0.3 * span).floor() as usize;
        if half > 0 && best.len() >= len {
            let stalled = |h: &VecDeque<f64>| {
                let start = h.len() - len;
                let old = median_of(h.iter().skip(start).take(half).copied());
                let new = median_of(h.iter().skip(h.len() - half).copied());
                new >= old
            };
            if stalled(best) && stalled(input.history.median()) {
                return Some(StopReason::Stagnation);
            }
        }
    }

    let tol = cfg.tol_x_factor * input.sigma0;
    let sigma = st.sigma;
    let spread_small = st.cov.diagonal().iter().all(|c| (sigma * sigma * c).sqrt() < tol);
    if spread_small && st.p_c.iter().all(|p| (sigma * p).abs() < tol) {
        return Some(StopReason::TolX);
    }

    if st.eigen.condition_number() > cfg.cond_limit {
        return Some(StopReason::ConditionCov);
    }
    None
}

/// Independent random streams of one trial.
#[derive(Clone, Debug)]
pub struct RunRngs {
    pub init_mean: ChaCha8Rng,
    pub sampling: ChaCha8Rng,
    pub tpa: ChaCha8Rng,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub mode: StepSizeMode,
    pub restart: RestartMode,
    /// Sample size of the first run.
    pub lambda: usize,
    pub sigma0: f64,
    /// Initial means are uniform on `[-init_box, init_box]^N`.
    pub init_box: f64,
    pub target: f64,
    pub stop: StopConfig,
    /// Run the estimator even for plain CMA-ES.
    pub track_led: bool,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, mode: StepSizeMode, restart: RestartMode, lambda: usize) -> Self {
        let stop = match restart {
            RestartMode::Ipop => StopConfig::default(),
            RestartMode::None => StopConfig::terminal_only(),
        };
        Self {
            algorithm,
            mode,
            restart,
            lambda,
            sigma0: 2.0,
            init_box: 5.0,
            target: 1e-8,
            stop,
            track_led: false,
        }
    }
}

/// How a run (one restart segment) ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentEnd {
    Success,
    Stopped(StopReason),
    Budget,
}

impl SegmentEnd {
    pub fn name(self) -> &'static str {
        match self {
            SegmentEnd::Success => "success",
            SegmentEnd::Stopped(r) => r.name(),
            SegmentEnd::Budget => "budget",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentSummary {
    pub index: usize,
    pub lambda: usize,
    pub iterations: usize,
    /// Problem evaluation count when the segment ended.
    pub evals: u64,
    pub end: SegmentEnd,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub success: bool,
    pub evals: u64,
    pub best_f: f64,
    pub segments: Vec<SegmentSummary>,
}

/// Per-iteration callback: optimizer after the update, its report, and the
/// segment index.
pub trait Observer {
    fn observe(&mut self, opt: &Optimizer, report: &IterationReport, segment: usize, problem: &LedProblem);
}

impl<F: FnMut(&Optimizer, &IterationReport, usize, &LedProblem)> Observer for F {
    fn observe(&mut self, opt: &Optimizer, report: &IterationReport, segment: usize, problem: &LedProblem) {
        self(opt, report, segment, problem)
    }
}

/// Runs until the target is reached or the budget is gone. Without restarts
/// a firing stop criterion also ends the trial; with IPOP it starts a fresh
/// run with twice the sample size.
pub fn run(
    problem: &mut LedProblem,
    cfg: &RunConfig,
    rngs: &mut RunRngs,
    observer: &mut dyn Observer,
) -> Result<RunOutcome> {
    let n = problem.n_total();
    let mut lambda = cfg.lambda;
    let mut segments = Vec::new();
    let mut success = false;

    loop {
        let mean: Vec<f64> = (0..n)
            .map(|_| rngs.init_mean.random_range(-cfg.init_box..=cfg.init_box))
            .collect();
        let mut opt = Optimizer::new(cfg.algorithm, cfg.mode, mean, cfg.sigma0, lambda)?;
        if cfg.track_led {
            opt = opt.with_led_tracking();
        }
        let mut history = RunHistory::for_problem(n, lambda, &cfg.stop);
        let index = segments.len();

        let end = loop {
            if problem.remaining() == 0 {
                break SegmentEnd::Budget;
            }
            let report = match opt.step(problem, &mut rngs.sampling, &mut rngs.tpa)? {
                StepOutcome::Completed(r) => r,
                StepOutcome::BudgetExhausted => break SegmentEnd::Budget,
            };
            observer.observe(&opt, &report, index, problem);
            if problem.best_f() < cfg.target {
                break SegmentEnd::Success;
            }
            history.push(report.best_f, report.median_f);
            let input = StopInput {
                state: &opt.state,
                lambda,
                history: &history,
                iterations: report.iteration,
                evals: report.evals,
                sigma0: cfg.sigma0,
            };
            if let Some(reason) = check_stop(&input, &cfg.stop) {
                break SegmentEnd::Stopped(reason);
            }
        };

        segments.push(SegmentSummary {
            index,
            lambda,
            iterations: opt.iteration(),
            evals: problem.eval_count(),
            end,
        });
        match end {
            SegmentEnd::Success => {
                success = true;
                break;
            }
            SegmentEnd::Budget => break,
            SegmentEnd::Stopped(_) if cfg.restart == RestartMode::None => break,
            SegmentEnd::Stopped(_) => lambda *= 2,
        }
    }

    Ok(RunOutcome {
        success,
        evals: problem.eval_count(),
        best_f: problem.best_f(),
        segments,
    })
}
