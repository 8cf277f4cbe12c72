//! Experiment runner: seeded trials, aggregate statistics and CSV output.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cmaes::{default_lambda, StepSizeMode};
use crate::error::{config_err, Error, Result};
use crate::objective::{make_intrinsic, random_rotation, Benchmark, LedProblem};
use crate::optimizer::{Algorithm, IterationReport, Optimizer};
use crate::restart::{run, RestartMode, RunConfig, RunRngs, SegmentSummary};

pub const TRACE_HEADER: [&str; 8] = [
    "trial", "seed", "iteration", "evals", "best_f", "sigma", "neff_hat", "segment",
];
pub const LED_TRACE_HEADER: [&str; 7] = ["trial", "iteration", "segment", "coord", "v_snr", "v", "align_norm"];

/// Stream ids for [`ChaCha8Rng::set_stream`].
const STREAM_ROTATION: u64 = 0;
const STREAM_INIT_MEAN: u64 = 1;
const STREAM_SAMPLING: u64 = 2;
const STREAM_TPA: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub mode: StepSizeMode,
    pub restart: RestartMode,
    pub function: u32,
    pub dim: usize,
    pub eff_dim: usize,
    pub trials: usize,
    pub seed: u64,
    /// Budget is `dim × budget_multiplier` evaluations.
    pub budget_multiplier: f64,
    /// Overrides the default sample size.
    pub lambda: Option<usize>,
    pub rotate: bool,
    pub trace_led: bool,
    /// Worker threads; 0 means all available.
    pub jobs: usize,
    pub max_iter_as_evals: bool,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Cmaes,
            mode: StepSizeMode::Csa,
            restart: RestartMode::None,
            function: 1,
            dim: 8,
            eff_dim: 8,
            trials: 20,
            seed: 0,
            budget_multiplier: 1e5,
            lambda: None,
            rotate: true,
            trace_led: false,
            jobs: 0,
            max_iter_as_evals: false,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let kind = Benchmark::from_id(self.function)?;
        if self.eff_dim < kind.min_dim() {
            return Err(config_err(format!(
                "{kind} needs an effective dimension of at least {}",
                kind.min_dim()
            )));
        }
        if self.dim < self.eff_dim {
            return Err(config_err(format!(
                "dimension {} is below effective dimension {}",
                self.dim, self.eff_dim
            )));
        }
        if self.trials == 0 {
            return Err(config_err("trials must be at least 1"));
        }
        if !(self.budget_multiplier > 0.0) {
            return Err(config_err("budget multiplier must be positive"));
        }
        if let Some(l) = self.lambda {
            if l < 4 {
                return Err(config_err(format!("sample size {l} is below 4")));
            }
        }
        Ok(())
    }

    pub fn lambda(&self) -> usize {
        self.lambda.unwrap_or_else(|| default_lambda(self.dim))
    }

    pub fn budget(&self) -> u64 {
        (self.dim as f64 * self.budget_multiplier).round() as u64
    }

    /// Applies one `key=value` setting; keys are the long CLI flag names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| config_err(format!("invalid value '{value}' for {what}"));
        let flag = || parse_bool(value).ok_or_else(|| bad(key));
        match key {
            "algo" => self.algorithm = value.parse()?,
            "stepsize" => self.mode = value.parse()?,
            "restart" => self.restart = value.parse()?,
            "fn" => self.function = value.parse().map_err(|_| bad(key))?,
            "dim" => self.dim = value.parse().map_err(|_| bad(key))?,
            "eff-dim" => self.eff_dim = value.parse().map_err(|_| bad(key))?,
            "trials" => self.trials = value.parse().map_err(|_| bad(key))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key))?,
            "budget-multiplier" => self.budget_multiplier = value.parse().map_err(|_| bad(key))?,
            "lambda" => self.lambda = Some(value.parse().map_err(|_| bad(key))?),
            "jobs" => self.jobs = value.parse().map_err(|_| bad(key))?,
            "out" => self.out = Some(PathBuf::from(value)),
            "no-rotation" => self.rotate = !flag()?,
            "trace-led" => self.trace_led = flag()?,
            "maxiter-as-evals" => self.max_iter_as_evals = flag()?,
            _ => return Err(config_err(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Parses a `key=value` file body. Blank lines and `#` comments are
    /// ignored.
    pub fn from_config_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected key=value", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| config_err(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    pub fn from_config_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_config_text(&text)
    }

    /// The configuration as a `key=value` text that parses back to itself.
    pub fn to_config_text(&self) -> String {
        let mut s = format!(
            "algo={}\nstepsize={}\nrestart={}\nfn={}\ndim={}\neff-dim={}\ntrials={}\nseed={}\n\
             budget-multiplier={}\njobs={}\nno-rotation={}\ntrace-led={}\nmaxiter-as-evals={}\n",
            self.algorithm,
            self.mode.name(),
            self.restart.name(),
            self.function,
            self.dim,
            self.eff_dim,
            self.trials,
            self.seed,
            self.budget_multiplier,
            self.jobs,
            !self.rotate,
            self.trace_led,
            self.max_iter_as_evals,
        );
        if let Some(l) = self.lambda {
            s.push_str(&format!("lambda={l}\n"));
        }
        if let Some(o) = &self.out {
            s.push_str(&format!("out={}\n", o.display()));
        }
        s
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

/// SplitMix64 step, used to spread a master seed over trials.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn trial_seed(master: u64, trial: usize) -> u64 {
    splitmix64(master ^ splitmix64(trial as u64))
}

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    /// Iterations completed in the trial, counted across restarts.
    pub iteration: usize,
    pub evals: u64,
    /// Best value seen in the trial so far.
    pub best_f: f64,
    pub sigma: f64,
    pub neff_hat: f64,
    pub segment: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LedRow {
    pub iteration: usize,
    pub segment: usize,
    pub coord: usize,
    pub v_snr: f64,
    pub v: f64,
    pub align_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub evals: u64,
    pub best_f: f64,
    pub rows: Vec<TraceRow>,
    pub segments: Vec<SegmentSummary>,
    pub led_rows: Vec<LedRow>,
}

fn build_problem(cfg: &ExperimentConfig, seed: u64) -> Result<LedProblem> {
    let intrinsic = make_intrinsic(cfg.function, cfg.eff_dim)?;
    let rotation = cfg
        .rotate
        .then(|| random_rotation(cfg.dim, &mut stream(seed, STREAM_ROTATION)));
    Ok(LedProblem::with_rotation(intrinsic, cfg.dim, rotation)?.with_budget(cfg.budget()))
}

pub fn run_config(cfg: &ExperimentConfig) -> RunConfig {
    let mut rc = RunConfig::new(cfg.algorithm, cfg.mode, cfg.restart, cfg.lambda());
    rc.stop.max_iter_as_evals = cfg.max_iter_as_evals;
    rc.track_led = cfg.trace_led;
    rc
}

/// One trial; a pure function of `(cfg, trial, seed)`.
pub fn run_trial(cfg: &ExperimentConfig, trial: usize, seed: u64) -> Result<TrialRecord> {
    cfg.validate()?;
    let mut problem = build_problem(cfg, seed)?;
    let mut rngs = RunRngs {
        init_mean: stream(seed, STREAM_INIT_MEAN),
        sampling: stream(seed, STREAM_SAMPLING),
        tpa: stream(seed, STREAM_TPA),
    };
    let rc = run_config(cfg);
    let mut rows = Vec::new();
    let mut led_rows = Vec::new();
    let mut offset = 0;
    let mut last_segment = 0;
    let mut last_iter = 0;
    let mut align_err = None;
    let mut observer = |opt: &Optimizer, rep: &IterationReport, segment: usize, p: &LedProblem| {
        if segment != last_segment {
            offset += last_iter;
            last_segment = segment;
        }
        last_iter = rep.iteration;
        let iteration = offset + rep.iteration;
        rows.push(TraceRow {
            iteration,
            evals: p.eval_count(),
            best_f: p.best_f(),
            sigma: rep.sigma,
            neff_hat: rep.n_eff_hat,
            segment,
        });
        if cfg.trace_led {
            if let Some(led) = &opt.led {
                match p.effective_alignment_norms(&opt.state.eigen.basis) {
                    Ok(align) => {
                        for coord in 0..led.dim() {
                            led_rows.push(LedRow {
                                iteration,
                                segment,
                                coord,
                                v_snr: led.v_snr[coord],
                                v: led.v[coord],
                                align_norm: align[coord],
                            });
                        }
                    }
                    Err(e) => align_err = Some(e),
                }
            }
        }
    };
    let outcome = run(&mut problem, &rc, &mut rngs, &mut observer)?;
    if let Some(e) = align_err {
        return Err(e);
    }
    Ok(TrialRecord {
        trial,
        seed,
        success: outcome.success,
        evals: outcome.evals,
        best_f: outcome.best_f,
        rows,
        segments: outcome.segments,
        led_rows,
    })
}

/// Aggregates over the trials of one configuration. Evaluation statistics
/// are over successful trials only.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub median_evals: Option<f64>,
    pub q1_evals: Option<f64>,
    pub q3_evals: Option<f64>,
    /// Median evaluations divided by the success rate.
    pub evals_per_success: Option<f64>,
    pub median_best_f: f64,
}

/// Linear-interpolation quantile of sorted data (R type 7).
pub fn quantile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn summarize(records: &[TrialRecord]) -> Summary {
    let mut evals: Vec<f64> = records
        .iter()
        .filter(|r| r.success)
        .map(|r| r.evals as f64)
        .collect();
    evals.sort_by(f64::total_cmp);
    let mut finals: Vec<f64> = records.iter().map(|r| r.best_f).collect();
    finals.sort_by(f64::total_cmp);
    let trials = records.len();
    let successes = evals.len();
    let success_rate = if trials == 0 {
        0.0
    } else {
        successes as f64 / trials as f64
    };
    let median_evals = quantile(&evals, 0.5);
    Summary {
        trials,
        successes,
        success_rate,
        median_evals,
        q1_evals: quantile(&evals, 0.25),
        q3_evals: quantile(&evals, 0.75),
        evals_per_success: median_evals.map(|m| m / success_rate),
        median_best_f: quantile(&finals, 0.5).unwrap_or(f64::NAN),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub records: Vec<TrialRecord>,
    pub summary: Summary,
}

/// Runs all trials (in parallel when enabled) and orders them by index.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let seeds: Vec<(usize, u64)> = (0..cfg.trials).map(|t| (t, trial_seed(cfg.seed, t))).collect();
    let records = run_all(cfg, &seeds)?;
    let summary = summarize(&records);
    Ok(ExperimentResult {
        config: cfg.clone(),
        records,
        summary,
    })
}

#[cfg(feature = "parallel")]
fn run_all(cfg: &ExperimentConfig, seeds: &[(usize, u64)]) -> Result<Vec<TrialRecord>> {
    use rayon::prelude::*;
    if cfg.jobs == 1 {
        return seeds.iter().map(|&(t, s)| run_trial(cfg, t, s)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| config_err(format!("thread pool: {e}")))?;
    pool.install(|| seeds.par_iter().map(|&(t, s)| run_trial(cfg, t, s)).collect())
}

#[cfg(not(feature = "parallel"))]
fn run_all(cfg: &ExperimentConfig, seeds: &[(usize, u64)]) -> Result<Vec<TrialRecord>> {
    seeds.iter().map(|&(t, s)| run_trial(cfg, t, s)).collect()
}

/// 17 significant digits: enough to read back the identical `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_trace(records: &[TrialRecord], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = csv_err(path);
    w.write_record(TRACE_HEADER).map_err(&e)?;
    for r in records {
        for row in &r.rows {
            w.write_record([
                r.trial.to_string(),
                r.seed.to_string(),
                row.iteration.to_string(),
                row.evals.to_string(),
                fmt_f64(row.best_f),
                fmt_f64(row.sigma),
                fmt_f64(row.neff_hat),
                row.segment.to_string(),
            ])
            .map_err(&e)?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_led_trace(records: &[TrialRecord], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = csv_err(path);
    w.write_record(LED_TRACE_HEADER).map_err(&e)?;
    for r in records {
        for row in &r.led_rows {
            w.write_record([
                r.trial.to_string(),
                row.iteration.to_string(),
                row.segment.to_string(),
                row.coord.to_string(),
                fmt_f64(row.v_snr),
                fmt_f64(row.v),
                fmt_f64(row.align_norm),
            ])
            .map_err(&e)?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub const SUMMARY_HEADER: [&str; 15] = [
    "algo",
    "stepsize",
    "restart",
    "fn",
    "dim",
    "eff_dim",
    "lambda",
    "trials",
    "successes",
    "success_rate",
    "median_evals",
    "q1_evals",
    "q3_evals",
    "evals_per_success",
    "median_best_f",
];

pub fn write_summary(result: &ExperimentResult, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = csv_err(path);
    let c = &result.config;
    let s = &result.summary;
    w.write_record(SUMMARY_HEADER).map_err(&e)?;
    w.write_record([
        c.algorithm.name().to_string(),
        c.mode.name().to_string(),
        c.restart.name().to_string(),
        c.function.to_string(),
        c.dim.to_string(),
        c.eff_dim.to_string(),
        c.lambda().to_string(),
        s.trials.to_string(),
        s.successes.to_string(),
        fmt_f64(s.success_rate),
        fmt_opt(s.median_evals),
        fmt_opt(s.q1_evals),
        fmt_opt(s.q3_evals),
        fmt_opt(s.evals_per_success),
        fmt_f64(s.median_best_f),
    ])
    .map_err(&e)?;
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_trials(records: &[TrialRecord], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = csv_err(path);
    w.write_record(["trial", "seed", "success", "evals", "best_f", "segments", "last_stop"])
        .map_err(&e)?;
    for r in records {
        w.write_record([
            r.trial.to_string(),
            r.seed.to_string(),
            r.success.to_string(),
            r.evals.to_string(),
            fmt_f64(r.best_f),
            r.segments.len().to_string(),
            r.segments.last().map(|s| s.end.name()).unwrap_or("").to_string(),
        ])
        .map_err(&e)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `trace.csv`, `summary.csv`, `trials.csv`, `config.txt` and, when
/// requested, `led_trace.csv` into `dir`.
pub fn emit(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_trace(&result.records, &dir.join("trace.csv"))?;
    write_summary(result, &dir.join("summary.csv"))?;
    write_trials(&result.records, &dir.join("trials.csv"))?;
    if result.config.trace_led {
        write_led_trace(&result.records, &dir.join("led_trace.csv"))?;
    }
    let cfg_path = dir.join("config.txt");
    let mut f = File::create(&cfg_path).map_err(|source| Error::Io {
        path: cfg_path.clone(),
        source,
    })?;
    f.write_all(result.config.to_config_text().as_bytes())
        .map_err(|source| Error::Io {
            path: cfg_path,
            source,
        })
}

/// Reads a `trace.csv` back into `(trial, seed, row)` tuples.
pub fn read_trace(path: &Path) -> Result<Vec<(usize, u64, TraceRow)>> {
    let e = csv_err(path);
    let mut r = csv::Reader::from_path(path).map_err(&e)?;
    let bad = |field: &str| config_err(format!("{}: bad {field}", path.display()));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(&e)?;
        let get = |i: usize| rec.get(i).ok_or_else(|| bad(TRACE_HEADER[i]));
        let int = |i: usize| get(i)?.parse::<u64>().map_err(|_| bad(TRACE_HEADER[i]));
        let float = |i: usize| get(i)?.parse::<f64>().map_err(|_| bad(TRACE_HEADER[i]));
        out.push((
            int(0)? as usize,
            int(1)?,
            TraceRow {
                iteration: int(2)? as usize,
                evals: int(3)?,
                best_f: float(4)?,
                sigma: float(5)?,
                neff_hat: float(6)?,
                segment: int(7)? as usize,
            },
        ));
    }
    Ok(out)
}
