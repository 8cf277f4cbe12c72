//! Benchmark functions with low effective dimensionality.
//!
//! An [`IntrinsicFunction`] lives on `n_eff` coordinates. [`LedProblem`] lifts
//! it to `n_total` coordinates as `f(x) = f̃(ψ(R x))`, where `R` is a random
//! rotation and `ψ` keeps the first `n_eff` coordinates, and keeps the
//! evaluation counter and best-so-far value for a trial.

use std::f64::consts::{E, PI};
use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::error::{config_err, Error, Result};
use crate::vecmat::{dot, Matrix};

/// Returned by [`Objective::evaluate`] when no evaluations are left. The
/// driver treats it as termination.
#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
#[error("evaluation budget exhausted")]
pub struct BudgetExhausted;

/// Anything the optimizer can minimize.
pub trait Objective {
    fn dim(&self) -> usize;
    fn evaluate(&mut self, x: &[f64]) -> std::result::Result<f64, BudgetExhausted>;
}

/// The nine benchmark landscapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Benchmark {
    Sphere,
    Ellipsoid,
    DifferentPowers,
    Ackley,
    Rosenbrock,
    AttractiveSector,
    SharpRidge,
    Bohachevsky,
    Rastrigin,
}

impl Benchmark {
    pub const ALL: [Benchmark; 9] = [
        Benchmark::Sphere,
        Benchmark::Ellipsoid,
        Benchmark::DifferentPowers,
        Benchmark::Ackley,
        Benchmark::Rosenbrock,
        Benchmark::AttractiveSector,
        Benchmark::SharpRidge,
        Benchmark::Bohachevsky,
        Benchmark::Rastrigin,
    ];

    pub fn from_id(id: u32) -> Result<Self> {
        match id {
            1..=9 => Ok(Self::ALL[id as usize - 1]),
            _ => Err(config_err(format!("function id {id} not in 1..=9"))),
        }
    }

    pub fn id(self) -> u32 {
        Self::ALL.iter().position(|&b| b == self).unwrap() as u32 + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Sphere => "sphere",
            Benchmark::Ellipsoid => "ellipsoid",
            Benchmark::DifferentPowers => "different-powers",
            Benchmark::Ackley => "ackley",
            Benchmark::Rosenbrock => "rosenbrock",
            Benchmark::AttractiveSector => "attractive-sector",
            Benchmark::SharpRidge => "sharp-ridge",
            Benchmark::Bohachevsky => "bohachevsky",
            Benchmark::Rastrigin => "rastrigin",
        }
    }

    /// Smallest `n_eff` for which the formula is defined and non-trivial.
    pub fn min_dim(self) -> usize {
        match self {
            Benchmark::Sphere | Benchmark::Ackley | Benchmark::SharpRidge | Benchmark::Rastrigin => 1,
            _ => 2,
        }
    }

    /// Location of the global minimum (value 0) in `n` dimensions.
    pub fn optimum(self, n: usize) -> Vec<f64> {
        match self {
            Benchmark::Rosenbrock => vec![1.0; n],
            _ => vec![0.0; n],
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A benchmark function on its own `n_eff` coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct IntrinsicFunction {
    kind: Benchmark,
    n_eff: usize,
}

pub fn make_intrinsic(id: u32, n_eff: usize) -> Result<IntrinsicFunction> {
    IntrinsicFunction::new(Benchmark::from_id(id)?, n_eff)
}

impl IntrinsicFunction {
    pub fn new(kind: Benchmark, n_eff: usize) -> Result<Self> {
        if n_eff < kind.min_dim() {
            return Err(config_err(format!(
                "{kind} needs an effective dimension of at least {}, got {n_eff}",
                kind.min_dim()
            )));
        }
        Ok(Self { kind, n_eff })
    }

    pub fn kind(&self) -> Benchmark {
        self.kind
    }

    pub fn n_eff(&self) -> usize {
        self.n_eff
    }

    /// `(i-1)/(n_eff-1)` for 0-based `i`.
    fn ramp(&self, i: usize) -> f64 {
        i as f64 / (self.n_eff - 1) as f64
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n_eff);
        let n = self.n_eff as f64;
        match self.kind {
            Benchmark::Sphere => x.iter().map(|v| v * v).sum(),
            Benchmark::Ellipsoid => x
                .iter()
                .enumerate()
                .map(|(i, v)| 10f64.powf(6.0 * self.ramp(i)) * v * v)
                .sum(),
            Benchmark::DifferentPowers => x
                .iter()
                .enumerate()
                .map(|(i, v)| v.abs().powf(2.0 + 4.0 * self.ramp(i)))
                .sum::<f64>()
                .sqrt(),
            Benchmark::Ackley => {
                let sq = x.iter().map(|v| v * v).sum::<f64>() / n;
                let cs = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / n;
                20.0 - 20.0 * (-0.2 * sq.sqrt()).exp() + E - cs.exp()
            }
            Benchmark::Rosenbrock => x
                .windows(2)
                .map(|w| 100.0 * (w[0] * w[0] - w[1]).powi(2) + (w[0] - 1.0).powi(2))
                .sum(),
            Benchmark::AttractiveSector => x
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let z = 10f64.powf(0.5 * self.ramp(i)) * v;
                    let s = if z > 0.0 { 100.0 } else { 1.0 };
                    (s * z).powi(2)
                })
                .sum(),
            Benchmark::SharpRidge => {
                x[0] * x[0] + 100.0 * x[1..].iter().map(|v| v * v).sum::<f64>().sqrt()
            }
            Benchmark::Bohachevsky => x
                .windows(2)
                .map(|w| {
                    w[0] * w[0] + 2.0 * w[1] * w[1]
                        - 0.3 * (3.0 * PI * w[0]).cos()
                        - 0.4 * (4.0 * PI * w[1]).cos()
                        + 0.7
                })
                .sum(),
            Benchmark::Rastrigin => x
                .iter()
                .map(|v| v * v + 10.0 * (1.0 - (2.0 * PI * v).cos()))
                .sum(),
        }
    }
}

/// Haar-distributed proper rotation (det = +1).
///
/// Gram-Schmidt on a standard Gaussian matrix (with one re-orthogonalization
/// pass) yields Q with a positive-diagonal R factor, which is Haar on O(n);
/// negating the last column when det Q < 0 restricts it to SO(n).
pub fn random_rotation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Matrix {
    assert!(n >= 1);
    // Columns are drawn row-major as rows of `cols`, one vector per column.
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    for j in 0..n {
        for _pass in 0..2 {
            for k in 0..j {
                let proj = dot(&cols[j], &cols[k]);
                let (done, rest) = cols.split_at_mut(j);
                for (a, b) in rest[0].iter_mut().zip(&done[k]) {
                    *a -= proj * b;
                }
            }
        }
        let len = dot(&cols[j], &cols[j]).sqrt();
        cols[j].iter_mut().for_each(|a| *a /= len);
    }
    let mut q = Matrix::zeros(n, n);
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            q[(i, j)] = v;
        }
    }
    if determinant_sign(&q) < 0.0 {
        for i in 0..n {
            q[(i, n - 1)] = -q[(i, n - 1)];
        }
    }
    q
}

/// Sign of the determinant by LU with partial pivoting.
fn determinant_sign(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut a = m.clone();
    let mut sign = 1.0;
    for k in 0..n {
        let pivot = (k..n)
            .max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs()))
            .unwrap();
        if a[(pivot, k)] == 0.0 {
            return 0.0;
        }
        if pivot != k {
            for j in 0..n {
                let tmp = a[(k, j)];
                a[(k, j)] = a[(pivot, j)];
                a[(pivot, j)] = tmp;
            }
            sign = -sign;
        }
        if a[(k, k)] < 0.0 {
            sign = -sign;
        }
        for i in (k + 1)..n {
            let factor = a[(i, k)] / a[(k, k)];
            for j in k..n {
                a[(i, j)] -= factor * a[(k, j)];
            }
        }
    }
    sign
}

/// An intrinsic function embedded in a larger, rotated search space, plus
/// per-trial evaluation bookkeeping.
#[derive(Clone, Debug)]
pub struct LedProblem {
    intrinsic: IntrinsicFunction,
    n_total: usize,
    /// `None` means `R = I`.
    rotation: Option<Matrix>,
    eval_count: u64,
    best_f: f64,
    budget: u64,
}

/// Builds `f(x) = f̃(ψ(Rx))` with a random rotation drawn from `rng`.
pub fn led_wrap<R: Rng + ?Sized>(
    intrinsic: IntrinsicFunction,
    n_total: usize,
    rng: &mut R,
) -> Result<LedProblem> {
    check_total(&intrinsic, n_total)?;
    let rotation = random_rotation(n_total, rng);
    LedProblem::with_rotation(intrinsic, n_total, Some(rotation))
}

fn check_total(intrinsic: &IntrinsicFunction, n_total: usize) -> Result<()> {
    if n_total < intrinsic.n_eff() {
        return Err(config_err(format!(
            "total dimension {n_total} is below effective dimension {}",
            intrinsic.n_eff()
        )));
    }
    Ok(())
}

impl LedProblem {
    /// Explicit rotation; `None` forces `R = I`. The budget starts unlimited.
    pub fn with_rotation(
        intrinsic: IntrinsicFunction,
        n_total: usize,
        rotation: Option<Matrix>,
    ) -> Result<Self> {
        check_total(&intrinsic, n_total)?;
        if let Some(r) = &rotation {
            if r.rows() != n_total || r.cols() != n_total {
                return Err(Error::DimensionMismatch {
                    expected: n_total,
                    got: r.rows(),
                });
            }
        }
        Ok(Self {
            intrinsic,
            n_total,
            rotation,
            eval_count: 0,
            best_f: f64::INFINITY,
            budget: u64::MAX,
        })
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    pub fn intrinsic(&self) -> &IntrinsicFunction {
        &self.intrinsic
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn n_eff(&self) -> usize {
        self.intrinsic.n_eff()
    }

    pub fn eval_count(&self) -> u64 {
        self.eval_count
    }

    pub fn best_f(&self) -> f64 {
        self.best_f
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn remaining(&self) -> u64 {
        self.budget.saturating_sub(self.eval_count)
    }

    /// The rotation as a matrix (identity when none was drawn).
    pub fn rotation(&self) -> Matrix {
        self.rotation
            .clone()
            .unwrap_or_else(|| Matrix::identity(self.n_total))
    }

    /// `ψ(R x)`: the coordinates the intrinsic function sees.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_total);
        let k = self.n_eff();
        match &self.rotation {
            Some(r) => (0..k).map(|i| dot(r.row(i), x)).collect(),
            None => x[..k].to_vec(),
        }
    }

    /// `f(x)` without touching the counters.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.intrinsic.eval(&self.project(x))
    }

    /// Per eigenvector `b_i` (column `i` of `basis`), the norm of `R b_i`
    /// restricted to the effective coordinates. Near 1 for directions lying
    /// in the effective subspace, near 0 for redundant ones.
    pub fn effective_alignment_norms(&self, basis: &Matrix) -> Result<Vec<f64>> {
        effective_alignment_norms(self, basis)
    }
}

pub fn effective_alignment_norms(p: &LedProblem, basis: &Matrix) -> Result<Vec<f64>> {
    if basis.rows() != p.n_total || basis.cols() != p.n_total {
        return Err(Error::DimensionMismatch {
            expected: p.n_total,
            got: basis.rows(),
        });
    }
    // Only the first n_eff rows of R·B are needed.
    let k = p.n_eff();
    let mut sq = vec![0.0; p.n_total];
    for j in 0..k {
        let row = match &p.rotation {
            Some(r) => basis.tr_mul_vec(r.row(j)),
            None => basis.row(j).to_vec(),
        };
        for (acc, v) in sq.iter_mut().zip(row) {
            *acc += v * v;
        }
    }
    Ok(sq.into_iter().map(f64::sqrt).collect())
}

impl Objective for LedProblem {
    fn dim(&self) -> usize {
        self.n_total
    }

    fn evaluate(&mut self, x: &[f64]) -> std::result::Result<f64, BudgetExhausted> {
        if self.eval_count >= self.budget {
            return Err(BudgetExhausted);
        }
        let f = self.value(x);
        self.eval_count += 1;
        if f < self.best_f {
            self.best_f = f;
        }
        Ok(f)
    }
}

/// Adapts a closure into an unlimited-budget [`Objective`].
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F: FnMut(&[f64]) -> f64> FnObjective<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: FnMut(&[f64]) -> f64> Objective for FnObjective<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&mut self, x: &[f64]) -> std::result::Result<f64, BudgetExhausted> {
        Ok((self.f)(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn f(id: u32, n: usize) -> IntrinsicFunction {
        make_intrinsic(id, n).unwrap()
    }

    #[test]
    fn hand_evaluated_values() {
        assert_eq!(f(1, 3).eval(&[0.0; 3]), 0.0);
        assert_eq!(f(5, 4).eval(&[1.0; 4]), 0.0);
        assert_eq!(f(2, 2).eval(&[1.0, 1.0]), 1_000_001.0);
        assert_abs_diff_eq!(f(6, 2).eval(&[1.0, -1.0]), 10010.0, epsilon = 1e-9);
        assert_eq!(f(7, 2).eval(&[2.0, 3.0]), 304.0);
        assert_abs_diff_eq!(f(4, 5).eval(&[0.0; 5]), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f(8, 3).eval(&[0.0; 3]), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn all_functions_vanish_at_optimum_and_are_positive_nearby() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in Benchmark::ALL {
            let func = IntrinsicFunction::new(kind, 6).unwrap();
            let opt = kind.optimum(6);
            assert_abs_diff_eq!(func.eval(&opt), 0.0, epsilon = 1e-12);
            for _ in 0..50 {
                let x: Vec<f64> = opt
                    .iter()
                    .map(|o| o + 0.1 * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                assert!(func.eval(&x) > 0.0, "{kind} at {x:?}");
            }
        }
    }

    #[test]
    fn rejects_bad_configuration() {
        assert!(make_intrinsic(0, 4).is_err());
        assert!(make_intrinsic(10, 4).is_err());
        for id in [2, 3, 5, 6, 8] {
            assert!(make_intrinsic(id, 1).is_err(), "f{id}");
        }
        for id in [1, 4, 7, 9] {
            assert!(make_intrinsic(id, 1).is_ok(), "f{id}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(led_wrap(f(1, 4), 3, &mut rng).is_err());
    }

    #[test]
    fn rotation_is_orthonormal_and_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(random_rotation(1, &mut rng), Matrix::identity(1));
        for n in [2, 5, 17] {
            let r = random_rotation(n, &mut rng);
            let rrt = r.matmul(&r.transpose());
            assert!(rrt.max_abs_diff(&Matrix::identity(n)) < 1e-12);
            assert_eq!(determinant_sign(&r), 1.0);
        }
    }

    #[test]
    fn different_seeds_give_different_rotations() {
        let a = random_rotation(3, &mut ChaCha8Rng::seed_from_u64(10));
        let b = random_rotation(3, &mut ChaCha8Rng::seed_from_u64(11));
        let mut d = a.clone();
        d.add_scaled(-1.0, &b);
        assert!(d.frobenius_norm() > 0.0);
    }

    #[test]
    fn identity_wrap_drops_redundant_coordinates() {
        let p = LedProblem::with_rotation(f(1, 2), 3, None).unwrap();
        assert_eq!(p.value(&[1.0, 2.0, 5.0]), 5.0);
    }

    #[test]
    fn rotated_wrap_hand_value() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let r = Matrix::from_rows(&[vec![h, h], vec![-h, h]]);
        let p = LedProblem::with_rotation(f(1, 1), 2, Some(r)).unwrap();
        assert_abs_diff_eq!(p.value(&[1.0, 1.0]), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn counters_and_running_minimum() {
        let mut p = LedProblem::with_rotation(f(1, 1), 1, None).unwrap().with_budget(3);
        assert_abs_diff_eq!(p.evaluate(&[3f64.sqrt()]).unwrap(), 3.0, epsilon = 1e-15);
        assert_eq!(p.eval_count(), 1);
        p.evaluate(&[1.0]).unwrap();
        p.evaluate(&[2f64.sqrt()]).unwrap();
        assert_eq!(p.best_f(), 1.0);
        assert_eq!(p.evaluate(&[0.0]), Err(BudgetExhausted));
        assert_eq!(p.eval_count(), 3);
    }

    #[test]
    fn repeated_evaluation_is_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = led_wrap(f(9, 3), 6, &mut rng).unwrap();
        let x = [0.3, -0.2, 0.5, 1.0, 2.0, -1.0];
        let a = p.evaluate(&x).unwrap();
        let b = p.evaluate(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(p.eval_count(), 2);
    }

    #[test]
    fn alignment_norm_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = led_wrap(f(1, 2), 4, &mut rng).unwrap();
        let norms = p.effective_alignment_norms(&p.rotation().transpose()).unwrap();
        for (a, b) in norms.iter().zip([1.0, 1.0, 0.0, 0.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }

        let p = LedProblem::with_rotation(f(1, 1), 3, None).unwrap();
        assert_eq!(p.effective_alignment_norms(&Matrix::identity(3)).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(p.effective_alignment_norms(&Matrix::identity(2)).is_err());
    }
}
