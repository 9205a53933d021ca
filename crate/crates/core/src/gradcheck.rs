//! Finite-difference verification of every analytic gradient in the crate,
//! plus the gradient-norm bound check. The checks here evaluate costs only,
//! never the analytic backward paths they are validating.

mod suite;

pub use suite::run;

use num_complex::Complex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::seeded;
use crate::scalar::Real;
use crate::tensor::{euclidean_norm, matvec, Tensor};

/// Central finite-difference gradient of a scalar function of a flat point.
pub fn central_gradient<F>(f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(point.len());
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let plus = f(&probe);
        probe[i] = point[i] - step;
        let minus = f(&probe);
        probe[i] = point[i];
        grad.push((plus - minus) / (2.0 * step));
    }
    grad
}

/// Componentwise relative error between an analytic and a reference gradient,
/// with a floor on the denominator so near-zero components stay comparable.
pub fn max_relative_error(analytic: &[f64], reference: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), reference.len());
    analytic
        .iter()
        .zip(reference)
        .map(|(&a, &r)| (a - r).abs() / a.abs().max(r.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Spectral norm (largest singular value) by power iteration on `AᵀA`.
/// The iteration count is fixed rather than stopped on a data-dependent
/// test, so runs on scaled copies of the same matrix follow identical
/// trajectories and their estimates scale together to machine precision.
pub fn spectral_norm<R: Real>(a: &Tensor<R>, seed: u64) -> R {
    let (m, n) = (a.rows(), a.cols());
    let mut rng = seeded(seed);
    let mut v: Vec<R> = (0..n)
        .map(|_| crate::scalar::real::<R>(rng.gen::<f64>() - 0.5))
        .collect();
    let mut sigma = R::zero();
    for _ in 0..500 {
        let vn = Tensor::from_vec(v.clone());
        let nv = euclidean_norm(&vn);
        if nv == R::zero() {
            return R::zero();
        }
        let v_unit = vn.scaled(nv.recip());
        let av = matvec(a, &v_unit).expect("spectral_norm shapes");
        sigma = euclidean_norm(&av);
        // v <- Aᵀ (A v)
        let mut next = vec![R::zero(); n];
        for i in 0..m {
            let row = a.row(i);
            let avi = av.data()[i];
            for (j, nj) in next.iter_mut().enumerate() {
                *nj = *nj + row[j] * avi;
            }
        }
        v = next;
    }
    sigma
}

/// Deliberate defects that the suite must be able to catch; used by tests of
/// the harness itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultInjection {
    None,
    /// Negates the modulus backward cotangent.
    ModulusGradSignFlip,
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub seed: u64,
    /// Instances per operator.
    pub instances: usize,
    /// Finite-difference step.
    pub step: f64,
    /// Pass threshold on the max relative error.
    pub tolerance: f64,
    /// Instances for the gradient-norm bound check.
    pub bound_instances: usize,
    pub fault: FaultInjection,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            instances: 100,
            step: 1e-6,
            tolerance: 1e-4,
            bound_instances: 1000,
            fault: FaultInjection::None,
        }
    }
}

/// Per-operator outcome.
#[derive(Debug, Clone)]
pub struct OperatorReport {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub operators: Vec<OperatorReport>,
    pub tolerance: f64,
    pub bound_instances: usize,
    pub bound_violations: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.operators.iter().all(|o| o.max_rel_error < self.tolerance)
            && self.bound_violations == 0
    }

    pub fn failing_operators(&self) -> Vec<&'static str> {
        let mut names: Vec<&'static str> = self
            .operators
            .iter()
            .filter(|o| o.max_rel_error >= self.tolerance)
            .map(|o| o.name)
            .collect();
        if self.bound_violations > 0 {
            names.push("gradient-bound");
        }
        names
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| uniform(rng, lo, hi)).collect()).unwrap()
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
    loop {
        let v = random_tensor(rng, vec![n], -1.0, 1.0);
        let norm = euclidean_norm(&v);
        if norm > 1e-3 {
            return v.scaled(norm.recip());
        }
    }
}

/// Complex pixels kept away from the modulus kink at the origin.
fn random_complex_away_from_zero(rng: &mut ChaCha8Rng, len: usize) -> Vec<Complex<f64>> {
    (0..len)
        .map(|_| loop {
            let c = Complex::new(uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0));
            if c.norm() > 1e-2 {
                break c;
            }
        })
        .collect()
}
