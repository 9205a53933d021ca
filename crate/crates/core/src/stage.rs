//! The scale-invariant classification stage. A learned `m x n` matrix `A`
//! maps feature activations `x` to `y = Ax`; the normalized direction
//! `z = y/‖y‖` is classified by the nearest unit-norm target, and the cost is
//! the squared distance `‖z - t‖²`. `A` is kept at Frobenius norm `sqrt(m)` by
//! rescaling after initialization and after every update, which leaves `z`
//! (and hence decisions and costs) unchanged.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{seeded, standard_normal};
use crate::scalar::{real, Real};
use crate::simplex::TargetSet;
use crate::tensor::{dot, euclidean_norm, frobenius_norm, matvec, Tensor};

/// `‖y‖` at or below this is treated as a degenerate direction.
pub const DIRECTION_EPSILON: f64 = 1e-30;

/// How far from unit norm the inputs of [`cost`] may stray.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// The classifier matrix `A` with its Frobenius-rescaling discipline.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams<R: Real> {
    a: Tensor<R>,
}

impl<R: Real> ClassifierParams<R> {
    /// Entries drawn i.i.d. standard normal, then rescaled to Frobenius norm
    /// `sqrt(m)`. Deterministic for a given seed.
    pub fn init(m: usize, n: usize, seed: u64) -> Result<Self> {
        if m < 2 {
            return Err(Error::Dimension(format!("need m >= 2 rows, got {m}")));
        }
        if n == 0 {
            return Err(Error::Dimension("need n >= 1 columns".into()));
        }
        let mut rng = seeded(seed);
        let data: Vec<R> = (0..m * n).map(|_| real(standard_normal(&mut rng))).collect();
        Self {
            a: Tensor::new(vec![m, n], data)?,
        }
        .rescale()
    }

    /// Wraps an existing matrix without rescaling it.
    pub fn from_matrix(a: Tensor<R>) -> Result<Self> {
        if a.rank() != 2 {
            return Err(Error::Dimension(format!(
                "classifier matrix must be rank 2, got rank {}",
                a.rank()
            )));
        }
        if !a.all_finite() {
            return Err(Error::Contract("classifier matrix has non-finite entries".into()));
        }
        Ok(Self { a })
    }

    pub fn matrix(&self) -> &Tensor<R> {
        &self.a
    }

    pub fn m(&self) -> usize {
        self.a.rows()
    }

    pub fn n(&self) -> usize {
        self.a.cols()
    }

    /// Divides every entry by the Frobenius norm and multiplies by `sqrt(m)`.
    pub fn rescale(&self) -> Result<Self> {
        let norm = frobenius_norm(&self.a);
        if norm == R::zero() {
            return Err(Error::DegenerateParams(
                "cannot rescale an all-zero matrix".into(),
            ));
        }
        let factor = real::<R>(self.m() as f64).sqrt() / norm;
        Ok(Self {
            a: self.a.scaled(factor),
        })
    }

    /// Binary blob: `m`, `n` as little-endian u64, then the entries as
    /// little-endian f64, row-major.
    pub fn to_blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.a.len());
        out.extend_from_slice(&(self.m() as u64).to_le_bytes());
        out.extend_from_slice(&(self.n() as u64).to_le_bytes());
        for &v in self.a.data() {
            out.extend_from_slice(&v.to_f64().unwrap().to_le_bytes());
        }
        out
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Format("parameter blob shorter than its header".into()));
        }
        let m = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let expect = 16 + 8 * m * n;
        if bytes.len() != expect {
            return Err(Error::Format(format!(
                "parameter blob for {m}x{n} should be {expect} bytes, got {}",
                bytes.len()
            )));
        }
        let data: Vec<R> = bytes[16..]
            .chunks_exact(8)
            .map(|c| real(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Self::from_matrix(Tensor::new(vec![m, n], data)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_blob())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_blob(&bytes)
    }
}

/// Result of a forward pass: the linear output, its normalized direction, and
/// the 1-based class whose target is nearest to `z`.
#[derive(Debug, Clone)]
pub struct StageOutput<R: Real> {
    pub y: Tensor<R>,
    pub z: Tensor<R>,
    pub predicted_class: usize,
}

/// `y = Ax`, `z = y/‖y‖`, and the nearest-target decision (ties to the lowest
/// class index). Errors with a degenerate direction when `‖y‖` vanishes.
pub fn forward<R: Real>(
    params: &ClassifierParams<R>,
    x: &Tensor<R>,
    targets: &TargetSet<R>,
) -> Result<StageOutput<R>> {
    if targets.m() != params.m() {
        return Err(Error::Dimension(format!(
            "targets live in dimension {}, classifier has {} rows",
            targets.m(),
            params.m()
        )));
    }
    let y = matvec(&params.a, x)?;
    let norm = euclidean_norm(&y);
    if norm <= real(DIRECTION_EPSILON) {
        return Err(Error::DegenerateDirection {
            norm: norm.to_f64().unwrap(),
            threshold: DIRECTION_EPSILON,
        });
    }
    let z = y.scaled(norm.recip());
    // Nearest target in Euclidean distance == largest inner product, since
    // ‖z‖ and every ‖t_j‖ are fixed at 1.
    let mut best = 1;
    let mut best_dot = dot(z.data(), targets.target(1));
    for j in 2..=targets.k() {
        let d = dot(z.data(), targets.target(j));
        if d > best_dot {
            best = j;
            best_dot = d;
        }
    }
    Ok(StageOutput {
        y,
        z,
        predicted_class: best,
    })
}

/// Squared distance `‖z - t‖²` between unit vectors, evaluated as
/// `2 - 2⟨z,t⟩` with the inner product clamped to `[-1, 1]` so the value
/// stays inside `[0, 4]`.
pub fn cost<R: Real>(z: &Tensor<R>, t: &[R]) -> Result<R> {
    check_unit("z", z.data())?;
    check_unit("t", t)?;
    if z.len() != t.len() {
        return Err(Error::Dimension(format!(
            "cost: z has length {}, target has length {}",
            z.len(),
            t.len()
        )));
    }
    let d = dot(z.data(), t).max(-R::one()).min(R::one());
    Ok((R::one() + R::one()) * (R::one() - d))
}

fn check_unit<R: Real>(name: &str, v: &[R]) -> Result<()> {
    let norm = v.iter().fold(R::zero(), |a, &x| a + x * x).sqrt();
    if !norm.is_finite() {
        return Err(Error::Contract(format!("{name} is not finite")));
    }
    if (norm - R::one()).abs() > real(UNIT_TOLERANCE) {
        return Err(Error::Contract(format!(
            "{name} must be unit norm within {UNIT_TOLERANCE}, has norm {norm}"
        )));
    }
    Ok(())
}

/// Analytic gradients of the cost for the labeled class: with
/// `g = (2/‖y‖)(⟨z,t⟩z - t)`, returns `(g xᵀ, Aᵀ g)` as `(grad_a, grad_x)`.
pub fn backward<R: Real>(
    params: &ClassifierParams<R>,
    x: &Tensor<R>,
    targets: &TargetSet<R>,
    label: usize,
) -> Result<(Tensor<R>, Tensor<R>)> {
    let (_, grad_a, grad_x) = cost_and_backward(params, x, targets, label)?;
    Ok((grad_a, grad_x))
}

/// [`cost`] of the labeled class together with [`backward`]'s gradients,
/// sharing one forward pass.
pub fn cost_and_backward<R: Real>(
    params: &ClassifierParams<R>,
    x: &Tensor<R>,
    targets: &TargetSet<R>,
    label: usize,
) -> Result<(R, Tensor<R>, Tensor<R>)> {
    if !(1..=targets.k()).contains(&label) {
        return Err(Error::Contract(format!(
            "label {label} outside 1..={}",
            targets.k()
        )));
    }
    let out = forward(params, x, targets)?;
    let t = targets.target(label);
    let c = cost(&out.z, t)?;
    let z = out.z.data();
    let norm_y = euclidean_norm(&out.y);
    let zt = dot(z, t);
    let two = R::one() + R::one();
    let coef = two / norm_y;
    let g: Vec<R> = z
        .iter()
        .zip(t)
        .map(|(&zi, &ti)| coef * (zt * zi - ti))
        .collect();

    let (m, n) = (params.m(), params.n());
    let xs = x.data();
    let mut grad_a = vec![R::zero(); m * n];
    let mut grad_x = vec![R::zero(); n];
    for i in 0..m {
        let gi = g[i];
        let row = params.a.row(i);
        let ga_row = &mut grad_a[i * n..(i + 1) * n];
        for j in 0..n {
            ga_row[j] = gi * xs[j];
            grad_x[j] = grad_x[j] + row[j] * gi;
        }
    }
    Ok((
        c,
        Tensor::new(vec![m, n], grad_a)?,
        Tensor::new(vec![n], grad_x)?,
    ))
}

/// One gradient-descent update `Ã = A - h * grad_a`. `h = 0` is a no-op.
pub fn sgd_step<R: Real>(
    params: &ClassifierParams<R>,
    grad_a: &Tensor<R>,
    h: R,
) -> Result<ClassifierParams<R>> {
    if h < R::zero() {
        return Err(Error::Contract(format!("learning rate must be >= 0, got {h}")));
    }
    Ok(ClassifierParams {
        a: params.a.add_scaled(-h, grad_a)?,
    })
}
