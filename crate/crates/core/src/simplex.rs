//! Unit-norm target vectors for the classifier: the `k` classes map to the
//! vertices of either a standard simplex (basis vectors) or a regular simplex
//! (all pairwise inner products equal to `-1/(k-1)`), embedded in dimension `m`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::{real, Real};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Standard,
    Regular,
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetKind::Standard => write!(f, "standard"),
            TargetKind::Regular => write!(f, "regular"),
        }
    }
}

impl FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(TargetKind::Standard),
            "regular" => Ok(TargetKind::Regular),
            other => Err(Error::Format(format!("unknown target kind `{other}`"))),
        }
    }
}

/// `k` unit-norm target vectors of length `m`, one per class.
#[derive(Debug, Clone)]
pub struct TargetSet<R: Real> {
    k: usize,
    m: usize,
    kind: TargetKind,
    targets: Tensor<R>, // k x m, row j-1 is the target of class j
}

impl<R: Real> TargetSet<R> {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn kind(&self) -> TargetKind {
        self.kind
    }

    /// Target vector of a 1-based class index.
    pub fn target(&self, class: usize) -> &[R] {
        assert!(
            (1..=self.k).contains(&class),
            "class {class} outside 1..={}",
            self.k
        );
        self.targets.row(class - 1)
    }

    pub fn iter(&self) -> impl Iterator<Item = &[R]> {
        (0..self.k).map(move |j| self.targets.row(j))
    }

    /// Plain-text dump: one target per line, coordinates space-separated.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for row in self.iter() {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Targets are the first `k` standard basis vectors of dimension `m >= k`.
pub fn standard_simplex<R: Real>(k: usize, m: usize) -> Result<TargetSet<R>> {
    check_k(k)?;
    if m < k {
        return Err(Error::Dimension(format!(
            "standard simplex needs m >= k, got m={m}, k={k}"
        )));
    }
    let mut data = vec![R::zero(); k * m];
    for j in 0..k {
        data[j * m + j] = R::one();
    }
    Ok(TargetSet {
        k,
        m,
        kind: TargetKind::Standard,
        targets: Tensor::new(vec![k, m], data)?,
    })
}

/// `k` unit vectors whose pairwise inner products all equal `-1/(k-1)`,
/// occupying the first `k-1` coordinates and zero-padded to dimension `m`.
pub fn regular_simplex<R: Real>(k: usize, m: usize) -> Result<TargetSet<R>> {
    check_k(k)?;
    if m < k - 1 {
        return Err(Error::Dimension(format!(
            "regular simplex needs m >= k-1, got m={m}, k={k}"
        )));
    }

    // Vertices sqrt(k/(k-1)) * (e_j - ones/k) live in the hyperplane
    // orthogonal to the all-ones direction; a Householder reflection taking
    // ones/sqrt(k) to e_k rotates that hyperplane onto the first k-1
    // coordinates.
    let kf = real::<R>(k as f64);
    let scale = (kf / (kf - R::one())).sqrt();
    let inv_k = R::one() / kf;
    let inv_sqrt_k = kf.sqrt().recip();

    // u = ones/sqrt(k) - e_k
    let mut u = vec![inv_sqrt_k; k];
    u[k - 1] = u[k - 1] - R::one();
    let unorm2 = u.iter().fold(R::zero(), |a, &v| a + v * v);

    let mut data = vec![R::zero(); k * m];
    for j in 0..k {
        let mut w: Vec<R> = (0..k)
            .map(|i| {
                let e = if i == j { R::one() } else { R::zero() };
                scale * (e - inv_k)
            })
            .collect();
        if unorm2 > R::zero() {
            let udotw = u.iter().zip(&w).fold(R::zero(), |a, (&ui, &wi)| a + ui * wi);
            let coef = (R::one() + R::one()) * udotw / unorm2;
            for (wi, &ui) in w.iter_mut().zip(&u) {
                *wi = *wi - coef * ui;
            }
        }
        // Last coordinate of the reflected vertex is zero up to rounding.
        let row = &mut data[j * m..j * m + k - 1];
        row.copy_from_slice(&w[..k - 1]);
        // The reflection preserves norms only up to rounding; renormalize so
        // each target is unit to the last ulp.
        let norm = row.iter().fold(R::zero(), |a, &v| a + v * v).sqrt();
        if norm > R::zero() {
            for v in row.iter_mut() {
                *v = *v / norm;
            }
        }
    }

    // Canonical global sign: first nonzero coordinate of target 1 is positive.
    // A global flip preserves every pairwise inner product.
    if let Some(&lead) = data[..m].iter().find(|v| **v != R::zero()) {
        if lead < R::zero() {
            for v in data.iter_mut() {
                *v = -*v;
            }
        }
    }

    Ok(TargetSet {
        k,
        m,
        kind: TargetKind::Regular,
        targets: Tensor::new(vec![k, m], data)?,
    })
}

fn check_k(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::Dimension(format!("need at least 2 classes, got {k}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{dot, euclidean_norm};

    fn norms_are_unit(set: &TargetSet<f64>) {
        for t in set.iter() {
            let n = euclidean_norm(&Tensor::from_vec(t.to_vec()));
            assert!((n - 1.0).abs() < 1e-12, "norm {n}");
        }
    }

    // Gram-matrix oracle: recompute every pairwise inner product and compare
    // against 1 on the diagonal, -1/(k-1) off it.
    fn gram_is_regular(set: &TargetSet<f64>, tol: f64) {
        let k = set.k();
        let off = -1.0 / (k as f64 - 1.0);
        for a in 1..=k {
            for b in 1..=k {
                let g = dot(set.target(a), set.target(b));
                let want = if a == b { 1.0 } else { off };
                assert!(
                    (g - want).abs() < tol,
                    "gram[{a},{b}] = {g}, want {want}"
                );
            }
        }
    }

    #[test]
    fn standard_k2_m2() {
        let s = standard_simplex::<f64>(2, 2).unwrap();
        assert_eq!(s.target(1), &[1.0, 0.0]);
        assert_eq!(s.target(2), &[0.0, 1.0]);
        norms_are_unit(&s);
    }

    #[test]
    fn standard_k3_m5_zero_padded() {
        let s = standard_simplex::<f64>(3, 5).unwrap();
        assert_eq!(s.target(1), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.target(2), &[0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.target(3), &[0.0, 0.0, 1.0, 0.0, 0.0]);
        norms_are_unit(&s);
    }

    #[test]
    fn standard_rejects_m_below_k() {
        assert!(matches!(
            standard_simplex::<f64>(3, 2),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn regular_k2_m1_antipodal() {
        let s = regular_simplex::<f64>(2, 1).unwrap();
        assert!((s.target(1)[0] - 1.0).abs() < 1e-14);
        assert!((s.target(2)[0] + 1.0).abs() < 1e-14);
        assert!((dot(s.target(1), s.target(2)) + 1.0).abs() < 1e-14);
    }

    #[test]
    fn regular_k3_m2_is_120_degrees() {
        let s = regular_simplex::<f64>(3, 2).unwrap();
        norms_are_unit(&s);
        gram_is_regular(&s, 1e-12);
    }

    #[test]
    fn regular_k10_m16_gram() {
        let s = regular_simplex::<f64>(10, 16).unwrap();
        norms_are_unit(&s);
        gram_is_regular(&s, 1e-12);
        // Coordinates beyond the first k-1 stay zero.
        for t in s.iter() {
            assert!(t[9..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn regular_rejects_m_below_k_minus_1() {
        assert!(matches!(
            regular_simplex::<f64>(4, 2),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn regular_centroid_is_origin() {
        for (k, m) in [(2usize, 3usize), (3, 2), (5, 9), (10, 10)] {
            let s = regular_simplex::<f64>(k, m).unwrap();
            for d in 0..m {
                let c: f64 = s.iter().map(|t| t[d]).sum();
                assert!(c.abs() / (k as f64) < 1e-12, "k={k} m={m} dim {d}: {c}");
            }
        }
    }

    #[test]
    fn targets_are_pairwise_distinct() {
        for set in [
            standard_simplex::<f64>(4, 6).unwrap(),
            regular_simplex::<f64>(4, 6).unwrap(),
        ] {
            for a in 1..=4 {
                for b in (a + 1)..=4 {
                    assert_ne!(set.target(a), set.target(b));
                }
            }
        }
    }

    #[test]
    fn dump_round_trips_through_text() {
        let s = regular_simplex::<f64>(3, 4).unwrap();
        let text = s.dump();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        for (j, line) in lines.iter().enumerate() {
            let parsed: Vec<f64> = line
                .split_whitespace()
                .map(|w| w.parse().unwrap())
                .collect();
            assert_eq!(parsed, s.target(j + 1));
        }
    }
}
