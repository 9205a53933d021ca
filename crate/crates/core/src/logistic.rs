//! Multinomial logistic regression head used as the comparison scheme. It
//! shares the linear map `y = Ax` with the scale-invariant stage but applies
//! no normalization and no Frobenius rescaling, and its cost
//! `r = ln Σ_ℓ exp(y⁽ℓ⁾) − y⁽ʲ⁾` is unbounded above.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::stage::ClassifierParams;
use crate::tensor::{matvec, Tensor};

/// The logistic head reuses the classifier parameter container (and its blob
/// format) with the convention `m == k`: one output per class. Initialization
/// goes through the same normal-then-rescale routine once, for comparability;
/// no rescaling ever happens afterwards.
pub type LogisticParams<R> = ClassifierParams<R>;

fn check_label<R: Real>(y: &Tensor<R>, label: usize) -> Result<()> {
    if !y.all_finite() {
        return Err(Error::Contract("logistic input y is not finite".into()));
    }
    if label < 1 || label > y.len() {
        return Err(Error::Contract(format!(
            "label {label} outside 1..={}",
            y.len()
        )));
    }
    Ok(())
}

/// `r = ln(Σ_ℓ exp(y⁽ℓ⁾)) − y⁽ʲ⁾`, computed with max subtraction so large
/// entries cannot overflow. Always `>= 0`, approaching 0 only when the labeled
/// entry dominates.
pub fn logistic_cost<R: Real>(y: &Tensor<R>, label: usize) -> Result<R> {
    check_label(y, label)?;
    let max = y.data().iter().cloned().fold(R::neg_infinity(), R::max);
    let sum = y
        .data()
        .iter()
        .fold(R::zero(), |acc, &v| acc + (v - max).exp());
    Ok(sum.ln() + max - y.data()[label - 1])
}

/// Gradient of [`logistic_cost`] with respect to `y`: `softmax(y) − e_j`.
pub fn logistic_grad<R: Real>(y: &Tensor<R>, label: usize) -> Result<Tensor<R>> {
    check_label(y, label)?;
    let max = y.data().iter().cloned().fold(R::neg_infinity(), R::max);
    let exps: Vec<R> = y.data().iter().map(|&v| (v - max).exp()).collect();
    let sum = exps.iter().fold(R::zero(), |a, &b| a + b);
    let mut grad: Vec<R> = exps.into_iter().map(|e| e / sum).collect();
    grad[label - 1] = grad[label - 1] - R::one();
    Ok(Tensor::from_vec(grad))
}

/// `argmax_ℓ y⁽ℓ⁾`, 1-based, ties to the lowest index.
pub fn logistic_classify<R: Real>(y: &Tensor<R>) -> usize {
    let mut best = 1;
    let mut best_val = y.data()[0];
    for (i, &v) in y.data().iter().enumerate().skip(1) {
        if v > best_val {
            best = i + 1;
            best_val = v;
        }
    }
    best
}

/// Cost and parameter/input gradients in one pass: with `g = softmax(y) − e_j`
/// the chain rule gives `grad_A = g xᵀ` and `grad_x = Aᵀ g`.
pub fn logistic_cost_and_backward<R: Real>(
    params: &LogisticParams<R>,
    x: &Tensor<R>,
    label: usize,
) -> Result<(R, Tensor<R>, Tensor<R>)> {
    let y = matvec(params.matrix(), x)?;
    let cost = logistic_cost(&y, label)?;
    let g = logistic_grad(&y, label)?;
    let (m, n) = (params.m(), params.n());
    let xs = x.data();
    let mut grad_a = vec![R::zero(); m * n];
    let mut grad_x = vec![R::zero(); n];
    for i in 0..m {
        let gi = g.data()[i];
        let row = params.matrix().row(i);
        let ga_row = &mut grad_a[i * n..(i + 1) * n];
        for j in 0..n {
            ga_row[j] = gi * xs[j];
            grad_x[j] = grad_x[j] + row[j] * gi;
        }
    }
    Ok((
        cost,
        Tensor::new(vec![m, n], grad_a)?,
        Tensor::new(vec![n], grad_x)?,
    ))
}
