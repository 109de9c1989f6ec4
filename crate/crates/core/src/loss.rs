//! Generalized Jaccard distance between fuzzy label maps.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{BackwardRule, Tape, Tensor, Var};

/// `1 - sum(min(x, y)) / sum(max(x, y))` over every element; 0 when the union is empty.
pub fn jaccard_value<T: Real>(x: &[T], y: &[T]) -> T {
    let (s, m) = min_max_sums(x, y);
    if m == T::zero() {
        T::zero()
    } else {
        T::one() - s / m
    }
}

fn min_max_sums<T: Real>(x: &[T], y: &[T]) -> (T, T) {
    let mut s = T::zero();
    let mut m = T::zero();
    for (&a, &b) in x.iter().zip(y) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        s += lo;
        m += hi;
    }
    (s, m)
}

/// Jaccard distance of prediction `x` against target `y` as a scalar tape node.
///
/// Both inputs are differentiable. The min and max subgradients go to the
/// attaining argument, and to `x` on ties.
pub fn jaccard_distance<T: Real>(tape: &mut Tape<T>, x: Var, y: Var) -> Result<Var> {
    if tape.shape(x) != tape.shape(y) {
        return Err(Error::shape("jaccard_distance", tape.shape(x), tape.shape(y)));
    }
    let v = jaccard_value(tape.value(x).data(), tape.value(y).data());
    Ok(tape.push(Tensor::scalar(v), vec![x, y], JaccardRule))
}

struct JaccardRule;

impl<T: Real> BackwardRule<T> for JaccardRule {
    fn name(&self) -> &'static str {
        "jaccard_distance"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, wants: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (x, y) = (inputs[0], inputs[1]);
        let (s, m) = min_max_sums(x.data(), y.data());
        if m == T::zero() {
            return vec![wants[0].then(|| Tensor::zeros(x.shape().to_vec())), wants[1].then(|| Tensor::zeros(y.shape().to_vec()))];
        }
        // dJ = -(dS * M - S * dM) / M^2
        let g = grad.item();
        let d_min = -g / m;
        let d_max = g * s / (m * m);
        let mut gx = vec![T::zero(); x.len()];
        let mut gy = vec![T::zero(); y.len()];
        for (i, (&a, &b)) in x.data().iter().zip(y.data()).enumerate() {
            if a < b {
                gx[i] = d_min;
                gy[i] = d_max;
            } else if a > b {
                gx[i] = d_max;
                gy[i] = d_min;
            } else {
                gx[i] = d_min + d_max;
            }
        }
        vec![
            wants[0].then(|| Tensor::new(x.shape().to_vec(), gx).expect("shape")),
            wants[1].then(|| Tensor::new(y.shape().to_vec(), gy).expect("shape")),
        ]
    }
}
