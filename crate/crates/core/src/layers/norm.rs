//! Batch normalization over the (N, H, W) axes of NCHW tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{BackwardRule, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPS: f64 = 1e-5;

/// Per-channel mean and biased variance of one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Number of values per channel (N*H*W).
    pub count: usize,
}

/// Affine parameters plus running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T: Real = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: T,
    pub eps: T,
    pub mode: Mode,
    /// False until a train-mode pass updated the running stats, or they were set explicitly.
    pub initialized: bool,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::ones([channels]),
            beta: Tensor::zeros([channels]),
            running_mean: Tensor::zeros([channels]),
            running_var: Tensor::ones([channels]),
            momentum: T::lit(BN_MOMENTUM),
            eps: T::lit(BN_EPS),
            mode: Mode::Train,
            initialized: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Accepts the default (0, 1) running statistics for eval mode.
    pub fn with_initialized_stats(mut self) -> Self {
        self.initialized = true;
        self
    }

    /// Exponential moving average update with the unbiased batch variance.
    pub fn update_running(&mut self, stats: &BatchStats<T>) {
        let m = self.momentum;
        let one = T::one();
        let unbias = if stats.count > 1 { T::lit(stats.count as f64 / (stats.count - 1) as f64) } else { one };
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = m * *r + (one - m) * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = m * *r + (one - m) * b * unbias;
        }
        self.initialized = true;
    }

    /// Records gamma/beta as trainable leaves and normalizes `x` in this state's mode.
    /// Train mode updates the running statistics.
    pub fn apply(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let gamma = tape.leaf(self.gamma.clone(), true);
        let beta = tape.leaf(self.beta.clone(), true);
        match self.mode {
            Mode::Train => {
                let (y, stats) = batch_norm_train(tape, x, gamma, beta, self.eps)?;
                self.update_running(&stats);
                Ok(y)
            }
            Mode::Eval => {
                if !self.initialized {
                    return Err(Error::UninitializedStats("standalone".into()));
                }
                batch_norm_eval(tape, x, gamma, beta, self.running_mean.data(), self.running_var.data(), self.eps)
            }
        }
    }
}

fn check_affine<T: Real>(tape: &Tape<T>, x: Var, gamma: Var, beta: Var) -> Result<[usize; 4]> {
    let dims = tape.value(x).dims4("batch_norm")?;
    if tape.shape(gamma) != [dims[1]] || tape.shape(beta) != [dims[1]] {
        return Err(Error::shape("batch_norm", tape.shape(x), tape.shape(gamma)));
    }
    Ok(dims)
}

/// Normalizes with batch statistics; returns them for the running-stat update.
pub fn batch_norm_train<T: Real>(tape: &mut Tape<T>, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
    let [n, c, h, w] = check_affine(tape, x, gamma, beta)?;
    let hw = h * w;
    let count = n * hw;
    let xv = tape.value(x).data();
    let (gv, bv) = (tape.value(gamma).data(), tape.value(beta).data());
    let inv_m = T::one() / T::lit(count as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for b in 0..n {
            s += xv[(b * c + ch) * hw..][..hw].iter().copied().sum::<T>();
        }
        let mu = s * inv_m;
        let mut ss = T::zero();
        for b in 0..n {
            for &v in &xv[(b * c + ch) * hw..][..hw] {
                ss += (v - mu) * (v - mu);
            }
        }
        mean[ch] = mu;
        var[ch] = ss * inv_m;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut out = vec![T::zero(); xv.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for (o, &v) in out[off..off + hw].iter_mut().zip(&xv[off..off + hw]) {
                *o = gv[ch] * (v - mean[ch]) * inv_std[ch] + bv[ch];
            }
        }
    }
    let out = Tensor::new(vec![n, c, h, w], out)?;
    let rule = BnTrainRule { mean: mean.clone(), inv_std };
    let y = tape.push(out, vec![x, gamma, beta], rule);
    Ok((y, BatchStats { mean, var, count }))
}

/// Normalizes with fixed (running) statistics.
pub fn batch_norm_eval<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    mean: &[T],
    var: &[T],
    eps: T,
) -> Result<Var> {
    let [n, c, h, w] = check_affine(tape, x, gamma, beta)?;
    if mean.len() != c || var.len() != c {
        return Err(Error::shape("batch_norm running stats", &[c], &[mean.len()]));
    }
    let hw = h * w;
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let xv = tape.value(x).data();
    let (gv, bv) = (tape.value(gamma).data(), tape.value(beta).data());
    let mut out = vec![T::zero(); xv.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let (scale, shift) = (gv[ch] * inv_std[ch], bv[ch] - gv[ch] * inv_std[ch] * mean[ch]);
            for (o, &v) in out[off..off + hw].iter_mut().zip(&xv[off..off + hw]) {
                *o = scale * v + shift;
            }
        }
    }
    let out = Tensor::new(vec![n, c, h, w], out)?;
    Ok(tape.push(out, vec![x, gamma, beta], BnEvalRule { mean: mean.to_vec(), inv_std }))
}

struct BnTrainRule<T> {
    mean: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Real> BackwardRule<T> for BnTrainRule<T> {
    fn name(&self) -> &'static str {
        "batch_norm_train"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, wants: &[bool]) -> Vec<Option<Tensor<T>>> {
        let x = inputs[0];
        let gamma = inputs[1].data();
        let [n, c, h, w] = x.dims4("batch_norm").expect("checked");
        let hw = h * w;
        let m = T::lit((n * hw) as f64);
        let (xv, g) = (x.data(), grad.data());
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for i in off..off + hw {
                    let xhat = (xv[i] - self.mean[ch]) * self.inv_std[ch];
                    sum_g[ch] += g[i];
                    sum_gx[ch] += g[i] * xhat;
                }
            }
        }
        let gx = wants[0].then(|| {
            let mut gx = vec![T::zero(); xv.len()];
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * hw;
                    let k = gamma[ch] * self.inv_std[ch] / m;
                    for i in off..off + hw {
                        let xhat = (xv[i] - self.mean[ch]) * self.inv_std[ch];
                        gx[i] = k * (m * g[i] - sum_g[ch] - xhat * sum_gx[ch]);
                    }
                }
            }
            Tensor::new(x.shape().to_vec(), gx).expect("shape")
        });
        vec![
            gx,
            wants[1].then(|| Tensor::new(vec![c], sum_gx).expect("shape")),
            wants[2].then(|| Tensor::new(vec![c], sum_g).expect("shape")),
        ]
    }
}

struct BnEvalRule<T> {
    mean: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Real> BackwardRule<T> for BnEvalRule<T> {
    fn name(&self) -> &'static str {
        "batch_norm_eval"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, wants: &[bool]) -> Vec<Option<Tensor<T>>> {
        let x = inputs[0];
        let gamma = inputs[1].data();
        let [n, c, h, w] = x.dims4("batch_norm").expect("checked");
        let hw = h * w;
        let (xv, g) = (x.data(), grad.data());
        let mut gx = vec![T::zero(); xv.len()];
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for i in off..off + hw {
                    gx[i] = g[i] * gamma[ch] * self.inv_std[ch];
                    sum_g[ch] += g[i];
                    sum_gx[ch] += g[i] * (xv[i] - self.mean[ch]) * self.inv_std[ch];
                }
            }
        }
        vec![
            wants[0].then(|| Tensor::new(x.shape().to_vec(), gx).expect("shape")),
            wants[1].then(|| Tensor::new(vec![c], sum_gx).expect("shape")),
            wants[2].then(|| Tensor::new(vec![c], sum_g).expect("shape")),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients_at, GradCheck};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn channel_moments(t: &Tensor<f64>) -> Vec<(f64, f64)> {
        let [n, c, h, w] = t.dims4("m").unwrap();
        (0..c)
            .map(|ch| {
                let vals: Vec<f64> = (0..n).flat_map(|b| t.data()[(b * c + ch) * h * w..][..h * w].to_vec()).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
                (mean, var)
            })
            .collect()
    }

    #[test]
    fn train_mode_standardizes_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::from_fn([8, 3, 5, 5], |i| 3.0 + (i % 7) as f64 * rng.random_range(0.5..2.0));
        let mut t = Tape::new();
        let xv = t.constant(x);
        let mut bn = BatchNormState::<f64>::new(3);
        let y = bn.apply(&mut t, xv).unwrap();
        for (mean, var) in channel_moments(t.value(y)) {
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4, "{var}");
        }
        assert!(bn.initialized);
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let mut t = Tape::<f64>::new();
        let xv = t.constant(Tensor::full([4, 1, 3, 3], 7.0));
        let mut bn = BatchNormState::<f64>::new(1);
        bn.beta = Tensor::full([1], 0.25);
        let y = bn.apply(&mut t, xv).unwrap();
        assert!(t.value(y).data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn eval_requires_initialized_stats() {
        let mut t = Tape::<f32>::new();
        let xv = t.constant(Tensor::zeros([1, 2, 2, 2]));
        let mut bn = BatchNormState::<f32>::new(2);
        bn.mode = Mode::Eval;
        assert!(matches!(bn.apply(&mut t, xv), Err(Error::UninitializedStats(_))));
        let mut bn = BatchNormState::<f32>::new(2).with_initialized_stats();
        bn.mode = Mode::Eval;
        let y = bn.apply(&mut t, xv).unwrap();
        assert!(t.value(y).data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn running_stats_move_by_momentum() {
        let mut bn = BatchNormState::<f64>::new(1);
        bn.update_running(&BatchStats { mean: vec![1.0], var: vec![2.0], count: 2 });
        assert!((bn.running_mean.data()[0] - 0.01).abs() < 1e-12);
        assert!((bn.running_var.data()[0] - (0.99 + 0.01 * 4.0)).abs() < 1e-12);
        assert!(bn.running_var.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn channel_mismatch_is_error() {
        let mut t = Tape::<f32>::new();
        let xv = t.constant(Tensor::zeros([1, 2, 2, 2]));
        let mut bn = BatchNormState::<f32>::new(3);
        assert!(bn.apply(&mut t, xv).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::<f64>::from_fn([3, 2, 3, 3], |_| rng.random_range(-2.0..2.0));
            let gamma = Tensor::from_fn([2], |_| rng.random_range(0.5..1.5));
            let beta = Tensor::from_fn([2], |_| rng.random_range(-0.5..0.5));
            let report = check_gradients_at(vec![x.clone(), gamma.clone(), beta.clone()], &[true; 3], seed, GradCheck::f64(), |t, v| {
                Ok(batch_norm_train(t, v[0], v[1], v[2], 1e-5)?.0)
            })
            .unwrap();
            assert!(report.passed(), "train seed {seed}: {report}");
            let (mean, var) = ([0.3, -0.2], [1.5, 0.7]);
            let report = check_gradients_at(vec![x, gamma, beta], &[true; 3], seed, GradCheck::f64(), |t, v| {
                batch_norm_eval(t, v[0], v[1], v[2], &mean, &var, 1e-5)
            })
            .unwrap();
            assert!(report.passed(), "eval seed {seed}: {report}");
        }
    }
}
