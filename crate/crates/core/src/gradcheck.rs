//! Central finite-difference checks of tape gradients.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::real::Real;
use crate::tensor::{Tape, Tensor, Var};
#[cfg(test)]
use crate::tensor::BackwardRule;

/// Step and tolerance of a finite-difference comparison.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub rtol: f64,
    /// Lower bound on the denominator of the relative error, so that
    /// gradients that are zero analytically do not divide by ~0.
    pub floor: f64,
}

impl GradCheck {
    pub fn f64() -> Self {
        Self { step: 1e-4, rtol: 1e-3, floor: 1e-6 }
    }

    pub fn f32() -> Self {
        Self { step: 1e-2, rtol: 1e-1, floor: 1e-2 }
    }

    pub fn with_rtol(mut self, rtol: f64) -> Self {
        self.rtol = rtol;
        self
    }
}

#[derive(Clone, Debug)]
pub struct Mismatch {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub rtol: f64,
    pub worst: Option<Mismatch>,
    /// Elements skipped because the one-sided slopes disagree, i.e. the
    /// probe straddles a ReLU or max-pool switch.
    pub kinks: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.rtol && self.kinks * 10 <= self.checked
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "checked {} elements ({} kinks skipped), max rel err {:.3e} (tol {:.1e})",
            self.checked, self.kinks, self.max_rel_err, self.rtol
        )?;
        if let Some(w) = &self.worst {
            write!(f, "; worst input {} elem {}: analytic {:.6e} numeric {:.6e}", w.input, w.element, w.analytic, w.numeric)?;
        }
        Ok(())
    }
}

/// Checks gradients at uniform(-1, 1) random inputs of the given shapes.
pub fn check_gradients<T: Real>(
    shapes: &[Vec<usize>],
    seed: u64,
    cfg: GradCheck,
    f: impl Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = shapes
        .iter()
        .map(|s| Tensor::from_fn(s.clone(), |_| T::lit(rng.random_range(-1.0..1.0))))
        .collect::<Vec<_>>();
    let mask = vec![true; inputs.len()];
    check_gradients_at(inputs, &mask, seed, cfg, f)
}

/// Checks gradients w.r.t. every input whose `mask` entry is set.
///
/// A non-scalar output `y` is reduced to `sum(r * y)` with a fixed random `r`,
/// which checks the full vector-Jacobian product. Probes whose one-sided
/// slopes disagree by more than `rtol` are retried at 10x and 100x smaller steps; probes
/// that still disagree are counted as kinks and excluded. The check fails if more than a
/// tenth of the probes are kinks.
pub fn check_gradients_at<T: Real>(
    inputs: Vec<Tensor<T>>,
    mask: &[bool],
    seed: u64,
    cfg: GradCheck,
    f: impl Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut projection: Option<Tensor<T>> = None;

    let mut eval = |inputs: &[Tensor<T>], with_grad: bool| -> Result<(f64, Vec<Option<Tensor<T>>>)> {
        let mut tape = Tape::<T>::new();
        let vars: Vec<Var> = inputs
            .iter()
            .zip(mask)
            .map(|(t, &m)| tape.leaf(t.clone(), m && with_grad))
            .collect();
        let out = f(&mut tape, &vars)?;
        let loss = if tape.value(out).len() == 1 {
            out
        } else {
            let shape = tape.shape(out).to_vec();
            let r = projection
                .get_or_insert_with(|| Tensor::from_fn(shape, |_| T::lit(rng.random_range(-1.0..1.0))))
                .clone();
            let rv = tape.constant(r);
            let p = tape.mul(out, rv)?;
            tape.sum(p)
        };
        let value = tape.value(loss).item().f64();
        if with_grad {
            tape.backward(loss)?;
        }
        let grads = vars.iter().map(|&v| tape.grad(v).cloned()).collect();
        Ok((value, grads))
    };

    let (f0, analytic) = eval(&inputs, true)?;
    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, rtol: cfg.rtol, worst: None, kinks: 0 };
    let mut probe = inputs.clone();
    for (i, grad) in analytic.iter().enumerate() {
        let Some(grad) = grad else { continue };
        for e in 0..probe[i].len() {
            report.checked += 1;
            let mut numeric = None;
            for refine in [1.0, 1e-1, 1e-2] {
                let (slope, smooth) = central_slope(&mut eval, &mut probe, i, e, T::lit(cfg.step * refine), f0, cfg)?;
                if smooth {
                    numeric = Some(slope);
                    break;
                }
            }
            let Some(numeric) = numeric else {
                report.kinks += 1;
                continue;
            };
            let a = grad.data()[e].f64();
            let denom = a.abs().max(numeric.abs()).max(cfg.floor);
            let rel = (a - numeric).abs() / denom;
            if rel > report.max_rel_err || rel.is_nan() {
                report.max_rel_err = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst = Some(Mismatch { input: i, element: e, analytic: a, numeric });
            }
        }
    }
    Ok(report)
}

/// Central difference for one element, plus whether the one-sided slopes agree.
fn central_slope<T: Real>(
    eval: &mut impl FnMut(&[Tensor<T>], bool) -> Result<(f64, Vec<Option<Tensor<T>>>)>,
    probe: &mut [Tensor<T>],
    i: usize,
    e: usize,
    h: T,
    f0: f64,
    cfg: GradCheck,
) -> Result<(f64, bool)> {
    let orig = probe[i].data()[e];
    probe[i].data_mut()[e] = orig + h;
    let (plus, _) = eval(probe, false)?;
    probe[i].data_mut()[e] = orig - h;
    let (minus, _) = eval(probe, false)?;
    probe[i].data_mut()[e] = orig;
    // Use the actually representable step so f32 checks are not biased.
    let step = ((orig + h) - (orig - h)).f64();
    let (right, left) = ((plus - f0) / (step / 2.0), (f0 - minus) / (step / 2.0));
    let smooth = (right - left).abs() <= cfg.rtol * right.abs().max(left.abs()).max(cfg.floor);
    Ok(((plus - minus) / step, smooth))
}
