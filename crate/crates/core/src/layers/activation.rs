use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{BackwardRule, Tape, Tensor, Var};

pub fn relu<T: Real>(tape: &mut Tape<T>, x: Var) -> Var {
    let out = tape.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
    tape.push(out, vec![x], ReluRule)
}

struct ReluRule;

impl<T: Real> BackwardRule<T> for ReluRule {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, _: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let data = grad.data().iter().zip(output.data()).map(|(&g, &y)| if y > T::zero() { g } else { T::zero() }).collect();
        vec![Some(Tensor::new(grad.shape().to_vec(), data).expect("shape"))]
    }
}

/// Softmax across the channel axis at every pixel.
pub fn softmax_channels<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let [n, c, h, w] = tape.value(x).dims4("softmax_channels")?;
    let hw = h * w;
    let xv = tape.value(x).data();
    let mut out = vec![T::zero(); xv.len()];
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let mut max = T::neg_infinity();
            for ch in 0..c {
                max = max.max(xv[base + ch * hw + p]);
            }
            let mut z = T::zero();
            for ch in 0..c {
                let e = (xv[base + ch * hw + p] - max).exp();
                out[base + ch * hw + p] = e;
                z += e;
            }
            for ch in 0..c {
                out[base + ch * hw + p] /= z;
            }
        }
    }
    let out = Tensor::new(vec![n, c, h, w], out)?;
    Ok(tape.push(out, vec![x], SoftmaxRule))
}

struct SoftmaxRule;

impl<T: Real> BackwardRule<T> for SoftmaxRule {
    fn name(&self) -> &'static str {
        "softmax_channels"
    }

    fn backward(&self, _: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let [n, c, h, w] = output.dims4("softmax").expect("checked");
        let hw = h * w;
        let (y, g) = (output.data(), grad.data());
        let mut gx = vec![T::zero(); y.len()];
        for b in 0..n {
            let base = b * c * hw;
            for p in 0..hw {
                let mut dot = T::zero();
                for ch in 0..c {
                    dot += g[base + ch * hw + p] * y[base + ch * hw + p];
                }
                for ch in 0..c {
                    let i = base + ch * hw + p;
                    gx[i] = y[i] * (g[i] - dot);
                }
            }
        }
        vec![Some(Tensor::new(output.shape().to_vec(), gx).expect("shape"))]
    }
}

/// Stacks the channels of `a` followed by those of `b`.
pub fn concat_channels<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let [na, ca, ha, wa] = tape.value(a).dims4("concat_channels")?;
    let [nb, cb, hb, wb] = tape.value(b).dims4("concat_channels")?;
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(Error::shape("concat_channels", tape.shape(a), tape.shape(b)));
    }
    let hw = ha * wa;
    let (av, bv) = (tape.value(a).data(), tape.value(b).data());
    let mut out = Vec::with_capacity(av.len() + bv.len());
    for s in 0..na {
        out.extend_from_slice(&av[s * ca * hw..(s + 1) * ca * hw]);
        out.extend_from_slice(&bv[s * cb * hw..(s + 1) * cb * hw]);
    }
    let out = Tensor::new(vec![na, ca + cb, ha, wa], out)?;
    Ok(tape.push(out, vec![a, b], ConcatRule { ca, cb, hw }))
}

struct ConcatRule {
    ca: usize,
    cb: usize,
    hw: usize,
}

impl<T: Real> BackwardRule<T> for ConcatRule {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, wants: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (la, lb) = (self.ca * self.hw, self.cb * self.hw);
        let n = grad.len() / (la + lb);
        let g = grad.data();
        let split = |off: usize, len: usize, shape: &[usize]| {
            let mut d = Vec::with_capacity(n * len);
            for s in 0..n {
                d.extend_from_slice(&g[s * (la + lb) + off..][..len]);
            }
            Tensor::new(shape.to_vec(), d).expect("shape")
        };
        vec![
            wants[0].then(|| split(0, la, inputs[0].shape())),
            wants[1].then(|| split(la, lb, inputs[1].shape())),
        ]
    }
}
