use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{BackwardRule, Tape, Tensor, Var};

/// 2x2 max pooling with stride 2. Ties resolve to the first element in
/// row-major window order, and the gradient is routed there.
pub fn max_pool_2x2<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let [n, c, h, w] = tape.value(x).dims4("max_pool_2x2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid_shape("max_pool_2x2", format!("spatial size {h}x{w} must be even")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xv = tape.value(x).data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let first = base + 2 * oy * w + 2 * ox;
                let mut best = first;
                for idx in [first + 1, first + w, first + w + 1] {
                    if xv[idx] > xv[best] {
                        best = idx;
                    }
                }
                out.push(xv[best]);
                argmax.push(best as u32);
            }
        }
    }
    let out = Tensor::new(vec![n, c, oh, ow], out)?;
    Ok(tape.push(out, vec![x], MaxPoolRule { argmax }))
}

struct MaxPoolRule {
    argmax: Vec<u32>,
}

impl<T: Real> BackwardRule<T> for MaxPoolRule {
    fn name(&self) -> &'static str {
        "max_pool_2x2"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Vec<Option<Tensor<T>>> {
        let mut gx = Tensor::zeros(inputs[0].shape().to_vec());
        let d = gx.data_mut();
        for (&i, &g) in self.argmax.iter().zip(grad.data()) {
            d[i as usize] += g;
        }
        vec![Some(gx)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, GradCheck};

    #[test]
    fn picks_window_max() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = max_pool_2x2(&mut t, x).unwrap();
        assert_eq!(t.value(y).data(), &[4.0]);
    }

    #[test]
    fn constant_image_halves() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::full([1, 2, 4, 6], 3.0));
        let y = max_pool_2x2(&mut t, x).unwrap();
        assert_eq!(t.shape(y), &[1, 2, 2, 3]);
        assert!(t.value(y).data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn odd_size_is_error() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::zeros([1, 1, 3, 4]));
        assert!(max_pool_2x2(&mut t, x).is_err());
    }

    #[test]
    fn backward_puts_one_per_window_at_argmax() {
        let mut t = Tape::<f64>::new();
        // Includes an all-equal window to pin the tie-break.
        let vals = vec![
            0.5, 0.1, 2.0, 2.0, //
            0.2, 0.3, 2.0, 2.0, //
            -1.0, -3.0, 7.0, 1.0, //
            -0.5, -2.0, 1.0, 8.0,
        ];
        let x = t.leaf(Tensor::new([1, 1, 4, 4], vals.clone()).unwrap(), true);
        let y = max_pool_2x2(&mut t, x).unwrap();
        let s = t.sum(y);
        t.backward(s).unwrap();
        let g = t.grad(x).unwrap().data();
        for wy in 0..2 {
            for wx in 0..2 {
                let idx: Vec<usize> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|(dy, dx)| (2 * wy + dy) * 4 + 2 * wx + dx)
                    .collect();
                let ones = idx.iter().filter(|&&i| g[i] == 1.0).count();
                let zeros = idx.iter().filter(|&&i| g[i] == 0.0).count();
                assert_eq!((ones, zeros), (1, 3));
                // Brute force: the marked element is the first maximum.
                let max = idx.iter().map(|&i| vals[i]).fold(f64::MIN, f64::max);
                let first = *idx.iter().find(|&&i| vals[i] == max).unwrap();
                assert_eq!(g[first], 1.0);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            let report =
                check_gradients::<f64>(&[vec![2, 2, 4, 4]], seed, GradCheck::f64(), |t, v| max_pool_2x2(t, v[0])).unwrap();
            assert!(report.passed(), "seed {seed}: {report}");
        }
    }
}
