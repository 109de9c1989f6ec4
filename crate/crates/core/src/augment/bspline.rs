//! Cubic B-spline interpolation with mirror-symmetric boundaries.

use crate::image::Image;

const POLE: f64 = -0.267_949_192_431_122_7; // sqrt(3) - 2
const TOLERANCE: f64 = 1e-12;

/// Interpolation coefficients of an image.
#[derive(Clone, Debug)]
pub struct BSpline {
    h: usize,
    w: usize,
    coeffs: Vec<f64>,
    raw: Vec<f32>,
}

fn causal_init(c: &[f64]) -> f64 {
    let n = c.len();
    let z = POLE;
    let horizon = (TOLERANCE.ln() / z.abs().ln()).ceil() as usize;
    if horizon < n {
        let mut zn = z;
        let mut sum = c[0];
        for &v in &c[1..horizon] {
            sum += zn * v;
            zn *= z;
        }
        sum
    } else {
        let mut zn = z;
        let iz = 1.0 / z;
        let mut z2n = z.powi(n as i32 - 1);
        let mut sum = c[0] + z2n * c[n - 1];
        z2n *= z2n * iz;
        for &v in &c[1..n - 1] {
            sum += (zn + z2n) * v;
            zn *= z;
            z2n *= iz;
        }
        sum / (1.0 - zn * zn)
    }
}

fn prefilter_line(c: &mut [f64]) {
    let n = c.len();
    if n < 2 {
        return;
    }
    let z = POLE;
    let lambda = (1.0 - z) * (1.0 - 1.0 / z);
    c.iter_mut().for_each(|v| *v *= lambda);
    c[0] = causal_init(c);
    for i in 1..n {
        c[i] += z * c[i - 1];
    }
    c[n - 1] = (z / (z * z - 1.0)) * (z * c[n - 2] + c[n - 1]);
    for i in (0..n - 1).rev() {
        c[i] = z * (c[i + 1] - c[i]);
    }
}

#[inline]
fn mirror(k: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut k = k.rem_euclid(period);
    if k >= n as isize {
        k = period - k;
    }
    k as usize
}

#[inline]
fn weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    let u = 1.0 - t;
    [u * u * u / 6.0, (4.0 - 6.0 * t2 + 3.0 * t3) / 6.0, (1.0 + 3.0 * t + 3.0 * t2 - 3.0 * t3) / 6.0, t3 / 6.0]
}

impl BSpline {
    pub fn new(img: &Image) -> Self {
        let (h, w) = (img.h, img.w);
        let mut coeffs: Vec<f64> = img.data.iter().map(|&v| v as f64).collect();
        for row in coeffs.chunks_mut(w) {
            prefilter_line(row);
        }
        let mut col = vec![0.0; h];
        for x in 0..w {
            for y in 0..h {
                col[y] = coeffs[y * w + x];
            }
            prefilter_line(&mut col);
            for y in 0..h {
                coeffs[y * w + x] = col[y];
            }
        }
        Self { h, w, coeffs, raw: img.data.clone() }
    }

    /// The spline itself at `(x, y)` (column, row), with mirrored coefficients.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let (ix, iy) = (x.floor(), y.floor());
        let (wx, wy) = (weights(x - ix), weights(y - iy));
        let (ix, iy) = (ix as isize, iy as isize);
        let mut acc = 0.0;
        for (j, wyj) in wy.iter().enumerate() {
            let row = mirror(iy - 1 + j as isize, self.h) * self.w;
            let mut r = 0.0;
            for (i, wxi) in wx.iter().enumerate() {
                r += wxi * self.coeffs[row + mirror(ix - 1 + i as isize, self.w)];
            }
            acc += wyj * r;
        }
        acc
    }

    /// Interpolated intensity; zero outside `[0, W-1] x [0, H-1]`, and the raw
    /// pixel at exactly integral coordinates.
    pub fn sample(&self, x: f64, y: f64) -> f32 {
        if !(0.0..=(self.w - 1) as f64).contains(&x) || !(0.0..=(self.h - 1) as f64).contains(&y) {
            return 0.0;
        }
        if x.fract() == 0.0 && y.fract() == 0.0 {
            return self.raw[y as usize * self.w + x as usize];
        }
        self.eval(x, y) as f32
    }
}

/// One-off cubic B-spline sample of `img` at `(x, y)`.
pub fn bspline_sample(img: &Image, x: f64, y: f64) -> f32 {
    BSpline::new(img).sample(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_image_stays_constant() {
        let img = Grid::filled(9, 7, 0.625f32);
        let s = BSpline::new(&img);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let (x, y) = (rng.random_range(0.0..6.0), rng.random_range(0.0..8.0));
            assert!((s.eval(x, y) - 0.625).abs() < 1e-9);
        }
    }

    #[test]
    fn spline_interpolates_at_integers() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (h, w) in [(2, 3), (8, 8), (13, 21), (40, 32)] {
            let img = Grid::from_fn(h, w, |_, _| rng.random_range(-1.0f32..1.0));
            let s = BSpline::new(&img);
            for y in 0..h {
                for x in 0..w {
                    assert!((s.eval(x as f64, y as f64) - img.get(y, x) as f64).abs() < 1e-5, "{h}x{w} at {y},{x}");
                }
            }
        }
    }

    #[test]
    fn ramp_is_linear_between_pixels_in_the_interior() {
        let img = Grid::from_fn(32, 32, |y, x| 0.25 * x as f32 - 0.5 * y as f32 + 3.0);
        let s = BSpline::new(&img);
        for yi in 8..23 {
            for xi in 8..23 {
                let (x, y) = (xi as f64 + 0.5, yi as f64 + 0.5);
                let expect = 0.25 * x - 0.5 * y + 3.0;
                assert!((s.eval(x, y) - expect).abs() < 1e-4, "({x},{y})");
            }
        }
    }

    #[test]
    fn outside_is_zero() {
        let img = Grid::filled(4, 4, 1.0f32);
        assert_eq!(bspline_sample(&img, -0.01, 1.0), 0.0);
        assert_eq!(bspline_sample(&img, 1.0, 3.01), 0.0);
        assert_eq!(bspline_sample(&img, 3.0, 3.0), 1.0);
    }

    #[test]
    fn mirror_indexing() {
        assert_eq!((-2..7).map(|k| mirror(k, 4)).collect::<Vec<_>>(), vec![2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }
}
