//! Row-major 2D rasters for images and label maps.

use crate::error::{Error, Result};

pub const BACKGROUND: u8 = 0;
pub const MYOCARDIUM: u8 = 1;
pub const BLOOD_POOL: u8 = 2;
pub const NUM_CLASSES: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

pub type Image = Grid<f32>;
pub type LabelMap = Grid<u8>;

impl<T: Copy> Grid<T> {
    pub fn new(h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::invalid_shape("grid", format!("{h}x{w} grid with {} values", data.len())));
        }
        Ok(Self { h, w, data })
    }

    pub fn filled(h: usize, w: usize, v: T) -> Self {
        Self { h, w, data: vec![v; h * w] }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        Self { h, w, data }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: T) {
        self.data[y * self.w + x] = v;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid { h: self.h, w: self.w, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn same_size<U>(&self, other: &Grid<U>) -> bool {
        self.h == other.h && self.w == other.w
    }

    /// Window of size `h x w` with top-left corner `(y0, x0)`, which may lie
    /// outside; uncovered pixels take `fill`.
    pub fn crop(&self, y0: isize, x0: isize, h: usize, w: usize, fill: T) -> Grid<T> {
        Grid::from_fn(h, w, |y, x| {
            let (sy, sx) = (y0 + y as isize, x0 + x as isize);
            if sy >= 0 && sx >= 0 && (sy as usize) < self.h && (sx as usize) < self.w {
                self.get(sy as usize, sx as usize)
            } else {
                fill
            }
        })
    }
}

impl Image {
    /// Mean over `f x f` blocks.
    pub fn downsample_mean(&self, f: usize) -> Result<Image> {
        if f == 0 || self.h % f != 0 || self.w % f != 0 {
            return Err(Error::invalid_shape("downsample", format!("{}x{} not divisible by {f}", self.h, self.w)));
        }
        let inv = 1.0 / (f * f) as f32;
        Ok(Grid::from_fn(self.h / f, self.w / f, |y, x| {
            let mut s = 0.0;
            for dy in 0..f {
                for dx in 0..f {
                    s += self.get(y * f + dy, x * f + dx);
                }
            }
            s * inv
        }))
    }
}

impl<T: Copy> Grid<T> {
    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&self, f: usize) -> Grid<T> {
        Grid::from_fn(self.h * f, self.w * f, |y, x| self.get(y / f, x / f))
    }
}

/// Number of 4-connected components of the set pixels.
pub fn connected_components(mask: &Grid<bool>) -> usize {
    let mut seen = vec![false; mask.data.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..mask.data.len() {
        if !mask.data[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x) = (i / mask.w, i % mask.w);
            let mut visit = |j: usize| {
                if mask.data[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if y > 0 {
                visit(i - mask.w);
            }
            if y + 1 < mask.h {
                visit(i + mask.w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < mask.w {
                visit(i + 1);
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_components() {
        let m = Grid::new(3, 4, vec![true, false, true, true, false, false, false, true, true, false, true, false]).unwrap();
        assert_eq!(connected_components(&m), 4);
        assert_eq!(connected_components(&Grid::filled(2, 2, false)), 0);
    }

    #[test]
    fn crop_pads_outside() {
        let g = Grid::from_fn(3, 3, |y, x| (y * 3 + x) as u8);
        let c = g.crop(-1, 1, 3, 3, 9);
        assert_eq!(c.data, vec![9, 9, 9, 1, 2, 9, 4, 5, 9]);
    }

    #[test]
    fn downsample_and_upsample() {
        let g = Grid::from_fn(4, 4, |y, x| (y * 4 + x) as f32);
        let d = g.downsample_mean(2).unwrap();
        assert_eq!(d.data, vec![2.5, 4.5, 10.5, 12.5]);
        assert_eq!(d.upsample(2).get(3, 3), 12.5);
        assert!(g.downsample_mean(3).is_err());
    }
}
