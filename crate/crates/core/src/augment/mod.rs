//! Seeded geometric augmentation of image/label pairs.

mod bspline;

pub use bspline::{bspline_sample, BSpline};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Grid, Image, LabelMap, BACKGROUND};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Maximum shift as a fraction of the image size.
    pub shift_frac: f64,
    pub rot_deg: f64,
    /// Zoom factors are drawn log-uniformly in `[1/zoom_max, zoom_max]`.
    pub zoom_max: f64,
    pub elastic_sigma_range: [f64; 2],
    pub seed: u64,
    /// Corpus size for [`expand_corpus`].
    pub target_count: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { shift_frac: 0.10, rot_deg: 10.0, zoom_max: 2.0, elastic_sigma_range: [0.7, 1.2], seed: 0, target_count: 20_000 }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.elastic_sigma_range;
        if !(self.shift_frac > 0.0 && self.rot_deg > 0.0 && self.zoom_max > 1.0 && lo > 0.0 && hi > 0.0) {
            return Err(Error::InvalidArgument(format!("augmentation ranges must be positive: {self:?}")));
        }
        if lo > hi {
            return Err(Error::InvalidArgument(format!("elastic sigma range [{lo}, {hi}] is not ordered")));
        }
        Ok(())
    }
}

/// Displacement field in pixels, one component per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub dx: Grid<f64>,
    pub dy: Grid<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Transform {
    /// Whole-pixel translation: output(y, x) = input(y - dy, x - dx).
    Shift { dx: i64, dy: i64 },
    /// Counter-clockwise rotation about the image center.
    Rotate { deg: f64 },
    /// Magnification about the image center.
    Zoom { factor: f64 },
    Elastic { sigma: f64, field: Field },
}

/// Per-pixel i.i.d. `N(0, sigma)` displacements.
pub fn elastic_field(h: usize, w: usize, sigma: f64, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Field> {
    let [lo, hi] = cfg.elastic_sigma_range;
    if !(lo..=hi).contains(&sigma) {
        return Err(Error::InvalidArgument(format!("elastic sigma {sigma} outside [{lo}, {hi}]")));
    }
    let d = Normal::new(0.0, sigma).expect("positive sigma");
    let dx = Grid::from_fn(h, w, |_, _| d.sample(rng));
    let dy = Grid::from_fn(h, w, |_, _| d.sample(rng));
    Ok(Field { dx, dy })
}

/// Draws one transform uniformly among shift, rotation, zoom and elastic.
pub fn draw_transform(h: usize, w: usize, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Transform> {
    cfg.validate()?;
    Ok(match rng.random_range(0..4) {
        0 => {
            let (mx, my) = ((cfg.shift_frac * w as f64).round() as i64, (cfg.shift_frac * h as f64).round() as i64);
            Transform::Shift { dx: rng.random_range(-mx..=mx), dy: rng.random_range(-my..=my) }
        }
        1 => Transform::Rotate { deg: rng.random_range(-cfg.rot_deg..=cfg.rot_deg) },
        2 => {
            let l = cfg.zoom_max.ln();
            Transform::Zoom { factor: rng.random_range(-l..=l).exp() }
        }
        _ => {
            let [lo, hi] = cfg.elastic_sigma_range;
            let sigma = rng.random_range(lo..=hi);
            Transform::Elastic { sigma, field: elastic_field(h, w, sigma, cfg, rng)? }
        }
    })
}

/// Source coordinates `(x, y)` sampled by output pixel `(px, py)`; `None` for
/// pure raster shifts.
fn source_coords(t: &Transform, h: usize, w: usize) -> Option<Grid<(f64, f64)>> {
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    match t {
        Transform::Shift { .. } => None,
        Transform::Rotate { deg } => {
            let (s, c) = deg.to_radians().sin_cos();
            // Inverse rotation of the output position.
            Some(Grid::from_fn(h, w, |py, px| {
                let (x, y) = (px as f64 - cx, py as f64 - cy);
                (c * x + s * y + cx, -s * x + c * y + cy)
            }))
        }
        Transform::Zoom { factor } => {
            Some(Grid::from_fn(h, w, |py, px| ((px as f64 - cx) / factor + cx, (py as f64 - cy) / factor + cy)))
        }
        Transform::Elastic { field, .. } => {
            Some(Grid::from_fn(h, w, |py, px| (px as f64 + field.dx.get(py, px), py as f64 + field.dy.get(py, px))))
        }
    }
}

fn shift_raster<T: Copy>(g: &Grid<T>, dx: i64, dy: i64, fill: T) -> Grid<T> {
    g.crop(-dy as isize, -dx as isize, g.h, g.w, fill)
}

/// Nearest-neighbour resampling at the given source coordinates.
pub fn warp_nearest<T: Copy>(g: &Grid<T>, coords: &Grid<(f64, f64)>, fill: T) -> Grid<T> {
    coords.map(|(x, y)| {
        let (ix, iy) = ((x + 0.5).floor(), (y + 0.5).floor());
        if ix >= 0.0 && iy >= 0.0 && (ix as usize) < g.w && (iy as usize) < g.h {
            g.get(iy as usize, ix as usize)
        } else {
            fill
        }
    })
}

pub fn warp_bspline(img: &Image, coords: &Grid<(f64, f64)>) -> Image {
    let s = BSpline::new(img);
    coords.map(|(x, y)| s.sample(x, y))
}

/// Applies `t` to the image (cubic B-spline) and labels (nearest neighbour).
pub fn apply_transform(img: &Image, labels: &LabelMap, t: &Transform) -> Result<(Image, LabelMap)> {
    if !img.same_size(labels) {
        return Err(Error::invalid_shape("augment", format!("image {}x{} vs labels {}x{}", img.h, img.w, labels.h, labels.w)));
    }
    if let Transform::Elastic { field, .. } = t {
        if !img.same_size(&field.dx) || !img.same_size(&field.dy) {
            return Err(Error::invalid_shape("augment", "displacement field size differs from image"));
        }
    }
    Ok(match source_coords(t, img.h, img.w) {
        None => {
            let Transform::Shift { dx, dy } = *t else { unreachable!() };
            (shift_raster(img, dx, dy, 0.0), shift_raster(labels, dx, dy, BACKGROUND))
        }
        Some(c) => (warp_bspline(img, &c), warp_nearest(labels, &c, BACKGROUND)),
    })
}

/// Draws one transform and applies it to the pair.
pub fn augment_pair(img: &Image, labels: &LabelMap, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<(Image, LabelMap)> {
    if !img.same_size(labels) {
        return Err(Error::invalid_shape("augment", format!("image {}x{} vs labels {}x{}", img.h, img.w, labels.h, labels.w)));
    }
    let t = draw_transform(img.h, img.w, cfg, rng)?;
    apply_transform(img, labels, &t)
}

/// Independent random stream for sample `index` under `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Expands a corpus to `cfg.target_count` pairs by cycling through the
/// sources; each output sample uses its own stream.
pub fn expand_corpus(pairs: &[(Image, LabelMap)], cfg: &AugmentConfig) -> Result<Vec<(Image, LabelMap)>> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("cannot expand an empty corpus".into()));
    }
    (0..cfg.target_count)
        .map(|i| {
            let (img, lab) = &pairs[i % pairs.len()];
            augment_pair(img, lab, cfg, &mut sample_rng(cfg.seed, i as u64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn phantom_pair(n: usize) -> (Image, LabelMap) {
        let c = (n as f64 - 1.0) / 2.0;
        let lab = Grid::from_fn(n, n, |y, x| {
            let r = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
            if r < n as f64 * 0.15 {
                2
            } else if r < n as f64 * 0.25 {
                1
            } else {
                0
            }
        });
        let img = lab.map(|l| [0.1f32, 0.5, 0.9][l as usize]);
        (img, lab)
    }

    #[test]
    fn identity_transforms_are_exact() {
        let (img, lab) = phantom_pair(33);
        let zero = Field { dx: Grid::filled(33, 33, 0.0), dy: Grid::filled(33, 33, 0.0) };
        for t in [
            Transform::Shift { dx: 0, dy: 0 },
            Transform::Rotate { deg: 0.0 },
            Transform::Zoom { factor: 1.0 },
            Transform::Elastic { sigma: 1.0, field: zero },
        ] {
            let (i2, l2) = apply_transform(&img, &lab, &t).unwrap();
            assert_eq!(i2, img, "{t:?}");
            assert_eq!(l2, lab, "{t:?}");
        }
    }

    #[test]
    fn integer_shift_is_raster_translation() {
        let img = Grid::from_fn(8, 9, |y, x| 1.0 + (y * 9 + x) as f32);
        let lab = img.map(|v| (v as u8) % 3);
        let (i2, l2) = apply_transform(&img, &lab, &Transform::Shift { dx: 3, dy: -2 }).unwrap();
        for y in 0..8 {
            for x in 0..9 {
                let (sy, sx) = (y as i64 + 2, x as i64 - 3);
                let inside = (0..8).contains(&sy) && (0..9).contains(&sx);
                let ei = if inside { img.get(sy as usize, sx as usize) } else { 0.0 };
                let el = if inside { lab.get(sy as usize, sx as usize) } else { 0 };
                assert_eq!((i2.get(y, x), l2.get(y, x)), (ei, el));
            }
        }
        let inputs: BTreeSet<u32> = img.data.iter().map(|v| v.to_bits()).chain([0f32.to_bits()]).collect();
        assert!(i2.data.iter().all(|v| inputs.contains(&v.to_bits())));
    }

    #[test]
    fn elastic_keeps_label_set() {
        let (img, lab) = phantom_pair(48);
        let cfg = AugmentConfig::default();
        let classes: BTreeSet<u8> = lab.data.iter().copied().collect();
        for seed in 0..20 {
            let mut rng = sample_rng(seed, 0);
            let field = elastic_field(48, 48, 1.2, &cfg, &mut rng).unwrap();
            let (_, l2) = apply_transform(&img, &lab, &Transform::Elastic { sigma: 1.2, field }).unwrap();
            let out: BTreeSet<u8> = l2.data.iter().copied().collect();
            assert!(out.is_subset(&classes));
        }
    }

    #[test]
    fn field_statistics() {
        let cfg = AugmentConfig::default();
        let mut stds = Vec::new();
        for seed in 0..20 {
            let mut rng = sample_rng(seed, 7);
            let sigma = 0.7 + 0.025 * seed as f64;
            let f = elastic_field(128, 128, sigma, &cfg, &mut rng).unwrap();
            for g in [&f.dx, &f.dy] {
                let n = g.data.len() as f64;
                let m = g.data.iter().sum::<f64>() / n;
                assert!(m.abs() < 3.0 * sigma / 128.0, "mean {m}");
                let s = (g.data.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
                assert!((s / sigma - 1.0).abs() < 0.1);
                stds.push(s / sigma);
            }
        }
        assert_eq!(stds.len(), 40);
    }

    #[test]
    fn sigma_range_is_enforced() {
        let cfg = AugmentConfig::default();
        let mut rng = sample_rng(0, 0);
        assert!(elastic_field(4, 4, 0.7, &cfg, &mut rng).is_ok());
        assert!(elastic_field(4, 4, 1.2, &cfg, &mut rng).is_ok());
        assert!(elastic_field(4, 4, 0.69, &cfg, &mut rng).is_err());
        assert!(elastic_field(4, 4, 1.21, &cfg, &mut rng).is_err());
    }

    #[test]
    fn size_mismatch_is_error() {
        let img = Grid::filled(4, 4, 0.0f32);
        let lab = Grid::filled(4, 5, 0u8);
        assert!(augment_pair(&img, &lab, &AugmentConfig::default(), &mut sample_rng(0, 0)).is_err());
    }

    #[test]
    fn mask_as_image_matches_label_path() {
        let (img, lab) = phantom_pair(40);
        let cfg = AugmentConfig::default();
        for i in 0..40 {
            let t = draw_transform(40, 40, &cfg, &mut sample_rng(3, i)).unwrap();
            let (_, l2) = apply_transform(&img, &lab, &t).unwrap();
            let as_image = lab.map(|l| l as f32);
            let warped = match source_coords(&t, 40, 40) {
                Some(c) => warp_nearest(&as_image, &c, 0.0),
                None => {
                    let Transform::Shift { dx, dy } = t else { unreachable!() };
                    shift_raster(&as_image, dx, dy, 0.0)
                }
            };
            assert_eq!(warped.map(|v| v as u8), l2);
        }
    }

    #[test]
    fn corpus_expansion_is_deterministic() {
        let pairs = vec![phantom_pair(24), phantom_pair(24)];
        let cfg = AugmentConfig { target_count: 12, seed: 5, ..Default::default() };
        let a = expand_corpus(&pairs, &cfg).unwrap();
        let b = expand_corpus(&pairs, &cfg).unwrap();
        assert_eq!(a.len(), 12);
        let bits = |v: &Vec<(Image, LabelMap)>| -> Vec<u32> { v.iter().flat_map(|(i, _)| i.data.iter().map(|x| x.to_bits())).collect() };
        assert_eq!(bits(&a), bits(&b));
        assert!(a.iter().zip(&b).all(|(x, y)| x.1 == y.1));
    }
}
