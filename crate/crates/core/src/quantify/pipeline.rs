use crate::error::{Error, Result};
use crate::image::{Grid, Image, LabelMap, BACKGROUND, BLOOD_POOL, MYOCARDIUM, NUM_CLASSES};
use crate::nets::Network;
use crate::real::Real;
use crate::tensor::Tensor;
use crate::volume::LabeledVolume;

use super::physio::{physio, SubjectPhysio};

const PREDICT_BATCH: usize = 8;

/// Class of one pixel from its class probabilities: the argmax if it exceeds
/// 0.5, background otherwise.
pub fn threshold_pixel(probs: &[f64]) -> u8 {
    let (best, p) = probs.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
    if p > 0.5 {
        best as u8
    } else {
        BACKGROUND
    }
}

/// Applies [`threshold_pixel`] to every pixel of `[N, classes, H, W]` probabilities.
pub fn threshold_labels<T: Real>(probs: &Tensor<T>) -> Result<Vec<LabelMap>> {
    let [n, c, h, w] = probs.dims4("threshold")?;
    if c != NUM_CLASSES {
        return Err(Error::invalid_shape("threshold", format!("expected {NUM_CLASSES} classes, got {c}")));
    }
    let plane = h * w;
    let d = probs.data();
    Ok((0..n)
        .map(|b| {
            let base = b * c * plane;
            let mut buf = [0.0; NUM_CLASSES];
            Grid::from_fn(h, w, |y, x| {
                for (k, v) in buf.iter_mut().enumerate() {
                    *v = d[base + k * plane + y * w + x].f64();
                }
                threshold_pixel(&buf)
            })
        })
        .collect())
}

/// Runs `net` in eval mode over single-channel images and thresholds the output.
pub fn segment<T: Real>(images: &[Image], net: &Network<T>) -> Result<Vec<LabelMap>> {
    let (h, w) = net.spec().input_size;
    if let Some(bad) = images.iter().find(|i| i.h != h || i.w != w) {
        return Err(Error::invalid_shape("segment", format!("network expects {h}x{w}, got {}x{}", bad.h, bad.w)));
    }
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(PREDICT_BATCH) {
        let data = chunk.iter().flat_map(|i| i.data.iter().map(|&v| T::lit(v as f64))).collect();
        let x = Tensor::new([chunk.len(), 1, h, w], data)?;
        out.extend(threshold_labels(&net.predict(&x)?)?);
    }
    Ok(out)
}

/// Axis-aligned crop window in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Window {
    pub y0: isize,
    pub x0: isize,
    pub h: usize,
    pub w: usize,
}

impl Window {
    /// Window of size `h x w` whose center pixel is nearest to `(x, y)`.
    pub fn around(center: (f64, f64), h: usize, w: usize) -> Self {
        let (cx, cy) = center;
        Self { y0: cy.round() as isize - (h / 2) as isize, x0: cx.round() as isize - (w / 2) as isize, h, w }
    }

    pub fn apply<T: Copy>(&self, g: &Grid<T>, fill: T) -> Grid<T> {
        g.crop(self.y0, self.x0, self.h, self.w, fill)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Roi {
    /// Center of mass `(x, y)` in native pixels.
    pub center: (f64, f64),
    pub window: Window,
}

/// Center of mass `(x, y)` of the myocardium and blood-pool pixels over a set of masks.
pub fn center_of_mass(masks: &[LabelMap]) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for m in masks {
        for y in 0..m.h {
            for x in 0..m.w {
                let l = m.get(y, x);
                if l == MYOCARDIUM || l == BLOOD_POOL {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1;
                }
            }
        }
    }
    (n > 0).then(|| (sx / n as f64, sy / n as f64))
}

/// Slices used for ROI detection: the middle half of the stack.
pub fn mid_stack(slices: usize) -> std::ops::Range<usize> {
    let q = slices / 4;
    if slices - 2 * q == 0 {
        0..slices
    } else {
        q..slices - q
    }
}

/// Majority label over `f x f` blocks (ties go to the higher class).
pub fn downsample_labels(l: &LabelMap, f: usize) -> LabelMap {
    Grid::from_fn(l.h / f, l.w / f, |y, x| {
        let mut counts = [0usize; NUM_CLASSES];
        for dy in 0..f {
            for dx in 0..f {
                counts[l.get(y * f + dy, x * f + dx) as usize] += 1;
            }
        }
        (0..NUM_CLASSES).rev().max_by_key(|&c| counts[c]).unwrap_or(0) as u8
    })
}

/// Ratio between native and ROI-network resolution.
pub fn roi_factor<T: Real>(vol: &LabeledVolume, roi_net: &Network<T>) -> Result<usize> {
    let (h, w) = roi_net.spec().input_size;
    if vol.h % h != 0 || vol.w % w != 0 || vol.h / h != vol.w / w {
        return Err(Error::invalid_shape("detect_roi", format!("{}x{} is not an integer multiple of {h}x{w}", vol.h, vol.w)));
    }
    Ok(vol.h / h)
}

/// Locates the ventricle on an end-diastolic stack with a low-resolution network and
/// returns the `crop`-sized window centered on it.
pub fn detect_roi<T: Real>(vol_ed: &LabeledVolume, roi_net: &Network<T>, crop: (usize, usize)) -> Result<Roi> {
    let f = roi_factor(vol_ed, roi_net)?;
    let low = mid_stack(vol_ed.slices).map(|s| vol_ed.image(s).downsample_mean(f)).collect::<Result<Vec<_>>>()?;
    let masks: Vec<LabelMap> = segment(&low, roi_net)?.into_iter().map(|m| m.upsample(f)).collect();
    let center = center_of_mass(&masks).ok_or_else(|| Error::RoiNotFound("no ventricle pixels predicted on the mid-stack slices".into()))?;
    Ok(Roi { center, window: Window::around(center, crop.0, crop.1) })
}

#[derive(Clone, Debug)]
pub struct SubjectAnalysis {
    pub roi: Roi,
    /// Cropped per-phase volumes carrying the predicted labels.
    pub segmented: Vec<LabeledVolume>,
    pub physio: SubjectPhysio,
}

/// Crops every slice of `vol` to `window`.
pub fn crop_volume(vol: &LabeledVolume, window: &Window) -> Result<LabeledVolume> {
    let images = (0..vol.slices).map(|s| window.apply(&vol.image(s), 0.0)).collect();
    let labels = vol.label_maps().map(|ls| ls.iter().map(|l| window.apply(l, BACKGROUND)).collect());
    LabeledVolume::new(images, labels, vol.spacing_mm, vol.phase)
}

/// ROI detection on the first phase, then cropping, segmentation and measures
/// over every phase.
pub fn analyze_subject<T: Real>(
    phases: &[LabeledVolume],
    roi_net: &Network<T>,
    seg_net: &Network<T>,
    heart_rate_bpm: f64,
) -> Result<SubjectAnalysis> {
    let first = phases.first().ok_or_else(|| Error::InvalidArgument("no phases given".into()))?;
    let roi = detect_roi(first, roi_net, seg_net.spec().input_size)?;
    let segmented = phases
        .iter()
        .map(|v| {
            let crop = crop_volume(v, &roi.window)?;
            let images: Vec<Image> = (0..crop.slices).map(|s| crop.image(s)).collect();
            let labels = segment(&images, seg_net)?;
            crop.with_labels(labels)
        })
        .collect::<Result<Vec<_>>>()?;
    let physio = physio(&segmented, heart_rate_bpm)?;
    Ok(SubjectAnalysis { roi, segmented, physio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Family, NetworkSpec};

    #[test]
    fn threshold_rule_examples() {
        assert_eq!(threshold_pixel(&[0.1, 0.2, 0.7]), 2);
        assert_eq!(threshold_pixel(&[0.4, 0.35, 0.25]), 0);
        assert_eq!(threshold_pixel(&[0.2, 0.5, 0.3]), 0);
        assert_eq!(threshold_pixel(&[0.05, 0.9, 0.05]), 1);
    }

    #[test]
    fn threshold_labels_matches_per_pixel_rule() {
        let t = Tensor::<f32>::new([1, 3, 1, 2], vec![0.1, 0.4, 0.2, 0.35, 0.7, 0.25]).unwrap();
        assert_eq!(threshold_labels(&t).unwrap()[0].data, vec![2, 0]);
        assert!(threshold_labels(&Tensor::<f32>::zeros([1, 2, 1, 1])).is_err());
    }

    fn disk(n: usize, cx: f64, cy: f64, r: f64) -> LabelMap {
        Grid::from_fn(n, n, |y, x| if ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt() < r { BLOOD_POOL } else { 0 })
    }

    #[test]
    fn center_of_centered_disk() {
        let (cx, cy) = center_of_mass(&[disk(64, 31.5, 31.5, 10.0)]).unwrap();
        assert!((cx - 31.5).abs() < 0.5 && (cy - 31.5).abs() < 0.5);
        assert!(center_of_mass(&[Grid::filled(4, 4, 0)]).is_none());
    }

    #[test]
    fn center_translates_with_mask() {
        let a = center_of_mass(&[disk(64, 30.0, 30.0, 8.0)]).unwrap();
        let b = center_of_mass(&[disk(64, 40.0, 24.0, 8.0)]).unwrap();
        assert!((b.0 - a.0 - 10.0).abs() < 1e-12 && (b.1 - a.1 + 6.0).abs() < 1e-12);
    }

    #[test]
    fn window_is_centered_and_padded() {
        let w = Window::around((3.2, 2.7), 4, 4);
        assert_eq!((w.y0, w.x0), (1, 1));
        let g = Grid::from_fn(4, 4, |y, x| (y * 4 + x) as u8 + 1);
        let c = w.apply(&g, 0);
        assert_eq!(c.get(0, 0), g.get(1, 1));
        assert_eq!(c.get(3, 3), 0);
    }

    #[test]
    fn label_downsampling_takes_the_majority() {
        let l = Grid::new(2, 4, vec![1, 1, 2, 0, 1, 0, 2, 0]).unwrap();
        assert_eq!(downsample_labels(&l, 2).data, vec![1, 0]);
    }

    #[test]
    fn segment_rejects_wrong_size_and_empty_roi_errors() {
        let spec = NetworkSpec::miniature(Family::UnetBnRl, 2, 4, 16);
        let mut net = Network::<f32>::build(&spec, 1).unwrap();
        net.initialize_running_stats();
        assert!(segment(&[Grid::filled(8, 8, 0.0)], &net).is_err());
        // Force every pixel to background by biasing the head.
        let head = net.param_names().position(|n| n.contains("classifier") && n.ends_with("bias")).unwrap();
        net.params_mut()[head].data_mut().copy_from_slice(&[50.0, -50.0, -50.0]);
        let vol = LabeledVolume::new(vec![Grid::filled(32, 32, 0.5)], None, (1.0, 1.0, 1.0), 0).unwrap();
        assert!(matches!(detect_roi(&vol, &net, (16, 16)), Err(Error::RoiNotFound(_))));
    }
}
