//! Short-axis image stacks and the `CQV1` volume file format.
//!
//! ```text
//! CQV1
//! dims S H W
//! spacing_mm x y z
//! dtype f32
//! channels 1|2
//! phase k
//! end
//! <S*H*W little-endian f32 image raster, slice-major>
//! <S*H*W u8 labels when channels is 2>
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Grid, Image, LabelMap};

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledVolume {
    pub slices: usize,
    pub h: usize,
    pub w: usize,
    /// `[slices, h, w]` intensities.
    pub voxels: Vec<f32>,
    /// `[slices, h, w]` classes, 0 background, 1 myocardium, 2 blood pool.
    pub labels: Option<Vec<u8>>,
    /// Voxel size `(x, y, z)` in millimetres.
    pub spacing_mm: (f64, f64, f64),
    pub phase: usize,
}

impl LabeledVolume {
    pub fn new(images: Vec<Image>, labels: Option<Vec<LabelMap>>, spacing_mm: (f64, f64, f64), phase: usize) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::InvalidArgument("volume needs at least one slice".into()))?;
        let (h, w) = (first.h, first.w);
        if images.iter().any(|i| i.h != h || i.w != w) {
            return Err(Error::invalid_shape("volume", "slices differ in size"));
        }
        let (sx, sy, sz) = spacing_mm;
        if !(sx > 0.0 && sy > 0.0 && sz > 0.0) {
            return Err(Error::InvalidArgument(format!("spacing must be positive, got {spacing_mm:?}")));
        }
        let labels = match labels {
            None => None,
            Some(l) => {
                if l.len() != images.len() || l.iter().any(|m| m.h != h || m.w != w) {
                    return Err(Error::invalid_shape("volume", "labels differ in shape from voxels"));
                }
                Some(l.into_iter().flat_map(|m| m.data).collect())
            }
        };
        let slices = images.len();
        let voxels = images.into_iter().flat_map(|i| i.data).collect();
        Ok(Self { slices, h, w, voxels, labels, spacing_mm, phase })
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing_mm.0 * self.spacing_mm.1 * self.spacing_mm.2
    }

    pub fn image(&self, s: usize) -> Image {
        let n = self.h * self.w;
        Grid { h: self.h, w: self.w, data: self.voxels[s * n..(s + 1) * n].to_vec() }
    }

    pub fn label_map(&self, s: usize) -> Option<LabelMap> {
        let n = self.h * self.w;
        self.labels.as_ref().map(|l| Grid { h: self.h, w: self.w, data: l[s * n..(s + 1) * n].to_vec() })
    }

    pub fn label_maps(&self) -> Option<Vec<LabelMap>> {
        (0..self.slices).map(|s| self.label_map(s)).collect()
    }

    pub fn with_labels(mut self, labels: Vec<LabelMap>) -> Result<Self> {
        if labels.len() != self.slices || labels.iter().any(|m| m.h != self.h || m.w != self.w) {
            return Err(Error::invalid_shape("volume", "labels differ in shape from voxels"));
        }
        self.labels = Some(labels.into_iter().flat_map(|m| m.data).collect());
        Ok(self)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (x, y, z) = self.spacing_mm;
        let channels = if self.labels.is_some() { 2 } else { 1 };
        let header = format!(
            "CQV1\ndims {} {} {}\nspacing_mm {x:?} {y:?} {z:?}\ndtype f32\nchannels {channels}\nphase {}\nend\n",
            self.slices, self.h, self.w, self.phase
        );
        let mut out = header.into_bytes();
        out.reserve(self.voxels.len() * 5);
        for v in &self.voxels {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(l) = &self.labels {
            out.extend_from_slice(l);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |offset: usize, detail: String| Error::Format { offset: offset as u64, detail };
        let mut pos = 0usize;
        let mut next_line = |what: &str| -> Result<(usize, Vec<String>)> {
            let start = pos;
            let len = bytes[pos..]
                .iter()
                .take(256)
                .position(|&b| b == b'\n')
                .ok_or_else(|| err(start, format!("expected {what} line")))?;
            pos += len + 1;
            let text = std::str::from_utf8(&bytes[start..start + len]).map_err(|_| err(start, "header is not UTF-8".into()))?;
            Ok((start, text.split_whitespace().map(str::to_string).collect()))
        };
        let (at, magic) = next_line("magic")?;
        if magic != ["CQV1"] {
            return Err(err(at, "bad magic, expected CQV1".into()));
        }
        let (at, dims) = next_line("dims")?;
        let parse_usize = |at: usize, s: &str| s.parse::<usize>().map_err(|_| err(at, format!("bad integer {s:?}")));
        let (s, h, w) = match dims.as_slice() {
            [k, a, b, c] if k == "dims" => (parse_usize(at, a)?, parse_usize(at, b)?, parse_usize(at, c)?),
            _ => return Err(err(at, "expected `dims S H W`".into())),
        };
        if s == 0 || h == 0 || w == 0 {
            return Err(err(at, "dimensions must be positive".into()));
        }
        let (at, sp) = next_line("spacing_mm")?;
        let parse_f = |s: &str| s.parse::<f64>().map_err(|_| err(at, format!("bad spacing {s:?}")));
        let spacing = match sp.as_slice() {
            [k, a, b, c] if k == "spacing_mm" => (parse_f(a)?, parse_f(b)?, parse_f(c)?),
            _ => return Err(err(at, "expected `spacing_mm x y z`".into())),
        };
        if !(spacing.0 > 0.0 && spacing.1 > 0.0 && spacing.2 > 0.0) {
            return Err(err(at, "spacing must be positive".into()));
        }
        let (at, dt) = next_line("dtype")?;
        if dt != ["dtype", "f32"] {
            return Err(err(at, "only `dtype f32` is supported".into()));
        }
        let (at, ch) = next_line("channels")?;
        let channels = match ch.as_slice() {
            [k, c] if k == "channels" && (c == "1" || c == "2") => parse_usize(at, c)?,
            _ => return Err(err(at, "expected `channels 1` or `channels 2`".into())),
        };
        let (at, ph) = next_line("phase")?;
        let phase = match ph.as_slice() {
            [k, p] if k == "phase" => parse_usize(at, p)?,
            _ => return Err(err(at, "expected `phase k`".into())),
        };
        let (at, end) = next_line("end")?;
        if !(end.is_empty() || end == ["end"]) {
            return Err(err(at, "expected `end` after header".into()));
        }
        let n = s * h * w;
        let need = n * 4 + if channels == 2 { n } else { 0 };
        let payload = &bytes[pos..];
        if payload.len() < need {
            return Err(err(bytes.len(), format!("payload truncated: {} of {need} bytes present from offset {pos}", payload.len())));
        }
        if payload.len() > need {
            return Err(err(pos + need, format!("{} unexpected trailing bytes", payload.len() - need)));
        }
        let voxels: Vec<f32> = payload[..n * 4].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(err(pos + 4 * i, "non-finite voxel".into()));
        }
        let labels = if channels == 2 {
            let l = payload[n * 4..].to_vec();
            if let Some(i) = l.iter().position(|&v| v > 2) {
                return Err(err(pos + n * 4 + i, format!("label {} is not a class", l[i])));
            }
            Some(l)
        } else {
            None
        };
        Ok(Self { slices: s, h, w, voxels, labels, spacing_mm: spacing, phase })
    }
}

pub fn write_volume(v: &LabeledVolume, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, v.to_bytes())?;
    Ok(())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<LabeledVolume> {
    LabeledVolume::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> LabeledVolume {
        let images = (0..3).map(|s| Grid::from_fn(4, 5, |y, x| (s * 20 + y * 5 + x) as f32 * 0.1 - 1.0)).collect();
        let labels = (0..3).map(|s| Grid::from_fn(4, 5, |y, x| ((s + y + x) % 3) as u8)).collect();
        LabeledVolume::new(images, Some(labels), (1.25, 1.25, 8.0), 4).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let v = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.cqv");
        write_volume(&v, &p).unwrap();
        let back = read_volume(&p).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_bytes(), v.to_bytes());
        let mut unlabeled = v.clone();
        unlabeled.labels = None;
        assert_eq!(LabeledVolume::from_bytes(&unlabeled.to_bytes()).unwrap(), unlabeled);
    }

    #[test]
    fn hand_written_fixture() {
        let mut bytes = b"CQV1\ndims 2 2 2\nspacing_mm 1.5 1.5 10\ndtype f32\nchannels 2\nphase 3\nend\n".to_vec();
        for v in [0.0f32, 1.0, 2.0, 3.0, -1.0, 0.5, 0.25, 8.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&[0, 1, 2, 1, 0, 0, 2, 2]);
        let v = LabeledVolume::from_bytes(&bytes).unwrap();
        assert_eq!((v.slices, v.h, v.w, v.phase), (2, 2, 2, 3));
        assert_eq!(v.spacing_mm, (1.5, 1.5, 10.0));
        assert_eq!(v.image(1).data, vec![-1.0, 0.5, 0.25, 8.0]);
        assert_eq!(v.label_map(0).unwrap().data, vec![0, 1, 2, 1]);
        assert_eq!(v.voxel_volume_mm3(), 22.5);
    }

    #[test]
    fn truncated_and_corrupt_files_name_offsets() {
        let bytes = sample().to_bytes();
        match LabeledVolume::from_bytes(&bytes[..bytes.len() - 1]) {
            Err(Error::Format { detail, .. }) => assert!(detail.contains("truncated"), "{detail}"),
            other => panic!("{other:?}"),
        }
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(LabeledVolume::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let header_len = bytes.windows(4).position(|w| w == b"end\n").unwrap() + 4;
        let mut bad_label = bytes.clone();
        let last = bad_label.len() - 1;
        bad_label[last] = 7;
        match LabeledVolume::from_bytes(&bad_label) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, last),
            other => panic!("{other:?}"),
        }
        assert!(header_len < bytes.len());
    }
}
