//! Synthetic short-axis cine studies with analytically known volumes.
//!
//! Every slice is a blood-pool disk inside a myocardial annulus. Radii shrink
//! toward the apex and contract from end-diastole (phase 0) to end-systole
//! (mid-cycle) with a cosine profile; the myocardial cross-section area is
//! conserved over the cycle.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Grid, Image, LabelMap, BACKGROUND, BLOOD_POOL, MYOCARDIUM};
use crate::quantify::Measures;
use crate::volume::LabeledVolume;

pub const BACKGROUND_LEVEL: f32 = 0.12;
pub const MYOCARDIUM_LEVEL: f32 = 0.42;
pub const BLOOD_LEVEL: f32 = 0.90;
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub n_slices: usize,
    pub slice_thickness_mm: f64,
    pub slice_gap_mm: f64,
    pub pixel_mm: f64,
    /// `(H, W)`.
    pub image_size: (usize, usize),
    pub phases: usize,
    /// Basal blood-pool radius at end-diastole.
    pub ed_endo_radius_mm: f64,
    /// End-systolic over end-diastolic blood-pool radius.
    pub es_radius_ratio: f64,
    /// End-diastolic wall thickness.
    pub wall_thickness_mm: f64,
    /// Apical over basal radius.
    pub apex_taper: f64,
    /// Offset `(x, y)` of the ventricle axis from the image center.
    pub center_offset_mm: (f64, f64),
    /// Std of the per-slice in-plane displacement of the ventricle.
    pub center_jitter_mm: f64,
    pub noise_std: f64,
    /// Intensity gain.
    pub contrast: f64,
    pub heart_rate_bpm: f64,
    /// Adds an apical cap slice with myocardium but no blood pool.
    pub hard_apex: bool,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            n_slices: 10,
            slice_thickness_mm: 10.0,
            slice_gap_mm: 0.0,
            pixel_mm: 1.8,
            image_size: (128, 128),
            phases: 20,
            ed_endo_radius_mm: 24.0,
            es_radius_ratio: 0.7,
            wall_thickness_mm: 9.0,
            apex_taper: 0.5,
            center_offset_mm: (0.0, 0.0),
            center_jitter_mm: 1.0,
            noise_std: 0.02,
            contrast: 1.0,
            heart_rate_bpm: 70.0,
            hard_apex: false,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("phantom spec: {m}")));
        if self.n_slices == 0 || self.phases < 2 {
            return bad("needs at least one slice and two phases");
        }
        if !(self.slice_thickness_mm > 0.0 && self.pixel_mm > 0.0 && self.slice_gap_mm >= 0.0) {
            return bad("thickness and pixel size must be positive");
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return bad("image size must be positive");
        }
        if !(self.ed_endo_radius_mm > 0.0 && self.wall_thickness_mm > 0.0) {
            return bad("radius and wall thickness must be positive");
        }
        if !(self.es_radius_ratio > 0.0 && self.es_radius_ratio < 1.0) {
            return bad("end-systolic radius ratio must be in (0, 1)");
        }
        if !(self.apex_taper > 0.0 && self.apex_taper <= 1.0) {
            return bad("apex taper must be in (0, 1]");
        }
        if self.noise_std < 0.0 || self.contrast <= 0.0 || self.heart_rate_bpm <= 0.0 || self.center_jitter_mm < 0.0 {
            return bad("noise, contrast, heart rate and jitter must be non-negative");
        }
        Ok(())
    }

    pub fn es_phase(&self) -> usize {
        self.phases / 2
    }

    /// Slice pitch used for volume integration.
    pub fn slice_spacing_mm(&self) -> f64 {
        self.slice_thickness_mm + self.slice_gap_mm
    }

    pub fn spacing_mm(&self) -> (f64, f64, f64) {
        (self.pixel_mm, self.pixel_mm, self.slice_spacing_mm())
    }

    /// 0 at end-diastole, 1 at end-systole, monotone in between.
    pub fn contraction(&self, phase: usize) -> f64 {
        let (e, p) = (self.es_phase() as f64, self.phases as f64);
        let t = phase as f64 % p;
        if t <= e {
            (1.0 - (PI * t / e).cos()) / 2.0
        } else {
            (1.0 - (PI * (p - t) / (p - e)).cos()) / 2.0
        }
    }

    fn taper(&self, slice: usize) -> f64 {
        if self.n_slices == 1 {
            return 1.0;
        }
        let u = slice as f64 / (self.n_slices - 1) as f64;
        1.0 - (1.0 - self.apex_taper) * u * u
    }

    pub fn endo_radius_mm(&self, phase: usize, slice: usize) -> f64 {
        let r_ed = self.ed_endo_radius_mm * self.taper(slice);
        r_ed * (1.0 - (1.0 - self.es_radius_ratio) * self.contraction(phase))
    }

    pub fn epi_radius_mm(&self, phase: usize, slice: usize) -> f64 {
        let r_ed = self.ed_endo_radius_mm * self.taper(slice);
        let area = (r_ed + self.wall_thickness_mm).powi(2) - r_ed * r_ed;
        let r = self.endo_radius_mm(phase, slice);
        (r * r + area).sqrt()
    }

    pub fn wall_thickness_at(&self, phase: usize, slice: usize) -> f64 {
        self.epi_radius_mm(phase, slice) - self.endo_radius_mm(phase, slice)
    }

    /// Radius of the solid apical cap (hard-apex slice only).
    fn cap_radius_mm(&self, phase: usize) -> f64 {
        0.6 * self.epi_radius_mm(phase, self.n_slices - 1)
    }

    pub fn total_slices(&self) -> usize {
        self.n_slices + usize::from(self.hard_apex)
    }

    /// Exact blood-pool volume in cm³ of the stacked disks.
    pub fn analytic_endo_volume(&self, phase: usize) -> f64 {
        (0..self.n_slices).map(|s| PI * self.endo_radius_mm(phase, s).powi(2)).sum::<f64>() * self.slice_spacing_mm() / 1000.0
    }

    /// Exact volume in cm³ enclosed by the epicardium.
    pub fn analytic_epi_volume(&self, phase: usize) -> f64 {
        let mut a: f64 = (0..self.n_slices).map(|s| PI * self.epi_radius_mm(phase, s).powi(2)).sum();
        if self.hard_apex {
            a += PI * self.cap_radius_mm(phase).powi(2);
        }
        a * self.slice_spacing_mm() / 1000.0
    }

    pub fn analytic_truth(&self) -> Result<Measures> {
        Measures::from_volumes(
            self.analytic_endo_volume(0),
            self.analytic_endo_volume(self.es_phase()),
            self.analytic_epi_volume(0),
            self.heart_rate_bpm,
        )
    }
}

#[derive(Clone, Debug)]
pub struct PhantomPatient {
    pub id: String,
    pub spec: PhantomSpec,
    /// One labeled volume per phase.
    pub volumes: Vec<LabeledVolume>,
    pub truth: Measures,
    /// Ventricle center `(x, y)` in pixels per slice.
    pub centers_px: Vec<(f64, f64)>,
}

impl PhantomPatient {
    pub fn ed(&self) -> &LabeledVolume {
        &self.volumes[0]
    }

    pub fn es(&self) -> &LabeledVolume {
        &self.volumes[self.spec.es_phase()]
    }
}

fn slice_centers(spec: &PhantomSpec) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = spec.image_size;
    let jitter = Normal::new(0.0, spec.center_jitter_mm.max(1e-300)).expect("std");
    (0..spec.total_slices())
        .map(|_| {
            let (jx, jy) = if spec.center_jitter_mm > 0.0 { (jitter.sample(&mut rng), jitter.sample(&mut rng)) } else { (0.0, 0.0) };
            (
                (w as f64 - 1.0) / 2.0 + (spec.center_offset_mm.0 + jx) / spec.pixel_mm,
                (h as f64 - 1.0) / 2.0 + (spec.center_offset_mm.1 + jy) / spec.pixel_mm,
            )
        })
        .collect()
}

/// Renders one slice given radii in pixels (`r_in = 0` for no blood pool).
fn render(spec: &PhantomSpec, center: (f64, f64), r_in: f64, r_out: f64, rng: &mut ChaCha8Rng) -> (Image, LabelMap) {
    let (h, w) = spec.image_size;
    let (cx, cy) = center;
    let gain = spec.contrast as f32;
    let level = |d: f64| -> f32 {
        if d < r_in {
            BLOOD_LEVEL
        } else if d < r_out {
            MYOCARDIUM_LEVEL
        } else {
            BACKGROUND_LEVEL
        }
    };
    let noise = Normal::new(0.0, spec.noise_std.max(1e-300)).expect("std");
    let mut labels = Grid::filled(h, w, BACKGROUND);
    let mut img = Grid::filled(h, w, 0.0f32);
    let step = 1.0 / SUPERSAMPLE as f64;
    for y in 0..h {
        for x in 0..w {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            let label = if d < r_in {
                BLOOD_POOL
            } else if d < r_out {
                MYOCARDIUM
            } else {
                BACKGROUND
            };
            labels.set(y, x, label);
            let near_edge = (d - r_in).abs() < 1.0 || (d - r_out).abs() < 1.0;
            let v = if near_edge {
                let mut acc = 0.0f32;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let px = x as f64 - 0.5 + (sx as f64 + 0.5) * step;
                        let py = y as f64 - 0.5 + (sy as f64 + 0.5) * step;
                        acc += level(((px - cx).powi(2) + (py - cy).powi(2)).sqrt());
                    }
                }
                acc / (SUPERSAMPLE * SUPERSAMPLE) as f32
            } else {
                level(d)
            };
            let n = if spec.noise_std > 0.0 { noise.sample(rng) as f32 } else { 0.0 };
            img.set(y, x, v * gain + n);
        }
    }
    (img, labels)
}

/// Renders every phase of a study.
pub fn generate(spec: &PhantomSpec) -> Result<PhantomPatient> {
    spec.validate()?;
    let centers = slice_centers(spec);
    let mut volumes = Vec::with_capacity(spec.phases);
    for phase in 0..spec.phases {
        let mut images = Vec::with_capacity(spec.total_slices());
        let mut labels = Vec::with_capacity(spec.total_slices());
        for (s, &c) in centers.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(1 + (phase * spec.total_slices() + s) as u64);
            let (r_in, r_out) = if s < spec.n_slices {
                (spec.endo_radius_mm(phase, s), spec.epi_radius_mm(phase, s))
            } else {
                (0.0, spec.cap_radius_mm(phase))
            };
            let (img, lab) = render(spec, c, r_in / spec.pixel_mm, r_out / spec.pixel_mm, &mut rng);
            images.push(img);
            labels.push(lab);
        }
        volumes.push(LabeledVolume::new(images, Some(labels), spec.spacing_mm(), phase)?);
    }
    Ok(PhantomPatient { id: String::new(), spec: spec.clone(), truth: spec.analytic_truth()?, volumes, centers_px: centers })
}

/// Draws the per-patient anatomy of a cohort around `base`.
pub fn cohort_specs(n: usize, base: &PhantomSpec, seed: u64) -> Result<Vec<PhantomSpec>> {
    if n == 0 {
        return Err(Error::InvalidArgument("cohort needs at least one patient".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| PhantomSpec {
            ed_endo_radius_mm: rng.random_range(18.0..30.0),
            es_radius_ratio: rng.random_range(0.55..0.8),
            wall_thickness_mm: rng.random_range(7.0..11.0),
            apex_taper: rng.random_range(0.4..0.6),
            center_offset_mm: (rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0)),
            noise_std: base.noise_std * rng.random_range(0.5..1.5),
            contrast: rng.random_range(0.85..1.15),
            heart_rate_bpm: rng.random_range(55.0..90.0),
            seed: rng.random(),
            ..base.clone()
        })
        .collect())
}

pub fn make_cohort(n: usize, base: &PhantomSpec, seed: u64) -> Result<Vec<PhantomPatient>> {
    cohort_specs(n, base, seed)?
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut p = generate(s)?;
            p.id = format!("P{i:03}");
            Ok(p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::connected_components;
    use crate::quantify::physio::{endo_volume, epi_volume};

    fn small(seed: u64) -> PhantomSpec {
        PhantomSpec { phases: 4, n_slices: 6, seed, ..Default::default() }
    }

    #[test]
    fn single_slice_analytic_volume() {
        let r = (20_000.0 / (PI * 10.0)).sqrt();
        assert!((r - 25.2313).abs() < 1e-4);
        let spec = PhantomSpec { n_slices: 1, ed_endo_radius_mm: r, ..Default::default() };
        assert!((spec.analytic_endo_volume(0) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn invariants_of_the_profiles() {
        let spec = PhantomSpec::default();
        for s in 0..spec.n_slices {
            assert!(spec.endo_radius_mm(spec.es_phase(), s) < spec.endo_radius_mm(0, s));
            if s > 0 {
                assert!(spec.endo_radius_mm(0, s) < spec.endo_radius_mm(0, s - 1));
            }
            for p in 0..spec.phases {
                assert!(spec.wall_thickness_at(p, s) > 0.0);
            }
        }
        let curve: Vec<f64> = (0..spec.phases).map(|p| spec.analytic_endo_volume(p)).collect();
        for p in 1..=spec.es_phase() {
            assert!(curve[p] < curve[p - 1]);
        }
        for p in spec.es_phase() + 1..spec.phases {
            assert!(curve[p] > curve[p - 1]);
        }
        let t = spec.analytic_truth().unwrap();
        assert_eq!(t.sv_cm3, t.edv_cm3 - t.esv_cm3);
        assert_eq!(t.ef_pct, t.sv_cm3 / t.edv_cm3 * 100.0);
    }

    #[test]
    fn rasterized_volume_within_three_percent() {
        for seed in 0..10 {
            let mut spec = cohort_specs(1, &small(0), seed).unwrap().remove(0);
            spec.pixel_mm = 1.4;
            spec.image_size = (160, 160);
            let p = generate(&spec).unwrap();
            for (phase, v) in p.volumes.iter().enumerate() {
                let (a, r) = (spec.analytic_endo_volume(phase), endo_volume(v).unwrap());
                assert!((r / a - 1.0).abs() < 0.03, "seed {seed} phase {phase}: {r} vs {a}");
                let (a, r) = (spec.analytic_epi_volume(phase), epi_volume(v).unwrap());
                assert!((r / a - 1.0).abs() < 0.03);
            }
        }
    }

    #[test]
    fn halving_pixel_size_halves_raster_error() {
        let err = |pixel: f64, size: usize| -> f64 {
            let mut total = 0.0;
            for seed in 0..10 {
                let mut spec = cohort_specs(1, &small(0), 100 + seed).unwrap().remove(0);
                spec.phases = 2;
                spec.noise_std = 0.0;
                spec.center_jitter_mm = 0.0;
                spec.pixel_mm = pixel;
                spec.image_size = (size, size);
                let p = generate(&spec).unwrap();
                for (phase, v) in p.volumes.iter().enumerate() {
                    total += (endo_volume(v).unwrap() / spec.analytic_endo_volume(phase) - 1.0).abs();
                    total += (epi_volume(v).unwrap() / spec.analytic_epi_volume(phase) - 1.0).abs();
                }
            }
            total / 40.0
        };
        let (coarse, fine) = (err(1.4, 160), err(0.7, 320));
        assert!(fine <= coarse / 2.0, "coarse {coarse}, fine {fine}");
    }

    #[test]
    fn mid_slice_topology() {
        let p = generate(&small(3)).unwrap();
        for v in &p.volumes {
            let lab = v.label_map(v.slices / 2).unwrap();
            let pool = lab.map(|l| l == BLOOD_POOL);
            let myo = lab.map(|l| l == MYOCARDIUM);
            let bg = lab.map(|l| l == BACKGROUND);
            assert_eq!(connected_components(&pool), 1);
            assert_eq!(connected_components(&myo), 1);
            assert_eq!(connected_components(&bg), 1);
            // Enclosure: no blood-pool pixel touches background.
            for y in 1..lab.h - 1 {
                for x in 1..lab.w - 1 {
                    if lab.get(y, x) == BLOOD_POOL {
                        for (dy, dx) in [(0, 1), (1, 0), (0, -1), (-1, 0)] {
                            let n = lab.get((y as isize + dy) as usize, (x as isize + dx) as usize);
                            assert_ne!(n, BACKGROUND);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn hard_apex_has_no_blood_pool() {
        let p = generate(&PhantomSpec { hard_apex: true, ..small(1) }).unwrap();
        let v = p.ed();
        assert_eq!(v.slices, 7);
        let cap = v.label_map(6).unwrap();
        assert!(!cap.data.contains(&BLOOD_POOL));
        assert!(cap.data.contains(&MYOCARDIUM));
    }

    #[test]
    fn cohort_is_deterministic_and_distinct() {
        let base = PhantomSpec { phases: 2, n_slices: 3, image_size: (32, 32), pixel_mm: 6.0, ..Default::default() };
        let a = make_cohort(30, &base, 7).unwrap();
        let b = make_cohort(30, &base, 7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.volumes, y.volumes);
            assert_eq!(x.truth, y.truth);
        }
        let mut edv: Vec<f64> = a.iter().map(|p| p.truth.edv_cm3).collect();
        edv.sort_by(f64::total_cmp);
        edv.dedup();
        assert_eq!(edv.len(), 30);
    }

    #[test]
    fn cohort_edv_spans_clinical_range() {
        let specs = cohort_specs(30, &PhantomSpec::default(), 7).unwrap();
        let edv: Vec<f64> = specs.iter().map(|s| s.analytic_endo_volume(0)).collect();
        let (lo, hi) = edv.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(lo > 50.0 && lo < 90.0, "min EDV {lo}");
        assert!(hi > 160.0 && hi < 230.0, "max EDV {hi}");
    }
}
