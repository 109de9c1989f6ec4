//! Cohort directories and training-sample extraction.
//!
//! ```text
//! <dir>/cohort.json            subject ids, heart rates, generator specs and truth
//! <dir>/<id>/phase_<kk>.cqv    one labeled volume per phase
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{LabelMap, BACKGROUND};
use crate::phantom::{PhantomPatient, PhantomSpec};
use crate::quantify::{center_of_mass, downsample_labels, mid_stack, Measures, Window};
use crate::train::Sample;
use crate::volume::{read_volume, write_volume, LabeledVolume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub heart_rate_bpm: f64,
    pub phases: usize,
    pub truth: Option<Measures>,
    pub spec: Option<PhantomSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortIndex {
    pub subjects: Vec<SubjectRecord>,
}

pub fn phase_path(dir: &Path, id: &str, phase: usize) -> PathBuf {
    dir.join(id).join(format!("phase_{phase:02}.cqv"))
}

pub fn write_cohort(dir: &Path, patients: &[PhantomPatient]) -> Result<CohortIndex> {
    fs::create_dir_all(dir)?;
    let mut subjects = Vec::with_capacity(patients.len());
    for p in patients {
        fs::create_dir_all(dir.join(&p.id))?;
        for (k, v) in p.volumes.iter().enumerate() {
            write_volume(v, phase_path(dir, &p.id, k))?;
        }
        subjects.push(SubjectRecord {
            id: p.id.clone(),
            heart_rate_bpm: p.spec.heart_rate_bpm,
            phases: p.volumes.len(),
            truth: Some(p.truth),
            spec: Some(p.spec.clone()),
        });
    }
    let index = CohortIndex { subjects };
    fs::write(dir.join("cohort.json"), serde_json::to_string_pretty(&index)? + "\n")?;
    Ok(index)
}

pub fn read_index(dir: &Path) -> Result<CohortIndex> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join("cohort.json"))?)?)
}

pub fn read_subject(dir: &Path, rec: &SubjectRecord) -> Result<Vec<LabeledVolume>> {
    (0..rec.phases).map(|k| read_volume(phase_path(dir, &rec.id, k))).collect()
}

fn labels_of(v: &LabeledVolume, s: usize) -> Result<LabelMap> {
    v.label_map(s).ok_or_else(|| Error::InvalidArgument("volume has no reference labels".into()))
}

fn phase_of<'a>(vols: &'a [LabeledVolume], phase: usize) -> Result<&'a LabeledVolume> {
    vols.get(phase).ok_or_else(|| Error::InvalidArgument(format!("phase {phase} out of range ({} phases)", vols.len())))
}

/// Center of mass `(x, y)` of the reference ventricle on the mid-stack slices.
pub fn reference_roi_center(vol: &LabeledVolume) -> Result<(f64, f64)> {
    let masks = mid_stack(vol.slices).map(|s| labels_of(vol, s)).collect::<Result<Vec<_>>>()?;
    center_of_mass(&masks).ok_or_else(|| Error::RoiNotFound("reference masks are empty".into()))
}

/// Every slice of the given phases, cropped to `crop` around the reference
/// center of the first phase.
pub fn segmentation_samples(subject: &str, vols: &[LabeledVolume], phases: &[usize], crop: (usize, usize)) -> Result<Vec<Sample>> {
    let window = Window::around(reference_roi_center(phase_of(vols, 0)?)?, crop.0, crop.1);
    let mut out = Vec::new();
    for &ph in phases {
        let v = phase_of(vols, ph)?;
        for s in 0..v.slices {
            out.push(Sample {
                subject: subject.to_string(),
                image: window.apply(&v.image(s), 0.0),
                labels: window.apply(&labels_of(v, s)?, BACKGROUND),
            });
        }
    }
    Ok(out)
}

/// Whole slices of the given phases, downsampled by `factor`.
pub fn roi_samples(subject: &str, vols: &[LabeledVolume], phases: &[usize], factor: usize) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for &ph in phases {
        let v = phase_of(vols, ph)?;
        for s in 0..v.slices {
            out.push(Sample {
                subject: subject.to_string(),
                image: v.image(s).downsample_mean(factor)?,
                labels: downsample_labels(&labels_of(v, s)?, factor),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::make_cohort;

    fn base() -> PhantomSpec {
        PhantomSpec { phases: 3, n_slices: 4, ..Default::default() }
    }

    #[test]
    fn cohort_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cohort = make_cohort(2, &base(), 3).unwrap();
        let index = write_cohort(dir.path(), &cohort).unwrap();
        assert_eq!(read_index(dir.path()).unwrap(), index);
        let vols = read_subject(dir.path(), &index.subjects[1]).unwrap();
        assert_eq!(vols, cohort[1].volumes);
    }

    #[test]
    fn samples_have_the_requested_geometry() {
        let p = make_cohort(1, &base(), 4).unwrap().remove(0);
        let seg = segmentation_samples(&p.id, &p.volumes, &[0, 2], (64, 64)).unwrap();
        assert_eq!(seg.len(), 8);
        assert!(seg.iter().all(|s| s.image.h == 64 && s.labels.w == 64 && s.subject == p.id));
        let (cx, cy) = center_of_mass(&seg[1..3].iter().map(|s| s.labels.clone()).collect::<Vec<_>>()).unwrap();
        assert!((cx - 32.0).abs() < 1.5 && (cy - 32.0).abs() < 1.5, "{cx} {cy}");
        let roi = roi_samples(&p.id, &p.volumes, &[0], 2).unwrap();
        assert_eq!((roi.len(), roi[0].image.h), (4, 64));
        assert!(segmentation_samples(&p.id, &p.volumes, &[5], (64, 64)).is_err());
    }
}
