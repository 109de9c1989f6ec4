use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BLOOD_POOL, MYOCARDIUM};
use crate::volume::LabeledVolume;

/// Myocardial tissue density in g/cm³.
pub const MYOCARDIAL_DENSITY: f64 = 1.05;

/// The six functional measures of one subject.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measures {
    pub edv_cm3: f64,
    pub esv_cm3: f64,
    pub sv_cm3: f64,
    pub ef_pct: f64,
    pub lvm_g: f64,
    pub co_lpm: f64,
}

impl Measures {
    pub const NAMES: [&'static str; 6] = ["EDV_cm3", "ESV_cm3", "SV_cm3", "EF_pct", "LVM_g", "CO_lpm"];

    /// Derives SV, EF, LVM and CO from the end-diastolic/systolic volumes and the
    /// end-diastolic epicardial volume.
    pub fn from_volumes(edv: f64, esv: f64, epi_ed: f64, heart_rate_bpm: f64) -> Result<Self> {
        if edv <= 0.0 {
            return Err(Error::EmptyEndocardium);
        }
        let sv = edv - esv;
        Ok(Self {
            edv_cm3: edv,
            esv_cm3: esv,
            sv_cm3: sv,
            ef_pct: sv / edv * 100.0,
            lvm_g: MYOCARDIAL_DENSITY * (epi_ed - edv),
            co_lpm: sv * heart_rate_bpm / 1000.0,
        })
    }

    pub fn values(&self) -> [f64; 6] {
        [self.edv_cm3, self.esv_cm3, self.sv_cm3, self.ef_pct, self.lvm_g, self.co_lpm]
    }
}

/// Volume in cm³ of the voxels whose class satisfies `pick`.
pub fn volume_where(labels: &[u8], voxel_mm3: f64, pick: impl Fn(u8) -> bool) -> f64 {
    labels.iter().filter(|&&l| pick(l)).count() as f64 * voxel_mm3 / 1000.0
}

/// Volume in cm³ of one class.
pub fn volume_of(labels: &[u8], class: u8, spacing_mm: (f64, f64, f64)) -> f64 {
    volume_where(labels, spacing_mm.0 * spacing_mm.1 * spacing_mm.2, |l| l == class)
}

/// Blood-pool volume.
pub fn endo_volume(v: &LabeledVolume) -> Result<f64> {
    let l = v.labels.as_ref().ok_or_else(|| Error::InvalidArgument("volume has no labels".into()))?;
    Ok(volume_where(l, v.voxel_volume_mm3(), |c| c == BLOOD_POOL))
}

/// Volume enclosed by the epicardium: myocardium plus blood pool.
pub fn epi_volume(v: &LabeledVolume) -> Result<f64> {
    let l = v.labels.as_ref().ok_or_else(|| Error::InvalidArgument("volume has no labels".into()))?;
    Ok(volume_where(l, v.voxel_volume_mm3(), |c| c == BLOOD_POOL || c == MYOCARDIUM))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectPhysio {
    /// Phase indices (as stored in the volumes) chosen as ED and ES.
    pub ed_phase: usize,
    pub es_phase: usize,
    /// Blood-pool volume per phase, in input order.
    pub endo_curve: Vec<f64>,
    pub measures: Measures,
}

/// Index of the first maximum and first minimum.
pub fn extremal_phases(curve: &[f64]) -> (usize, usize) {
    let mut ed = 0;
    let mut es = 0;
    for (i, &v) in curve.iter().enumerate() {
        if v > curve[ed] {
            ed = i;
        }
        if v < curve[es] {
            es = i;
        }
    }
    (ed, es)
}

/// Measures from per-phase labeled volumes; ED and ES are the phases of maximal
/// and minimal blood-pool volume.
pub fn physio(vols: &[LabeledVolume], heart_rate_bpm: f64) -> Result<SubjectPhysio> {
    if vols.is_empty() {
        return Err(Error::InvalidArgument("no phases given".into()));
    }
    let curve = vols.iter().map(endo_volume).collect::<Result<Vec<_>>>()?;
    let (ed, es) = extremal_phases(&curve);
    let epi = epi_volume(&vols[ed])?;
    let measures = Measures::from_volumes(curve[ed], curve[es], epi, heart_rate_bpm)?;
    Ok(SubjectPhysio { ed_phase: vols[ed].phase, es_phase: vols[es].phase, endo_curve: curve, measures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Grid;

    #[test]
    fn formula_examples() {
        let m = Measures::from_volumes(60.0, 20.0, 150.0, 70.0).unwrap();
        assert!((m.lvm_g - 94.5).abs() < 1e-12);
        let m = Measures::from_volumes(120.0, 50.0, 200.0, 70.0).unwrap();
        assert_eq!(m.sv_cm3, 70.0);
        assert!((m.ef_pct - 58.333_333_333_333_33).abs() < 1e-12);
        let m = Measures::from_volumes(130.0, 50.0, 200.0, 70.0).unwrap();
        assert!((m.co_lpm - 5.6).abs() < 1e-12);
        assert!(matches!(Measures::from_volumes(0.0, 0.0, 10.0, 60.0), Err(Error::EmptyEndocardium)));
    }

    #[test]
    fn unit_conversion() {
        assert_eq!(volume_of(&[2u8; 1000], 2, (1.0, 1.0, 1.0)), 1.0);
        assert_eq!(volume_of(&[0u8; 1000], 2, (1.0, 1.0, 1.0)), 0.0);
    }

    #[test]
    fn extremal_phase_selection() {
        let curve = [100.0, 90.0, 70.0, 60.0, 65.0, 80.0, 95.0];
        assert_eq!(extremal_phases(&curve), (0, 3));
    }

    #[test]
    fn physio_uses_union_for_epicardium() {
        let vol = |pool: usize, myo: usize, phase| {
            let mut l = vec![0u8; 100];
            l[..pool].iter_mut().for_each(|v| *v = 2);
            l[pool..pool + myo].iter_mut().for_each(|v| *v = 1);
            LabeledVolume::new(vec![Grid::filled(10, 10, 0.0)], Some(vec![Grid::new(10, 10, l).unwrap()]), (10.0, 10.0, 10.0), phase)
                .unwrap()
        };
        let vols = vec![vol(40, 30, 0), vol(20, 40, 1), vol(30, 35, 2)];
        let p = physio(&vols, 60.0).unwrap();
        assert_eq!((p.ed_phase, p.es_phase), (0, 1));
        assert_eq!(p.measures.edv_cm3, 40.0);
        assert_eq!(p.measures.esv_cm3, 20.0);
        assert!((p.measures.lvm_g - 1.05 * 30.0).abs() < 1e-12);
    }
}
