use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::physio::Measures;
use super::stats::{bland_altman_points, cohort_stats, published_edv_check, AgreementStats, LimitsCheck};

/// Subjects whose ESV error exceeds this many cm³ are listed as outliers.
pub const ESV_OUTLIER_CM3: f64 = 30.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    pub predicted: Option<Measures>,
    pub truth: Option<Measures>,
    /// Set when the pipeline failed for this subject.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outlier {
    pub id: String,
    pub esv_error_cm3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysioReport {
    pub subjects: Vec<SubjectEntry>,
    /// Agreement per measure over subjects with both prediction and truth.
    pub stats: BTreeMap<String, AgreementStats>,
    pub outliers: Vec<Outlier>,
    pub reference_checks: Vec<LimitsCheck>,
}

impl PhysioReport {
    pub fn build(subjects: Vec<SubjectEntry>) -> Result<Self> {
        let paired: Vec<(&str, &Measures, &Measures)> = subjects
            .iter()
            .filter_map(|s| Some((s.id.as_str(), s.predicted.as_ref()?, s.truth.as_ref()?)))
            .collect();
        let mut stats = BTreeMap::new();
        if paired.len() >= 3 {
            for (k, name) in Measures::NAMES.iter().enumerate() {
                let pred: Vec<f64> = paired.iter().map(|(_, p, _)| p.values()[k]).collect();
                let truth: Vec<f64> = paired.iter().map(|(_, _, t)| t.values()[k]).collect();
                stats.insert(name.to_string(), cohort_stats(&pred, &truth)?);
            }
        }
        let outliers = paired
            .iter()
            .map(|(id, p, t)| Outlier { id: id.to_string(), esv_error_cm3: p.esv_cm3 - t.esv_cm3 })
            .filter(|o| o.esv_error_cm3.abs() > ESV_OUTLIER_CM3)
            .collect();
        Ok(Self { subjects, stats, outliers, reference_checks: vec![published_edv_check()] })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One `subject` row per subject followed by one `summary` row per measure.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,id");
        for n in Measures::NAMES {
            let _ = write!(s, ",{n}");
        }
        for n in Measures::NAMES {
            let _ = write!(s, ",truth_{n}");
        }
        s.push_str(",error,n,mean_error,std_error,mean_abs_error,max_abs_error,pearson_rho,bias,loa_low,loa_high,slope,intercept\n");
        let measures = |m: Option<&Measures>| match m {
            Some(m) => m.values().iter().map(|v| format!(",{v:.6}")).collect::<String>(),
            None => ",".repeat(6),
        };
        for e in &self.subjects {
            let err = e.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
            let _ = writeln!(s, "subject,{}{}{},{err}{}", e.id, measures(e.predicted.as_ref()), measures(e.truth.as_ref()), ",".repeat(11));
        }
        for (name, st) in &self.stats {
            let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
            let (slope, intercept) = (st.regression.map(|r| r.slope), st.regression.map(|r| r.intercept));
            let _ = writeln!(
                s,
                "summary,{name}{},,{},{:.6},{:.6},{:.6},{:.6},{},{:.6},{:.6},{:.6},{},{}",
                ",".repeat(12),
                st.n,
                st.mean_error,
                st.std_error,
                st.mean_abs_error,
                st.max_abs_error,
                opt(st.pearson_rho),
                st.bland_altman.bias,
                st.bland_altman.loa_low,
                st.bland_altman.loa_high,
                opt(slope),
                opt(intercept),
            );
        }
        s
    }

    /// Bland-Altman and regression points: `measure,id,truth,predicted,mean,difference`.
    pub fn plot_csv(&self) -> String {
        let mut s = String::from("measure,id,truth,predicted,mean,difference\n");
        for (k, name) in Measures::NAMES.iter().enumerate() {
            for e in &self.subjects {
                let (Some(p), Some(t)) = (&e.predicted, &e.truth) else { continue };
                let (p, t) = (p.values()[k], t.values()[k]);
                let (m, d) = bland_altman_points(&[p], &[t])[0];
                let _ = writeln!(s, "{name},{},{t:.6},{p:.6},{m:.6},{d:.6}", e.id);
            }
        }
        s
    }
}
