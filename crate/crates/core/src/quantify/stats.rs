use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{linear_fit, mean, pearson, sample_std};

pub const LOA_Z: f64 = 1.96;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub bias: f64,
    pub loa_low: f64,
    pub loa_high: f64,
}

impl BlandAltman {
    pub fn from_bias_std(bias: f64, std: f64) -> Self {
        Self { bias, loa_low: bias - LOA_Z * std, loa_high: bias + LOA_Z * std }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
}

/// Agreement between predicted and reference values of one measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub n: usize,
    pub mean_error: f64,
    pub std_error: f64,
    pub mean_abs_error: f64,
    pub max_abs_error: f64,
    /// `None` when either series has zero variance.
    pub pearson_rho: Option<f64>,
    pub bland_altman: BlandAltman,
    /// Least-squares fit of prediction on reference.
    pub regression: Option<Regression>,
    pub flags: Vec<String>,
}

/// `(mean, difference)` pairs of a Bland-Altman plot.
pub fn bland_altman_points(pred: &[f64], truth: &[f64]) -> Vec<(f64, f64)> {
    pred.iter().zip(truth).map(|(&p, &t)| ((p + t) / 2.0, p - t)).collect()
}

pub fn cohort_stats(pred: &[f64], truth: &[f64]) -> Result<AgreementStats> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!("{} predictions for {} references", pred.len(), truth.len())));
    }
    if pred.len() < 3 {
        return Err(Error::InvalidArgument(format!("agreement statistics need at least 3 subjects, got {}", pred.len())));
    }
    let err: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| p - t).collect();
    let bias = mean(&err);
    let std = sample_std(&err);
    let mut flags = Vec::new();
    let pearson_rho = match pearson(pred, truth) {
        Ok(r) => Some(r),
        Err(Error::UndefinedCorrelation(_)) => {
            flags.push("pearson_rho undefined: zero variance".to_string());
            None
        }
        Err(e) => return Err(e),
    };
    let regression = linear_fit(truth, pred).ok().map(|(slope, intercept)| Regression { slope, intercept });
    Ok(AgreementStats {
        n: err.len(),
        mean_error: bias,
        std_error: std,
        mean_abs_error: mean(&err.iter().map(|e| e.abs()).collect::<Vec<_>>()),
        max_abs_error: err.iter().fold(0.0, |m, e| m.max(e.abs())),
        pearson_rho,
        bland_altman: BlandAltman::from_bias_std(bias, std),
        regression,
        flags,
    })
}

/// Published limits of agreement compared against the closed form of their own
/// bias and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitsCheck {
    pub measure: String,
    pub bias: f64,
    pub std: f64,
    pub reported: (f64, f64),
    pub computed: (f64, f64),
    pub discrepancy: f64,
    pub note: String,
}

pub fn check_reported_limits(measure: &str, bias: f64, std: f64, reported: (f64, f64)) -> LimitsCheck {
    let ba = BlandAltman::from_bias_std(bias, std);
    let computed = (round2(ba.loa_low), round2(ba.loa_high));
    let discrepancy = (computed.0 - reported.0).abs().max((computed.1 - reported.1).abs());
    let note = if discrepancy > 0.005 {
        format!(
            "reported limits ({:.2}, {:.2}) differ from bias ± 1.96·std = ({:.2}, {:.2}) by ≈{discrepancy:.2} ml; attributed to rounding in the reported values",
            reported.0, reported.1, computed.0, computed.1
        )
    } else {
        "reported limits agree with bias ± 1.96·std".to_string()
    };
    LimitsCheck { measure: measure.into(), bias, std, reported, computed, discrepancy, note }
}

/// The published EDV agreement: bias 0.14 ml, std 9.51 ml, limits (−18.43, 18.71).
pub fn published_edv_check() -> LimitsCheck {
    check_reported_limits("EDV_cm3", 0.14, 9.51, (-18.43, 18.71))
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}
