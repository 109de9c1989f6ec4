//! Overlap and agreement metrics on masks and paired measurements.

use crate::error::{Error, Result};

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, &[a], &[b]));
    }
    Ok(())
}

/// `2|a ∩ b| / (|a| + |b|)`; two empty masks score 1.
pub fn dice(a: &[bool], b: &[bool]) -> Result<f64> {
    check_len("dice", a.len(), b.len())?;
    let inter = a.iter().zip(b).filter(|(&x, &y)| x && y).count();
    let total = a.iter().filter(|&&x| x).count() + b.iter().filter(|&&x| x).count();
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

/// Dice of one class between two label maps.
pub fn dice_class(pred: &[u8], truth: &[u8], class: u8) -> Result<f64> {
    let a: Vec<bool> = pred.iter().map(|&p| p == class).collect();
    let b: Vec<bool> = truth.iter().map(|&t| t == class).collect();
    dice(&a, &b)
}

/// `|a ∩ b| / |a ∪ b|`; two empty masks score 1.
pub fn jaccard_index(a: &[bool], b: &[bool]) -> Result<f64> {
    check_len("jaccard_index", a.len(), b.len())?;
    let inter = a.iter().zip(b).filter(|(&x, &y)| x && y).count();
    let union = a.iter().zip(b).filter(|(&x, &y)| x || y).count();
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len("mse", a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::InvalidArgument("mse of empty inputs".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

pub fn mae(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len("mae", a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::InvalidArgument("mae of empty inputs".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_std(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Pearson correlation; errors when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_len("pearson", x.len(), y.len())?;
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two points".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Least-squares `(slope, intercept)` of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    check_len("linear_fit", x.len(), y.len())?;
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if x.is_empty() || sxx == 0.0 {
        return Err(Error::UndefinedCorrelation("regression on constant x".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}
