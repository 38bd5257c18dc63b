//! Least-squares power-law fits `e ≈ C h^p` in log-log coordinates.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least two points, got {0}")]
    TooFew(usize),
    #[error("point {index} = ({h}, {e}) is not strictly positive and finite")]
    NonPositive { index: usize, h: f64, e: f64 },
    #[error("all abscissae are equal")]
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Two-sided 95% interval for the slope; needs at least three points.
    pub slope_ci95: Option<[f64; 2]>,
    pub points: usize,
}

pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit, FitError> {
    if points.len() < 2 {
        return Err(FitError::TooFew(points.len()));
    }
    for (index, &(h, e)) in points.iter().enumerate() {
        if !(h.is_finite() && e.is_finite() && h > 0.0 && e > 0.0) {
            return Err(FitError::NonPositive { index, h, e });
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(FitError::Degenerate);
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let dof = points.len() as f64 - 2.0;
    let slope_ci95 = (dof >= 1.0).then(|| {
        let t = StudentsT::new(0.0, 1.0, dof).expect("positive dof").inverse_cdf(0.975);
        let half = t * (ss_res / dof / sxx).sqrt();
        [slope - half, slope + half]
    });
    Ok(RateFit { slope, intercept, r_squared, slope_ci95, points: points.len() })
}
