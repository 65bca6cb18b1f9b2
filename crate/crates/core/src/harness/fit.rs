//! Least-squares fit of convergence times against a claimed complexity form.

use serde::Serialize;

use crate::error::ConfigError;

/// The complexity shapes the paper's bounds take at desk scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ComplexityForm {
    #[serde(rename = "n*log2(n)")]
    NLogN,
    #[serde(rename = "n*log2(n)^2")]
    NLogSqN,
    #[serde(rename = "n^2*log2(n)")]
    NSqLogN,
}

impl ComplexityForm {
    pub fn eval(self, n: f64) -> f64 {
        let lg = n.log2();
        match self {
            ComplexityForm::NLogN => n * lg,
            ComplexityForm::NLogSqN => n * lg * lg,
            ComplexityForm::NSqLogN => n * n * lg,
        }
    }

    /// The form claimed for a protocol's convergence time.
    pub fn for_protocol(name: &str) -> ComplexityForm {
        match name {
            "approximate" | "approximate-stable" | "approximate-stable-relaxed" => {
                ComplexityForm::NLogSqN
            }
            "backup-approx" | "backup-exact" => ComplexityForm::NSqLogN,
            _ => ComplexityForm::NLogN,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FitResult {
    pub c_hat: f64,
    /// Per-point T / form(n) ratios.
    pub ratios: Vec<f64>,
    /// Per-point residuals T - c_hat * form(n).
    pub residuals: Vec<f64>,
}

impl FitResult {
    /// Largest ratio divided by smallest: the cross-n consistency factor.
    pub fn ratio_spread(&self) -> f64 {
        let lo = self.ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.ratios.iter().copied().fold(0.0f64, f64::max);
        if lo > 0.0 {
            hi / lo
        } else {
            f64::INFINITY
        }
    }
}

/// Least-squares constant for T ~ c * form(n); needs at least two distinct n.
pub fn fit_complexity(
    points: &[(usize, f64)],
    form: ComplexityForm,
) -> Result<FitResult, ConfigError> {
    let distinct: std::collections::BTreeSet<usize> = points.iter().map(|p| p.0).collect();
    if distinct.len() < 2 {
        return Err(ConfigError::BadSpec(
            "complexity fit needs at least two distinct n values".into(),
        ));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for &(n, t) in points {
        let f = form.eval(n as f64);
        num += t * f;
        den += f * f;
    }
    let c_hat = num / den;
    let ratios = points
        .iter()
        .map(|&(n, t)| t / form.eval(n as f64))
        .collect();
    let residuals = points
        .iter()
        .map(|&(n, t)| t - c_hat * form.eval(n as f64))
        .collect();
    Ok(FitResult {
        c_hat,
        ratios,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_points_recover_the_constant() {
        let pts: Vec<(usize, f64)> = [256usize, 1024, 4096]
            .iter()
            .map(|&n| (n, 3.0 * ComplexityForm::NLogN.eval(n as f64)))
            .collect();
        let fit = fit_complexity(&pts, ComplexityForm::NLogN).unwrap();
        assert!((fit.c_hat - 3.0).abs() < 1e-9);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-6));
        assert!((fit.ratio_spread() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_n_is_rejected() {
        let pts = vec![(64, 100.0), (64, 120.0)];
        assert!(fit_complexity(&pts, ComplexityForm::NLogN).is_err());
    }
}
