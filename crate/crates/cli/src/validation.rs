//! Monte Carlo check of the smoothing heuristics on a subspace mixture.
//!
//! Each row fixes `α` and a ratio `r`, places the class means at `±m` along the
//! first coarse direction with `m = r α σ ‖w_f‖`, and compares measured score
//! variance and error rate with `α²σ²‖w_f‖²` and `Φ(−r)`.

use std::fmt::Write as _;

use mgproj::data::{generate_subspace_mixture, SubspaceMixtureConfig};
use mgproj::training::{error_rate_vs_gaussian, probe_classifier, variance_shrink_check};
use serde::Serialize;

use crate::config::ValidationConfig;
use crate::error::CliResult;

/// Relative tolerance on the variance law.
pub const VARIANCE_TOL: f64 = 0.05;
/// Absolute tolerance on the error rate.
pub const ERROR_TOL: f64 = 0.01;
/// Seed of the complement direction of the probe classifier.
const PROBE_SEED: u64 = 0x5eed;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationRow {
    pub alpha: f64,
    pub ratio: f64,
    pub margin: f64,
    pub predicted_var: f64,
    /// Mean of the per-class sample variances.
    pub measured_var: f64,
    pub var_pass: bool,
    pub margin_pass: bool,
    pub predicted_err: f64,
    pub measured_err: f64,
    pub err_pass: bool,
}

impl ValidationRow {
    pub fn pass(&self) -> bool {
        self.var_pass && self.margin_pass && self.err_pass
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n: usize,
    pub sigma: f64,
    pub fine_norm: f64,
    pub rows: Vec<ValidationRow>,
    pub warning: Option<String>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(ValidationRow::pass)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "alpha,ratio,margin,predicted_var,measured_var,var_pass,margin_pass,predicted_err,measured_err,err_pass\n",
        );
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.alpha,
                r.ratio,
                r.margin,
                r.predicted_var,
                r.measured_var,
                r.var_pass,
                r.margin_pass,
                r.predicted_err,
                r.measured_err,
                r.err_pass
            )
            .unwrap();
        }
        s
    }
}

/// Runs the sweep. `mix.s_pos` and `mix.s_neg` are replaced per row; every
/// other mixture field is used as given.
pub fn validate_heuristics(mix: &SubspaceMixtureConfig, v: &ValidationConfig) -> CliResult<ValidationReport> {
    let mut rows = Vec::new();
    for &alpha in &v.alphas {
        for &ratio in &v.ratios {
            let margin = ratio * alpha * mix.sigma * v.fine_norm;
            let mut s_pos = vec![0.0; mix.c];
            s_pos[0] = margin;
            let cfg = SubspaceMixtureConfig { s_neg: s_pos.iter().map(|x| -x).collect(), s_pos, ..mix.clone() };
            let data = generate_subspace_mixture(&cfg)?;
            let w = probe_classifier(&data, v.fine_norm, PROBE_SEED)?;
            let shrink = variance_shrink_check(&data, &w, alpha)?;
            let err = error_rate_vs_gaussian(&data, &w, &[alpha])?.remove(0);
            let predicted_var = shrink.classes.first().map_or(0.0, |c| c.predicted_var);
            let measured_var =
                shrink.classes.iter().map(|c| c.measured_var).sum::<f64>() / shrink.classes.len().max(1) as f64;
            let var_pass = if predicted_var > 0.0 {
                (shrink.variance_ratio() - 1.0).abs() <= VARIANCE_TOL
            } else {
                measured_var <= 1e-20
            };
            rows.push(ValidationRow {
                alpha,
                ratio,
                margin,
                predicted_var,
                measured_var,
                var_pass,
                margin_pass: shrink.margin_preserved(),
                predicted_err: err.predicted,
                measured_err: err.empirical,
                err_pass: (err.empirical - err.predicted).abs() <= ERROR_TOL,
            });
        }
    }
    let warning = (mix.n < v.min_samples).then(|| {
        format!(
            "insufficient-sample: n = {} is below {}; pass flags carry Monte Carlo error larger than the tolerances",
            mix.n, v.min_samples
        )
    });
    Ok(ValidationReport { n: mix.n, sigma: mix.sigma, fine_norm: v.fine_norm, rows, warning })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_alpha_passes() {
        let mix = SubspaceMixtureConfig { n: 20_000, ..Default::default() };
        let v =
            ValidationConfig { alphas: vec![1.0], ratios: vec![0.0, 1.0], min_samples: 10_000, ..Default::default() };
        let rep = validate_heuristics(&mix, &v).unwrap();
        assert!(rep.warning.is_none());
        assert_eq!(rep.rows.len(), 2);
        for r in &rep.rows {
            assert!((r.predicted_var - 4.0).abs() < 1e-9);
            assert!(r.pass(), "{r:?}");
        }
        // Φ(0) and Φ(−1).
        assert_eq!(rep.rows[0].predicted_err, 0.5);
        assert!((rep.rows[1].predicted_err - 0.158_655_253_931_457).abs() < 1e-9);
    }

    #[test]
    fn small_sample_warns_without_failing() {
        let mix = SubspaceMixtureConfig { n: 100, ..Default::default() };
        let rep = validate_heuristics(&mix, &ValidationConfig::default()).unwrap();
        assert!(rep.warning.as_deref().unwrap().starts_with("insufficient-sample"));
        assert_eq!(rep.rows.len(), 12);
    }

    #[test]
    fn zero_alpha_removes_fine_noise() {
        let mix = SubspaceMixtureConfig { n: 2_000, ..Default::default() };
        let v = ValidationConfig { alphas: vec![0.0], ratios: vec![1.0], ..Default::default() };
        let rep = validate_heuristics(&mix, &v).unwrap();
        assert_eq!(rep.rows[0].predicted_var, 0.0);
        assert!(rep.rows[0].var_pass);
    }

    #[test]
    fn csv_has_one_line_per_row() {
        let mix = SubspaceMixtureConfig { n: 500, ..Default::default() };
        let rep = validate_heuristics(&mix, &ValidationConfig::default()).unwrap();
        assert_eq!(rep.to_csv().lines().count(), 13);
    }
}
