//! Report assembly and serialization.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use topeff_core::{empirical_quantile, CalibrationReport, TuningPair};

use crate::error::Result;
use crate::ingest::IngestDiagnostics;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RankRow {
    /// 1-based rank.
    pub rank: usize,
    /// Original column name of the policy at this rank.
    pub policy: String,
    pub estimate: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub ingest: IngestDiagnostics,
    /// Rows excluded from estimator sums because their annihilator diagonal
    /// is numerically zero.
    pub high_leverage_rows: usize,
    /// Covariate columns removed as collinear, by name.
    pub collinear_columns: Vec<String>,
    pub psd_repaired: bool,
    pub tuning: Vec<TuningPair>,
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub n: usize,
    pub d: usize,
    pub q: usize,
    pub alpha: f64,
    pub b_draws: usize,
    pub seed: u64,
    pub estimator: String,
    pub calibrated: Vec<RankRow>,
    pub uncalibrated: Vec<RankRow>,
    pub diagnostics: Diagnostics,
}

/// Smallest alpha on a 0.001-step grid at which the resampled interval
/// excludes zero; 1.0 if none does.
pub fn p_value_from_draws(draws_sorted: &[f64]) -> f64 {
    for step in 1..1000 {
        let alpha = step as f64 / 1000.0;
        let lo = empirical_quantile(draws_sorted, alpha / 2.0);
        let hi = empirical_quantile(draws_sorted, 1.0 - alpha / 2.0);
        if lo > 0.0 || hi < 0.0 {
            return alpha;
        }
    }
    1.0
}

/// Two-sided normal p-value for the unadjusted order statistic.
pub fn p_value_normal(estimate: f64, se: f64) -> f64 {
    if se <= 0.0 {
        return if estimate == 0.0 { 1.0 } else { 0.0 };
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    2.0 * (1.0 - normal.cdf((estimate / se).abs()))
}

pub fn build_rows(
    calibration: &CalibrationReport,
    policy_names: &[String],
    alpha: f64,
) -> (Vec<RankRow>, Vec<RankRow>) {
    let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(1.0 - alpha / 2.0);
    let mut calibrated = Vec::new();
    let mut uncalibrated = Vec::new();
    for rr in &calibration.ranks {
        let policy = policy_names[rr.observed_index].clone();
        calibrated.push(RankRow {
            rank: rr.rank + 1,
            policy: policy.clone(),
            estimate: rr.point_estimate_tilde,
            ci_lower: rr.ci.0,
            ci_upper: rr.ci.1,
            p_value: p_value_from_draws(&rr.draws_sorted),
        });
        let se = (rr.uncalibrated_ci.1 - rr.uncalibrated_ci.0) / (2.0 * z);
        uncalibrated.push(RankRow {
            rank: rr.rank + 1,
            policy,
            estimate: rr.uncalibrated_estimate,
            ci_lower: rr.uncalibrated_ci.0,
            ci_upper: rr.uncalibrated_ci.1,
            p_value: p_value_normal(rr.uncalibrated_estimate, se),
        });
    }
    (calibrated, uncalibrated)
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Flat CSV of the calibrated and uncalibrated tables.
pub fn write_report_csv(report: &AnalysisReport, path: &Path) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    writeln!(out, "table,rank,policy,estimate,ci_lower,ci_upper,p_value")?;
    for (label, rows) in [("calibrated", &report.calibrated), ("uncalibrated", &report.uncalibrated)]
    {
        for r in rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                label,
                r.rank,
                r.policy,
                fmt17(r.estimate),
                fmt17(r.ci_lower),
                fmt17(r.ci_upper),
                fmt17(r.p_value)
            )?;
        }
    }
    Ok(())
}

/// Re-read a report CSV into rank rows, keyed by table label.
pub fn read_report_csv(path: &Path) -> Result<(Vec<RankRow>, Vec<RankRow>)> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut calibrated = Vec::new();
    let mut uncalibrated = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = RankRow {
            rank: record[1].parse().unwrap(),
            policy: record[2].to_string(),
            estimate: record[3].parse().unwrap(),
            ci_lower: record[4].parse().unwrap(),
            ci_upper: record[5].parse().unwrap(),
            p_value: record[6].parse().unwrap(),
        };
        match &record[0] {
            "calibrated" => calibrated.push(row),
            _ => uncalibrated.push(row),
        }
    }
    Ok((calibrated, uncalibrated))
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub runtime_secs: f64,
    pub outputs: Vec<String>,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(std::io::Error::other)?;
    writeln!(out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_value_inversion_matches_sign_crossings() {
        // All draws positive: excluded at the coarsest level already.
        let positive: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(p_value_from_draws(&positive), 0.001);

        // Median at zero: never excluded.
        let centered: Vec<f64> = (-500..500).map(|i| i as f64).collect();
        assert_eq!(p_value_from_draws(&centered), 1.0);
    }

    #[test]
    fn p_value_normal_two_sided() {
        let p = p_value_normal(1.96, 1.0);
        assert!((p - 0.05).abs() < 1e-3);
        assert_eq!(p_value_normal(0.0, 1.0), 1.0);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = vec![RankRow {
            rank: 1,
            policy: "x2".into(),
            estimate: 0.1234567890123456789,
            ci_lower: -1.0 / 3.0,
            ci_upper: std::f64::consts::PI,
            p_value: 0.017,
        }];
        let report = AnalysisReport {
            n: 10,
            d: 2,
            q: 1,
            alpha: 0.05,
            b_draws: 100,
            seed: 7,
            estimator: "kj".into(),
            calibrated: rows.clone(),
            uncalibrated: rows.clone(),
            diagnostics: Diagnostics {
                ingest: Default::default(),
                high_leverage_rows: 0,
                collinear_columns: vec![],
                psd_repaired: false,
                tuning: vec![],
                runtime_secs: 0.0,
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        write_report_csv(&report, &path).unwrap();
        let (cal, uncal) = read_report_csv(&path).unwrap();
        assert_eq!(cal, rows);
        assert_eq!(uncal, rows);
    }
}
