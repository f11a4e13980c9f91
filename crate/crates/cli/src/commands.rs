//! Implementations behind the `analyze`, `simulate`, and `tune` commands.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use topeff_core::{
    build_annihilator, calibrate, candidate_grid, estimate_ew, estimate_hc3, estimate_hck,
    estimate_kj, evaluate_pair, monte_carlo, observed_best_indices, partialled_ols,
    select_d0_threshold, select_tuning, shrink_center, BetaMode, CovarianceEstimate,
    CovariateDesign, DgpSpec, ErrorMode, EstimatorKind, FitResult, GammaMode, Method,
    MonteCarloReport, PolicyDesign, PolicyEstimate, ProjectionMode, TuningPair,
};

use crate::config::{AnalysisConfig, RankRule};
use crate::error::{CliError, Result};
use crate::ingest::{load_csv, LoadedData};
use crate::report::{
    build_rows, write_json, write_report_csv, AnalysisReport, Diagnostics, Manifest,
};

fn covariance(
    kind: EstimatorKind,
    fit: &FitResult,
    proj: &topeff_core::AnnihilatorProjection,
) -> Result<CovarianceEstimate> {
    Ok(match kind {
        EstimatorKind::Kj => estimate_kj(fit)?,
        EstimatorKind::Hck => estimate_hck(fit, proj)?,
        EstimatorKind::Ew => estimate_ew(fit)?,
        EstimatorKind::Hc3 => estimate_hc3(fit)?,
    })
}

struct FittedInput {
    loaded: LoadedData,
    collinear_columns: Vec<String>,
    fit: FitResult,
    cov: CovarianceEstimate,
    d0: usize,
}

fn fit_input(config: &AnalysisConfig) -> Result<FittedInput> {
    let loaded = load_csv(&config.input, config)?;
    let data = &loaded.dataset;
    let mode = if config.estimator == EstimatorKind::Hck {
        ProjectionMode::Dense
    } else {
        ProjectionMode::Implicit
    };
    let proj = build_annihilator(&data.w, data.n(), mode)?;
    let fit = partialled_ols(data, &proj)?;
    let cov = covariance(config.estimator, &fit, &proj)?;

    let d0 = match config.rank_rule {
        RankRule::Fixed(d0) => d0,
        RankRule::Threshold { c, c1 } => {
            let k = select_d0_threshold(&fit.beta_hat, c, c1, fit.n_retained());
            if k == 0 {
                return Err(CliError::BadConfig(
                    "no policy estimate exceeds the threshold".into(),
                ));
            }
            k.min(data.d())
        }
    };
    let collinear_columns = proj
        .dropped_cols
        .iter()
        .map(|&j| loaded.covariate_names.get(j).cloned().unwrap_or_else(|| format!("col{j}")))
        .collect();
    Ok(FittedInput {
        loaded,
        collinear_columns,
        fit,
        cov,
        d0,
    })
}

pub fn run_analyze(config: &AnalysisConfig, out_dir: &Path) -> Result<AnalysisReport> {
    config.validate()?;
    let start = Instant::now();
    let FittedInput {
        loaded,
        collinear_columns,
        fit,
        cov,
        d0,
    } = fit_input(config)?;
    let data = &loaded.dataset;

    let est = PolicyEstimate {
        beta_hat: fit.beta_hat.clone(),
        omega: cov.clone(),
        n: fit.n_retained(),
        d0,
    };
    let pairs = select_tuning(&est, &config.tuning, config.seed)?;
    let calibration = calibrate(&est, &pairs, config.b_draws, config.alpha, config.seed)?;
    let (calibrated, uncalibrated) = build_rows(&calibration, &loaded.policy_names, config.alpha);

    let report = AnalysisReport {
        n: data.n(),
        d: data.d(),
        q: data.q(),
        alpha: config.alpha,
        b_draws: config.b_draws,
        seed: config.seed,
        estimator: cov.estimator.label().to_string(),
        calibrated,
        uncalibrated,
        diagnostics: Diagnostics {
            ingest: loaded.diagnostics.clone(),
            high_leverage_rows: fit.dropped_rows.len(),
            collinear_columns,
            psd_repaired: cov.psd_repaired,
            tuning: pairs,
            runtime_secs: start.elapsed().as_secs_f64(),
        },
    };

    std::fs::create_dir_all(out_dir)?;
    write_json(&report, &out_dir.join("report.json"))?;
    write_report_csv(&report, &out_dir.join("report.csv"))?;
    write_json(
        &Manifest {
            command: "analyze".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            runtime_secs: report.diagnostics.runtime_secs,
            outputs: vec!["report.json".into(), "report.csv".into()],
        },
        &out_dir.join("manifest.json"),
    )?;
    Ok(report)
}

/// One simulation cell: a DGP plus the ranks to report.
pub struct PresetCell {
    pub spec: DgpSpec,
    pub methods: Vec<Method>,
    pub d0: usize,
}

pub fn preset_cells(name: &str, n: usize) -> Result<Vec<PresetCell>> {
    let base = |beta_mode, gamma_mode, d, q| DgpSpec {
        n,
        d,
        q,
        policy_design: PolicyDesign::GaussianAr,
        covariate_design: CovariateDesign::SparseDummy,
        beta_mode,
        gamma_mode,
        error_mode: ErrorMode::StandardNormal,
    };
    let all = vec![
        Method::ProposedKj,
        Method::ProposedHck,
        Method::ProposedHc3,
        Method::ProposedEw,
        Method::NoAdjustKj,
    ];
    let q_grid = [1usize, 141, 281, 421, 561, 631];
    let cells = match name {
        "table1" => q_grid
            .iter()
            .map(|&q| PresetCell {
                spec: base(BetaMode::Heterogeneity, GammaMode::Zero, 5, q),
                methods: all.clone(),
                d0: 1,
            })
            .collect(),
        "table2" => q_grid
            .iter()
            .map(|&q| PresetCell {
                spec: base(BetaMode::Homogeneity, GammaMode::Reciprocal, 5, q),
                methods: all.clone(),
                d0: 1,
            })
            .collect(),
        "table3" => q_grid
            .iter()
            .map(|&q| PresetCell {
                spec: base(BetaMode::Heterogeneity, GammaMode::Zero, 5, q),
                methods: all.clone(),
                d0: 2,
            })
            .collect(),
        "figure1" => [3usize, 5, 10]
            .iter()
            .map(|&d| PresetCell {
                spec: base(BetaMode::Homogeneity, GammaMode::Reciprocal, d, 141),
                methods: vec![Method::NoAdjustKj],
                d0: 1,
            })
            .collect(),
        other => return Err(CliError::BadConfig(format!("unknown preset `{other}`"))),
    };
    Ok(cells)
}

#[derive(Debug, Serialize)]
pub struct SimulationManifest {
    pub preset: String,
    pub reps: usize,
    pub seed: u64,
    pub version: String,
    pub cells: usize,
    pub runtime_secs: f64,
}

pub fn run_simulate(
    preset: &str,
    reps: usize,
    alpha: f64,
    b_draws: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<(DgpSpec, MonteCarloReport)>> {
    let start = Instant::now();
    let cells = preset_cells(preset, 700)?;
    let cfg = topeff_core::TuningConfig::default();
    let mut results = Vec::new();
    for cell in &cells {
        let report = monte_carlo(
            &cell.spec,
            &cell.methods,
            reps,
            cell.d0,
            alpha,
            b_draws,
            &cfg,
            seed,
        )?;
        results.push((cell.spec, report));
    }

    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join(format!("{preset}.csv"));
    write_simulation_csv(&results, &csv_path)?;
    write_json(
        &SimulationManifest {
            preset: preset.to_string(),
            reps,
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            cells: cells.len(),
            runtime_secs: start.elapsed().as_secs_f64(),
        },
        &out_dir.join("manifest.json"),
    )?;
    Ok(results)
}

fn write_simulation_csv(results: &[(DgpSpec, MonteCarloReport)], path: &Path) -> Result<()> {
    use std::io::Write;
    let mut out = std::fs::File::create(path)?;
    writeln!(
        out,
        "n,d,q,method,rank,target,coverage,coverage_se,sqrtn_bias,bias_se,replications"
    )?;
    for (spec, report) in results {
        for row in &report.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                spec.n,
                spec.d,
                spec.q,
                row.method,
                row.rank,
                row.target,
                row.coverage,
                row.coverage_se,
                row.sqrtn_bias,
                row.bias_se,
                row.replications
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct LossPoint {
    pub c_l: f64,
    pub c_r: f64,
    pub loss: f64,
}

#[derive(Debug, Serialize)]
pub struct TuneRank {
    pub rank: usize,
    pub selected: TuningPair,
    pub surface: Vec<LossPoint>,
}

pub fn run_tune(config: &AnalysisConfig) -> Result<Vec<TuneRank>> {
    config.validate()?;
    let FittedInput { fit, cov, d0, .. } = fit_input(config)?;
    let est = PolicyEstimate {
        beta_hat: fit.beta_hat.clone(),
        omega: cov,
        n: fit.n_retained(),
        d0,
    };
    let selected = select_tuning(&est, &config.tuning, config.seed)?;
    let (center, _) = shrink_center(&est.beta_hat, &est.omega.omega, est.n);
    let obs = observed_best_indices(&est.beta_hat, d0);

    let mut out = Vec::new();
    for (rank, &idx) in obs.iter().enumerate() {
        let s_j = est.omega.omega[(idx, idx)];
        let grid = candidate_grid(&est.beta_hat, s_j, rank, config.tuning.delta, est.n, config.tuning.grid);
        let surface = grid
            .iter()
            .map(|&(c_l, c_r)| LossPoint {
                c_l,
                c_r,
                loss: evaluate_pair(
                    &center,
                    &est.omega.omega,
                    est.n,
                    rank,
                    (c_l, c_r),
                    s_j,
                    &config.tuning,
                    config.seed,
                ),
            })
            .collect();
        out.push(TuneRank {
            rank: rank + 1,
            selected: selected[rank].clone(),
            surface,
        });
    }
    Ok(out)
}
