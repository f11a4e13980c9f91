//! Data-generating processes and the Monte Carlo coverage harness.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::covariance::{
    ensure_psd, estimate_ew, estimate_hc3, estimate_hck, estimate_kj, CovarianceEstimate,
    EstimatorKind,
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::inference::{calibrate, observed_best_indices, PolicyEstimate};
use crate::regression::{build_annihilator, partialled_ols, ProjectionMode};
use crate::rng::{derive_rng, standard_normal_vector, STREAM_DGP, STREAM_REPLICATION};
use crate::tuning::{select_tuning, TuningConfig, TuningPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyDesign {
    /// Gaussian policies with AR(1) correlation 0.5^|j-k|.
    GaussianAr,
    /// Indicator of the latent Gaussian being positive.
    BinaryThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovariateDesign {
    /// Rare dummies: indicator of a standard normal exceeding the 98th
    /// percentile.
    SparseDummy,
    /// Standard normal covariates.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BetaMode {
    /// All policy effects zero.
    Homogeneity,
    /// Effects at the normal quantiles j/(d+1).
    Heterogeneity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GammaMode {
    Zero,
    /// gamma_k = 1/k.
    Reciprocal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorMode {
    StandardNormal,
    /// 0.5 N(-0.5, 0.25) + 0.5 N(0.5, 1).
    AsymmetricMixture,
    /// 0.5 N(-1.5, 0.25) + 0.5 N(1.5, 1).
    BimodalMixture,
    /// Conditional variance depending on the first policy and the covariate
    /// sum, normalized to unit unconditional variance.
    HeteroscedasticCck,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n: usize,
    pub d: usize,
    pub q: usize,
    pub policy_design: PolicyDesign,
    pub covariate_design: CovariateDesign,
    pub beta_mode: BetaMode,
    pub gamma_mode: GammaMode,
    pub error_mode: ErrorMode,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidSpec("d must be >= 1".into()));
        }
        if self.q + self.d >= self.n {
            return Err(Error::InvalidSpec(format!(
                "need q + d < n, got q={}, d={}, n={}",
                self.q, self.d, self.n
            )));
        }
        if self.error_mode == ErrorMode::HeteroscedasticCck
            && self.policy_design == PolicyDesign::BinaryThreshold
        {
            return Err(Error::InvalidSpec(
                "heteroscedastic errors are defined for the Gaussian policy design".into(),
            ));
        }
        Ok(())
    }

    pub fn true_beta(&self) -> DVector<f64> {
        match self.beta_mode {
            BetaMode::Homogeneity => DVector::zeros(self.d),
            BetaMode::Heterogeneity => {
                let normal = Normal::new(0.0, 1.0).unwrap();
                DVector::from_fn(self.d, |j, _| {
                    normal.inverse_cdf((j + 1) as f64 / (self.d + 1) as f64)
                })
            }
        }
    }
}

/// Bounded identity used by the heteroscedastic error design.
fn t_clip(a: f64) -> f64 {
    if a.abs() <= 1.0 {
        a
    } else {
        a.signum()
    }
}

/// Normalizing constants `(c_eps, c_x)` for the heteroscedastic design so
/// that the unconditional variances equal one. No closed form is attempted;
/// the expectations are integrated by Monte Carlo and cached per `q`.
fn cck_constants(q: usize) -> (f64, f64) {
    static CACHE: Mutex<Option<HashMap<usize, (f64, f64)>>> = Mutex::new(None);
    let mut guard = CACHE.lock().unwrap();
    let cache = guard.get_or_insert_with(HashMap::new);
    if let Some(&c) = cache.get(&q) {
        return c;
    }

    // The covariate sum 1'w over w ~ N(0, I_q) has the law sqrt(q) * N(0,1).
    let draws = 1_000_000usize;
    let sum_x: f64 = (0..draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_rng(0xCC5EED, STREAM_DGP, q as u64, i as u64);
            let s = (q as f64).sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
            1.0 + s * s / 4.0
        })
        .sum();
    let c_x = draws as f64 / sum_x;

    let sum_eps: f64 = (0..draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_rng(0xCC5EED + 1, STREAM_DGP, q as u64, i as u64);
            let s = (q as f64).sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let x1 = (c_x * (1.0 + s * s / 4.0)).sqrt() * z;
            let tv = t_clip(x1) + s;
            1.0 + tv * tv / 4.0
        })
        .sum();
    let c_eps = draws as f64 / sum_eps;
    cache.insert(q, (c_eps, c_x));
    (c_eps, c_x)
}

/// Generate one dataset and the true policy effects.
pub fn gen_dataset(spec: &DgpSpec, seed: u64) -> Result<(Dataset, DVector<f64>)> {
    spec.validate()?;
    let (n, d, q) = (spec.n, spec.d, spec.q);
    let mut rng = derive_rng(seed, STREAM_DGP, 0, 0);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let dummy_cut = normal.inverse_cdf(0.98);

    let mut w = DMatrix::zeros(n, q);
    for i in 0..n {
        for k in 0..q {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            w[(i, k)] = match spec.covariate_design {
                CovariateDesign::SparseDummy => {
                    if z >= dummy_cut {
                        1.0
                    } else {
                        0.0
                    }
                }
                CovariateDesign::Gaussian => z,
            };
        }
    }

    // AR(1) latent policies: x_1 = z_1, x_j = 0.5 x_{j-1} + sqrt(0.75) z_j.
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        let z = standard_normal_vector(&mut rng, d);
        let mut prev = z[0];
        x[(i, 0)] = prev;
        for j in 1..d {
            prev = 0.5 * prev + (0.75f64).sqrt() * z[j];
            x[(i, j)] = prev;
        }
    }
    if spec.policy_design == PolicyDesign::BinaryThreshold {
        for v in x.iter_mut() {
            *v = if *v > 0.0 { 1.0 } else { 0.0 };
        }
    }

    let hetero = spec.error_mode == ErrorMode::HeteroscedasticCck;
    let (c_eps, c_x) = if hetero { cck_constants(q) } else { (1.0, 1.0) };
    if hetero {
        for i in 0..n {
            let s: f64 = (0..q).map(|k| w[(i, k)]).sum();
            let scale = (c_x * (1.0 + s * s / 4.0)).sqrt();
            for j in 0..d {
                x[(i, j)] *= scale;
            }
        }
    }

    let beta = spec.true_beta();
    let gamma = match spec.gamma_mode {
        GammaMode::Zero => DVector::zeros(q),
        GammaMode::Reciprocal => DVector::from_fn(q, |k, _| 1.0 / (k + 1) as f64),
    };

    let mut y = DVector::zeros(n);
    for i in 0..n {
        let eps = match spec.error_mode {
            ErrorMode::StandardNormal => rng.sample::<f64, _>(rand_distr::StandardNormal),
            ErrorMode::AsymmetricMixture => {
                if rng.gen::<f64>() < 0.5 {
                    -0.5 + 0.5 * rng.sample::<f64, _>(rand_distr::StandardNormal)
                } else {
                    0.5 + rng.sample::<f64, _>(rand_distr::StandardNormal)
                }
            }
            ErrorMode::BimodalMixture => {
                if rng.gen::<f64>() < 0.5 {
                    -1.5 + 0.5 * rng.sample::<f64, _>(rand_distr::StandardNormal)
                } else {
                    1.5 + rng.sample::<f64, _>(rand_distr::StandardNormal)
                }
            }
            ErrorMode::HeteroscedasticCck => {
                let s: f64 = (0..q).map(|k| w[(i, k)]).sum();
                let tv = t_clip(x[(i, 0)]) + s;
                let var = c_eps * (1.0 + tv * tv / 4.0);
                var.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal)
            }
        };
        let mut val = eps;
        for j in 0..d {
            val += x[(i, j)] * beta[j];
        }
        for k in 0..q {
            val += w[(i, k)] * gamma[k];
        }
        y[i] = val;
    }

    let dataset = Dataset::new(y, x, w)?;
    Ok((dataset, beta))
}

/// The five method variants compared in the coverage tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    ProposedKj,
    ProposedHck,
    ProposedHc3,
    ProposedEw,
    NoAdjustKj,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::ProposedKj => "Proposed+KJ",
            Method::ProposedHck => "Proposed+HCK",
            Method::ProposedHc3 => "Proposed+HC3",
            Method::ProposedEw => "Proposed+EW",
            Method::NoAdjustKj => "NoAdjust+KJ",
        }
    }

    pub fn estimator(&self) -> EstimatorKind {
        match self {
            Method::ProposedKj | Method::NoAdjustKj => EstimatorKind::Kj,
            Method::ProposedHck => EstimatorKind::Hck,
            Method::ProposedHc3 => EstimatorKind::Hc3,
            Method::ProposedEw => EstimatorKind::Ew,
        }
    }

    pub fn calibrated(&self) -> bool {
        !matches!(self, Method::NoAdjustKj)
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().replace(['-', '_'], "+").as_str() {
            "proposed+kj" => Ok(Method::ProposedKj),
            "proposed+hck" => Ok(Method::ProposedHck),
            "proposed+hc3" => Ok(Method::ProposedHc3),
            "proposed+ew" => Ok(Method::ProposedEw),
            "noadjust+kj" => Ok(Method::NoAdjustKj),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

/// One method's result for one rank in one replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepRecord {
    pub method: Method,
    /// 0-based rank.
    pub rank: usize,
    pub observed_index: usize,
    pub estimate: f64,
    pub ci: (f64, f64),
    /// True order statistic beta_(rank).
    pub target_population: f64,
    /// True effect of the observed rank-th policy.
    pub target_observed: f64,
}

impl RepRecord {
    pub fn covers_population(&self) -> bool {
        self.ci.0 <= self.target_population && self.target_population <= self.ci.1
    }

    pub fn covers_observed(&self) -> bool {
        self.ci.0 <= self.target_observed && self.target_observed <= self.ci.1
    }
}

fn covariance_for(
    kind: EstimatorKind,
    fit: &crate::regression::FitResult,
    proj: &crate::regression::AnnihilatorProjection,
) -> Result<CovarianceEstimate> {
    let cov = match kind {
        EstimatorKind::Kj => estimate_kj(fit)?,
        EstimatorKind::Hck => estimate_hck(fit, proj)?,
        EstimatorKind::Ew => estimate_ew(fit)?,
        EstimatorKind::Hc3 => estimate_hc3(fit)?,
    };
    Ok(ensure_psd(cov))
}

/// Generate one dataset, fit once, and run every requested method on it.
pub fn run_replication(
    spec: &DgpSpec,
    methods: &[Method],
    d0: usize,
    alpha: f64,
    b_draws: usize,
    tuning_cfg: &TuningConfig,
    seed: u64,
) -> Result<Vec<RepRecord>> {
    let (data, true_beta) = gen_dataset(spec, seed)?;
    let needs_dense = methods.iter().any(|m| m.estimator() == EstimatorKind::Hck);
    let mode = if needs_dense {
        ProjectionMode::Dense
    } else {
        ProjectionMode::Implicit
    };
    let proj = build_annihilator(&data.w, data.n(), mode)?;
    let fit = partialled_ols(&data, &proj)?;

    let mut true_sorted: Vec<f64> = true_beta.iter().cloned().collect();
    true_sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let z_crit = Normal::new(0.0, 1.0)
        .unwrap()
        .inverse_cdf(1.0 - alpha / 2.0);
    let obs = observed_best_indices(&fit.beta_hat, d0);

    // Covariances are shared across methods using the same estimator.
    let mut cov_cache: HashMap<EstimatorKind, CovarianceEstimate> = HashMap::new();
    let mut records = Vec::new();
    for &method in methods {
        let kind = method.estimator();
        if !cov_cache.contains_key(&kind) {
            cov_cache.insert(kind, covariance_for(kind, &fit, &proj)?);
        }
        let cov = cov_cache[&kind].clone();
        let est = PolicyEstimate {
            beta_hat: fit.beta_hat.clone(),
            omega: cov,
            n: fit.n_retained(),
            d0,
        };

        if method.calibrated() {
            let pairs: Vec<TuningPair> = select_tuning(&est, tuning_cfg, seed)?;
            let report = calibrate(&est, &pairs, b_draws, alpha, seed)?;
            for rank in 0..d0 {
                let rr = &report.ranks[rank];
                records.push(RepRecord {
                    method,
                    rank,
                    observed_index: rr.observed_index,
                    estimate: rr.point_estimate_tilde_star,
                    ci: rr.ci,
                    target_population: true_sorted[rank],
                    target_observed: true_beta[rr.observed_index],
                });
            }
        } else {
            for (rank, &idx) in obs.iter().enumerate() {
                let point = est.beta_hat[idx];
                let se = (est.omega.omega[(idx, idx)].max(0.0) / est.n as f64).sqrt();
                records.push(RepRecord {
                    method,
                    rank,
                    observed_index: idx,
                    estimate: point,
                    ci: (point - z_crit * se, point + z_crit * se),
                    target_population: true_sorted[rank],
                    target_observed: true_beta[idx],
                });
            }
        }
    }
    Ok(records)
}

/// Aggregated coverage / bias statistics for one (method, rank, target) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McRow {
    pub method: String,
    /// 1-based rank, as in the reported tables.
    pub rank: usize,
    /// "population" for beta_(j), "observed" for beta_jhat.
    pub target: String,
    pub coverage: f64,
    pub coverage_se: f64,
    pub sqrtn_bias: f64,
    pub bias_se: f64,
    pub replications: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub rows: Vec<McRow>,
    pub replications: usize,
    pub runtime_secs: f64,
}

impl MonteCarloReport {
    pub fn find(&self, method: Method, rank: usize, target: &str) -> Option<&McRow> {
        self.rows
            .iter()
            .find(|r| r.method == method.label() && r.rank == rank + 1 && r.target == target)
    }
}

/// Run `reps` independent replications and aggregate coverage and
/// root-n-scaled bias per method, rank, and target.
///
/// Per-replication seeds derive from `(master_seed, replication index)`;
/// the report is identical for any worker count.
pub fn monte_carlo(
    spec: &DgpSpec,
    methods: &[Method],
    reps: usize,
    d0: usize,
    alpha: f64,
    b_draws: usize,
    tuning_cfg: &TuningConfig,
    master_seed: u64,
) -> Result<MonteCarloReport> {
    if reps == 0 {
        return Err(Error::InvalidSpec("reps must be positive".into()));
    }
    let start = Instant::now();
    let all: Vec<Vec<RepRecord>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = derive_rng(master_seed, STREAM_REPLICATION, rep as u64, 0).gen::<u64>();
            run_replication(spec, methods, d0, alpha, b_draws, tuning_cfg, rep_seed)
        })
        .collect::<Result<_>>()?;

    let sqrt_n = (spec.n as f64).sqrt();
    let mut rows = Vec::new();
    for &method in methods {
        for rank in 0..d0 {
            for target in ["population", "observed"] {
                let mut covered = 0usize;
                let mut errors = Vec::with_capacity(reps);
                for rep in &all {
                    for rec in rep.iter().filter(|r| r.method == method && r.rank == rank) {
                        let (cov, tgt) = match target {
                            "population" => (rec.covers_population(), rec.target_population),
                            _ => (rec.covers_observed(), rec.target_observed),
                        };
                        if cov {
                            covered += 1;
                        }
                        errors.push(rec.estimate - tgt);
                    }
                }
                let m = errors.len() as f64;
                let p = covered as f64 / m;
                let mean_err = errors.iter().sum::<f64>() / m;
                let var_err = errors.iter().map(|e| (e - mean_err) * (e - mean_err)).sum::<f64>()
                    / (m - 1.0).max(1.0);
                rows.push(McRow {
                    method: method.label().to_string(),
                    rank: rank + 1,
                    target: target.to_string(),
                    coverage: p,
                    coverage_se: (p * (1.0 - p) / m).sqrt(),
                    sqrtn_bias: sqrt_n * mean_err,
                    bias_se: sqrt_n * (var_err / m).sqrt(),
                    replications: errors.len(),
                });
            }
        }
    }

    Ok(MonteCarloReport {
        rows,
        replications: reps,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> DgpSpec {
        DgpSpec {
            n: 200,
            d: 3,
            q: 5,
            policy_design: PolicyDesign::GaussianAr,
            covariate_design: CovariateDesign::SparseDummy,
            beta_mode: BetaMode::Heterogeneity,
            gamma_mode: GammaMode::Reciprocal,
            error_mode: ErrorMode::StandardNormal,
        }
    }

    #[test]
    fn heterogeneity_betas_match_quantiles() {
        let spec = DgpSpec { d: 5, ..small_spec() };
        let beta = spec.true_beta();
        let mut sorted: Vec<f64> = beta.iter().cloned().collect();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!((sorted[0] - 0.9674).abs() < 5e-4);
        assert!((sorted[1] - 0.4307).abs() < 5e-4);
    }

    #[test]
    fn dataset_dimensions_and_determinism() {
        let spec = small_spec();
        let (a, _) = gen_dataset(&spec, 42).unwrap();
        let (b, _) = gen_dataset(&spec, 42).unwrap();
        assert_eq!(a.n(), 200);
        assert_eq!(a.d(), 3);
        assert_eq!(a.q(), 5);
        assert_eq!(a.y, b.y);
        assert_eq!(a.x, b.x);
        assert_eq!(a.w, b.w);
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = DgpSpec { q: 300, ..small_spec() };
        assert!(gen_dataset(&spec, 1).is_err());
    }
}
