//! Double-bootstrap selection of the near-tie window constants.
//!
//! For each rank, candidate `(c_L, c_R)` pairs are scored by how uniformly
//! the inner-level conditional CDF statistics distribute across outer
//! draws. The pair minimizing that loss is kept; when the loss surface is
//! flat, plausible pairs are averaged instead.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{observed_best_indices, NormalFactor, PolicyEstimate};
use crate::rng::{derive_rng, STREAM_TUNING, STREAM_TUNING_GAMMA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionMode {
    /// Grid minimizer of the uniformity loss.
    Minimizer,
    /// Flat surface: coordinate-wise mean of pairs below the uniform-loss
    /// reference quantile.
    PlausibleAverage,
    /// No pair below the reference quantile; the widest window is returned
    /// as a default.
    Default,
}

/// Selected window constants for one rank.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuningPair {
    /// 0-based rank.
    pub rank: usize,
    pub c_l: f64,
    pub c_r: f64,
    pub delta: f64,
    pub loss: f64,
    pub selection_mode: SelectionMode,
    pub grid_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuningConfig {
    /// Outer draws per pair.
    pub t_outer: usize,
    /// Inner draws per outer draw.
    pub r_inner: usize,
    pub delta: f64,
    /// Number of candidate pairs.
    pub grid: usize,
    /// Monte Carlo size for the uniform-loss reference quantile.
    pub gamma_draws: usize,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            t_outer: 100,
            r_inner: 200,
            delta: 0.25,
            grid: 20,
            gamma_draws: 10_000,
        }
    }
}

impl TuningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_outer < 10 || self.r_inner < 50 || self.grid < 4 {
            return Err(Error::InvalidTuning(format!(
                "need T >= 10, R >= 50, G >= 4; got T={}, R={}, G={}",
                self.t_outer, self.r_inner, self.grid
            )));
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::InvalidTuning(format!(
                "delta must be in (0, 0.5), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Shrink the coefficients toward their mean before tuning.
///
/// Returns the shrunk center and the shrinkage weight. Zero dispersion
/// (all coefficients equal) shrinks completely.
pub fn shrink_center(beta_hat: &DVector<f64>, omega: &DMatrix<f64>, n: usize) -> (DVector<f64>, f64) {
    let d = beta_hat.len();
    let mean = beta_hat.iter().sum::<f64>() / d as f64;
    let dispersion: f64 = beta_hat.iter().map(|b| (b - mean) * (b - mean)).sum();
    let trace_s: f64 = (0..d).map(|j| omega[(j, j)]).sum();
    let delta = if dispersion <= 0.0 {
        1.0
    } else {
        (trace_s / (n as f64 * dispersion) * (n as f64).powf(0.05)).min(1.0)
    };
    let center = DVector::from_fn(d, |j, _| delta * mean + (1.0 - delta) * beta_hat[j]);
    (center, delta)
}

fn linspace(hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![hi];
    }
    (0..count)
        .map(|i| hi * i as f64 / (count - 1) as f64)
        .collect()
}

/// Split `g` into the most-square pair of factors.
fn grid_shape(g: usize) -> (usize, usize) {
    let mut a = (g as f64).sqrt().floor() as usize;
    while a > 1 && g % a != 0 {
        a -= 1;
    }
    (a.max(1), g / a.max(1))
}

/// Crossed candidate grid over the data-driven region, corners included.
///
/// The region endpoints scale with the spread of the order statistics;
/// each is floored at 2.0 so a degenerate endpoint (rank 1's left side)
/// still admits a usable window.
pub fn candidate_grid(
    beta_hat: &DVector<f64>,
    s_j: f64,
    rank: usize,
    delta: f64,
    n: usize,
    g: usize,
) -> Vec<(f64, f64)> {
    let mut sorted: Vec<f64> = beta_hat.iter().cloned().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let d = sorted.len();
    let n_pow = (n as f64).powf(delta);
    let s_pow = s_j.max(0.0).powf(delta);
    let scale = if s_pow > 0.0 { n_pow / s_pow } else { 0.0 };
    let hi_l = (2.0 * (sorted[0] - sorted[rank]) * scale).max(2.0);
    let hi_r = (2.0 * (sorted[rank] - sorted[d - 1]) * scale).max(2.0);

    let (g_l, g_r) = grid_shape(g);
    let mut pairs = Vec::with_capacity(g);
    for &cl in &linspace(hi_l, g_l) {
        for &cr in &linspace(hi_r, g_r) {
            pairs.push((cl, cr));
        }
    }
    pairs
}

/// Center pivot and sorted inner draws shared across candidate pairs.
///
/// Each outer draw plays the role of the data; the inner draws around it
/// play the role of the resampling step. The coverage statistics compare
/// the inner tie averages against the order statistic of the fixed center,
/// which stands in for the truth.
struct DoubleBootstrapDraws {
    /// The rank-th largest entry of the (fixed) center vector.
    center_pivot: f64,
    /// Per (outer, inner): inner values sorted descending.
    inner_sorted: Vec<Vec<f64>>,
}

fn generate_draws(
    center: &DVector<f64>,
    cov: &DMatrix<f64>,
    cfg: &TuningConfig,
    rank: usize,
    seed: u64,
) -> DoubleBootstrapDraws {
    let t_outer = cfg.t_outer;
    let r_inner = cfg.r_inner;
    let outer_factor = NormalFactor::new(center.clone(), cov);

    let mut center_sorted: Vec<f64> = center.iter().cloned().collect();
    center_sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let center_pivot = center_sorted[rank];

    let per_t: Vec<Vec<Vec<f64>>> = (0..t_outer)
        .into_par_iter()
        .map(|t| {
            let mut rng = derive_rng(seed, STREAM_TUNING, rank as u64, t as u64);
            let outer = outer_factor.draw(&mut rng);
            let inner_factor = NormalFactor::new(outer, cov);
            (0..r_inner)
                .map(|_| {
                    let draw = inner_factor.draw(&mut rng);
                    let mut vals: Vec<f64> = draw.iter().cloned().collect();
                    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    vals
                })
                .collect()
        })
        .collect();

    let mut inner_sorted = Vec::with_capacity(t_outer * r_inner);
    for inners in per_t {
        inner_sorted.extend(inners);
    }
    DoubleBootstrapDraws {
        center_pivot,
        inner_sorted,
    }
}

/// Tie-averaged value around the rank-th largest entry of a descending array.
fn window_average(sorted_desc: &[f64], rank: usize, b_l: f64, b_r: f64) -> f64 {
    let pivot = sorted_desc[rank];
    let mut sum = 0.0;
    let mut count = 0usize;
    for &v in sorted_desc {
        if v >= pivot - b_l && v <= pivot + b_r {
            sum += v;
            count += 1;
        }
    }
    sum / count as f64
}

/// Loss of a vector of bootstrap coverage statistics against the uniform
/// order-statistic targets `k / (T + 1)`.
pub fn loss_from_stats(mut b_stats: Vec<f64>) -> f64 {
    let t = b_stats.len();
    b_stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut loss = 0.0;
    for (i, b) in b_stats.iter().enumerate() {
        let expect = (i + 1) as f64 / (t + 1) as f64;
        loss += (b - expect) * (b - expect);
    }
    loss / t as f64
}

fn loss_for_window(draws: &DoubleBootstrapDraws, cfg: &TuningConfig, rank: usize, b_l: f64, b_r: f64) -> f64 {
    let r = cfg.r_inner;
    let pivot = draws.center_pivot;
    let b_stats: Vec<f64> = (0..cfg.t_outer)
        .map(|t| {
            let base = t * r;
            let count = (0..r)
                .filter(|&i| window_average(&draws.inner_sorted[base + i], rank, b_l, b_r) <= pivot)
                .count();
            count as f64 / r as f64
        })
        .collect();
    loss_from_stats(b_stats)
}

/// Uniformity loss of one candidate pair (self-contained draws).
pub fn evaluate_pair(
    beta_center: &DVector<f64>,
    omega: &DMatrix<f64>,
    n: usize,
    rank: usize,
    pair: (f64, f64),
    s_j: f64,
    cfg: &TuningConfig,
    seed: u64,
) -> f64 {
    let cov = omega / n as f64;
    let draws = generate_draws(beta_center, &cov, cfg, rank, seed);
    let scale = (n as f64).powf(-cfg.delta) * s_j.max(0.0).powf(cfg.delta);
    loss_for_window(&draws, cfg, rank, pair.0 * scale, pair.1 * scale)
}

/// Monte Carlo `level`-quantile of the loss of perfectly uniform samples.
pub fn uniform_loss_quantile(t: usize, level: f64, draws: usize, seed: u64) -> f64 {
    let mut losses: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_rng(seed, STREAM_TUNING_GAMMA, t as u64, i as u64);
            let us: Vec<f64> = (0..t).map(|_| rng.gen::<f64>()).collect();
            loss_from_stats(us)
        })
        .collect();
    losses.sort_by(|a, b| a.partial_cmp(b).unwrap());
    crate::inference::empirical_quantile(&losses, level)
}

/// Fraction of the reference quantile below which the loss surface counts
/// as flat.
pub const FLAT_LOSS_FRACTION: f64 = 0.1;

/// Select a tuning pair per rank `0..d0` by grid search over the
/// double-bootstrap loss.
pub fn select_tuning(est: &PolicyEstimate, cfg: &TuningConfig, seed: u64) -> Result<Vec<TuningPair>> {
    cfg.validate()?;
    let n = est.n;
    let (center, _shrink) = shrink_center(&est.beta_hat, &est.omega.omega, n);
    let cov = &est.omega.omega / n as f64;
    let obs = observed_best_indices(&est.beta_hat, est.d0);
    let gamma = uniform_loss_quantile(cfg.t_outer, 0.975, cfg.gamma_draws, seed);

    let mut out = Vec::with_capacity(est.d0);
    for (rank, &obs_idx) in obs.iter().enumerate() {
        let s_j = est.omega.omega[(obs_idx, obs_idx)];
        let grid = candidate_grid(&est.beta_hat, s_j, rank, cfg.delta, n, cfg.grid);
        let draws = generate_draws(&center, &cov, cfg, rank, seed);
        let scale = (n as f64).powf(-cfg.delta) * s_j.max(0.0).powf(cfg.delta);

        let losses: Vec<f64> = grid
            .par_iter()
            .map(|&(cl, cr)| loss_for_window(&draws, cfg, rank, cl * scale, cr * scale))
            .collect();

        let (min_idx, &min_loss) = losses
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(a.0.cmp(&b.0)))
            .unwrap();
        let max_loss = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let plausible: Vec<usize> = (0..grid.len()).filter(|&i| losses[i] < gamma).collect();
        let widest = |set: &[usize]| {
            set.iter()
                .cloned()
                .max_by(|&a, &b| {
                    let wa = grid[a].0 + grid[a].1;
                    let wb = grid[b].0 + grid[b].1;
                    wa.partial_cmp(&wb)
                        .unwrap()
                        .then(grid[a].0.partial_cmp(&grid[b].0).unwrap())
                        .then(b.cmp(&a))
                })
                .unwrap_or(min_idx)
        };

        let pair = if plausible.is_empty() {
            // No candidate is consistent with a uniform B-statistic, so the
            // loss cannot rank candidates; take the widest window, which is
            // the safe direction when the coefficients are nearly tied.
            let all: Vec<usize> = (0..grid.len()).collect();
            let best = widest(&all);
            TuningPair {
                rank,
                c_l: grid[best].0,
                c_r: grid[best].1,
                delta: cfg.delta,
                loss: losses[best],
                selection_mode: SelectionMode::Default,
                grid_size: grid.len(),
            }
        } else if max_loss - min_loss <= FLAT_LOSS_FRACTION * gamma {
            let m = plausible.len() as f64;
            TuningPair {
                rank,
                c_l: plausible.iter().map(|&i| grid[i].0).sum::<f64>() / m,
                c_r: plausible.iter().map(|&i| grid[i].1).sum::<f64>() / m,
                delta: cfg.delta,
                loss: plausible.iter().map(|&i| losses[i]).sum::<f64>() / m,
                selection_mode: SelectionMode::PlausibleAverage,
                grid_size: grid.len(),
            }
        } else {
            TuningPair {
                rank,
                c_l: grid[min_idx].0,
                c_r: grid[min_idx].1,
                delta: cfg.delta,
                loss: min_loss,
                selection_mode: SelectionMode::Minimizer,
                grid_size: grid.len(),
            }
        };
        out.push(pair);
    }
    Ok(out)
}
