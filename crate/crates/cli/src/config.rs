//! Flat key=value configuration files with command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use topeff_core::{EstimatorKind, TuningConfig};

use crate::error::{CliError, Result};

/// How many top ranks to report on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankRule {
    /// Fixed number of ranks.
    Fixed(usize),
    /// Count of order statistics above `c + c1 * n^(-1/4)`.
    Threshold { c: f64, c1: f64 },
}

#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub input: PathBuf,
    pub outcome: String,
    pub policies: Vec<String>,
    /// Covariate names; entries ending in `*` match by prefix.
    pub covariates: Vec<String>,
    pub unit_id: Option<String>,
    pub time_id: Option<String>,
    pub group_id: Option<String>,
    pub rank_rule: RankRule,
    pub alpha: f64,
    pub b_draws: usize,
    pub tuning: TuningConfig,
    pub estimator: EstimatorKind,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Add pairwise products of the covariate columns.
    pub pairwise_interactions: bool,
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            return Err(CliError::BadConfig("at least one policy column is required".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::Core(topeff_core::Error::InvalidAlpha(self.alpha)));
        }
        if let RankRule::Fixed(d0) = self.rank_rule {
            if d0 == 0 || d0 > self.policies.len() {
                return Err(CliError::BadConfig(format!(
                    "d0 = {} must be between 1 and the number of policies ({})",
                    d0,
                    self.policies.len()
                )));
            }
        }
        if self.b_draws == 0 {
            return Err(CliError::BadConfig("resampling draws must be positive".into()));
        }
        self.tuning.validate()?;
        Ok(())
    }
}

fn split_list(v: &str) -> Vec<String> {
    v.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Parse `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::BadConfig(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_num<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|_| CliError::BadConfig(format!("cannot parse `{key} = {v}`"))),
    }
}

/// Read a config file and apply defaults for anything unspecified.
pub fn load_config(path: &Path) -> Result<AnalysisConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| CliError::FileNotFound(path.display().to_string()))?;
    let map = parse_key_values(&text)?;

    let known = [
        "input", "outcome", "policies", "covariates", "unit_id", "time_id", "group_id", "d0",
        "threshold", "c1", "alpha", "b", "t", "r", "delta", "grid", "estimator", "seed", "out",
        "interactions",
    ];
    for key in map.keys() {
        if !known.contains(&key.as_str()) {
            return Err(CliError::BadConfig(format!("unknown key `{key}`")));
        }
    }

    let require = |key: &str| -> Result<String> {
        map.get(key)
            .cloned()
            .ok_or_else(|| CliError::BadConfig(format!("missing required key `{key}`")))
    };

    let rank_rule = match (map.get("d0"), map.get("threshold")) {
        (Some(_), Some(_)) => {
            return Err(CliError::BadConfig("specify either `d0` or `threshold`, not both".into()))
        }
        (None, Some(_)) => RankRule::Threshold {
            c: parse_num::<f64>(&map, "threshold")?.unwrap(),
            c1: parse_num::<f64>(&map, "c1")?.unwrap_or(1.0),
        },
        _ => RankRule::Fixed(parse_num::<usize>(&map, "d0")?.unwrap_or(1)),
    };

    let estimator = match map.get("estimator") {
        None => EstimatorKind::Kj,
        Some(v) => v
            .parse::<EstimatorKind>()
            .map_err(|e| CliError::BadConfig(e))?,
    };

    let defaults = TuningConfig::default();
    let config = AnalysisConfig {
        input: PathBuf::from(require("input")?),
        outcome: require("outcome")?,
        policies: split_list(&require("policies")?),
        covariates: map.get("covariates").map(|v| split_list(v)).unwrap_or_default(),
        unit_id: map.get("unit_id").cloned(),
        time_id: map.get("time_id").cloned(),
        group_id: map.get("group_id").cloned(),
        rank_rule,
        alpha: parse_num::<f64>(&map, "alpha")?.unwrap_or(0.05),
        b_draws: parse_num::<usize>(&map, "b")?.unwrap_or(2000),
        tuning: TuningConfig {
            t_outer: parse_num::<usize>(&map, "t")?.unwrap_or(defaults.t_outer),
            r_inner: parse_num::<usize>(&map, "r")?.unwrap_or(defaults.r_inner),
            delta: parse_num::<f64>(&map, "delta")?.unwrap_or(defaults.delta),
            grid: parse_num::<usize>(&map, "grid")?.unwrap_or(defaults.grid),
            ..defaults
        },
        estimator,
        seed: parse_num::<u64>(&map, "seed")?.unwrap_or(0),
        out_dir: PathBuf::from(map.get("out").cloned().unwrap_or_else(|| ".".into())),
        pairwise_interactions: matches!(map.get("interactions").map(String::as_str), Some("pairwise")),
    };
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(body: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn defaults_fill_in() {
        let f = write_config("input = data.csv\noutcome = y\npolicies = x1, x2\n");
        let cfg = load_config(f.path()).unwrap();
        assert_eq!(cfg.alpha, 0.05);
        assert_eq!(cfg.b_draws, 2000);
        assert_eq!(cfg.tuning.t_outer, 100);
        assert_eq!(cfg.tuning.r_inner, 200);
        assert_eq!(cfg.tuning.delta, 0.25);
        assert_eq!(cfg.tuning.grid, 20);
        assert_eq!(cfg.rank_rule, RankRule::Fixed(1));
        assert_eq!(cfg.estimator, EstimatorKind::Kj);
    }

    #[test]
    fn bad_alpha_rejected_before_any_io() {
        let f = write_config("input = nope.csv\noutcome = y\npolicies = x\nalpha = 1.5\n");
        match load_config(f.path()) {
            Err(CliError::Core(topeff_core::Error::InvalidAlpha(a))) => assert_eq!(a, 1.5),
            other => panic!("expected InvalidAlpha, got {other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let f = write_config("input = a.csv\noutcome = y\npolicies = x\nbogus = 1\n");
        assert!(matches!(load_config(f.path()), Err(CliError::BadConfig(_))));
    }

    #[test]
    fn threshold_rule_parsed() {
        let f = write_config("input = a.csv\noutcome = y\npolicies = x\nthreshold = 0.3\nc1 = 2\n");
        let cfg = load_config(f.path()).unwrap();
        assert_eq!(cfg.rank_rule, RankRule::Threshold { c: 0.3, c1: 2.0 });
    }
}
