//! CSV loading and panel-to-dummy expansion.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use topeff_core::Dataset;

use crate::config::AnalysisConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct IngestDiagnostics {
    pub rows_read: usize,
    pub dropped_missing: usize,
    pub unit_levels: usize,
    pub group_levels: usize,
    pub interaction_columns: usize,
}

/// A parsed dataset plus the labels the report needs.
pub struct LoadedData {
    pub dataset: Dataset,
    pub policy_names: Vec<String>,
    pub covariate_names: Vec<String>,
    pub diagnostics: IngestDiagnostics,
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "NA"
}

fn resolve_covariates(header: &[String], config: &AnalysisConfig) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let taken: Vec<&String> = config
        .policies
        .iter()
        .chain(std::iter::once(&config.outcome))
        .collect();
    for pattern in &config.covariates {
        if let Some(prefix) = pattern.strip_suffix('*') {
            let mut any = false;
            for name in header {
                if name.starts_with(prefix) && !taken.contains(&name) && !out.contains(name) {
                    out.push(name.clone());
                    any = true;
                }
            }
            if !any {
                return Err(CliError::ColumnMissing(pattern.clone()));
            }
        } else {
            if !header.contains(pattern) {
                return Err(CliError::ColumnMissing(pattern.clone()));
            }
            if !out.contains(pattern) {
                out.push(pattern.clone());
            }
        }
    }
    Ok(out)
}

/// Load the columns named by `config`, dropping rows with missing values.
pub fn load_csv(path: &Path, config: &AnalysisConfig) -> Result<LoadedData> {
    if !path.exists() {
        return Err(CliError::FileNotFound(path.display().to_string()));
    }
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();

    let find = |name: &String| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::ColumnMissing(name.clone()))
    };
    let outcome_idx = find(&config.outcome)?;
    let policy_idx: Vec<usize> = config.policies.iter().map(find).collect::<Result<_>>()?;
    let covariate_names = resolve_covariates(&header, config)?;
    let covariate_idx: Vec<usize> = covariate_names.iter().map(find).collect::<Result<_>>()?;
    let unit_idx = config.unit_id.as_ref().map(find).transpose()?;
    let group_idx = config.group_id.as_ref().map(find).transpose()?;

    let mut y = Vec::new();
    let mut x_rows: Vec<Vec<f64>> = Vec::new();
    let mut w_rows: Vec<Vec<f64>> = Vec::new();
    let mut unit_ids: Vec<String> = Vec::new();
    let mut group_ids: Vec<String> = Vec::new();
    let mut diagnostics = IngestDiagnostics::default();

    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_no + 1;
        diagnostics.rows_read += 1;

        let numeric_cells: Vec<(usize, &str)> = std::iter::once(outcome_idx)
            .chain(policy_idx.iter().cloned())
            .chain(covariate_idx.iter().cloned())
            .map(|idx| (idx, record.get(idx).unwrap_or("")))
            .collect();
        if numeric_cells.iter().any(|(_, cell)| is_missing(cell.trim())) {
            diagnostics.dropped_missing += 1;
            continue;
        }
        let mut values = Vec::with_capacity(numeric_cells.len());
        for (idx, cell) in &numeric_cells {
            let parsed: f64 = cell.trim().parse().map_err(|_| CliError::ParseError {
                row,
                column: header[*idx].clone(),
            })?;
            values.push(parsed);
        }
        y.push(values[0]);
        x_rows.push(values[1..1 + policy_idx.len()].to_vec());
        w_rows.push(values[1 + policy_idx.len()..].to_vec());

        if let Some(idx) = unit_idx {
            let cell = record.get(idx).unwrap_or("").trim();
            if cell.is_empty() {
                return Err(CliError::IdParseError {
                    row,
                    column: config.unit_id.clone().unwrap(),
                });
            }
            unit_ids.push(cell.to_string());
        }
        if let Some(idx) = group_idx {
            let cell = record.get(idx).unwrap_or("").trim();
            if cell.is_empty() {
                return Err(CliError::IdParseError {
                    row,
                    column: config.group_id.clone().unwrap(),
                });
            }
            group_ids.push(cell.to_string());
        }
    }

    let n = y.len();
    if n == 0 {
        return Err(CliError::EmptyAfterFiltering);
    }

    let d = policy_idx.len();
    let x = DMatrix::from_fn(n, d, |i, j| x_rows[i][j]);
    let mut w = DMatrix::from_fn(n, covariate_idx.len(), |i, j| w_rows[i][j]);
    let mut covariate_names = covariate_names;

    if config.pairwise_interactions {
        let (expanded, names) = add_pairwise_interactions(&w, &covariate_names);
        diagnostics.interaction_columns = expanded.ncols() - w.ncols();
        w = expanded;
        covariate_names = names;
    }

    if unit_idx.is_some() {
        let groups = if group_idx.is_some() { Some(group_ids.as_slice()) } else { None };
        let (expanded, names, unit_levels, group_levels) =
            expand_panel(&w, &covariate_names, &unit_ids, groups)?;
        w = expanded;
        covariate_names = names;
        diagnostics.unit_levels = unit_levels;
        diagnostics.group_levels = group_levels;
    }

    let dataset = Dataset::new(DVector::from_vec(y), x, w)?;
    Ok(LoadedData {
        dataset,
        policy_names: config.policies.clone(),
        covariate_names,
        diagnostics,
    })
}

/// All distinct pairwise products of the covariate columns, skipping
/// products that come out constant.
pub fn add_pairwise_interactions(
    w: &DMatrix<f64>,
    names: &[String],
) -> (DMatrix<f64>, Vec<String>) {
    let n = w.nrows();
    let q = w.ncols();
    let mut cols: Vec<Vec<f64>> = (0..q).map(|j| w.column(j).iter().cloned().collect()).collect();
    let mut out_names: Vec<String> = names.to_vec();
    for a in 0..q {
        for b in a..q {
            let prod: Vec<f64> = (0..n).map(|i| w[(i, a)] * w[(i, b)]).collect();
            let constant = prod.iter().all(|&v| (v - prod[0]).abs() < 1e-12);
            if !constant {
                out_names.push(format!("{}:{}", names[a], names[b]));
                cols.push(prod);
            }
        }
    }
    let out = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    (out, out_names)
}

fn first_seen_levels(ids: &[String]) -> (Vec<String>, BTreeMap<&String, usize>) {
    let mut levels: Vec<String> = Vec::new();
    let mut index = BTreeMap::new();
    for id in ids {
        if !index.contains_key(id) {
            index.insert(id, levels.len());
            levels.push(id.clone());
        }
    }
    (levels, index)
}

fn has_intercept_equivalent(w: &DMatrix<f64>) -> bool {
    (0..w.ncols()).any(|j| {
        let col = w.column(j);
        let first = col[0];
        first != 0.0 && col.iter().all(|&v| (v - first).abs() < 1e-12)
    })
}

/// Append one dummy column per unit level and, if supplied, one per group
/// level.
///
/// A reference level is dropped from a block only when the design already
/// spans a constant (an intercept-equivalent column, or a previously
/// appended full dummy block); dropping it unconditionally would change the
/// fitted model when no intercept is present. The reference is always
/// the first level seen in the file.
pub fn expand_panel(
    w: &DMatrix<f64>,
    names: &[String],
    unit_ids: &[String],
    group_ids: Option<&[String]>,
) -> Result<(DMatrix<f64>, Vec<String>, usize, usize)> {
    let n = unit_ids.len();
    assert_eq!(w.nrows(), n);
    let (unit_levels, unit_index) = first_seen_levels(unit_ids);
    if unit_levels.len() < 2 {
        return Err(CliError::SingleUnit);
    }

    let spans_constant = has_intercept_equivalent(w);
    let mut cols: Vec<Vec<f64>> = (0..w.ncols())
        .map(|j| w.column(j).iter().cloned().collect())
        .collect();
    let mut out_names: Vec<String> = names.to_vec();

    let mut append_block = |levels: &[String],
                            index: &BTreeMap<&String, usize>,
                            ids: &[String],
                            label: &str,
                            drop_reference: bool| {
        for (lvl_no, level) in levels.iter().enumerate() {
            if drop_reference && lvl_no == 0 {
                continue;
            }
            let mut col = vec![0.0; n];
            for (i, id) in ids.iter().enumerate() {
                if index[id] == lvl_no {
                    col[i] = 1.0;
                }
            }
            out_names.push(format!("{label}={level}"));
            cols.push(col);
        }
    };

    let unit_count = unit_levels.len();
    append_block(&unit_levels, &unit_index, unit_ids, "unit", spans_constant);

    // The full (or intercept-completed) unit block spans a constant, so the
    // group block always drops its reference level.
    let mut group_count = 0;
    if let Some(gids) = group_ids {
        assert_eq!(gids.len(), n);
        let (group_levels, group_index) = first_seen_levels(gids);
        group_count = group_levels.len();
        append_block(&group_levels, &group_index, gids, "group", true);
    }

    let out = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    Ok((out, out_names, unit_count, group_count))
}
