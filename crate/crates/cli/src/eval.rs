//! Stratified k-fold evaluation, optional inner grid search over `(C1, C2)`,
//! and one-vs-all evaluation of multi-class data.

use std::time::Instant;

use convmpt_core::{
    mean_fold_metric, ova_pos_at_top, pos_at_top, split_folds, train, Dataset, FoldSummary, MulticlassDataset,
    ScoredSet, TrainConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DEFAULT_C1_GRID: [f64; 3] = [0.01, 0.1, 1.0];
pub const DEFAULT_C2_GRID: [f64; 3] = [0.01, 0.1, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid { c1: DEFAULT_C1_GRID.to_vec(), c2: DEFAULT_C2_GRID.to_vec() }
    }
}

impl Grid {
    /// Parses `c1=a,b,...` and `c2=...` specs. An axis left out keeps the base value.
    pub fn parse(specs: &[String], base: &TrainConfig) -> CliResult<Grid> {
        let mut grid = Grid { c1: vec![base.c1], c2: vec![base.c2] };
        for spec in specs {
            let (axis, values) =
                spec.split_once('=').ok_or_else(|| CliError::Usage(format!("grid spec `{spec}` is not axis=values")))?;
            let values = values
                .split(',')
                .map(|v| match v.trim().parse::<f64>() {
                    Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
                    _ => Err(CliError::Usage(format!("grid value `{v}` must be a positive number"))),
                })
                .collect::<CliResult<Vec<f64>>>()?;
            match axis.trim().to_ascii_lowercase().as_str() {
                "c1" => grid.c1 = values,
                "c2" => grid.c2 = values,
                other => return Err(CliError::Usage(format!("unknown grid axis `{other}`"))),
            }
        }
        Ok(grid)
    }

    fn candidates(&self) -> Vec<(f64, f64)> {
        self.c1.iter().flat_map(|&c1| self.c2.iter().map(move |&c2| (c1, c2))).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub train_bags: usize,
    pub test_bags: usize,
    pub test_positives: usize,
    pub c1: f64,
    pub c2: f64,
    pub train_pos_at_top: f64,
    pub pos_at_top: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub inner_folds: Option<usize>,
    pub per_fold: Vec<FoldRecord>,
    pub summary: FoldSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OvaFoldRecord {
    pub fold: usize,
    /// Per class, in class order.
    pub pos_at_top: Vec<f64>,
    pub macro_average: f64,
    pub selected: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OvaCvReport {
    pub folds: usize,
    pub inner_folds: Option<usize>,
    pub classes: Vec<String>,
    pub per_fold: Vec<OvaFoldRecord>,
    pub per_class: Vec<FoldSummary>,
    /// Summary of the per-fold macro averages.
    pub summary: FoldSummary,
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub folds: usize,
    pub grid: Option<Grid>,
    pub inner_folds: usize,
}

fn inner_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(fold as u64 + 1))
}

fn test_score(model_config: &TrainConfig, train_set: &Dataset, test_set: &Dataset) -> CliResult<(f64, f64)> {
    let model = train(train_set, model_config)?;
    let scored = ScoredSet::new(model.scores(test_set)?, test_set.labels())?;
    Ok((model.diagnostics.final_train_pos_at_top, pos_at_top(&scored)?))
}

/// Mean test Pos@Top of `config` over a stratified split of `dataset`.
fn inner_cv(dataset: &Dataset, config: &TrainConfig, k: usize, seed: u64) -> CliResult<f64> {
    let folds = split_folds(dataset, k, seed)?;
    let values = folds
        .par_iter()
        .map(|f| Ok(test_score(config, &dataset.subset(&f.train)?, &dataset.subset(&f.test)?)?.1))
        .collect::<CliResult<Vec<f64>>>()?;
    Ok(mean_fold_metric(&values)?.mean)
}

/// Picks the grid point with the best inner cross-validated Pos@Top. Ties go
/// to the earliest point in grid order (`c1` outer, `c2` inner).
fn select(dataset: &Dataset, base: &TrainConfig, grid: &Grid, k: usize, seed: u64) -> CliResult<TrainConfig> {
    let candidates = grid.candidates();
    let scores = candidates
        .par_iter()
        .map(|&(c1, c2)| inner_cv(dataset, &TrainConfig { c1, c2, ..base.clone() }, k, seed))
        .collect::<CliResult<Vec<f64>>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    let (c1, c2) = candidates[best];
    Ok(TrainConfig { c1, c2, ..base.clone() })
}

fn fold_config(train_set: &Dataset, config: &TrainConfig, opts: &EvalOptions, fold: usize) -> CliResult<TrainConfig> {
    match &opts.grid {
        Some(grid) => select(train_set, config, grid, opts.inner_folds, inner_seed(config.seed, fold)),
        None => Ok(config.clone()),
    }
}

/// Runs stratified `k`-fold evaluation. Folds run in parallel and are
/// collected in fold order; the second value holds per-fold wall times.
pub fn cross_validate(dataset: &Dataset, config: &TrainConfig, opts: &EvalOptions) -> CliResult<(CvReport, Vec<f64>)> {
    config.validate()?;
    let folds = split_folds(dataset, opts.folds, config.seed)?;
    let results = folds
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let start = Instant::now();
            let train_set = dataset.subset(&f.train)?;
            let test_set = dataset.subset(&f.test)?;
            let chosen = fold_config(&train_set, config, opts, i)?;
            let (train_pos_at_top, value) = test_score(&chosen, &train_set, &test_set)?;
            let record = FoldRecord {
                fold: i,
                train_bags: f.train.len(),
                test_bags: f.test.len(),
                test_positives: test_set.count_positive(),
                c1: chosen.c1,
                c2: chosen.c2,
                train_pos_at_top,
                pos_at_top: value,
            };
            Ok((record, start.elapsed().as_secs_f64()))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let (per_fold, timings): (Vec<FoldRecord>, Vec<f64>) = results.into_iter().unzip();
    let values: Vec<f64> = per_fold.iter().map(|r| r.pos_at_top).collect();
    let report = CvReport {
        folds: opts.folds,
        inner_folds: opts.grid.as_ref().map(|_| opts.inner_folds),
        summary: mean_fold_metric(&values)?,
        per_fold,
    };
    Ok((report, timings))
}

/// One-vs-all evaluation: each class gets its own stratified split under the
/// same seed, and fold `i` reports every class's Pos@Top plus their macro average.
pub fn cross_validate_ova(
    dataset: &MulticlassDataset,
    config: &TrainConfig,
    opts: &EvalOptions,
) -> CliResult<(OvaCvReport, Vec<f64>)> {
    config.validate()?;
    let classes = dataset.classes().len();
    let binary = (0..classes).map(|c| dataset.one_vs_rest(c)).collect::<Result<Vec<_>, _>>()?;
    let splits =
        binary.iter().map(|ds| split_folds(ds, opts.folds, config.seed)).collect::<Result<Vec<_>, _>>()?;
    let results = (0..opts.folds)
        .into_par_iter()
        .map(|i| {
            let start = Instant::now();
            let mut scored = Vec::with_capacity(classes);
            let mut selected = Vec::with_capacity(classes);
            for (ds, split) in binary.iter().zip(&splits) {
                let f = &split[i];
                let train_set = ds.subset(&f.train)?;
                let test_set = ds.subset(&f.test)?;
                let chosen = fold_config(&train_set, config, opts, i)?;
                let model = train(&train_set, &chosen)?;
                scored.push(ScoredSet::new(model.scores(&test_set)?, test_set.labels())?);
                selected.push((chosen.c1, chosen.c2));
            }
            let ova = ova_pos_at_top(&scored)?;
            let record =
                OvaFoldRecord { fold: i, pos_at_top: ova.per_class, macro_average: ova.macro_average, selected };
            Ok((record, start.elapsed().as_secs_f64()))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let (per_fold, timings): (Vec<OvaFoldRecord>, Vec<f64>) = results.into_iter().unzip();
    let per_class = (0..classes)
        .map(|c| mean_fold_metric(&per_fold.iter().map(|r| r.pos_at_top[c]).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>, _>>()?;
    let macros: Vec<f64> = per_fold.iter().map(|r| r.macro_average).collect();
    let report = OvaCvReport {
        folds: opts.folds,
        inner_folds: opts.grid.as_ref().map(|_| opts.inner_folds),
        classes: dataset.classes().to_vec(),
        per_class,
        summary: mean_fold_metric(&macros)?,
        per_fold,
    };
    Ok((report, timings))
}
