//! Model-wise splitting, grouped k-fold cross-validation, and metrics.
//!
//! Every split in this module works on whole climate models: all rows that
//! share a `model_id` land on the same side.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use ndarray::ArrayView1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::anchor::{AnchorRegression, SolverPath};
use crate::data::{distinct, mean_std, AnchorMatrix, ForcingSeries, GriddedDataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fold index of every model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    folds: BTreeMap<String, usize>,
    k: usize,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self, model: &str) -> Option<usize> {
        self.folds.get(model).copied()
    }

    pub fn models_in(&self, fold: usize) -> Vec<String> {
        self.folds
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(m, _)| m.clone())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        (0..self.k).map(|f| self.models_in(f).len()).collect()
    }

    /// `(training rows, validation rows)` of `fold` for rows labelled `model_ids`.
    pub fn rows(&self, model_ids: &[String], fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut train = Vec::new();
        let mut valid = Vec::new();
        for (i, m) in model_ids.iter().enumerate() {
            match self.fold_of(m) {
                Some(f) if f == fold => valid.push(i),
                Some(_) => train.push(i),
                None => return Err(Error::Consistency(format!("model `{m}` has no fold"))),
            }
        }
        Ok((train, valid))
    }
}

fn sorted_models(model_ids: &[String]) -> Vec<String> {
    let set: BTreeSet<&String> = model_ids.iter().collect();
    set.into_iter().cloned().collect()
}

/// Shuffle the distinct models with a seeded generator and deal them
/// round-robin into `k` folds.
pub fn grouped_kfold(model_ids: &[String], k: usize, seed: u64) -> Result<FoldAssignment> {
    let mut models = sorted_models(model_ids);
    if k == 0 || k > models.len() {
        return Err(Error::Config(format!(
            "k = {k} folds needs 1 <= k <= {} models",
            models.len()
        )));
    }
    models.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds = models
        .into_iter()
        .enumerate()
        .map(|(i, m)| (m, i % k))
        .collect();
    Ok(FoldAssignment { folds, k })
}

/// Model-level train/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSplit {
    pub train_models: Vec<String>,
    pub test_models: Vec<String>,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// Send `round(fraction * models)` models to training (at least one model on
/// each side) and the rest to testing.
pub fn split_models(model_ids: &[String], fraction: f64, seed: u64) -> Result<ModelSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut models = sorted_models(model_ids);
    let m = models.len();
    if m < 2 {
        return Err(Error::Config(format!("a model split needs at least 2 models, found {m}")));
    }
    let n_train = ((fraction * m as f64).round() as usize).clamp(1, m - 1);
    models.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train_models: Vec<String> = models[..n_train].to_vec();
    let mut test_models: Vec<String> = models[n_train..].to_vec();
    train_models.sort();
    test_models.sort();
    let train_set: BTreeSet<&String> = train_models.iter().collect();
    let (train_rows, test_rows) = (0..model_ids.len()).partition(|&i| train_set.contains(&model_ids[i]));
    Ok(ModelSplit {
        train_models,
        test_models,
        train_rows,
        test_rows,
    })
}

/// Split a dataset model-wise; returns `(train, test)`.
pub fn split_by_model<T: Scalar>(
    ds: &GriddedDataset<T>,
    fraction: f64,
    seed: u64,
) -> Result<(GriddedDataset<T>, GriddedDataset<T>)> {
    let split = split_models(ds.model_ids(), fraction, seed)?;
    Ok((ds.select_rows(&split.train_rows), ds.select_rows(&split.test_rows)))
}

/// Root mean squared error and coefficient of determination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics<T> {
    pub mse: T,
    pub rmse: T,
    /// NaN when `y_true` is constant.
    pub r2: T,
    pub r2_defined: bool,
}

pub fn metrics<T: Scalar>(y_true: ArrayView1<T>, y_pred: ArrayView1<T>) -> Result<Metrics<T>> {
    if y_true.len() != y_pred.len() || y_true.len() < 2 {
        return Err(Error::Shape(format!(
            "metrics need two equal-length series of at least 2 values, got {} and {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mse = mean_squared_error(y_true, y_pred);
    let sse = mse * T::of_usize(y_true.len());
    let (mean, _) = mean_std(y_true);
    let sst: T = y_true.iter().map(|&t| (t - mean) * (t - mean)).sum();
    let rmse = mse.sqrt();
    if sst == T::zero() {
        return Ok(Metrics {
            mse,
            rmse,
            r2: T::nan(),
            r2_defined: false,
        });
    }
    Ok(Metrics {
        mse,
        rmse,
        r2: T::one() - sse / sst,
        r2_defined: true,
    })
}

/// Mean of squared differences; NaN for empty input.
pub fn mean_squared_error<T: Scalar>(y_true: ArrayView1<T>, y_pred: ArrayView1<T>) -> T {
    let sse: T = y_true
        .iter()
        .zip(y_pred.iter())
        .map(|(&t, &p)| (t - p) * (t - p))
        .sum();
    sse / T::of_usize(y_true.len())
}

/// One `(lambda, gamma)` candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell<T> {
    pub lambda: T,
    pub gamma: T,
}

/// Default ridge grid: 13 log-spaced values from 1e-4 to 1e4.
pub fn default_lambda_grid<T: Scalar>() -> Vec<T> {
    (0..13)
        .map(|i| T::of(10f64.powf(-4.0 + 8.0 * i as f64 / 12.0)))
        .collect()
}

/// Cartesian product of the two grids.
pub fn grid<T: Scalar>(lambdas: &[T], gammas: &[T]) -> Vec<GridCell<T>> {
    lambdas
        .iter()
        .flat_map(|&lambda| gammas.iter().map(move |&gamma| GridCell { lambda, gamma }))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldScore<T> {
    pub fold: usize,
    pub rmse: T,
    pub r2: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellReport<T> {
    pub cell: GridCell<T>,
    pub folds: Vec<FoldScore<T>>,
    pub mean_rmse: T,
    /// Mean over folds where R^2 is defined.
    pub mean_r2: T,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport<T> {
    pub cells: Vec<CellReport<T>>,
    pub selected: GridCell<T>,
}

/// What a single fold fit saw; handed to the observer of
/// [`cross_validate_observed`].
#[derive(Debug, Clone)]
pub struct FoldEvent<'a> {
    pub fold: usize,
    /// Rows whose values fed the standardization statistics and the fit.
    pub fit_rows: &'a [usize],
    pub validation_rows: &'a [usize],
}

/// Grouped cross-validation over `grid`. Statistics are recomputed on each
/// training portion. The selected cell has the lowest mean RMSE; ties go to
/// the larger lambda, then the smaller gamma.
pub fn cross_validate<T: Scalar>(
    ds: &GriddedDataset<T>,
    y: &ForcingSeries<T>,
    anchors: Option<&AnchorMatrix<T>>,
    grid: &[GridCell<T>],
    folds: &FoldAssignment,
) -> Result<CvReport<T>> {
    cross_validate_observed(ds, y, anchors, grid, folds, &|_| {})
}

pub fn cross_validate_observed<T: Scalar>(
    ds: &GriddedDataset<T>,
    y: &ForcingSeries<T>,
    anchors: Option<&AnchorMatrix<T>>,
    grid: &[GridCell<T>],
    folds: &FoldAssignment,
    observer: &(dyn Fn(&FoldEvent<'_>) + Sync),
) -> Result<CvReport<T>> {
    if grid.is_empty() {
        return Err(Error::Config("cross-validation grid is empty".into()));
    }
    if y.len() != ds.n() || anchors.is_some_and(|a| a.n() != ds.n()) {
        return Err(Error::Shape("dataset, target and anchors disagree in length".into()));
    }
    let splits = (0..folds.k())
        .map(|f| folds.rows(ds.model_ids(), f))
        .collect::<Result<Vec<_>>>()?;

    let tasks: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..folds.k()).map(move |f| (c, f)))
        .collect();
    let outcomes: Vec<Result<FoldScore<T>>> = tasks
        .par_iter()
        .map(|&(c, f)| {
            let (train, valid) = &splits[f];
            observer(&FoldEvent {
                fold: f,
                fit_rows: train,
                validation_rows: valid,
            });
            score_fold(ds, y, anchors, grid[c], f, train, valid)
        })
        .collect();

    let mut cells = Vec::with_capacity(grid.len());
    for (c, cell) in grid.iter().enumerate() {
        let mut scores = Vec::new();
        let mut error = None;
        for outcome in &outcomes[c * folds.k()..(c + 1) * folds.k()] {
            match outcome {
                Ok(s) => scores.push(s.clone()),
                Err(e) => {
                    error.get_or_insert_with(|| e.to_string());
                }
            }
        }
        let (mean_rmse, mean_r2) = if error.is_some() {
            (T::nan(), T::nan())
        } else {
            let k = T::of_usize(scores.len());
            let r2s: Vec<T> = scores.iter().map(|s| s.r2).filter(|v| v.is_finite()).collect();
            let mean_r2 = if r2s.is_empty() {
                T::nan()
            } else {
                r2s.iter().copied().sum::<T>() / T::of_usize(r2s.len())
            };
            (scores.iter().map(|s| s.rmse).sum::<T>() / k, mean_r2)
        };
        cells.push(CellReport {
            cell: *cell,
            folds: scores,
            mean_rmse,
            mean_r2,
            error,
        });
    }

    let selected = cells
        .iter()
        .filter(|c| c.error.is_none() && c.mean_rmse.is_finite())
        .min_by(|a, b| {
            a.mean_rmse
                .partial_cmp(&b.mean_rmse)
                .expect("finite")
                .then(b.cell.lambda.partial_cmp(&a.cell.lambda).expect("finite"))
                .then(a.cell.gamma.partial_cmp(&b.cell.gamma).expect("finite"))
        })
        .map(|c| c.cell)
        .ok_or_else(|| Error::Numerical("every cross-validation cell failed".into()))?;
    Ok(CvReport { cells, selected })
}

fn score_fold<T: Scalar>(
    ds: &GriddedDataset<T>,
    y: &ForcingSeries<T>,
    anchors: Option<&AnchorMatrix<T>>,
    cell: GridCell<T>,
    fold: usize,
    train: &[usize],
    valid: &[usize],
) -> Result<FoldScore<T>> {
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Config(format!("fold {fold} leaves an empty side")));
    }
    let estimator = AnchorRegression {
        gamma: cell.gamma,
        lambda: cell.lambda,
        path: SolverPath::Auto,
    };
    let train_x = ds.select_rows(train);
    let train_y = y.select_rows(train);
    let train_a = anchors.map(|a| a.select_rows(train));
    let model = estimator.fit_dataset(&train_x, &train_y, train_a.as_ref())?;
    let valid_x = ds.select_rows(valid);
    let valid_y = y.select_rows(valid);
    let pred = model.predict(valid_x.values())?;
    let m = metrics(valid_y.values(), pred.view())?;
    Ok(FoldScore {
        fold,
        rmse: m.rmse,
        r2: m.r2,
    })
}

impl<T: Scalar> CvReport<T> {
    pub fn cell(&self, cell: GridCell<T>) -> Option<&CellReport<T>> {
        self.cells.iter().find(|c| c.cell == cell)
    }

    /// Per-fold table `lambda,gamma,fold,rmse,r2` followed by a `#` summary block.
    pub fn to_table(&self) -> String {
        let mut out = String::from("lambda,gamma,fold,rmse,r2\n");
        for c in &self.cells {
            for s in &c.folds {
                let _ = writeln!(out, "{},{},{},{},{}", c.cell.lambda, c.cell.gamma, s.fold, s.rmse, s.r2);
            }
        }
        out.push_str("\n# summary\n# lambda,gamma,mean_rmse,mean_r2,status\n");
        for c in &self.cells {
            let status = c.error.as_deref().unwrap_or("ok").replace(['\n', ','], " ");
            let _ = writeln!(
                out,
                "# {},{},{},{},{}",
                c.cell.lambda, c.cell.gamma, c.mean_rmse, c.mean_r2, status
            );
        }
        let _ = writeln!(out, "# selected lambda={} gamma={}", self.selected.lambda, self.selected.gamma);
        out
    }
}

/// Models of `model_ids`, deduplicated, in first-appearance order.
pub fn models_of(model_ids: &[String]) -> Vec<String> {
    distinct(model_ids)
}
