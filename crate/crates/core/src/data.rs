//! Gridded sample data, forcing series, anchors, and the anomaly /
//! standardization pipeline.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Grid dimensions `(n_lon, n_lat)`. Cell `j` of a sample sits at
/// `lon = j / n_lat`, `lat = j % n_lat` (row-major, longitude outer).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub n_lon: usize,
    pub n_lat: usize,
}

impl GridShape {
    pub fn new(n_lon: usize, n_lat: usize) -> Self {
        GridShape { n_lon, n_lat }
    }

    pub fn cells(&self) -> usize {
        self.n_lon * self.n_lat
    }

    /// `(lon, lat)` index of cell `j`.
    pub fn position(&self, j: usize) -> (usize, usize) {
        (j / self.n_lat, j % self.n_lat)
    }

    pub fn index(&self, lon: usize, lat: usize) -> usize {
        lon * self.n_lat + lat
    }
}

impl fmt::Display for GridShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.n_lon, self.n_lat)
    }
}

/// Closed interval of calendar years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub start: i32,
    pub end: i32,
}

impl YearRange {
    pub fn new(start: i32, end: i32) -> Self {
        YearRange { start, end }
    }

    pub fn contains(&self, year: i32) -> bool {
        year >= self.start && year <= self.end
    }
}

impl Default for YearRange {
    fn default() -> Self {
        YearRange::new(1870, 1920)
    }
}

impl fmt::Display for YearRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

/// Samples of a gridded field: one row per (model, scenario, year).
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedDataset<T> {
    values: Array2<T>,
    model_ids: Vec<String>,
    scenarios: Vec<String>,
    years: Vec<i32>,
    grid_shape: GridShape,
}

impl<T: Scalar> GriddedDataset<T> {
    pub fn new(
        values: Array2<T>,
        model_ids: Vec<String>,
        scenarios: Vec<String>,
        years: Vec<i32>,
        grid_shape: GridShape,
    ) -> Result<Self> {
        let (n, p) = values.dim();
        if model_ids.len() != n || scenarios.len() != n || years.len() != n {
            return Err(Error::Shape(format!(
                "annotation lengths ({}, {}, {}) do not match {n} rows",
                model_ids.len(),
                scenarios.len(),
                years.len()
            )));
        }
        if grid_shape.cells() != p {
            return Err(Error::Shape(format!(
                "grid shape {grid_shape} has {} cells but data has {p} columns",
                grid_shape.cells()
            )));
        }
        check_finite_rows(values.view())?;
        let mut seen = HashSet::with_capacity(n);
        for i in 0..n {
            if !seen.insert((&model_ids[i], &scenarios[i], years[i])) {
                return Err(Error::Consistency(format!(
                    "duplicate sample (model `{}`, scenario `{}`, year {})",
                    model_ids[i], scenarios[i], years[i]
                )));
            }
        }
        Ok(GriddedDataset {
            values,
            model_ids,
            scenarios,
            years,
            grid_shape,
        })
    }

    pub fn values(&self) -> ArrayView2<'_, T> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<T> {
        self.values
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn scenarios(&self) -> &[String] {
        &self.scenarios
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn grid_shape(&self) -> GridShape {
        self.grid_shape
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    /// Distinct model ids in order of first appearance.
    pub fn models(&self) -> Vec<String> {
        distinct(&self.model_ids)
    }

    /// Rows with the given indices, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        GriddedDataset {
            values: self.values.select(Axis(0), rows),
            model_ids: rows.iter().map(|&i| self.model_ids[i].clone()).collect(),
            scenarios: rows.iter().map(|&i| self.scenarios[i].clone()).collect(),
            years: rows.iter().map(|&i| self.years[i]).collect(),
            grid_shape: self.grid_shape,
        }
    }

    /// Same annotations with a replacement value block.
    pub fn with_values(&self, values: Array2<T>) -> Result<Self> {
        if values.dim() != self.values.dim() {
            return Err(Error::Shape(format!(
                "replacement values {:?} do not match {:?}",
                values.dim(),
                self.values.dim()
            )));
        }
        check_finite_rows(values.view())?;
        Ok(GriddedDataset {
            values,
            ..self.clone()
        })
    }
}

pub(crate) fn distinct(labels: &[String]) -> Vec<String> {
    let mut seen = HashSet::new();
    labels
        .iter()
        .filter(|l| seen.insert(l.as_str()))
        .cloned()
        .collect()
}

fn check_finite_rows<T: Scalar>(values: ArrayView2<T>) -> Result<()> {
    for (i, row) in values.outer_iter().enumerate() {
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data {
                row: i,
                message: format!("non-finite value in column {j}"),
            });
        }
    }
    Ok(())
}

/// Target forcing values paired row-by-row with a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingSeries<T> {
    values: Array1<T>,
    name: String,
}

impl<T: Scalar> ForcingSeries<T> {
    pub fn new(values: Array1<T>, name: impl Into<String>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data {
                row: i,
                message: "non-finite target value".into(),
            });
        }
        Ok(ForcingSeries {
            values,
            name: name.into(),
        })
    }

    pub fn values(&self) -> ArrayView1<'_, T> {
        self.values.view()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        ForcingSeries {
            values: self.values.select(Axis(0), rows),
            name: self.name.clone(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        ForcingSeries {
            values: self.values.mapv(f),
            name: self.name.clone(),
        }
    }
}

/// Anchor variables, `n x q` with `q >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorMatrix<T> {
    values: Array2<T>,
    names: Vec<String>,
}

impl<T: Scalar> AnchorMatrix<T> {
    pub fn new(values: Array2<T>, names: Vec<String>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::Shape("anchor matrix needs at least one column".into()));
        }
        if names.len() != values.ncols() {
            return Err(Error::Shape(format!(
                "{} anchor names for {} columns",
                names.len(),
                values.ncols()
            )));
        }
        check_finite_rows(values.view())?;
        Ok(AnchorMatrix { values, names })
    }

    pub fn values(&self) -> ArrayView2<'_, T> {
        self.values.view()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn q(&self) -> usize {
        self.values.ncols()
    }

    /// Columns that are constant (and so carry no information beyond the
    /// implicit intercept).
    pub fn degenerate_columns(&self) -> Vec<usize> {
        self.values
            .axis_iter(Axis(1))
            .enumerate()
            .filter(|(_, col)| {
                let first = col.first().copied().unwrap_or_else(T::zero);
                col.iter().all(|&v| v == first)
            })
            .map(|(j, _)| j)
            .collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        AnchorMatrix {
            values: self.values.select(Axis(0), rows),
            names: self.names.clone(),
        }
    }

    /// Keep only the named columns, in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|name| {
                self.names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| Error::Schema(format!("no anchor column `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        AnchorMatrix::new(self.values.select(Axis(1), &idx), names.to_vec())
    }
}

/// Column and target statistics frozen at fit time and reused on new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats<T> {
    pub means: Vec<T>,
    /// Divisors; `1` for the columns listed in `zero_variance`.
    pub stds: Vec<T>,
    pub zero_variance: Vec<usize>,
    pub target_mean: T,
    pub target_std: T,
    pub target_zero_variance: bool,
    pub baseline: Option<YearRange>,
}

impl<T: Scalar> FeatureStats<T> {
    /// Statistics that leave data untouched.
    pub fn identity(p: usize) -> Self {
        FeatureStats {
            means: vec![T::zero(); p],
            stds: vec![T::one(); p],
            zero_variance: Vec::new(),
            target_mean: T::zero(),
            target_std: T::one(),
            target_zero_variance: false,
            baseline: None,
        }
    }

    /// Population (divide-by-n) mean and standard deviation per column.
    pub fn compute(x: ArrayView2<T>, y: ArrayView1<T>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 || y.len() != n {
            return Err(Error::Shape(format!(
                "cannot compute statistics from {n} rows and {} targets",
                y.len()
            )));
        }
        let p = x.ncols();
        let mut means = Vec::with_capacity(p);
        let mut stds = Vec::with_capacity(p);
        let mut zero_variance = Vec::new();
        for (j, col) in x.axis_iter(Axis(1)).enumerate() {
            let (mean, std) = mean_std(col);
            means.push(mean);
            if is_zero_spread(mean, std) {
                zero_variance.push(j);
                stds.push(T::one());
            } else {
                stds.push(std);
            }
        }
        let (target_mean, target_std) = mean_std(y);
        let target_zero_variance = is_zero_spread(target_mean, target_std);
        Ok(FeatureStats {
            means,
            stds,
            zero_variance,
            target_mean,
            target_std: if target_zero_variance { T::one() } else { target_std },
            target_zero_variance,
            baseline: None,
        })
    }

    pub fn p(&self) -> usize {
        self.means.len()
    }

    pub fn apply_features(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_p(x.ncols())?;
        let mut out = x.to_owned();
        for mut row in out.outer_iter_mut() {
            for ((v, &m), &s) in row.iter_mut().zip(&self.means).zip(&self.stds) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    pub fn invert_features(&self, z: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_p(z.ncols())?;
        let mut out = z.to_owned();
        for mut row in out.outer_iter_mut() {
            for ((v, &m), &s) in row.iter_mut().zip(&self.means).zip(&self.stds) {
                *v = *v * s + m;
            }
        }
        Ok(out)
    }

    pub fn apply_target(&self, y: ArrayView1<T>) -> Array1<T> {
        y.mapv(|v| (v - self.target_mean) / self.target_std)
    }

    pub fn invert_target(&self, z: ArrayView1<T>) -> Array1<T> {
        z.mapv(|v| v * self.target_std + self.target_mean)
    }

    fn check_p(&self, p: usize) -> Result<()> {
        if p != self.p() {
            return Err(Error::Shape(format!(
                "statistics cover {} columns, data has {p}",
                self.p()
            )));
        }
        Ok(())
    }
}

pub(crate) fn mean_std<T: Scalar>(v: ArrayView1<T>) -> (T, T) {
    let n = T::of_usize(v.len().max(1));
    let mean = v.sum() / n;
    let var = v.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    (mean, var.sqrt())
}

fn is_zero_spread<T: Scalar>(mean: T, std: T) -> bool {
    std == T::zero() || std <= T::epsilon() * T::of(64.0) * mean.abs()
}

/// Concatenate runs sharing a grid, preserving row order.
pub fn concat_runs<T: Scalar>(runs: &[GriddedDataset<T>]) -> Result<GriddedDataset<T>> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Shape("no runs to concatenate".into()))?;
    let shape = first.grid_shape;
    for (i, run) in runs.iter().enumerate() {
        if run.grid_shape != shape || run.p() != first.p() {
            return Err(Error::Shape(format!(
                "run {i} has grid {} ({} cells), expected {shape}",
                run.grid_shape,
                run.p()
            )));
        }
    }
    let views: Vec<_> = runs.iter().map(|r| r.values.view()).collect();
    let values = ndarray::concatenate(Axis(0), &views)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let cat = |f: fn(&GriddedDataset<T>) -> &[String]| -> Vec<String> {
        runs.iter().flat_map(|r| f(r).iter().cloned()).collect()
    };
    GriddedDataset::new(
        values,
        cat(|r| &r.model_ids),
        cat(|r| &r.scenarios),
        runs.iter().flat_map(|r| r.years.iter().copied()).collect(),
        shape,
    )
}

/// Per-model mean over the rows falling inside `baseline`.
pub fn baseline_means<T: Scalar>(
    ds: &GriddedDataset<T>,
    baseline: YearRange,
) -> Result<BTreeMap<String, Array1<T>>> {
    let models = ds.models();
    let per_model: Vec<Result<(String, Array1<T>)>> = models
        .par_iter()
        .map(|model| {
            let rows: Vec<usize> = (0..ds.n())
                .filter(|&i| &ds.model_ids[i] == model && baseline.contains(ds.years[i]))
                .collect();
            if rows.is_empty() {
                return Err(Error::Coverage {
                    model: model.clone(),
                    window: baseline.to_string(),
                });
            }
            let mean = ds
                .values
                .select(Axis(0), &rows)
                .mean_axis(Axis(0))
                .expect("non-empty selection");
            Ok((model.clone(), mean))
        })
        .collect();
    per_model.into_iter().collect()
}

/// Subtract a per-model reference field from every row of that model.
pub fn subtract_baseline<T: Scalar>(
    ds: &GriddedDataset<T>,
    means: &BTreeMap<String, Array1<T>>,
) -> Result<GriddedDataset<T>> {
    let mut values = ds.values.clone();
    for (i, mut row) in values.outer_iter_mut().enumerate() {
        let mean = means.get(&ds.model_ids[i]).ok_or_else(|| Error::Coverage {
            model: ds.model_ids[i].clone(),
            window: "supplied baseline".into(),
        })?;
        row.zip_mut_with(mean, |v, &m| *v = *v - m);
    }
    ds.with_values(values)
}

/// Remove each model's mean over the baseline window from all of its rows.
pub fn compute_anomalies<T: Scalar>(
    ds: &GriddedDataset<T>,
    baseline: YearRange,
) -> Result<GriddedDataset<T>> {
    let means = baseline_means(ds, baseline)?;
    subtract_baseline(ds, &means)
}

/// Standardize features and target. With `stats == None` the statistics are
/// computed from the inputs; otherwise the given (training) statistics are
/// applied unchanged.
pub fn standardize<T: Scalar>(
    ds: &GriddedDataset<T>,
    y: &ForcingSeries<T>,
    stats: Option<&FeatureStats<T>>,
) -> Result<(GriddedDataset<T>, ForcingSeries<T>, FeatureStats<T>)> {
    if y.len() != ds.n() {
        return Err(Error::Shape(format!(
            "target has {} rows, dataset has {}",
            y.len(),
            ds.n()
        )));
    }
    let stats = match stats {
        Some(s) => s.clone(),
        None => FeatureStats::compute(ds.values(), y.values())?,
    };
    let x = stats.apply_features(ds.values())?;
    let target = ForcingSeries::new(stats.apply_target(y.values()), y.name())?;
    Ok((ds.with_values(x)?, target, stats))
}
