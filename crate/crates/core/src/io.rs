//! Flat-table dataset files and their sidecar manifest.
//!
//! Table layout (comma separated, header row):
//!
//! ```text
//! model_id,scenario,year,target,anchor:<name>...,cell_0000,...,cell_{p-1}
//! ```
//!
//! Cell columns follow [`GridShape`] order. Numbers are written with Rust's
//! shortest round-trip formatting, so `load(save(x)) == x` bit for bit.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::anchor::{LinearModel, SolverPath};
use crate::data::{AnchorMatrix, FeatureStats, ForcingSeries, GridShape, GriddedDataset, YearRange};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MODEL_COLUMN: &str = "model_id";
pub const SCENARIO_COLUMN: &str = "scenario";
pub const YEAR_COLUMN: &str = "year";

/// Ingestion descriptor stored next to a dataset table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub grid_shape: GridShape,
    #[serde(default = "default_units")]
    pub units: String,
    #[serde(default)]
    pub baseline: YearRange,
    #[serde(default = "default_target_column")]
    pub target_column: String,
    #[serde(default = "default_target_name")]
    pub target_name: String,
    #[serde(default = "default_target_units")]
    pub target_units: String,
    #[serde(default = "default_anchor_prefix")]
    pub anchor_prefix: String,
    #[serde(default = "default_cell_prefix")]
    pub cell_prefix: String,
    /// Restrict ingestion to these anchors (all `anchor_prefix` columns when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<Vec<String>>,
}

fn default_units() -> String {
    "K".into()
}
fn default_target_column() -> String {
    "target".into()
}
fn default_target_name() -> String {
    "anthropogenic".into()
}
fn default_target_units() -> String {
    "W m-2".into()
}
fn default_anchor_prefix() -> String {
    "anchor:".into()
}
fn default_cell_prefix() -> String {
    "cell_".into()
}

impl Manifest {
    pub fn new(grid_shape: GridShape) -> Self {
        Manifest {
            grid_shape,
            units: default_units(),
            baseline: YearRange::default(),
            target_column: default_target_column(),
            target_name: default_target_name(),
            target_units: default_target_units(),
            anchor_prefix: default_anchor_prefix(),
            cell_prefix: default_cell_prefix(),
            anchors: None,
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string(self).map_err(|e| Error::parse(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Column name of grid cell `j`.
    pub fn cell_name(&self, j: usize) -> String {
        let width = digits(self.grid_shape.cells().saturating_sub(1)).max(4);
        format!("{}{:0width$}", self.cell_prefix, j)
    }
}

fn digits(mut v: usize) -> usize {
    let mut d = 1;
    while v >= 10 {
        v /= 10;
        d += 1;
    }
    d
}

/// Contents of a dataset table.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData<T> {
    pub dataset: GriddedDataset<T>,
    pub target: ForcingSeries<T>,
    pub anchors: Option<AnchorMatrix<T>>,
}

impl<T: Scalar> LoadedData<T> {
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        LoadedData {
            dataset: self.dataset.select_rows(rows),
            target: self.target.select_rows(rows),
            anchors: self.anchors.as_ref().map(|a| a.select_rows(rows)),
        }
    }

    /// Anchors, or a schema error when the table has none.
    pub fn require_anchors(&self) -> Result<&AnchorMatrix<T>> {
        self.anchors
            .as_ref()
            .ok_or_else(|| Error::Schema("dataset has no anchor columns".into()))
    }
}

/// Read a dataset table described by `manifest`.
pub fn load_dataset<T: Scalar>(path: impl AsRef<Path>, manifest: &Manifest) -> Result<LoadedData<T>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}` in {}", path.display())))
    };
    let model_col = find(MODEL_COLUMN)?;
    let scenario_col = find(SCENARIO_COLUMN)?;
    let year_col = find(YEAR_COLUMN)?;
    let target_col = find(&manifest.target_column)?;

    let anchor_names: Vec<String> = match &manifest.anchors {
        Some(names) => names.clone(),
        None => headers
            .iter()
            .filter_map(|h| h.strip_prefix(manifest.anchor_prefix.as_str()))
            .map(str::to_string)
            .collect(),
    };
    let anchor_cols = anchor_names
        .iter()
        .map(|name| find(&format!("{}{}", manifest.anchor_prefix, name)))
        .collect::<Result<Vec<_>>>()?;

    let p = manifest.grid_shape.cells();
    let present = headers
        .iter()
        .filter(|h| h.starts_with(manifest.cell_prefix.as_str()))
        .count();
    if present != p {
        return Err(Error::Schema(format!(
            "{} has {present} cell columns, grid {} needs {p}",
            path.display(),
            manifest.grid_shape
        )));
    }
    let cell_cols = (0..p)
        .map(|j| find(&manifest.cell_name(j)))
        .collect::<Result<Vec<_>>>()?;

    let mut model_ids = Vec::new();
    let mut scenarios = Vec::new();
    let mut years = Vec::new();
    let mut target = Vec::new();
    let mut anchors = Vec::new();
    let mut cells = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let field = |c: usize| record.get(c).unwrap_or("");
        model_ids.push(field(model_col).to_string());
        scenarios.push(field(scenario_col).to_string());
        years.push(field(year_col).trim().parse::<i32>().map_err(|e| Error::Data {
            row,
            message: format!("bad year `{}`: {e}", field(year_col)),
        })?);
        target.push(parse_number::<T>(field(target_col), row, &manifest.target_column)?);
        for &c in &anchor_cols {
            anchors.push(parse_number::<T>(field(c), row, &headers[c])?);
        }
        for &c in &cell_cols {
            cells.push(parse_number::<T>(field(c), row, &headers[c])?);
        }
    }
    let n = model_ids.len();
    let values = Array2::from_shape_vec((n, p), cells).map_err(|e| Error::Shape(e.to_string()))?;
    let dataset = GriddedDataset::new(values, model_ids, scenarios, years, manifest.grid_shape)?;
    let target = ForcingSeries::new(Array1::from(target), manifest.target_name.clone())?;
    let anchors = if anchor_names.is_empty() {
        None
    } else {
        let a = Array2::from_shape_vec((n, anchor_names.len()), anchors)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Some(AnchorMatrix::new(a, anchor_names)?)
    };
    Ok(LoadedData {
        dataset,
        target,
        anchors,
    })
}

fn parse_number<T: Scalar>(text: &str, row: usize, column: &str) -> Result<T> {
    let v: f64 = text.trim().parse().map_err(|_| Error::Data {
        row,
        message: format!("unparseable value `{text}` in column `{column}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::Data {
            row,
            message: format!("non-finite value in column `{column}`"),
        });
    }
    Ok(T::of(v))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::parse(path, e)
}

/// Write a dataset table; the manifest describes the column naming.
pub fn save_dataset<T: Scalar>(
    path: impl AsRef<Path>,
    data: &LoadedData<T>,
    manifest: &Manifest,
) -> Result<()> {
    let path = path.as_ref();
    let ds = &data.dataset;
    if ds.grid_shape() != manifest.grid_shape {
        return Err(Error::Shape(format!(
            "dataset grid {} differs from manifest grid {}",
            ds.grid_shape(),
            manifest.grid_shape
        )));
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec![
        MODEL_COLUMN.to_string(),
        SCENARIO_COLUMN.to_string(),
        YEAR_COLUMN.to_string(),
        manifest.target_column.clone(),
    ];
    if let Some(a) = &data.anchors {
        header.extend(a.names().iter().map(|n| format!("{}{}", manifest.anchor_prefix, n)));
    }
    header.extend((0..ds.p()).map(|j| manifest.cell_name(j)));
    writer.write_record(&header).map_err(|e| csv_error(path, e))?;

    let mut record = Vec::with_capacity(header.len());
    for i in 0..ds.n() {
        record.clear();
        record.push(ds.model_ids()[i].clone());
        record.push(ds.scenarios()[i].clone());
        record.push(ds.years()[i].to_string());
        record.push(format!("{}", data.target.values()[i]));
        if let Some(a) = &data.anchors {
            record.extend(a.values().row(i).iter().map(|v| format!("{v}")));
        }
        record.extend(ds.values().row(i).iter().map(|v| format!("{v}")));
        writer.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Where the training data of a model came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitProvenance {
    pub seed: u64,
    pub train_fraction: f64,
    pub train_models: Vec<String>,
    pub test_models: Vec<String>,
}

/// JSON form of a [`LinearModel`]; numbers round-trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub gamma: f64,
    pub lambda: f64,
    pub solver: SolverPath,
    pub min_norm: bool,
    pub target_name: String,
    pub anchor_names: Vec<String>,
    pub grid_shape: Option<GridShape>,
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub feature_stats: FeatureStats<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<FitProvenance>,
}

impl ModelFile {
    pub fn from_model<T: Scalar>(model: &LinearModel<T>, provenance: Option<FitProvenance>) -> Self {
        let f = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        let s = &model.feature_stats;
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            gamma: model.gamma.as_f64(),
            lambda: model.lambda.as_f64(),
            solver: model.solver,
            min_norm: model.min_norm,
            target_name: model.target_name.clone(),
            anchor_names: model.anchor_names.clone(),
            grid_shape: model.grid_shape,
            intercept: model.intercept.as_f64(),
            beta: f(model.beta.as_slice().expect("contiguous coefficients")),
            feature_stats: FeatureStats {
                means: f(&s.means),
                stds: f(&s.stds),
                zero_variance: s.zero_variance.clone(),
                target_mean: s.target_mean.as_f64(),
                target_std: s.target_std.as_f64(),
                target_zero_variance: s.target_zero_variance,
                baseline: s.baseline,
            },
            provenance,
        }
    }

    pub fn to_model<T: Scalar>(&self) -> Result<LinearModel<T>> {
        let p = self.beta.len();
        let s = &self.feature_stats;
        if s.means.len() != p || s.stds.len() != p || s.zero_variance.iter().any(|&j| j >= p) {
            return Err(Error::Schema(format!(
                "model has {p} coefficients but statistics for {} and {} columns",
                s.means.len(),
                s.stds.len()
            )));
        }
        if self.grid_shape.is_some_and(|g| g.cells() != p) {
            return Err(Error::Schema("model grid does not match its coefficients".into()));
        }
        let f = |v: &[f64]| v.iter().map(|&x| T::of(x)).collect::<Vec<_>>();
        Ok(LinearModel {
            beta: Array1::from(f(&self.beta)),
            intercept: T::of(self.intercept),
            gamma: T::of(self.gamma),
            lambda: T::of(self.lambda),
            feature_stats: FeatureStats {
                means: f(&s.means),
                stds: f(&s.stds),
                zero_variance: s.zero_variance.clone(),
                target_mean: T::of(s.target_mean),
                target_std: T::of(s.target_std),
                target_zero_variance: s.target_zero_variance,
                baseline: s.baseline,
            },
            grid_shape: self.grid_shape,
            solver: self.solver,
            min_norm: self.min_norm,
            anchor_names: self.anchor_names.clone(),
            target_name: self.target_name.clone(),
        })
    }
}

pub fn save_model(path: impl AsRef<Path>, model: &ModelFile) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(model).map_err(|e| Error::parse(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let model: ModelFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
    if model.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
            model.format_version
        )));
    }
    Ok(model)
}
