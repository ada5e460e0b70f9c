//! Anchor regression for distributionally robust detection and attribution.
//!
//! Linear fingerprints are fitted to predict an external forcing from gridded
//! fields while staying predictive under shift interventions on other
//! forcings (the anchors). The predicted forcing then serves as a detection
//! and attribution test statistic.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix the usual double-precision choice.

pub mod anchor;
pub mod data;
pub mod detection;
pub mod error;
pub mod io;
pub mod linalg;
pub mod scalar;
pub mod scm;
pub mod selection;

pub use anchor::{
    anchor_projection, anchor_transform, fit_anchor, fit_ridge, predict, residual_anchor_diagnostics,
    AnchorRegression, LinearModel, ProjectionOperator, ResidualDiagnostics, SolverPath,
};
pub use data::{
    compute_anomalies, concat_runs, standardize, AnchorMatrix, FeatureStats, ForcingSeries, GridShape,
    GriddedDataset, YearRange,
};
pub use error::{Error, ErrorClass, Result};
pub use io::{load_dataset, load_model, save_dataset, save_model, FitProvenance, LoadedData, Manifest, ModelFile};
pub use scalar::Scalar;
pub use detection::{
    detect_and_attribute, scenario_residual_scale, DetectionOptions, DetectionResult, DetectionRule, ScenarioScales,
};
pub use scm::{shift_intervention, simulate, worst_case_risk, Forcing, RiskCurve, RiskSpec, ScmConfig, SimOutput};
pub use selection::{
    cross_validate, grouped_kfold, metrics, split_by_model, split_models, CvReport, FoldAssignment, GridCell, Metrics,
};

pub type GriddedDataset64 = GriddedDataset<f64>;
pub type ForcingSeries64 = ForcingSeries<f64>;
pub type AnchorMatrix64 = AnchorMatrix<f64>;
pub type FeatureStats64 = FeatureStats<f64>;
pub type LinearModel64 = LinearModel<f64>;
pub type LinearModel32 = LinearModel<f32>;
pub type ProjectionOperator64 = ProjectionOperator<f64>;
pub type SimOutput64 = SimOutput<f64>;
