//! Detection and attribution from a predicted forcing.
//!
//! The prediction `y_hat` of a year is bracketed by `y_hat +/- z * sigma`,
//! where `sigma` is the residual standard deviation of the scenario the year
//! belongs to. A year is *detected* when that interval excludes zero, and the
//! signal is *attributed* when the true forcing falls inside the interval.
//! These intervals describe the spread of residuals, not the uncertainty of
//! the mean prediction.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array1, ArrayView1};

use crate::anchor::LinearModel;
use crate::data::{mean_std, ForcingSeries, GriddedDataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Residual spread of one scenario (optionally of one model).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scale<T> {
    pub sigma: T,
    pub rows: usize,
    /// Zero spread was replaced by the floor.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioScales<T> {
    pooled: BTreeMap<String, Scale<T>>,
    per_model: BTreeMap<(String, String), Scale<T>>,
    reference: String,
    /// Scenarios dropped for having fewer than two rows.
    pub excluded: Vec<String>,
}

impl<T: Scalar> ScenarioScales<T> {
    /// Build from raw residuals with their labels. `target_scale` sets the
    /// floor `1e-12 * target_scale` applied to degenerate (zero) spreads.
    pub fn from_residuals(
        residuals: ArrayView1<T>,
        model_ids: &[String],
        scenarios: &[String],
        target_scale: T,
    ) -> Result<Self> {
        let n = residuals.len();
        if model_ids.len() != n || scenarios.len() != n {
            return Err(Error::Shape("residuals and labels differ in length".into()));
        }
        let floor = T::of(1e-12) * if target_scale > T::zero() { target_scale } else { T::one() };
        let mut by_scenario: BTreeMap<String, Vec<T>> = BTreeMap::new();
        let mut by_model: BTreeMap<(String, String), Vec<T>> = BTreeMap::new();
        for i in 0..n {
            by_scenario.entry(scenarios[i].clone()).or_default().push(residuals[i]);
            by_model
                .entry((model_ids[i].clone(), scenarios[i].clone()))
                .or_default()
                .push(residuals[i]);
        }
        let mut excluded = Vec::new();
        let mut pooled = BTreeMap::new();
        for (scenario, values) in by_scenario {
            match sample_scale(&values, floor) {
                Some(s) => {
                    pooled.insert(scenario, s);
                }
                None => excluded.push(scenario),
            }
        }
        if pooled.is_empty() {
            return Err(Error::Data {
                row: 0,
                message: "no scenario has the two residuals needed for a spread".into(),
            });
        }
        let per_model = by_model
            .into_iter()
            .filter_map(|(key, values)| sample_scale(&values, floor).map(|s| (key, s)))
            .collect();
        let reference = if pooled.contains_key("control") {
            "control".to_string()
        } else {
            pooled.keys().next().cloned().expect("non-empty")
        };
        Ok(ScenarioScales {
            pooled,
            per_model,
            reference,
            excluded,
        })
    }

    /// Scenario spread of `model`, falling back to the pooled spread.
    pub fn scale(&self, model: Option<&str>, scenario: &str) -> Option<Scale<T>> {
        model
            .and_then(|m| self.per_model.get(&(m.to_string(), scenario.to_string())))
            .or_else(|| self.pooled.get(scenario))
            .copied()
    }

    pub fn pooled(&self) -> &BTreeMap<String, Scale<T>> {
        &self.pooled
    }

    pub fn reference(&self) -> &str {
        &self.reference
    }
}

fn sample_scale<T: Scalar>(values: &[T], floor: T) -> Option<Scale<T>> {
    if values.len() < 2 {
        return None;
    }
    let n = T::of_usize(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / (n - T::one());
    let sigma = var.sqrt();
    let degenerate = !(sigma > floor);
    Some(Scale {
        sigma: if degenerate { floor } else { sigma },
        rows: values.len(),
        degenerate,
    })
}

/// Per-scenario (and per-model) residual spread of `model` on `ds`.
pub fn scenario_residual_scale<T: Scalar>(
    model: &LinearModel<T>,
    ds: &GriddedDataset<T>,
    y: &ForcingSeries<T>,
) -> Result<ScenarioScales<T>> {
    if y.len() != ds.n() {
        return Err(Error::Shape("target and dataset differ in length".into()));
    }
    let residuals = &y.values() - &model.predict(ds.values())?;
    let (_, target_std) = mean_std(y.values());
    let target_scale = if target_std > T::zero() {
        target_std
    } else {
        y.values().iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    };
    ScenarioScales::from_residuals(residuals.view(), ds.model_ids(), ds.scenarios(), target_scale)
}

/// How the first detection year is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DetectionRule {
    /// Earliest year from which every later year is detected.
    #[default]
    Persistent,
    /// Earliest detected year.
    FirstCrossing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOptions<T> {
    pub z: T,
    pub rule: DetectionRule,
    /// Minimum length of the trailing detected run for the persistent rule.
    pub min_persistence: usize,
    /// Fraction of tested years that must contain the true forcing.
    pub attribution_threshold: f64,
}

impl<T: Scalar> Default for DetectionOptions<T> {
    fn default() -> Self {
        DetectionOptions {
            z: T::of(2.0),
            rule: DetectionRule::Persistent,
            min_persistence: 5,
            attribution_threshold: 0.95,
        }
    }
}

impl<T: Scalar> DetectionOptions<T> {
    pub fn with_z(z: T) -> Self {
        DetectionOptions {
            z,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct YearDetection<T> {
    pub year: i32,
    pub scenario: String,
    pub y_true: Option<T>,
    pub y_pred: T,
    pub half_width: T,
    pub detected: bool,
}

impl<T: Scalar> YearDetection<T> {
    pub fn ci(&self) -> (T, T) {
        (self.y_pred - self.half_width, self.y_pred + self.half_width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult<T> {
    pub years: Vec<YearDetection<T>>,
    pub first_detection_year: Option<i32>,
    /// Fraction of tested years whose true forcing lies inside the interval.
    pub attribution_fraction: Option<f64>,
    pub attribution_ok: bool,
    pub z: T,
}

impl<T: Scalar> DetectionResult<T> {
    /// `year,scenario,y_true,y_pred,ci_lo,ci_hi,detected`; `y_true` is left
    /// empty when unknown.
    pub fn to_table(&self) -> String {
        let mut out = String::from("year,scenario,y_true,y_pred,ci_lo,ci_hi,detected\n");
        for y in &self.years {
            let (lo, hi) = y.ci();
            let truth = y.y_true.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                y.year, y.scenario, truth, y.y_pred, lo, hi, y.detected
            );
        }
        out
    }
}

/// Detection with the spread looked up per scenario (and `model`, when given).
pub fn detect_and_attribute<T: Scalar>(
    years: &[i32],
    y_pred: ArrayView1<T>,
    y_true: Option<ArrayView1<T>>,
    scales: &ScenarioScales<T>,
    scenarios: &[String],
    model: Option<&str>,
    options: &DetectionOptions<T>,
) -> Result<DetectionResult<T>> {
    let sigma = scenarios
        .iter()
        .map(|s| {
            scales
                .scale(model, s)
                .map(|sc| sc.sigma)
                .ok_or_else(|| Error::Consistency(format!("no residual scale for scenario `{s}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    detect_with_sigma(years, y_pred, y_true, Array1::from(sigma).view(), scenarios, options)
}

/// Detection with an explicit spread per year.
pub fn detect_with_sigma<T: Scalar>(
    years: &[i32],
    y_pred: ArrayView1<T>,
    y_true: Option<ArrayView1<T>>,
    sigma: ArrayView1<T>,
    scenarios: &[String],
    options: &DetectionOptions<T>,
) -> Result<DetectionResult<T>> {
    let z = options.z;
    if !(z > T::zero()) || !z.is_finite() {
        return Err(Error::Domain(format!("z must be positive, got {z}")));
    }
    let n = years.len();
    if y_pred.len() != n || sigma.len() != n || scenarios.len() != n || y_true.is_some_and(|t| t.len() != n) {
        return Err(Error::Shape("per-year inputs differ in length".into()));
    }
    if years.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("years must be strictly increasing".into()));
    }
    if sigma.iter().any(|&s| !(s > T::zero())) {
        return Err(Error::Domain("residual scales must be positive".into()));
    }

    let rows: Vec<YearDetection<T>> = (0..n)
        .map(|i| {
            let half_width = z * sigma[i];
            let lo = y_pred[i] - half_width;
            let hi = y_pred[i] + half_width;
            YearDetection {
                year: years[i],
                scenario: scenarios[i].clone(),
                y_true: y_true.map(|t| t[i]),
                y_pred: y_pred[i],
                half_width,
                detected: lo > T::zero() || hi < T::zero(),
            }
        })
        .collect();

    let first_index = match options.rule {
        DetectionRule::FirstCrossing => rows.iter().position(|r| r.detected),
        DetectionRule::Persistent => {
            let tail = rows.iter().rev().take_while(|r| r.detected).count();
            (tail > 0 && tail >= options.min_persistence.max(1)).then(|| n - tail)
        }
    };

    let (attribution_fraction, attribution_ok) = match y_true {
        None => (None, false),
        Some(_) => {
            let tested = &rows[first_index.unwrap_or(0)..];
            let inside = tested
                .iter()
                .filter(|r| {
                    let t = r.y_true.expect("truth present");
                    (t - r.y_pred).abs() <= r.half_width
                })
                .count();
            let fraction = if tested.is_empty() {
                0.0
            } else {
                inside as f64 / tested.len() as f64
            };
            (Some(fraction), !tested.is_empty() && fraction >= options.attribution_threshold)
        }
    };

    Ok(DetectionResult {
        first_detection_year: first_index.map(|i| rows[i].year),
        years: rows,
        attribution_fraction,
        attribution_ok,
        z,
    })
}
