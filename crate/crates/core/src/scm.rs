//! Seeded structural causal model of gridded climate responses.
//!
//! Three forcings drive a gridded field:
//!
//! ```text
//! x_t = F1_t w1 + F2_t w2 + F3_t w3 + bias(model) + noise_t
//! ```
//!
//! * `F1` solar: sinusoid with an 11-year period, a random phase per run and
//!   white noise.
//! * `F2` volcanic: sparse eruptions with exponential magnitudes, decaying
//!   exponentially; always negative.
//! * `F3` anthropogenic: zero before the ramp year, then a power-law ramp.
//!   Zero in control runs.
//!
//! The loadings `w_k` are smooth random fields. The noise is a spatially
//! smoothed Gaussian field, plus an optional confounding mode
//! `kappa * H_t * (w3 - w2)` driven by a latent AR(1) series `H_t`. That mode
//! makes least squares lean on the volcanic pattern, which anchor regression
//! with the volcanic anchor can undo.
//!
//! Randomness: `ChaCha8Rng::seed_from_u64(seed)` on stream 0 draws the
//! loadings and model biases; run `r` uses stream `r + 1`. Runs are
//! generated in parallel with identical results to sequential generation.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchor::LinearModel;
use crate::data::{baseline_means, AnchorMatrix, ForcingSeries, GridShape, GriddedDataset, YearRange};
use crate::error::{Error, Result};
use crate::io::{LoadedData, Manifest};
use crate::scalar::Scalar;
use crate::selection::mean_squared_error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Forcing {
    Solar,
    Volcanic,
    Anthropogenic,
}

impl Forcing {
    pub const ALL: [Forcing; 3] = [Forcing::Solar, Forcing::Volcanic, Forcing::Anthropogenic];

    /// 1-based index: solar 1, volcanic 2, anthropogenic 3.
    pub fn from_index(i: usize) -> Result<Forcing> {
        match i {
            1 => Ok(Forcing::Solar),
            2 => Ok(Forcing::Volcanic),
            3 => Ok(Forcing::Anthropogenic),
            _ => Err(Error::Domain(format!("forcing index must be 1, 2 or 3, got {i}"))),
        }
    }

    pub fn index(self) -> usize {
        self as usize + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Forcing::Solar => "solar",
            Forcing::Volcanic => "volcanic",
            Forcing::Anthropogenic => "anthropogenic",
        }
    }
}

impl fmt::Display for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Forcing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "solar" => Ok(Forcing::Solar),
            "volcanic" => Ok(Forcing::Volcanic),
            "anthropogenic" => Ok(Forcing::Anthropogenic),
            other => match other.parse::<usize>() {
                Ok(i) => Forcing::from_index(i),
                Err(_) => Err(Error::Config(format!("unknown forcing `{other}`"))),
            },
        }
    }
}

/// How runs map to models and scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioRule {
    /// Run `r` belongs to model `r / 2`; even runs are `rcp85`, odd runs `control`.
    #[default]
    Alternate,
    /// One control run per model.
    AllControl,
    /// One `rcp85` run per model.
    AllRcp,
}

pub const CONTROL: &str = "control";
pub const RCP: &str = "rcp85";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolarConfig {
    pub amplitude: f64,
    pub period: f64,
    pub noise: f64,
    pub shift: f64,
}

impl Default for SolarConfig {
    fn default() -> Self {
        SolarConfig {
            amplitude: 0.5,
            period: 11.0,
            noise: 0.1,
            shift: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VolcanicConfig {
    /// Probability of an eruption in any year.
    pub eruption_probability: f64,
    /// Mean of the exponential eruption magnitude.
    pub mean_magnitude: f64,
    /// e-folding time of the decay, in years.
    pub decay_years: f64,
    pub shift: f64,
}

impl Default for VolcanicConfig {
    fn default() -> Self {
        VolcanicConfig {
            eruption_probability: 0.06,
            mean_magnitude: 2.0,
            decay_years: 1.5,
            shift: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnthropogenicConfig {
    pub ramp_start: i32,
    /// Year at which the ramp reaches `final_value`; it keeps growing after.
    pub ramp_end: i32,
    pub final_value: f64,
    pub exponent: f64,
    pub shift: f64,
}

impl Default for AnthropogenicConfig {
    fn default() -> Self {
        AnthropogenicConfig {
            ramp_start: 1990,
            ramp_end: 2100,
            final_value: 8.5,
            exponent: 1.5,
            shift: 0.0,
        }
    }
}

/// `w_k = base[k] + amplitude[k] * g_k` with `g_k` a unit-variance smooth field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadingConfig {
    pub base: [f64; 3],
    pub amplitude: [f64; 3],
    /// Gaussian smoothing scale in grid cells.
    pub length_scale: f64,
}

impl Default for LoadingConfig {
    fn default() -> Self {
        LoadingConfig {
            base: [0.3, 0.8, 1.0],
            amplitude: [0.3, 0.4, 0.4],
            length_scale: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Per-cell standard deviation of internal variability.
    pub sigma: f64,
    pub length_scale: f64,
    /// Noise multiplier applied to control runs.
    pub control_scale: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sigma: 0.5,
            length_scale: 1.5,
            control_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfoundingConfig {
    /// Weight `kappa` of the latent mode along `w3 - w2`; 0 disables it.
    pub strength: f64,
    /// Lag-one autocorrelation of the unit-variance latent series.
    pub autocorrelation: f64,
}

impl Default for ConfoundingConfig {
    fn default() -> Self {
        ConfoundingConfig {
            strength: 0.0,
            autocorrelation: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScmConfig {
    pub grid_shape: GridShape,
    pub start_year: i32,
    pub years: usize,
    pub runs: usize,
    pub scenario_rule: ScenarioRule,
    pub solar: SolarConfig,
    pub volcanic: VolcanicConfig,
    pub anthropogenic: AnthropogenicConfig,
    pub loadings: LoadingConfig,
    pub noise: NoiseConfig,
    pub confounding: ConfoundingConfig,
    /// Model biases are uniform on `(-bias_range, bias_range)`.
    pub bias_range: f64,
    /// Forcings exposed as anchor columns.
    pub anchors: Vec<Forcing>,
    pub baseline: YearRange,
}

impl Default for ScmConfig {
    fn default() -> Self {
        ScmConfig {
            grid_shape: GridShape::new(16, 8),
            start_year: 1870,
            years: 231,
            runs: 6,
            scenario_rule: ScenarioRule::Alternate,
            solar: SolarConfig::default(),
            volcanic: VolcanicConfig::default(),
            anthropogenic: AnthropogenicConfig::default(),
            loadings: LoadingConfig::default(),
            noise: NoiseConfig::default(),
            confounding: ConfoundingConfig::default(),
            bias_range: 0.5,
            anchors: vec![Forcing::Volcanic],
            baseline: YearRange::default(),
        }
    }
}

impl ScmConfig {
    /// Setting with a strong latent mode along `w3 - w2`, under which least
    /// squares is fragile to volcanic shifts.
    pub fn reference_confounded() -> Self {
        ScmConfig {
            runs: 12,
            confounding: ConfoundingConfig {
                strength: 2.0,
                autocorrelation: 0.7,
            },
            ..ScmConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.grid_shape.n_lon == 0 || self.grid_shape.n_lat == 0 {
            return bad(format!("grid_shape {} has no cells", self.grid_shape));
        }
        if self.years < 2 {
            return bad(format!("years must be >= 2, got {}", self.years));
        }
        if self.runs == 0 {
            return bad("runs must be >= 1".into());
        }
        let finite = [
            self.solar.amplitude,
            self.solar.noise,
            self.solar.shift,
            self.volcanic.mean_magnitude,
            self.volcanic.shift,
            self.anthropogenic.final_value,
            self.anthropogenic.exponent,
            self.anthropogenic.shift,
            self.loadings.length_scale,
            self.noise.sigma,
            self.noise.length_scale,
            self.noise.control_scale,
            self.confounding.strength,
            self.bias_range,
        ]
        .iter()
        .chain(&self.loadings.base)
        .chain(&self.loadings.amplitude)
        .all(|v| v.is_finite());
        if !finite {
            return bad("simulator parameters must be finite".into());
        }
        if self.noise.sigma < 0.0 || self.noise.control_scale < 0.0 || self.solar.noise < 0.0 {
            return bad("noise levels must be >= 0".into());
        }
        if self.noise.length_scale < 0.0 || self.loadings.length_scale < 0.0 {
            return bad("length scales must be >= 0".into());
        }
        if !(self.solar.period > 0.0) {
            return bad("solar period must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.volcanic.eruption_probability) {
            return bad("eruption probability must lie in [0, 1]".into());
        }
        if !(self.volcanic.mean_magnitude > 0.0) || !(self.volcanic.decay_years > 0.0) {
            return bad("volcanic magnitude and decay must be > 0".into());
        }
        if self.anthropogenic.ramp_end <= self.anthropogenic.ramp_start || !(self.anthropogenic.exponent > 0.0) {
            return bad("anthropogenic ramp needs ramp_end > ramp_start and exponent > 0".into());
        }
        if !(self.confounding.autocorrelation.abs() < 1.0) {
            return bad("latent autocorrelation must lie in (-1, 1)".into());
        }
        if self.bias_range < 0.0 {
            return bad("bias_range must be >= 0".into());
        }
        if self.anchors.is_empty() || self.anchors.contains(&Forcing::Anthropogenic) {
            return bad("anchors must be a non-empty subset of solar and volcanic".into());
        }
        let last = self.start_year + self.years as i32 - 1;
        if self.baseline.start > self.baseline.end || self.baseline.end < self.start_year || self.baseline.start > last {
            return bad(format!(
                "baseline {} does not overlap the simulated years {}-{last}",
                self.baseline, self.start_year
            ));
        }
        Ok(())
    }

    pub fn n_models(&self) -> usize {
        match self.scenario_rule {
            ScenarioRule::Alternate => self.runs.div_ceil(2),
            _ => self.runs,
        }
    }

    /// `(model index, scenario)` of run `r`.
    pub fn run_label(&self, r: usize) -> (usize, &'static str) {
        match self.scenario_rule {
            ScenarioRule::Alternate => (r / 2, if r % 2 == 0 { RCP } else { CONTROL }),
            ScenarioRule::AllControl => (r, CONTROL),
            ScenarioRule::AllRcp => (r, RCP),
        }
    }

    pub fn model_name(&self, m: usize) -> String {
        let width = self.n_models().saturating_sub(1).to_string().len().max(2);
        format!("M{m:0width$}")
    }

    pub fn year_list(&self) -> Vec<i32> {
        (0..self.years as i32).map(|t| self.start_year + t).collect()
    }

    pub fn shift(&self, forcing: Forcing) -> f64 {
        match forcing {
            Forcing::Solar => self.solar.shift,
            Forcing::Volcanic => self.volcanic.shift,
            Forcing::Anthropogenic => self.anthropogenic.shift,
        }
    }

    fn shift_mut(&mut self, forcing: Forcing) -> &mut f64 {
        match forcing {
            Forcing::Solar => &mut self.solar.shift,
            Forcing::Volcanic => &mut self.volcanic.shift,
            Forcing::Anthropogenic => &mut self.anthropogenic.shift,
        }
    }

    /// Dataset manifest matching what [`simulate`] produces.
    pub fn manifest(&self) -> Manifest {
        let mut m = Manifest::new(self.grid_shape);
        m.baseline = self.baseline;
        m
    }
}

/// Config whose `forcing` generator adds `delta` to every draw. Shifting the
/// anthropogenic target is refused; see [`shift_intervention_with`].
pub fn shift_intervention(config: &ScmConfig, forcing: Forcing, delta: f64) -> Result<ScmConfig> {
    shift_intervention_with(config, forcing, delta, false)
}

pub fn shift_intervention_with(
    config: &ScmConfig,
    forcing: Forcing,
    delta: f64,
    allow_target: bool,
) -> Result<ScmConfig> {
    if forcing == Forcing::Anthropogenic && !allow_target {
        return Err(Error::Domain(
            "shifting the anthropogenic forcing changes the target; pass an explicit override".into(),
        ));
    }
    if !delta.is_finite() {
        return Err(Error::Domain(format!("shift must be finite, got {delta}")));
    }
    let mut out = config.clone();
    *out.shift_mut(forcing) += delta;
    Ok(out)
}

/// Everything a simulation produced, including its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput<T> {
    pub dataset: GriddedDataset<T>,
    /// `F3`.
    pub target: ForcingSeries<T>,
    pub anchors: AnchorMatrix<T>,
    /// All three forcings, one column each.
    pub forcings: Array2<T>,
    /// `w1, w2, w3` as rows.
    pub loadings: Array2<T>,
    pub biases: BTreeMap<String, T>,
    pub config: ScmConfig,
    pub seed: u64,
}

/// Serializable ground truth of a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub seed: u64,
    pub config: ScmConfig,
    pub loadings: BTreeMap<Forcing, Vec<f64>>,
    pub biases: BTreeMap<String, f64>,
}

impl<T: Scalar> SimOutput<T> {
    pub fn to_loaded(&self) -> LoadedData<T> {
        LoadedData {
            dataset: self.dataset.clone(),
            target: self.target.clone(),
            anchors: Some(self.anchors.clone()),
        }
    }

    pub fn truth(&self) -> GroundTruth {
        GroundTruth {
            seed: self.seed,
            config: self.config.clone(),
            loadings: Forcing::ALL
                .iter()
                .map(|&f| (f, self.loadings.row(f.index() - 1).iter().map(|v| v.as_f64()).collect()))
                .collect(),
            biases: self.biases.iter().map(|(k, v)| (k.clone(), v.as_f64())).collect(),
        }
    }

    pub fn forcing(&self, f: Forcing) -> ForcingSeries<T> {
        ForcingSeries::new(self.forcings.column(f.index() - 1).to_owned(), f.name()).expect("finite forcing")
    }
}

struct Run {
    forcings: Array2<f64>,
    values: Array2<f64>,
}

/// Draw a dataset from `config`; deterministic in `(config, seed)`.
pub fn simulate<T: Scalar>(config: &ScmConfig, seed: u64) -> Result<SimOutput<T>> {
    config.validate()?;
    let shape = config.grid_shape;
    let p = shape.cells();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut loadings = Array2::<f64>::zeros((3, p));
    for k in 0..3 {
        let field = smooth_field(&mut rng, shape, config.loadings.length_scale);
        loadings
            .row_mut(k)
            .assign(&field.mapv(|g| config.loadings.base[k] + config.loadings.amplitude[k] * g));
    }
    let biases: Vec<f64> = (0..config.n_models())
        .map(|_| (2.0 * rng.random::<f64>() - 1.0) * config.bias_range)
        .collect();
    let mode = &loadings.row(2) - &loadings.row(1);

    let runs: Vec<Run> = (0..config.runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64 + 1);
            simulate_run(config, r, &loadings, &mode, &biases, &mut rng)
        })
        .collect();

    let n = config.runs * config.years;
    let mut values = Array2::<f64>::zeros((n, p));
    let mut forcings = Array2::<f64>::zeros((n, 3));
    let mut model_ids = Vec::with_capacity(n);
    let mut scenarios = Vec::with_capacity(n);
    let mut years = Vec::with_capacity(n);
    let year_list = config.year_list();
    for (r, run) in runs.iter().enumerate() {
        let rows = r * config.years..(r + 1) * config.years;
        values.slice_mut(ndarray::s![rows.clone(), ..]).assign(&run.values);
        forcings.slice_mut(ndarray::s![rows, ..]).assign(&run.forcings);
        let (m, scenario) = config.run_label(r);
        let name = config.model_name(m);
        for &year in &year_list {
            model_ids.push(name.clone());
            scenarios.push(scenario.to_string());
            years.push(year);
        }
    }

    let cast2 = |a: &Array2<f64>| a.mapv(T::of);
    let forcings_t = cast2(&forcings);
    let dataset = GriddedDataset::new(cast2(&values), model_ids, scenarios, years, shape)?;
    let target = ForcingSeries::new(forcings_t.column(2).to_owned(), Forcing::Anthropogenic.name())?;
    let anchor_cols: Vec<usize> = config.anchors.iter().map(|f| f.index() - 1).collect();
    let anchors = AnchorMatrix::new(
        forcings_t.select(Axis(1), &anchor_cols),
        config.anchors.iter().map(|f| f.name().to_string()).collect(),
    )?;
    Ok(SimOutput {
        dataset,
        target,
        anchors,
        forcings: forcings_t,
        loadings: cast2(&loadings),
        biases: biases
            .iter()
            .enumerate()
            .map(|(m, &b)| (config.model_name(m), T::of(b)))
            .collect(),
        config: config.clone(),
        seed,
    })
}

fn simulate_run(
    config: &ScmConfig,
    r: usize,
    loadings: &Array2<f64>,
    mode: &Array1<f64>,
    biases: &[f64],
    rng: &mut ChaCha8Rng,
) -> Run {
    let t_len = config.years;
    let (m, scenario) = config.run_label(r);
    let p = config.grid_shape.cells();

    let solar = &config.solar;
    let phase = 2.0 * PI * rng.random::<f64>();
    let f1: Vec<f64> = (0..t_len)
        .map(|t| {
            let noise: f64 = rng.sample(StandardNormal);
            solar.amplitude * (2.0 * PI * t as f64 / solar.period + phase).sin() + solar.noise * noise + solar.shift
        })
        .collect();

    let volcanic = &config.volcanic;
    let magnitude = Exp::new(1.0 / volcanic.mean_magnitude).expect("positive rate");
    let mut f2 = vec![0.0; t_len];
    for t in 0..t_len {
        if rng.random_bool(volcanic.eruption_probability) {
            let size = magnitude.sample(rng);
            for (s, v) in f2.iter_mut().enumerate().skip(t) {
                *v -= size * (-((s - t) as f64) / volcanic.decay_years).exp();
            }
        }
    }
    f2.iter_mut().for_each(|v| *v += volcanic.shift);

    let anthro = &config.anthropogenic;
    let f3: Vec<f64> = (0..t_len)
        .map(|t| {
            let year = config.start_year + t as i32;
            let ramp = if scenario == RCP && year > anthro.ramp_start {
                let u = (year - anthro.ramp_start) as f64 / (anthro.ramp_end - anthro.ramp_start) as f64;
                anthro.final_value * u.powf(anthro.exponent)
            } else {
                0.0
            };
            ramp + anthro.shift
        })
        .collect();

    let conf = &config.confounding;
    let innovation = (1.0 - conf.autocorrelation * conf.autocorrelation).sqrt();
    let mut latent = Vec::with_capacity(t_len);
    let mut h: f64 = rng.sample(StandardNormal);
    for _ in 0..t_len {
        latent.push(h);
        let e: f64 = rng.sample(StandardNormal);
        h = conf.autocorrelation * h + innovation * e;
    }

    let sigma = config.noise.sigma * if scenario == CONTROL { config.noise.control_scale } else { 1.0 };
    let mut values = Array2::<f64>::zeros((t_len, p));
    let mut forcings = Array2::<f64>::zeros((t_len, 3));
    for t in 0..t_len {
        let noise = smooth_field(rng, config.grid_shape, config.noise.length_scale);
        let mut row = values.row_mut(t);
        for j in 0..p {
            row[j] = f1[t] * loadings[[0, j]]
                + f2[t] * loadings[[1, j]]
                + f3[t] * loadings[[2, j]]
                + biases[m]
                + sigma * noise[j]
                + conf.strength * latent[t] * mode[j];
        }
        forcings[[t, 0]] = f1[t];
        forcings[[t, 1]] = f2[t];
        forcings[[t, 2]] = f3[t];
    }
    Run { forcings, values }
}

/// White Gaussian noise smoothed separably with a Gaussian kernel
/// (periodic in longitude, truncated in latitude). Weights are normalized per
/// cell so every cell keeps unit variance.
fn smooth_field(rng: &mut ChaCha8Rng, shape: GridShape, length_scale: f64) -> Array1<f64> {
    let p = shape.cells();
    let white: Array1<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    if length_scale == 0.0 {
        return white;
    }
    let reach = (3.0 * length_scale).ceil() as isize;
    let kernel: Vec<f64> = (-reach..=reach)
        .map(|d| (-(d * d) as f64 / (2.0 * length_scale * length_scale)).exp())
        .collect();

    let mut along_lon = Array1::zeros(p);
    let n_lon = shape.n_lon as isize;
    for lon in 0..shape.n_lon {
        for lat in 0..shape.n_lat {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (k, d) in (-reach..=reach).enumerate() {
                if 2 * reach + 1 > n_lon && (d < -(n_lon - 1) / 2 || d > n_lon / 2) {
                    continue;
                }
                let src = (lon as isize + d).rem_euclid(n_lon) as usize;
                acc += kernel[k] * white[shape.index(src, lat)];
                norm += kernel[k] * kernel[k];
            }
            along_lon[shape.index(lon, lat)] = acc / norm.sqrt();
        }
    }

    let mut out = Array1::zeros(p);
    for lon in 0..shape.n_lon {
        for lat in 0..shape.n_lat {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (k, d) in (-reach..=reach).enumerate() {
                let src = lat as isize + d;
                if src < 0 || src >= shape.n_lat as isize {
                    continue;
                }
                acc += kernel[k] * along_lon[shape.index(lon, src as usize)];
                norm += kernel[k] * kernel[k];
            }
            out[shape.index(lon, lat)] = acc / norm.sqrt();
        }
    }
    out
}

/// Shift sweep for [`worst_case_risk`].
#[derive(Debug, Clone, PartialEq)]
pub struct RiskSpec {
    pub forcing: Forcing,
    pub deltas: Vec<f64>,
    /// Runs of the evaluation simulation (`None`: as in the base config).
    pub n_eval: Option<usize>,
    /// Evaluate only these models (`None`: all).
    pub models: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskCurve<T> {
    /// `(delta, mean squared error)` in sweep order.
    pub points: Vec<(f64, T)>,
    pub supremum: T,
    pub argmax: f64,
}

impl<T: Scalar> RiskCurve<T> {
    pub fn to_table(&self) -> String {
        let mut out = String::from("delta,mse\n");
        for (d, mse) in &self.points {
            out.push_str(&format!("{d},{mse}\n"));
        }
        out.push_str(&format!("# supremum {} at delta {}\n", self.supremum, self.argmax));
        out
    }
}

/// Mean squared prediction error of `model` on fresh simulations shifted by
/// each `delta`, and the largest of them.
///
/// Anomalies are taken against the baseline of the unshifted simulation with
/// the same seed: a constant shift would otherwise vanish in the anomaly step.
pub fn worst_case_risk<T: Scalar>(
    model: &LinearModel<T>,
    base: &ScmConfig,
    spec: &RiskSpec,
    seed: u64,
) -> Result<RiskCurve<T>> {
    if spec.deltas.is_empty() {
        return Err(Error::Config("shift list is empty".into()));
    }
    let mut eval = base.clone();
    if let Some(runs) = spec.n_eval {
        eval.runs = runs;
    }
    let reference = simulate::<T>(&eval, seed)?;
    let means = baseline_means(&reference.dataset, eval.baseline)?;
    let rows: Vec<usize> = match &spec.models {
        None => (0..reference.dataset.n()).collect(),
        Some(models) => (0..reference.dataset.n())
            .filter(|&i| models.contains(&reference.dataset.model_ids()[i]))
            .collect(),
    };
    if rows.is_empty() {
        return Err(Error::Config("no evaluation rows for the requested models".into()));
    }

    let mut points = Vec::with_capacity(spec.deltas.len());
    for &delta in &spec.deltas {
        let shifted = shift_intervention(&eval, spec.forcing, delta)?;
        let sim = simulate::<T>(&shifted, seed)?;
        let ds = sim.dataset.select_rows(&rows);
        let mut x = ds.values().to_owned();
        for (mut row, model_id) in x.outer_iter_mut().zip(ds.model_ids()) {
            row.zip_mut_with(&means[model_id], |v, &m| *v = *v - m);
        }
        let y = sim.target.select_rows(&rows);
        let pred = model.predict(x.view())?;
        let mse = mean_squared_error(y.values(), pred.view());
        points.push((delta, mse));
    }
    let (argmax, supremum) = points
        .iter()
        .copied()
        .fold((points[0].0, points[0].1), |best, (d, v)| if v > best.1 { (d, v) } else { best });
    Ok(RiskCurve {
        points,
        supremum,
        argmax,
    })
}
