use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anchor_da::data::compute_anomalies;
use anchor_da::detection::{detect_and_attribute, scenario_residual_scale, DetectionOptions};
use anchor_da::io::{load_dataset, load_model, save_dataset, save_model, FitProvenance, LoadedData, Manifest, ModelFile};
use anchor_da::scm::{simulate, worst_case_risk, Forcing, GroundTruth, RiskSpec};
use anchor_da::selection::{
    cross_validate, default_lambda_grid, grid, grouped_kfold, metrics, split_models, CvReport, ModelSplit,
};
use anchor_da::{residual_anchor_diagnostics, AnchorRegression, GridShape, LinearModel};
use serde_json::json;

use crate::config::{Estimator, RunConfig, Scope};
use crate::output::{digest, Outputs};
use crate::{Cli, CliError, Command, CvArgs, DetectArgs, FitArgs, RobustnessArgs, SimulateArgs, StageExt};

struct Context {
    config: RunConfig,
    seed: Option<u64>,
    out: PathBuf,
    threads: Option<usize>,
}

impl Context {
    fn require_seed(&self, command: &str) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| {
            CliError::Validation(format!(
                "`{command}` needs an explicit seed: pass --seed or set `seed` in the config"
            ))
        })
    }

    fn default_path(&self, explicit: Option<PathBuf>, name: &str) -> PathBuf {
        explicit.unwrap_or_else(|| self.out.join(name))
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.global.config {
        Some(path) => RunConfig::read(path)?,
        None => RunConfig::default(),
    };
    let threads = cli.global.threads.or(config.threads);
    if threads == Some(0) {
        return Err(CliError::Validation("--threads must be >= 1".into()));
    }
    let ctx = Context {
        seed: cli.global.seed.or(config.seed),
        out: cli
            .global
            .out
            .clone()
            .or_else(|| config.out.clone())
            .unwrap_or_else(|| PathBuf::from(".")),
        threads,
        config,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Validation(format!("cannot start worker threads: {e}")))?;
    pool.install(|| match cli.command {
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::Fit(a) => cmd_fit(&ctx, a),
        Command::Cv(a) => cmd_cv(&ctx, a),
        Command::Detect(a) => cmd_detect(&ctx, a),
        Command::Robustness(a) => cmd_robustness(&ctx, a),
    })
}

fn parse_grid(text: &str) -> Result<GridShape, CliError> {
    let bad = || CliError::Validation(format!("grid must look like `16x8`, got `{text}`"));
    let (lon, lat) = text.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok(GridShape::new(
        lon.trim().parse().map_err(|_| bad())?,
        lat.trim().parse().map_err(|_| bad())?,
    ))
}

fn cmd_simulate(ctx: &Context, args: SimulateArgs) -> Result<(), CliError> {
    let (preset, mut scm) = ctx.config.scm(args.preset)?;
    if let Some(runs) = args.runs {
        scm.runs = runs;
    }
    if let Some(years) = args.years {
        scm.years = years;
    }
    if let Some(g) = &args.grid {
        scm.grid_shape = parse_grid(g)?;
    }
    let seed = ctx.require_seed("simulate")?;
    let sim = simulate::<f64>(&scm, seed).stage("simulate")?;

    let mut out = Outputs::new(&ctx.out)?;
    let manifest = scm.manifest();
    save_dataset(out.path("data.csv"), &sim.to_loaded(), &manifest).stage("write")?;
    out.record("data.csv")?;
    manifest.write(out.path("data.toml")).stage("write")?;
    out.record("data.toml")?;
    let mut truth = serde_json::to_string_pretty(&sim.truth()).expect("truth serializes");
    truth.push('\n');
    out.write("truth.json", truth)?;
    out.finish(
        "simulate",
        Some(seed),
        ctx.threads,
        json!({ "preset": preset, "config": scm }),
        Vec::new(),
    )
}

/// Dataset after the anomaly step, with the manifest it was read with.
struct Prepared {
    data: LoadedData<f64>,
    manifest: Manifest,
    path: PathBuf,
    manifest_path: PathBuf,
}

fn manifest_path(data: &Path) -> PathBuf {
    data.with_extension("toml")
}

fn prepare(data_path: PathBuf, baseline_override: Option<anchor_da::YearRange>) -> Result<Prepared, CliError> {
    let manifest_path = manifest_path(&data_path);
    let manifest = Manifest::read(&manifest_path).stage("load")?;
    let mut data = load_dataset::<f64>(&data_path, &manifest).stage("load")?;
    let baseline = baseline_override.unwrap_or(manifest.baseline);
    data.dataset = compute_anomalies(&data.dataset, baseline).stage("anomalies")?;
    Ok(Prepared {
        data,
        manifest,
        path: data_path,
        manifest_path,
    })
}

impl Prepared {
    fn inputs(&self) -> Result<Vec<crate::output::FileDigest>, CliError> {
        Ok(vec![digest(&self.path)?, digest(&self.manifest_path)?])
    }
}

fn cv_grid(ctx: &Context, lambdas: Option<Vec<f64>>, gammas: Option<Vec<f64>>) -> (Vec<f64>, Vec<f64>) {
    let cfg = &ctx.config.cv;
    let lambdas = lambdas
        .or_else(|| cfg.lambdas.clone())
        .unwrap_or_else(default_lambda_grid::<f64>);
    let gammas = gammas.unwrap_or_else(|| cfg.gammas.clone());
    (lambdas, gammas)
}

fn run_cv(
    train: &LoadedData<f64>,
    lambdas: &[f64],
    gammas: &[f64],
    k: usize,
    seed: u64,
) -> Result<CvReport<f64>, CliError> {
    let anchors = if gammas.iter().any(|&g| g != 1.0) {
        Some(train.require_anchors().stage("cv")?)
    } else {
        train.anchors.as_ref()
    };
    let folds = grouped_kfold(train.dataset.model_ids(), k, seed).stage("cv")?;
    cross_validate(&train.dataset, &train.target, anchors, &grid(lambdas, gammas), &folds).stage("cv")
}

fn split(prepared: &Prepared, fraction: f64, seed: u64) -> Result<(ModelSplit, LoadedData<f64>, LoadedData<f64>), CliError> {
    let s = split_models(prepared.data.dataset.model_ids(), fraction, seed).stage("split")?;
    let train = prepared.data.select_rows(&s.train_rows);
    let test = prepared.data.select_rows(&s.test_rows);
    Ok((s, train, test))
}

fn cmd_fit(ctx: &Context, args: FitArgs) -> Result<(), CliError> {
    let cfg = &ctx.config.fit;
    let seed = ctx.require_seed("fit")?;
    let estimator = args.estimator.unwrap_or(cfg.estimator);
    let fraction = args.train_fraction.unwrap_or(cfg.train_fraction);
    let use_cv = args.cv || cfg.cv;
    let mut gamma = args.gamma.unwrap_or(cfg.gamma);
    let mut lambda = args.lambda.unwrap_or(cfg.lambda);
    if estimator == Estimator::Ridge && gamma != 1.0 {
        if args.gamma.is_some() {
            return Err(CliError::Validation("the ridge estimator has gamma = 1".into()));
        }
        gamma = 1.0;
    }

    let prepared = prepare(ctx.default_path(args.data.or_else(|| cfg.data.clone()), "data.csv"), None)?;
    let (s, train, test) = split(&prepared, fraction, seed)?;

    let mut out = Outputs::new(&ctx.out)?;
    let mut report = String::new();
    if use_cv {
        let (lambdas, gammas) = cv_grid(ctx, None, None);
        let gammas = if estimator == Estimator::Ridge { vec![1.0] } else { gammas };
        let k = args.k.unwrap_or(ctx.config.cv.k);
        let cv = run_cv(&train, &lambdas, &gammas, k, seed)?;
        lambda = cv.selected.lambda;
        gamma = cv.selected.gamma;
        out.write("cv_report.csv", cv.to_table())?;
        let _ = writeln!(report, "cv_folds: {k}");
    }

    let anchors = match estimator {
        Estimator::Ridge => None,
        Estimator::Anchor if gamma != 1.0 => Some(train.require_anchors().stage("fit")?),
        Estimator::Anchor => train.anchors.as_ref(),
    };
    let estimator_cfg = AnchorRegression {
        gamma,
        lambda,
        path: cfg.solver,
    };
    let mut model = estimator_cfg
        .fit_dataset(&train.dataset, &train.target, anchors)
        .stage("fit")?;
    model.feature_stats.baseline = Some(prepared.manifest.baseline);

    let pred = model.predict(test.dataset.values()).stage("evaluate")?;
    let m = metrics(test.target.values(), pred.view()).stage("evaluate")?;

    let provenance = FitProvenance {
        seed,
        train_fraction: fraction,
        train_models: s.train_models.clone(),
        test_models: s.test_models.clone(),
    };
    save_model(out.path("model.json"), &ModelFile::from_model(&model, Some(provenance))).stage("write")?;
    out.record("model.json")?;

    let _ = writeln!(report, "estimator: {}", if estimator == Estimator::Ridge { "ridge" } else { "anchor" });
    let _ = writeln!(report, "gamma: {gamma}");
    let _ = writeln!(report, "lambda: {lambda}");
    let _ = writeln!(report, "solver: {}", format!("{:?}", model.solver).to_lowercase());
    let _ = writeln!(report, "min_norm: {}", model.min_norm);
    let _ = writeln!(report, "baseline: {}", prepared.manifest.baseline);
    let _ = writeln!(report, "train_models: {}", s.train_models.join(" "));
    let _ = writeln!(report, "test_models: {}", s.test_models.join(" "));
    let _ = writeln!(report, "train_rows: {}", s.train_rows.len());
    let _ = writeln!(report, "test_rows: {}", s.test_rows.len());
    let _ = writeln!(report, "test_mse: {}", m.mse);
    let _ = writeln!(report, "test_rmse: {}", m.rmse);
    let _ = writeln!(report, "test_r2: {}", m.r2);
    if let Some(a) = &test.anchors {
        let d = residual_anchor_diagnostics(&model, test.dataset.values(), test.target.values(), a.values())
            .stage("evaluate")?;
        for (name, c) in a.names().iter().zip(&d.correlations) {
            let _ = writeln!(report, "residual_corr[{name}]: {c}");
        }
        let _ = writeln!(report, "residual_projected_norm: {}", d.projected_norm);
        if d.degenerate {
            let _ = writeln!(report, "residual_degenerate: true");
        }
    }
    out.write("fit_report.txt", report)?;
    out.write("coefficients.csv", coefficient_table(&model))?;
    out.write("predictions.csv", prediction_table(&model, &prepared.data, &s)?)?;

    out.finish(
        "fit",
        Some(seed),
        ctx.threads,
        json!({
            "estimator": estimator,
            "gamma": gamma,
            "lambda": lambda,
            "solver": cfg.solver,
            "train_fraction": fraction,
            "cv": use_cv,
        }),
        prepared.inputs()?,
    )
}

/// Coefficient map in grid order: standardized `beta` and the weight in
/// original units.
fn coefficient_table(model: &LinearModel<f64>) -> String {
    let (weights, offset) = model.original_units();
    let mut out = String::from("cell,lon,lat,beta,weight\n");
    for j in 0..model.p() {
        let (lon, lat) = model.grid_shape.map(|g| g.position(j)).unwrap_or((j, 0));
        let _ = writeln!(out, "{j},{lon},{lat},{},{}", model.beta[j], weights[j]);
    }
    let _ = writeln!(out, "# intercept {} offset {}", model.intercept, offset);
    out
}

fn prediction_table(model: &LinearModel<f64>, data: &LoadedData<f64>, s: &ModelSplit) -> Result<String, CliError> {
    let pred = model.predict(data.dataset.values()).stage("evaluate")?;
    let ds = &data.dataset;
    let test: std::collections::BTreeSet<usize> = s.test_rows.iter().copied().collect();
    let mut out = String::from("model_id,scenario,year,split,y_true,y_pred\n");
    for i in 0..ds.n() {
        let side = if test.contains(&i) { "test" } else { "train" };
        let _ = writeln!(
            out,
            "{},{},{},{side},{},{}",
            ds.model_ids()[i],
            ds.scenarios()[i],
            ds.years()[i],
            data.target.values()[i],
            pred[i]
        );
    }
    Ok(out)
}

fn cmd_cv(ctx: &Context, args: CvArgs) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let seed = ctx.require_seed("cv")?;
    let fraction = args.train_fraction.unwrap_or(cfg.fit.train_fraction);
    let k = args.k.unwrap_or(cfg.cv.k);
    let (lambdas, gammas) = cv_grid(ctx, args.lambdas, args.gammas);
    let prepared = prepare(ctx.default_path(args.data.or_else(|| cfg.fit.data.clone()), "data.csv"), None)?;
    let (_, train, _) = split(&prepared, fraction, seed)?;
    let report = run_cv(&train, &lambdas, &gammas, k, seed)?;

    let mut out = Outputs::new(&ctx.out)?;
    out.write("cv_report.csv", report.to_table())?;
    out.finish(
        "cv",
        Some(seed),
        ctx.threads,
        json!({ "k": k, "train_fraction": fraction, "lambdas": lambdas, "gammas": gammas }),
        prepared.inputs()?,
    )
}

fn load_linear_model(path: &Path) -> Result<(ModelFile, LinearModel<f64>), CliError> {
    let file = load_model(path).stage("load")?;
    let model = file.to_model::<f64>().stage("load")?;
    Ok((file, model))
}

fn scoped_models(file: &ModelFile, scope: Scope) -> Option<Vec<String>> {
    match scope {
        Scope::All => None,
        Scope::Test => file.provenance.as_ref().map(|p| p.test_models.clone()),
    }
}

fn cmd_detect(ctx: &Context, args: DetectArgs) -> Result<(), CliError> {
    let cfg = &ctx.config.detect;
    let options = DetectionOptions {
        z: args.z.unwrap_or(cfg.z),
        rule: args.rule.unwrap_or(cfg.rule).into(),
        min_persistence: args.min_persistence.unwrap_or(cfg.min_persistence),
        attribution_threshold: cfg.attribution_threshold,
    };
    let truth_scale = args.truth_scale.unwrap_or(cfg.truth_scale);
    let scope = args.scope.unwrap_or(cfg.scope);
    if !(options.z > 0.0) {
        return Err(CliError::Stage {
            stage: "detect",
            source: anchor_da::Error::Domain(format!("z must be positive, got {}", options.z)),
        });
    }

    let model_path = ctx.default_path(args.model.or_else(|| cfg.model.clone()), "model.json");
    let (file, model) = load_linear_model(&model_path)?;
    let prepared = prepare(
        ctx.default_path(args.data.or_else(|| cfg.data.clone()), "data.csv"),
        model.feature_stats.baseline,
    )?;
    let data = &prepared.data;
    let rows: Vec<usize> = match scoped_models(&file, scope) {
        None => (0..data.dataset.n()).collect(),
        Some(models) => (0..data.dataset.n())
            .filter(|&i| models.contains(&data.dataset.model_ids()[i]))
            .collect(),
    };
    if rows.is_empty() {
        return Err(CliError::Stage {
            stage: "detect",
            source: anchor_da::Error::Consistency("no rows of the evaluation models in the dataset".into()),
        });
    }
    let eval = data.select_rows(&rows);
    let ds = &eval.dataset;
    let scales = scenario_residual_scale(&model, ds, &eval.target).stage("scale")?;
    let pred = model.predict(ds.values()).stage("detect")?;

    let mut groups: Vec<((String, String), Vec<usize>)> = Vec::new();
    let mut index: BTreeMap<(String, String), usize> = BTreeMap::new();
    for i in 0..ds.n() {
        let key = (ds.model_ids()[i].clone(), ds.scenarios()[i].clone());
        let g = *index.entry(key.clone()).or_insert_with(|| {
            groups.push((key, Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push(i);
    }

    let mut out = Outputs::new(&ctx.out)?;
    let mut summary =
        String::from("model_id,scenario,sigma,first_detection_year,detected_years,years,attribution_fraction,attribution_ok\n");
    for ((model_id, scenario), idx) in &groups {
        let years: Vec<i32> = idx.iter().map(|&i| ds.years()[i]).collect();
        let labels: Vec<String> = idx.iter().map(|&i| ds.scenarios()[i].clone()).collect();
        let y_pred = pred.select(ndarray::Axis(0), idx);
        let y_true = eval.target.values().select(ndarray::Axis(0), idx).mapv(|v| v * truth_scale);
        let result = detect_and_attribute(
            &years,
            y_pred.view(),
            Some(y_true.view()),
            &scales,
            &labels,
            Some(model_id),
            &options,
        )
        .stage("detect")?;
        out.write(&format!("detection_{model_id}_{scenario}.csv"), result.to_table())?;
        let sigma = scales.scale(Some(model_id), scenario).map(|s| s.sigma).unwrap_or(f64::NAN);
        let _ = writeln!(
            summary,
            "{model_id},{scenario},{sigma},{},{},{},{},{}",
            result.first_detection_year.map(|y| y.to_string()).unwrap_or_default(),
            result.years.iter().filter(|y| y.detected).count(),
            result.years.len(),
            result.attribution_fraction.map(|f| f.to_string()).unwrap_or_default(),
            result.attribution_ok
        );
    }
    out.write("detection_summary.csv", summary)?;

    let mut inputs = vec![digest(&model_path)?];
    inputs.extend(prepared.inputs()?);
    out.finish(
        "detect",
        None,
        ctx.threads,
        json!({
            "z": options.z,
            "rule": args.rule.unwrap_or(cfg.rule),
            "min_persistence": options.min_persistence,
            "attribution_threshold": options.attribution_threshold,
            "truth_scale": truth_scale,
            "scope": scope,
            "excluded_scenarios": scales.excluded,
        }),
        inputs,
    )
}

fn cmd_robustness(ctx: &Context, args: RobustnessArgs) -> Result<(), CliError> {
    let cfg = &ctx.config.robustness;
    let forcing = match &args.forcing {
        Some(text) => text.parse::<Forcing>().stage("config")?,
        None => cfg.forcing,
    };
    let deltas = args.deltas.clone().unwrap_or_else(|| cfg.deltas.clone());
    if deltas.is_empty() {
        return Err(CliError::Validation("the shift list is empty".into()));
    }
    let scope = args.scope.unwrap_or(cfg.scope);
    let model_path = ctx.default_path(args.model.or_else(|| cfg.model.clone()), "model.json");
    let truth_path = ctx.default_path(args.truth.or_else(|| cfg.truth.clone()), "truth.json");
    let (file, model) = load_linear_model(&model_path)?;
    let text = fs::read_to_string(&truth_path).map_err(|e| CliError::Stage {
        stage: "load",
        source: anchor_da::Error::Io {
            path: truth_path.clone(),
            source: e,
        },
    })?;
    let truth: GroundTruth = serde_json::from_str(&text).map_err(|e| CliError::Stage {
        stage: "load",
        source: anchor_da::Error::Parse {
            path: truth_path.clone(),
            message: e.to_string(),
        },
    })?;
    let seed = ctx.seed.unwrap_or(truth.seed);
    let spec = RiskSpec {
        forcing,
        deltas,
        n_eval: args.n_eval.or(cfg.n_eval),
        models: scoped_models(&file, scope),
    };
    let curve = worst_case_risk(&model, &truth.config, &spec, seed).stage("robustness")?;

    let mut out = Outputs::new(&ctx.out)?;
    out.write("risk_curve.csv", curve.to_table())?;
    out.finish(
        "robustness",
        Some(seed),
        ctx.threads,
        json!({
            "forcing": forcing,
            "deltas": spec.deltas,
            "n_eval": spec.n_eval,
            "scope": scope,
        }),
        vec![digest(&model_path)?, digest(&truth_path)?],
    )
}
