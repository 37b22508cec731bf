//! Subcommand implementations.

use std::path::Path;

use serde::Serialize;
use serde_json::json;

use cbayes_core::baselines::{bayes_class_set, bayes_interval, split_conformal_fit};
use cbayes_core::bench::{run_benchmark, BenchConfig, EvalRule, ScenarioSpec};
use cbayes_core::conformal::{
    default_grid, ConformalEngine, ConformalGrid, DegeneratePolicy, SetBody,
};
use cbayes_core::data::{read_dataset_path, read_test_points_path, Dataset, Datum};
use cbayes_core::error::{Error, Result};
use cbayes_core::hierarchy::{feasible_alphas, uniform_alphas, GroupAlphaPolicy, GroupedView};
use cbayes_core::metropolis::sample_metropolis;
use cbayes_core::model::{CoefPrior, LikelihoodModel, ModelFamily};
use cbayes_core::posterior::{ingest_draws_path, PosteriorDraws};
use cbayes_core::report::Method;

use crate::io::{config_comment, emit_json, write_atomic, Envelope, FORMAT_VERSION};
use crate::{
    BayesArgs, BenchArgs, ConformalArgs, DiagnoseArgs, DrawsArgs, GroupConformalArgs, ModelArgs,
    SampleArgs, SplitArgs,
};

fn resolve_workers(arg: Option<usize>) -> usize {
    arg.or_else(|| std::env::var("CBAYES_WORKERS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(1)
        .max(1)
}

/// Load training data and build the model the flags describe. Dimensions
/// (d, and J for the hierarchical family) come from the data itself.
fn load_model_and_data(model_args: &ModelArgs, data_path: &Path) -> Result<(LikelihoodModel, Dataset)> {
    let raw = read_dataset_path(data_path)?;
    if raw.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let is_regression = model_args.family != "logistic";
    let data = if model_args.standardize { raw.standardize(is_regression)? } else { raw };
    let coef_prior = match model_args.coef_prior.as_str() {
        "laplace" => CoefPrior::Laplace,
        _ => CoefPrior::Normal { sd: model_args.prior_sd },
    };
    let model = match model_args.family.as_str() {
        "gaussian" => LikelihoodModel::gaussian_linear(data.dim(), coef_prior, model_args.tau_scale),
        "logistic" => LikelihoodModel::logistic(data.dim(), coef_prior),
        "hierarchical" => {
            let view = GroupedView::new(&data)?;
            LikelihoodModel::hierarchical_gaussian(data.dim(), view.groups())
        }
        other => return Err(Error::InvalidConfig(format!("unknown family `{other}`"))),
    };
    Ok((model, data))
}

/// Flag validation that must run before any file is touched: `--draws` xor
/// `--sample-inline` (clap already rejects passing both).
fn validate_draws_flags(args: &DrawsArgs) -> Result<()> {
    if args.draws.is_none() && !args.sample_inline {
        return Err(Error::InvalidConfig("pass exactly one of --draws or --sample-inline".into()));
    }
    Ok(())
}

fn obtain_draws(args: &DrawsArgs, model: &LikelihoodModel, data: &Dataset) -> Result<PosteriorDraws> {
    match (&args.draws, args.sample_inline) {
        (Some(path), false) => ingest_draws_path(path, model),
        (None, true) => sample_metropolis(model, data, args.t, args.tune, args.seed),
        (None, false) => Err(Error::InvalidConfig("pass exactly one of --draws or --sample-inline".into())),
        (Some(_), true) => unreachable!("clap enforces the exclusion"),
    }
}

fn parse_grid(spec: &str, n_grid: usize, data: &Dataset, classification: bool) -> Result<ConformalGrid> {
    if classification {
        if spec != "auto" {
            return Err(Error::GridKindMismatch);
        }
        return Ok(ConformalGrid::classification());
    }
    if spec == "auto" {
        return default_grid(data, n_grid);
    }
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidGrid(format!("expected `auto` or `lo,hi,n`, got `{spec}`")));
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| Error::InvalidGrid(format!("bad lo `{}`", parts[0])))?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| Error::InvalidGrid(format!("bad hi `{}`", parts[1])))?;
    let n: usize = parts[2].trim().parse().map_err(|_| Error::InvalidGrid(format!("bad n `{}`", parts[2])))?;
    ConformalGrid::regression(lo, hi, n)
}

/// Transform raw test points through the training standardization record.
fn adapt_test_points(data: &Dataset, points: Vec<Datum>, has_y: bool) -> Vec<Datum> {
    points
        .into_iter()
        .map(|mut p| {
            p.x = data.transform_covariates(&p.x);
            if has_y {
                if let Some(s) = data.standardization() {
                    if s.y_transformed {
                        p.y = (p.y - s.y_mean) / s.y_scale;
                    }
                }
            }
            p
        })
        .collect()
}

fn grid_info(grid: &ConformalGrid, classification: bool) -> serde_json::Value {
    if classification {
        json!({ "labels": [0, 1] })
    } else {
        json!({ "lo": grid.lo(), "hi": grid.hi(), "n": grid.len() })
    }
}

fn run_indexed<T: Send, F: Fn(usize) -> Result<T> + Sync>(
    n: usize,
    workers: usize,
    f: F,
) -> Result<Vec<T>> {
    if workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
        pool.install(|| (0..n).into_par_iter().map(&f).collect())
    } else {
        (0..n).map(f).collect()
    }
}

#[derive(Serialize)]
struct SetResult {
    method: &'static str,
    test_x: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    group: Option<usize>,
    alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_j: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    feasible: Option<bool>,
    grid: serde_json::Value,
    pi: Vec<f64>,
    ess: Vec<f64>,
    set: SetBody,
    measure: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    covered_grid: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    covered_exact: Option<bool>,
}

fn dump_rank_profiles(
    prefix: &Path,
    grid: &ConformalGrid,
    results: &[SetResult],
    config: &serde_json::Value,
) -> Result<()> {
    for (i, r) in results.iter().enumerate() {
        let mut body = config_comment(config);
        body.push_str("y,pi,ess\n");
        for (g, &y) in grid.points().iter().enumerate() {
            body.push_str(&format!("{y:.16e},{},{}\n", r.pi[g], r.ess[g]));
        }
        let path = prefix.with_extension(format!("{i}.csv"));
        write_atomic(&path, body.as_bytes())?;
    }
    Ok(())
}

pub(crate) fn sample(args: SampleArgs) -> Result<()> {
    let (model, data) = load_model_and_data(&args.model, &args.data)?;
    let draws = sample_metropolis(&model, &data, args.t, args.tune, args.seed)?;
    let config = json!({
        "subcommand": "sample",
        "model": &args.model,
        "data": args.data,
        "t": args.t,
        "tune": args.tune,
        "seed": args.seed,
        "format_version": FORMAT_VERSION,
    });
    let mut body = config_comment(&config).into_bytes();
    draws.write_csv(&mut body)?;
    write_atomic(&args.out, &body)?;
    if let Some(diag) = draws.diagnostics() {
        eprintln!(
            "cbayes sample: acceptance {:.3}, min param ESS {:.1} of T = {}",
            diag.acceptance_rate,
            diag.min_ess(),
            draws.t()
        );
    }
    Ok(())
}

pub(crate) fn conformal(args: ConformalArgs) -> Result<()> {
    validate_draws_flags(&args.draws)?;
    let (model, data) = load_model_and_data(&args.model, &args.data)?;
    if matches!(model.family(), ModelFamily::HierarchicalGaussian { .. }) {
        return Err(Error::InvalidConfig(
            "use `group-conformal` for the hierarchical family".into(),
        ));
    }
    let classification = !model.is_regression();
    let draws = obtain_draws(&args.draws, &model, &data)?;
    let grid = parse_grid(&args.grid.grid, args.grid.n_grid, &data, classification)?;
    let (points, has_y) = read_test_points_path(&args.test)?;
    let points = adapt_test_points(&data, points, has_y);
    let policy = if args.floor_degenerate { DegeneratePolicy::FloorRank } else { DegeneratePolicy::HardError };
    let engine = ConformalEngine::new(&model, &draws, &data)?.with_policy(policy);
    let workers = resolve_workers(args.workers);

    let results = run_indexed(points.len(), workers, |i| {
        let p = &points[i];
        let profile = engine.rank_profile(&p.x, None, &grid, args.alpha)?;
        let set = profile.prediction_set(&grid);
        let (covered_grid, covered_exact) = if has_y {
            let cov = engine.exact_rank_coverage_with_profile(p, &grid, &profile)?;
            (Some(cov.covered_grid), Some(cov.covered_exact))
        } else {
            (None, None)
        };
        Ok(SetResult {
            method: "cb",
            test_x: p.x.clone(),
            group: None,
            alpha: args.alpha,
            alpha_j: None,
            feasible: None,
            grid: grid_info(&grid, classification),
            pi: profile.pi,
            ess: profile.ess,
            measure: set.measure,
            set: set.body,
            covered_grid,
            covered_exact,
        })
    })?;

    let config = json!({
        "subcommand": "conformal",
        "model": &args.model,
        "data": args.data,
        "test": args.test,
        "draws": &args.draws,
        "alpha": args.alpha,
        "grid": &args.grid,
        "workers": workers,
        "floor_degenerate": args.floor_degenerate,
        "measure_convention": "grid spacing x included grid points (labels counted for classification)",
    });
    if let Some(prefix) = &args.dump_rank {
        dump_rank_profiles(prefix, &grid, &results, &config)?;
    }
    emit_json(args.out.as_deref(), &Envelope { format_version: FORMAT_VERSION, config, results })
}

fn parse_alpha_policy(spec: &str, grouped: &GroupedView) -> Result<GroupAlphaPolicy> {
    let (kind, value) = spec
        .split_once(':')
        .ok_or_else(|| Error::InvalidConfig(format!("alpha policy `{spec}`; expected `uniform:<a>` or `min-feasible:<m>`")))?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad alpha-policy value in `{spec}`")))?;
    match kind.trim() {
        "uniform" => uniform_alphas(grouped, value),
        "min-feasible" => feasible_alphas(grouped, value),
        other => Err(Error::InvalidConfig(format!("unknown alpha policy `{other}`"))),
    }
}

pub(crate) fn group_conformal(args: GroupConformalArgs) -> Result<()> {
    validate_draws_flags(&args.draws)?;
    let mut model_args = args.model.clone();
    model_args.family = "hierarchical".into();
    let (model, data) = load_model_and_data(&model_args, &args.data)?;
    let draws = obtain_draws(&args.draws, &model, &data)?;
    let grouped = GroupedView::new(&data)?;
    let policy = parse_alpha_policy(&args.alpha_policy, &grouped)?;
    let grid = parse_grid(&args.grid.grid, args.grid.n_grid, &data, false)?;
    let (points, has_y) = read_test_points_path(&args.test)?;
    let points = adapt_test_points(&data, points, has_y);
    for (i, p) in points.iter().enumerate() {
        if p.group.is_none() {
            return Err(Error::DataFormat(format!("test row {}: missing group", i + 1)));
        }
    }
    let engine_policy =
        if args.floor_degenerate { DegeneratePolicy::FloorRank } else { DegeneratePolicy::HardError };
    let engine = ConformalEngine::new(&model, &draws, &data)?.with_policy(engine_policy);
    let workers = resolve_workers(args.workers);

    let results = run_indexed(points.len(), workers, |i| {
        let p = &points[i];
        let j = p.group.unwrap();
        let alpha_j = policy.alpha_for(j)?;
        let feasible = policy.feasible_for(j)?;
        let profile = engine.rank_profile(&p.x, Some(j), &grid, alpha_j)?;
        let set = profile.prediction_set(&grid);
        let (covered_grid, covered_exact) = if has_y {
            let cov = engine.exact_rank_coverage_with_profile(p, &grid, &profile)?;
            (Some(cov.covered_grid), Some(cov.covered_exact))
        } else {
            (None, None)
        };
        Ok(SetResult {
            method: "cb",
            test_x: p.x.clone(),
            group: Some(j),
            alpha: alpha_j,
            alpha_j: Some(alpha_j),
            feasible: Some(feasible),
            grid: grid_info(&grid, false),
            pi: profile.pi,
            ess: profile.ess,
            measure: set.measure,
            set: set.body,
            covered_grid,
            covered_exact,
        })
    })?;

    let config = json!({
        "subcommand": "group-conformal",
        "model": &model_args,
        "data": args.data,
        "test": args.test,
        "draws": &args.draws,
        "alpha_policy": args.alpha_policy,
        "alphas": policy,
        "grid": &args.grid,
        "workers": workers,
        "floor_degenerate": args.floor_degenerate,
        "measure_convention": "grid spacing x included grid points",
    });
    if let Some(prefix) = &args.dump_rank {
        dump_rank_profiles(prefix, &grid, &results, &config)?;
    }
    emit_json(args.out.as_deref(), &Envelope { format_version: FORMAT_VERSION, config, results })
}

#[derive(Serialize)]
struct BayesResult {
    method: &'static str,
    test_x: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    group: Option<usize>,
    alpha: f64,
    set: serde_json::Value,
    measure: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    p1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    clamped: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    covered: Option<bool>,
}

pub(crate) fn bayes(args: BayesArgs) -> Result<()> {
    validate_draws_flags(&args.draws)?;
    let (model, data) = load_model_and_data(&args.model, &args.data)?;
    let classification = !model.is_regression();
    let draws = obtain_draws(&args.draws, &model, &data)?;
    let grid = parse_grid(&args.grid.grid, args.grid.n_grid, &data, classification)?;
    let (points, has_y) = read_test_points_path(&args.test)?;
    let points = adapt_test_points(&data, points, has_y);
    let workers = resolve_workers(args.workers);

    let results = run_indexed(points.len(), workers, |i| {
        let p = &points[i];
        if classification {
            let rep = bayes_class_set(&model, &draws, &p.x, args.alpha)?;
            Ok(BayesResult {
                method: "bayes",
                test_x: p.x.clone(),
                group: None,
                alpha: args.alpha,
                set: json!({ "labels": rep.set.labels() }),
                measure: rep.set.size() as f64,
                p1: Some(rep.p1),
                confidence: Some(rep.confidence),
                clamped: None,
                covered: has_y.then(|| rep.set.contains(p.y)),
            })
        } else {
            let iv = bayes_interval(&model, &draws, &p.x, p.group, &grid, args.alpha)?;
            Ok(BayesResult {
                method: "bayes",
                test_x: p.x.clone(),
                group: p.group,
                alpha: args.alpha,
                set: json!({ "intervals": [[iv.lo, iv.hi]] }),
                measure: iv.length(),
                p1: None,
                confidence: None,
                clamped: Some(iv.clamped),
                covered: has_y.then(|| iv.contains(p.y)),
            })
        }
    })?;

    let config = json!({
        "subcommand": "bayes",
        "model": &args.model,
        "data": args.data,
        "test": args.test,
        "draws": &args.draws,
        "alpha": args.alpha,
        "grid": &args.grid,
        "workers": workers,
    });
    emit_json(args.out.as_deref(), &Envelope { format_version: FORMAT_VERSION, config, results })
}

pub(crate) fn split(args: SplitArgs) -> Result<()> {
    let raw = read_dataset_path(&args.data)?;
    let data = if args.standardize { raw.standardize(true)? } else { raw };
    let fit = split_conformal_fit(&data, args.alpha, args.seed)?;
    let (points, has_y) = read_test_points_path(&args.test)?;
    let points = adapt_test_points(&data, points, has_y);
    let results: Vec<BayesResult> = points
        .iter()
        .map(|p| {
            let iv = fit.predict(&p.x);
            BayesResult {
                method: "split",
                test_x: p.x.clone(),
                group: None,
                alpha: args.alpha,
                set: json!({ "intervals": [[iv.lo, iv.hi]] }),
                measure: iv.length(),
                p1: None,
                confidence: None,
                clamped: Some(iv.unbounded),
                covered: has_y.then(|| iv.contains(p.y)),
            }
        })
        .collect();
    let config = json!({
        "subcommand": "split",
        "data": args.data,
        "test": args.test,
        "alpha": args.alpha,
        "seed": args.seed,
        "standardize": args.standardize,
    });
    emit_json(args.out.as_deref(), &Envelope { format_version: FORMAT_VERSION, config, results })
}

pub(crate) fn bench(args: BenchArgs) -> Result<()> {
    let mut spec = ScenarioSpec::preset(&args.scenario).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "unknown scenario `{}`; available: {}",
            args.scenario,
            ScenarioSpec::preset_names().join(", ")
        ))
    })?;
    spec.seed = args.seed;
    let methods: Vec<Method> = args
        .methods
        .split(',')
        .map(|m| Method::parse(m).ok_or_else(|| Error::InvalidConfig(format!("unknown method `{m}`"))))
        .collect::<Result<_>>()?;
    let cfg = BenchConfig {
        methods,
        alpha: args.alpha,
        repeats: args.repeats,
        t: args.t,
        tune: args.tune,
        n_grid: args.n_grid,
        seed: args.seed,
        eval: if args.eval == "exact" { EvalRule::Exact } else { EvalRule::Grid },
        workers: resolve_workers(args.workers),
        degenerate_policy: DegeneratePolicy::FloorRank,
    };
    let report = run_benchmark(&spec, &cfg)?;
    print!("{}", report.to_text_table());
    if let Some(path) = &args.csv {
        write_atomic(path, report.to_csv_long().as_bytes())?;
    }
    if let Some(path) = &args.out {
        let config = json!({
            "subcommand": "bench",
            "scenario": args.scenario,
            "spec": spec,
            "repeats": args.repeats,
            "alpha": args.alpha,
            "t": args.t,
            "tune": args.tune,
            "n_grid": args.n_grid,
            "seed": args.seed,
            "methods": args.methods,
            "eval": args.eval,
            "workers": cfg.workers,
        });
        let wrapped = json!({
            "format_version": FORMAT_VERSION,
            "config": config,
            "report": report,
        });
        emit_json(Some(path), &wrapped)?;
    }
    Ok(())
}

pub(crate) fn diagnose(args: DiagnoseArgs) -> Result<()> {
    validate_draws_flags(&args.draws)?;
    let (model, data) = load_model_and_data(&args.model, &args.data)?;
    if !model.is_regression() {
        return Err(Error::RegressionRequired);
    }
    let draws = obtain_draws(&args.draws, &model, &data)?;
    let (points, has_y) = read_test_points_path(&args.test)?;
    let points = adapt_test_points(&data, points, has_y);
    let engine = ConformalEngine::new(&model, &draws, &data)?;
    // scale factor ESS_mcmc / T when sampler diagnostics are available
    let scale = draws
        .diagnostics()
        .map(|d| d.min_ess() / draws.t() as f64)
        .unwrap_or(1.0);

    // `--grid` may be a single outcome value: emit one row at that y
    let single: Option<f64> = args.grid.trim().parse().ok();
    let config = json!({
        "subcommand": "diagnose",
        "model": &args.model,
        "data": args.data,
        "test": args.test,
        "draws": &args.draws,
        "alpha": args.alpha,
        "grid": args.grid,
        "n_grid": args.n_grid,
        "ess_scale": scale,
    });
    for (i, p) in points.iter().enumerate() {
        let mut body = config_comment(&config);
        body.push_str("y,ess,ess_scaled,pi\n");
        match single {
            Some(y) => {
                let (pi, ess) = engine.pi_at(&p.x, None, y)?;
                body.push_str(&format!("{y:.16e},{ess},{},{pi}\n", ess * scale));
            }
            None => {
                let grid = parse_grid(&args.grid, args.n_grid, &data, false)?;
                let profile = engine.rank_profile(&p.x, None, &grid, args.alpha)?;
                for (g, &y) in grid.points().iter().enumerate() {
                    body.push_str(&format!(
                        "{y:.16e},{},{},{}\n",
                        profile.ess[g],
                        profile.ess[g] * scale,
                        profile.pi[g]
                    ));
                }
            }
        }
        let path = args.out.with_extension(format!("{i}.csv"));
        write_atomic(&path, body.as_bytes())?;
    }
    Ok(())
}
