//! Simulation scenarios and the repeated train/test coverage harness.
//!
//! Each repeat simulates (or re-splits) data, runs the sampler, evaluates
//! every requested method on every test point, and records per-repeat
//! averages; the report aggregates means and standard errors over repeats
//! and flags coverages more than 3 se away from the target. Interval
//! construction is timed separately from sampling. Per-repeat seeds derive
//! from the master seed by a SplitMix64 counter stream, so any single repeat
//! can be reproduced in isolation.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::Serialize;

use crate::baselines::{
    bayes_class_set, bayes_interval, conformal_class_report, split_conformal_fit,
    uninformative_decomposition, ClassPredictionReport,
};
use crate::conformal::{default_grid, ConformalEngine, ConformalGrid, DegeneratePolicy};
use crate::data::{Dataset, Datum};
use crate::error::{Error, Result};
use crate::math::{sigmoid, split_seed};
use crate::metropolis::sample_metropolis;
use crate::model::{CoefPrior, LikelihoodModel};
use crate::report::{CoverageReport, DecompositionStats, Method, RepeatRecord, ReportRow, Stat};

/// Fixed group slopes used by the grouped-data presets.
pub const PRESET_HIER_SLOPES: [f64; 5] = [1.33, -0.77, -0.32, -0.99, -1.07];
/// Fixed group noise scales used by the heteroscedastic grouped preset.
pub const PRESET_HIER_SCALES: [f64; 5] = [1.24, 2.30, 0.76, 0.28, 1.11];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Grouped data, homoscedastic: Y ~ N(θⱼ·x, 1).
    HierScenario1,
    /// Grouped data, heteroscedastic: Y ~ N(θⱼ·x, τⱼ²).
    HierScenario2,
    /// Flat linear data with unit noise; fitted with a well-chosen prior.
    LinearWellspec,
    /// Same generative process, fitted with a τ prior squeezed toward 0.
    LinearMisspecTau,
    /// Logistic outcomes from a strong (near-separable) linear score.
    LogisticSim,
}

/// A simulation scenario: generative process plus the model hyperparameters
/// the harness fits to it.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// J, grouped scenarios only.
    pub groups: usize,
    /// n_j per group (train and test alike), grouped scenarios only.
    pub group_size: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    /// Slopes drawn once and held fixed across repeats; `None` redraws per
    /// repeat.
    pub fixed_slopes: Option<Vec<f64>>,
    /// Per-group noise scales, scenario-2 analogue of `fixed_slopes`.
    pub fixed_scales: Option<Vec<f64>>,
    /// Half-normal scale c of the fitted model's τ prior.
    pub tau_prior_scale: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Named presets. `paper-hier-1` / `paper-hier-2` carry the fixed slope
    /// and scale vectors; `hier-1-fresh` / `hier-2-fresh` redraw them per
    /// repeat.
    pub fn preset(name: &str) -> Option<ScenarioSpec> {
        let hier = |kind, fixed: bool| ScenarioSpec {
            kind,
            groups: 5,
            group_size: 10,
            n_train: 50,
            n_test: 50,
            dim: 1,
            fixed_slopes: fixed.then(|| PRESET_HIER_SLOPES.to_vec()),
            fixed_scales: (fixed && kind == ScenarioKind::HierScenario2)
                .then(|| PRESET_HIER_SCALES.to_vec()),
            tau_prior_scale: 1.0,
            seed: 0,
        };
        Some(match name {
            "paper-hier-1" => hier(ScenarioKind::HierScenario1, true),
            "paper-hier-2" => hier(ScenarioKind::HierScenario2, true),
            "hier-1-fresh" => hier(ScenarioKind::HierScenario1, false),
            "hier-2-fresh" => hier(ScenarioKind::HierScenario2, false),
            "linear-wellspec" => ScenarioSpec {
                kind: ScenarioKind::LinearWellspec,
                groups: 0,
                group_size: 0,
                n_train: 100,
                n_test: 100,
                dim: 3,
                fixed_slopes: None,
                fixed_scales: None,
                tau_prior_scale: 1.0,
                seed: 0,
            },
            "linear-misspec" => ScenarioSpec {
                kind: ScenarioKind::LinearMisspecTau,
                tau_prior_scale: 0.02,
                ..ScenarioSpec::preset("linear-wellspec").unwrap()
            },
            "logistic-sim" => ScenarioSpec {
                kind: ScenarioKind::LogisticSim,
                groups: 0,
                group_size: 0,
                n_train: 100,
                n_test: 100,
                dim: 3,
                fixed_slopes: Some(vec![3.0, -2.0, 1.5]),
                fixed_scales: None,
                tau_prior_scale: 1.0,
                seed: 0,
            },
            _ => return None,
        })
    }

    pub fn preset_names() -> &'static [&'static str] {
        &[
            "paper-hier-1",
            "paper-hier-2",
            "hier-1-fresh",
            "hier-2-fresh",
            "linear-wellspec",
            "linear-misspec",
            "logistic-sim",
        ]
    }

    pub fn is_grouped(&self) -> bool {
        matches!(self.kind, ScenarioKind::HierScenario1 | ScenarioKind::HierScenario2)
    }

    pub fn is_classification(&self) -> bool {
        self.kind == ScenarioKind::LogisticSim
    }

    fn validate(&self) -> Result<()> {
        if self.is_grouped() {
            if self.groups == 0 || self.group_size == 0 {
                return Err(Error::InvalidConfig("grouped scenario needs J >= 1 and n_j >= 1".into()));
            }
            if let Some(s) = &self.fixed_slopes {
                if s.len() != self.groups {
                    return Err(Error::InvalidConfig(format!(
                        "fixed slopes have {} entries for J = {}",
                        s.len(),
                        self.groups
                    )));
                }
            }
            if let Some(s) = &self.fixed_scales {
                if s.len() != self.groups {
                    return Err(Error::InvalidConfig(format!(
                        "fixed scales have {} entries for J = {}",
                        s.len(),
                        self.groups
                    )));
                }
            }
        } else {
            if self.n_train == 0 || self.n_test == 0 || self.dim == 0 {
                return Err(Error::InvalidConfig("flat scenario needs n, n_test, d >= 1".into()));
            }
            if let Some(s) = &self.fixed_slopes {
                if s.len() != self.dim {
                    return Err(Error::InvalidConfig(format!(
                        "fixed slopes have {} entries for d = {}",
                        s.len(),
                        self.dim
                    )));
                }
            }
        }
        Ok(())
    }

    /// The model the harness fits to this scenario's data.
    pub fn fit_model(&self) -> LikelihoodModel {
        match self.kind {
            ScenarioKind::HierScenario1 | ScenarioKind::HierScenario2 => {
                LikelihoodModel::hierarchical_gaussian(self.dim, self.groups)
            }
            ScenarioKind::LinearWellspec | ScenarioKind::LinearMisspecTau => {
                LikelihoodModel::gaussian_linear(self.dim, CoefPrior::Laplace, self.tau_prior_scale)
            }
            ScenarioKind::LogisticSim => LikelihoodModel::logistic(self.dim, CoefPrior::Laplace),
        }
    }
}

/// Draw (train, test) datasets from the scenario's generative process using
/// its own seed.
pub fn simulate(spec: &ScenarioSpec) -> Result<(Dataset, Dataset)> {
    simulate_seeded(spec, spec.seed)
}

/// Same, with an explicit seed (the harness derives one per repeat).
pub fn simulate_seeded(spec: &ScenarioSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    match spec.kind {
        ScenarioKind::HierScenario1 | ScenarioKind::HierScenario2 => {
            let slopes: Vec<f64> = match &spec.fixed_slopes {
                Some(s) => s.clone(),
                None => (0..spec.groups).map(|_| StandardNormal.sample(&mut rng)).collect(),
            };
            let scales: Vec<f64> = if spec.kind == ScenarioKind::HierScenario1 {
                vec![1.0; spec.groups]
            } else {
                match &spec.fixed_scales {
                    Some(s) => s.clone(),
                    None => (0..spec.groups).map(|_| Exp1.sample(&mut rng)).collect(),
                }
            };
            let draw_split = |rng: &mut ChaCha20Rng| -> Result<Dataset> {
                let mut rows = Vec::with_capacity(spec.groups * spec.group_size);
                for j in 0..spec.groups {
                    for _ in 0..spec.group_size {
                        let x: f64 = StandardNormal.sample(rng);
                        let eps: f64 = StandardNormal.sample(rng);
                        let y = slopes[j] * x + scales[j] * eps;
                        rows.push(Datum::grouped(vec![x], y, j + 1));
                    }
                }
                Dataset::new(rows)
            };
            let train = draw_split(&mut rng)?;
            let test = draw_split(&mut rng)?;
            Ok((train, test))
        }
        ScenarioKind::LinearWellspec | ScenarioKind::LinearMisspecTau => {
            let slopes: Vec<f64> = match &spec.fixed_slopes {
                Some(s) => s.clone(),
                None => (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect(),
            };
            let draw_split = |rng: &mut ChaCha20Rng, n: usize| -> Result<Dataset> {
                let mut rows = Vec::with_capacity(n);
                for _ in 0..n {
                    let x: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(rng)).collect();
                    let mu: f64 = slopes.iter().zip(&x).map(|(a, b)| a * b).sum();
                    let eps: f64 = StandardNormal.sample(rng);
                    rows.push(Datum::new(x, mu + eps));
                }
                Dataset::new(rows)
            };
            let train = draw_split(&mut rng, spec.n_train)?;
            let test = draw_split(&mut rng, spec.n_test)?;
            Ok((train, test))
        }
        ScenarioKind::LogisticSim => {
            let slopes: Vec<f64> = match &spec.fixed_slopes {
                Some(s) => s.clone(),
                None => (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect(),
            };
            let draw_split = |rng: &mut ChaCha20Rng, n: usize| -> Result<Dataset> {
                let mut rows = Vec::with_capacity(n);
                for _ in 0..n {
                    let x: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(rng)).collect();
                    let z: f64 = slopes.iter().zip(&x).map(|(a, b)| a * b).sum();
                    let y = f64::from(rng.random::<f64>() < sigmoid(z));
                    rows.push(Datum::new(x, y));
                }
                Dataset::new(rows)
            };
            let train = draw_split(&mut rng, spec.n_train)?;
            let test = draw_split(&mut rng, spec.n_test)?;
            Ok((train, test))
        }
    }
}

/// Which coverage convention the CB rows report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalRule {
    /// Membership of the grid point nearest to Y (the main-table convention).
    Grid,
    /// π(Y) > α evaluated at the exact outcome.
    Exact,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    pub alpha: f64,
    pub repeats: usize,
    pub t: usize,
    pub tune: usize,
    pub n_grid: usize,
    pub seed: u64,
    pub eval: EvalRule,
    pub workers: usize,
    /// The harness defaults to flooring degenerate extreme grid points at
    /// rank 1/(n+1) instead of aborting a whole repeat.
    pub degenerate_policy: DegeneratePolicy,
}

impl BenchConfig {
    pub fn new(seed: u64) -> Self {
        BenchConfig {
            methods: vec![Method::Cb, Method::Bayes],
            alpha: 0.2,
            repeats: 50,
            t: 8000,
            tune: 4000,
            n_grid: 100,
            seed,
            eval: EvalRule::Grid,
            workers: 1,
            degenerate_policy: DegeneratePolicy::FloorRank,
        }
    }
}

struct RepeatOutcome {
    /// (method, group, mean coverage, mean length) at repeat level; group
    /// None = overall.
    rows: Vec<(Method, Option<usize>, f64, f64)>,
    method_secs: Vec<(Method, f64)>,
    sampling_secs: f64,
    cb_grid_coverage: Option<f64>,
    cb_exact_coverage: Option<f64>,
    decomposition: Option<(crate::baselines::MethodDecomposition, crate::baselines::MethodDecomposition)>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn run_repeat(spec: &ScenarioSpec, cfg: &BenchConfig, repeat: usize) -> Result<RepeatOutcome> {
    let sim_seed = split_seed(cfg.seed, 3 * repeat as u64);
    let mcmc_seed = split_seed(cfg.seed, 3 * repeat as u64 + 1);
    let split_seed_r = split_seed(cfg.seed, 3 * repeat as u64 + 2);

    let (train, test) = simulate_seeded(spec, sim_seed)?;
    let model = spec.fit_model();

    let t0 = Instant::now();
    let draws = sample_metropolis(&model, &train, cfg.t, cfg.tune, mcmc_seed)?;
    let sampling_secs = t0.elapsed().as_secs_f64();

    let grid = if spec.is_classification() {
        ConformalGrid::classification()
    } else {
        default_grid(&train, cfg.n_grid)?
    };

    let mut rows = Vec::new();
    let mut method_secs = Vec::new();
    let mut cb_grid_coverage = None;
    let mut cb_exact_coverage = None;
    let mut cb_class_reports: Vec<ClassPredictionReport> = Vec::new();
    let mut bayes_class_reports: Vec<ClassPredictionReport> = Vec::new();

    for &method in &cfg.methods {
        let t0 = Instant::now();
        match method {
            Method::Cb => {
                let engine = ConformalEngine::new(&model, &draws, &train)?
                    .with_policy(cfg.degenerate_policy);
                let mut grid_cov = Vec::new();
                let mut exact_cov = Vec::new();
                let mut lengths = Vec::new();
                let mut groups = Vec::new();
                for datum in test.data() {
                    let profile = engine.rank_profile(&datum.x, datum.group, &grid, cfg.alpha)?;
                    let set = profile.prediction_set(&grid);
                    let cov = engine.exact_rank_coverage_with_profile(datum, &grid, &profile)?;
                    grid_cov.push(f64::from(cov.covered_grid));
                    exact_cov.push(f64::from(cov.covered_exact));
                    lengths.push(set.measure);
                    groups.push(datum.group);
                    if spec.is_classification() {
                        cb_class_reports.push(conformal_class_report(&profile, f64::NAN));
                    }
                }
                let reported = match cfg.eval {
                    EvalRule::Grid => &grid_cov,
                    EvalRule::Exact => &exact_cov,
                };
                push_rows(&mut rows, Method::Cb, spec, &groups, reported, &lengths);
                cb_grid_coverage = Some(mean(&grid_cov));
                cb_exact_coverage = Some(mean(&exact_cov));
            }
            Method::Bayes => {
                let mut covs = Vec::new();
                let mut lengths = Vec::new();
                let mut groups = Vec::new();
                for datum in test.data() {
                    if spec.is_classification() {
                        let rep = bayes_class_set(&model, &draws, &datum.x, cfg.alpha)?;
                        covs.push(f64::from(rep.set.contains(datum.y)));
                        lengths.push(rep.set.size() as f64);
                        bayes_class_reports.push(rep);
                    } else {
                        let iv = bayes_interval(&model, &draws, &datum.x, datum.group, &grid, cfg.alpha)?;
                        covs.push(f64::from(iv.contains(datum.y)));
                        lengths.push(iv.length());
                    }
                    groups.push(datum.group);
                }
                push_rows(&mut rows, Method::Bayes, spec, &groups, &covs, &lengths);
            }
            Method::Split => {
                if spec.is_grouped() || spec.is_classification() {
                    return Err(Error::InvalidConfig(
                        "the split baseline covers flat regression scenarios only".into(),
                    ));
                }
                let fit = split_conformal_fit(&train, cfg.alpha, split_seed_r)?;
                let mut covs = Vec::new();
                let mut lengths = Vec::new();
                let groups = vec![None; test.len()];
                for datum in test.data() {
                    let iv = fit.predict(&datum.x);
                    covs.push(f64::from(iv.contains(datum.y)));
                    lengths.push(iv.length());
                }
                push_rows(&mut rows, Method::Split, spec, &groups, &covs, &lengths);
            }
        }
        method_secs.push((method, t0.elapsed().as_secs_f64()));
    }

    let decomposition = if spec.is_classification()
        && !bayes_class_reports.is_empty()
        && !cb_class_reports.is_empty()
    {
        let truths: Vec<f64> = test.outcomes().collect();
        let summary = uninformative_decomposition(&bayes_class_reports, &cb_class_reports, &truths)?;
        Some((summary.bayes, summary.conformal))
    } else {
        None
    };

    Ok(RepeatOutcome {
        rows,
        method_secs,
        sampling_secs,
        cb_grid_coverage,
        cb_exact_coverage,
        decomposition,
    })
}

fn push_rows(
    rows: &mut Vec<(Method, Option<usize>, f64, f64)>,
    method: Method,
    spec: &ScenarioSpec,
    groups: &[Option<usize>],
    covs: &[f64],
    lengths: &[f64],
) {
    if spec.is_grouped() {
        for j in 1..=spec.groups {
            let idx: Vec<usize> =
                (0..groups.len()).filter(|&i| groups[i] == Some(j)).collect();
            if idx.is_empty() {
                continue;
            }
            let c = mean(&idx.iter().map(|&i| covs[i]).collect::<Vec<_>>());
            let l = mean(&idx.iter().map(|&i| lengths[i]).collect::<Vec<_>>());
            rows.push((method, Some(j), c, l));
        }
    }
    rows.push((method, None, mean(covs), mean(lengths)));
}

/// Run the scenario `cfg.repeats` times and aggregate coverage, length, and
/// timing statistics. Statistical fields are bit-reproducible for identical
/// (spec, config); wall-clock timings naturally are not.
pub fn run_benchmark(spec: &ScenarioSpec, cfg: &BenchConfig) -> Result<CoverageReport> {
    spec.validate()?;
    if cfg.repeats < 2 {
        return Err(Error::InvalidConfig("need at least 2 repeats".into()));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::InvalidAlpha(cfg.alpha));
    }
    if cfg.methods.is_empty() {
        return Err(Error::InvalidConfig("no methods requested".into()));
    }

    let run_all = || -> Vec<(usize, Result<RepeatOutcome>)> {
        use rayon::prelude::*;
        if cfg.workers > 1 {
            (0..cfg.repeats)
                .into_par_iter()
                .map(|r| (r, run_repeat(spec, cfg, r)))
                .collect()
        } else {
            (0..cfg.repeats).map(|r| (r, run_repeat(spec, cfg, r))).collect()
        }
    };
    let outcomes = if cfg.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
        pool.install(run_all)
    } else {
        run_all()
    };

    let mut results = Vec::with_capacity(cfg.repeats);
    for (r, outcome) in outcomes {
        match outcome {
            Ok(o) => results.push(o),
            Err(e) => {
                return Err(Error::RepeatFailed {
                    repeat: r,
                    seed: split_seed(cfg.seed, 3 * r as u64),
                    source: Box::new(e),
                })
            }
        }
    }

    // aggregate over repeats, keyed by (method, group)
    let mut keys: Vec<(Method, Option<usize>)> = Vec::new();
    for &method in &cfg.methods {
        if spec.is_grouped() {
            for j in 1..=spec.groups {
                keys.push((method, Some(j)));
            }
        }
        keys.push((method, None));
    }

    let target = 1.0 - cfg.alpha;
    let mut rows = Vec::new();
    let mut raw = Vec::new();
    for &(method, group) in &keys {
        let covs: Vec<f64> = results
            .iter()
            .flat_map(|o| {
                o.rows
                    .iter()
                    .filter(|(m, g, _, _)| *m == method && *g == group)
                    .map(|&(_, _, c, _)| c)
            })
            .collect();
        let lens: Vec<f64> = results
            .iter()
            .flat_map(|o| {
                o.rows
                    .iter()
                    .filter(|(m, g, _, _)| *m == method && *g == group)
                    .map(|&(_, _, _, l)| l)
            })
            .collect();
        let coverage = Stat::from_samples(&covs);
        let length = Stat::from_samples(&lens);
        let time_secs = if group.is_none() {
            let secs: Vec<f64> = results
                .iter()
                .flat_map(|o| {
                    o.method_secs.iter().filter(|(m, _)| *m == method).map(|&(_, s)| s)
                })
                .collect();
            Some(Stat::from_samples(&secs))
        } else {
            None
        };
        let miss = (coverage.mean - target).abs() > 3.0 * coverage.se;
        rows.push(ReportRow { method, group, coverage, length, time_secs, miss });
    }
    for (r, outcome) in results.iter().enumerate() {
        for &(method, group, cov, len) in &outcome.rows {
            let time_secs = outcome
                .method_secs
                .iter()
                .find(|(m, _)| *m == method)
                .map_or(f64::NAN, |&(_, s)| s);
            raw.push(RepeatRecord { repeat: r, method, group, coverage: cov, length: len, time_secs });
        }
    }

    let sampling: Vec<f64> = results.iter().map(|o| o.sampling_secs).collect();
    let cb_grid: Vec<f64> = results.iter().filter_map(|o| o.cb_grid_coverage).collect();
    let cb_exact: Vec<f64> = results.iter().filter_map(|o| o.cb_exact_coverage).collect();
    let decomposition = if results.iter().all(|o| o.decomposition.is_some()) {
        let take = |f: &dyn Fn(&crate::baselines::MethodDecomposition) -> f64, bayes: bool| -> Stat {
            let xs: Vec<f64> = results
                .iter()
                .map(|o| {
                    let (b, c) = o.decomposition.as_ref().unwrap();
                    f(if bayes { b } else { c })
                })
                .collect();
            Stat::from_samples(&xs)
        };
        let misclass = |d: &crate::baselines::MethodDecomposition| d.misclassification.unwrap_or(0.0);
        Some(DecompositionStats {
            bayes_empty: take(&|d| d.empty_rate, true),
            bayes_both: take(&|d| d.both_rate, true),
            bayes_misclassification: take(&misclass, true),
            cb_empty: take(&|d| d.empty_rate, false),
            cb_both: take(&|d| d.both_rate, false),
            cb_misclassification: take(&misclass, false),
        })
    } else {
        None
    };

    Ok(CoverageReport {
        scenario: format!("{:?}", spec.kind),
        alpha: cfg.alpha,
        target,
        repeats: cfg.repeats,
        eval: cfg.eval,
        t: cfg.t,
        tune: cfg.tune,
        n_grid: cfg.n_grid,
        seed: cfg.seed,
        rows,
        sampling_secs: Stat::from_samples(&sampling),
        cb_coverage_grid: (!cb_grid.is_empty()).then(|| Stat::from_samples(&cb_grid)),
        cb_coverage_exact: (!cb_exact.is_empty()).then(|| Stat::from_samples(&cb_exact)),
        decomposition,
        raw,
    })
}
