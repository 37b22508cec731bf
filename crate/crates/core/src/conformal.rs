//! Full conformal prediction from posterior draws.
//!
//! The conformity score is the posterior predictive density. Refitting the
//! model with the augmented dataset `{Z_1..Z_n, (x, y)}` is replaced by
//! add-one-in (AOI) importance sampling: draws from the posterior given
//! `Z_1..Z_n` are reweighted by the likelihood of the plug-in point,
//!
//! ```text
//! w_t ∝ f_{θ_t}(y | x),   σ_i = Σ_t w̃_t f_{θ_t}(Y_i | X_i),
//! ```
//!
//! and the rank of σ_{n+1} among σ_{1..n+1} gives the conformal p-value
//! π(y). The prediction set at miscoverage α is `{y on the grid: π(y) > α}`.
//!
//! All weight arithmetic runs in log space through a log-sum-exp
//! normalization; the normalized weights are explicitly renormalized with
//! compensated summation so Σ w̃ = 1 holds to ~1e-15. The per-training-point
//! likelihood matrix is computed once per (draws, dataset) pair and reused
//! across grid points and test covariates, so a profile over the grid costs
//! one dot product per (grid point, training point) pair.

use ndarray::Array2;
use serde::Serialize;

use crate::data::{Dataset, Datum};
use crate::error::{Error, Result};
use crate::math::{kahan_sum, log_sum_exp};
use crate::model::{LikelihoodModel, ModelFamily};
use crate::posterior::PosteriorDraws;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Regression,
    Classification,
}

/// Outcome reference grid: equispaced reals for regression, {0, 1} for
/// classification.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalGrid {
    kind: GridKind,
    points: Vec<f64>,
    spacing: f64,
}

impl ConformalGrid {
    pub fn regression(lo: f64, hi: f64, n_grid: usize) -> Result<Self> {
        if n_grid < 2 {
            return Err(Error::GridTooSmall(n_grid));
        }
        if hi <= lo || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidGrid(format!("need finite lo < hi, got [{lo}, {hi}]")));
        }
        let spacing = (hi - lo) / (n_grid - 1) as f64;
        let points = (0..n_grid).map(|i| lo + i as f64 * spacing).collect();
        Ok(ConformalGrid { kind: GridKind::Regression, points, spacing })
    }

    pub fn classification() -> Self {
        ConformalGrid { kind: GridKind::Classification, points: vec![0.0, 1.0], spacing: 1.0 }
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// δ, the grid resolution (1 for the classification grid).
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn lo(&self) -> f64 {
        self.points[0]
    }

    pub fn hi(&self) -> f64 {
        *self.points.last().unwrap()
    }

    /// Index of the grid point nearest to `y`.
    pub fn nearest_index(&self, y: f64) -> usize {
        match self.kind {
            GridKind::Classification => usize::from(y >= 0.5),
            GridKind::Regression => {
                let raw = ((y - self.lo()) / self.spacing).round();
                let mut i = raw.clamp(0.0, (self.points.len() - 1) as f64) as usize;
                // guard against rounding at cell edges
                if i > 0 && (y - self.points[i - 1]).abs() < (y - self.points[i]).abs() {
                    i -= 1;
                }
                if i + 1 < self.points.len() && (y - self.points[i + 1]).abs() < (y - self.points[i]).abs() {
                    i += 1;
                }
                i
            }
        }
    }
}

/// Default regression grid: `[min(y) − 2·s, max(y) + 2·s]` where `s` is the
/// response scale (1 when the response is standardized). The ±2 padding
/// matches a unit-sd response convention.
pub fn default_grid(data: &Dataset, n_grid: usize) -> Result<ConformalGrid> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.looks_binary() {
        return Err(Error::GridKindMismatch);
    }
    let pad = 2.0 * data.response_scale();
    let lo = data.outcomes().fold(f64::INFINITY, f64::min) - pad;
    let hi = data.outcomes().fold(f64::NEG_INFINITY, f64::max) + pad;
    ConformalGrid::regression(lo, hi, n_grid)
}

/// Fraction of scores (the candidate's own included) not exceeding the last
/// entry, ties counted inclusively:
/// π = (1/(n+1)) Σ_i 1(σ_i ≤ σ_{n+1}).
pub fn rank(scores: &[f64]) -> f64 {
    let last = *scores.last().expect("rank needs at least the candidate score");
    let count = scores.iter().filter(|&&s| s <= last).count();
    count as f64 / scores.len() as f64
}

/// What to do when every importance weight vanishes at a grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegeneratePolicy {
    /// Fail the profile, naming the grid value.
    #[default]
    HardError,
    /// Assign the floor rank 1/(n+1) at that point (it cannot conform) and
    /// ESS 1, instead of failing. Off by default: silent imputation can hide
    /// importance-sampling breakdown.
    FloorRank,
}

/// The rank function π(y) over a grid for one test covariate, with the
/// importance-sampling ESS at each grid point.
#[derive(Debug, Clone, Serialize)]
pub struct RankProfile {
    pub test_x: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
    pub alpha: f64,
    pub pi: Vec<f64>,
    pub ess: Vec<f64>,
}

impl RankProfile {
    /// Threshold the profile at its α: included grid points are exactly
    /// those with π(y) > α.
    pub fn prediction_set(&self, grid: &ConformalGrid) -> PredictionSet {
        let included: Vec<usize> =
            (0..self.pi.len()).filter(|&g| self.pi[g] > self.alpha).collect();
        match grid.kind() {
            GridKind::Classification => {
                let labels: Vec<u8> = included.iter().map(|&g| g as u8).collect();
                PredictionSet {
                    alpha: self.alpha,
                    measure: labels.len() as f64,
                    body: SetBody::Labels { labels },
                }
            }
            GridKind::Regression => {
                let mut intervals: Vec<[f64; 2]> = Vec::new();
                let pts = grid.points();
                let mut run_start: Option<usize> = None;
                let mut prev = 0usize;
                for &g in &included {
                    match run_start {
                        None => run_start = Some(g),
                        Some(start) => {
                            if g != prev + 1 {
                                intervals.push([pts[start], pts[prev]]);
                                run_start = Some(g);
                            }
                        }
                    }
                    prev = g;
                }
                if let Some(start) = run_start {
                    intervals.push([pts[start], pts[prev]]);
                }
                PredictionSet {
                    alpha: self.alpha,
                    measure: grid.spacing() * included.len() as f64,
                    body: SetBody::Intervals { intervals },
                }
            }
        }
    }
}

/// Grid subset with π(y) > α: disjoint closed intervals for regression
/// (measure = δ × included count, a Lebesgue-measure estimate that stays
/// consistent for disconnected sets), or a label subset — possibly empty —
/// for classification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionSet {
    pub alpha: f64,
    pub measure: f64,
    #[serde(flatten)]
    pub body: SetBody,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum SetBody {
    Intervals { intervals: Vec<[f64; 2]> },
    Labels { labels: Vec<u8> },
}

impl PredictionSet {
    pub fn is_empty(&self) -> bool {
        match &self.body {
            SetBody::Intervals { intervals } => intervals.is_empty(),
            SetBody::Labels { labels } => labels.is_empty(),
        }
    }

    pub fn contains_label(&self, label: u8) -> bool {
        match &self.body {
            SetBody::Labels { labels } => labels.contains(&label),
            SetBody::Intervals { .. } => false,
        }
    }
}

/// Grid-membership and exact-rank coverage flags for one test point with a
/// known outcome (evaluation mode).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExactCoverage {
    /// Nearest grid point to Y is in the conformal set.
    pub covered_grid: bool,
    /// π(Y) > α, from one extra AOI evaluation at the exact outcome.
    pub covered_exact: bool,
    pub nearest_index: usize,
}

/// The AOI engine bound to one (model, draws, dataset) triple. Construction
/// computes the training likelihood matrix once; profiles over grids and
/// test covariates reuse it.
pub struct ConformalEngine<'a> {
    model: &'a LikelihoodModel,
    draws: &'a PosteriorDraws,
    n: usize,
    /// log f_{θ_t}(Y_i | X_i), laid out (i, t) so each datum's draw vector is
    /// contiguous.
    train_loglik: Array2<f64>,
    /// exp of the above; the reusable factor of every predictive dot product.
    train_lik: Array2<f64>,
    /// member row indices per group (hierarchical only)
    group_members: Option<Vec<Vec<usize>>>,
    policy: DegeneratePolicy,
}

impl<'a> ConformalEngine<'a> {
    pub fn new(
        model: &'a LikelihoodModel,
        draws: &'a PosteriorDraws,
        data: &'a Dataset,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if draws.layout() != model.layout() {
            return Err(Error::LayoutMismatch {
                expected: model.layout().len(),
                got: draws.layout().len(),
            });
        }
        if data.dim() != model.dim() {
            return Err(Error::DimensionMismatch { expected: model.dim(), got: data.dim() });
        }
        if matches!(model.family(), ModelFamily::Logistic { .. }) && !data.looks_binary() {
            return Err(Error::DataFormat("logistic family requires outcomes in {0, 1}".into()));
        }
        let group_members = match model.groups() {
            Some(groups) => {
                let mut members = vec![Vec::new(); groups];
                for (i, datum) in data.data().iter().enumerate() {
                    let g = datum.group.ok_or(Error::MissingGroup)?;
                    if g < 1 || g > groups {
                        return Err(Error::UnknownGroup { group: g, groups });
                    }
                    members[g - 1].push(i);
                }
                Some(members)
            }
            None => None,
        };

        let t = draws.t();
        let n = data.len();
        let mut train_loglik = Array2::zeros((n, t));
        let mut train_lik = Array2::zeros((n, t));
        // validate the first row through the checked path, then fill
        model.log_likelihood(draws.row(0), data.get(0))?;
        for (i, datum) in data.data().iter().enumerate() {
            for ti in 0..t {
                let ll = model.loglik_unchecked(draws.row(ti), &datum.x, datum.y, datum.group);
                train_loglik[(i, ti)] = ll;
                train_lik[(i, ti)] = ll.exp();
            }
        }
        Ok(ConformalEngine {
            model,
            draws,
            n,
            train_loglik,
            train_lik,
            group_members,
            policy: DegeneratePolicy::HardError,
        })
    }

    pub fn with_policy(mut self, policy: DegeneratePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn t(&self) -> usize {
        self.draws.t()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// log f_{θ_t}(Y_i | X_i) cache, shape (n, T).
    pub fn train_loglik(&self) -> &Array2<f64> {
        &self.train_loglik
    }

    fn members(&self, group: Option<usize>) -> Result<Vec<usize>> {
        match (&self.group_members, group) {
            (None, None) => Ok((0..self.n).collect()),
            (None, Some(_)) => Ok((0..self.n).collect()),
            (Some(_), None) => Err(Error::MissingGroup),
            (Some(members), Some(g)) => {
                if g < 1 || g > members.len() {
                    return Err(Error::UnknownGroup { group: g, groups: members.len() });
                }
                Ok(members[g - 1].clone())
            }
        }
    }

    fn check_test_x(&self, test_x: &[f64]) -> Result<()> {
        if test_x.len() != self.model.dim() {
            return Err(Error::DimensionMismatch { expected: self.model.dim(), got: test_x.len() });
        }
        Ok(())
    }

    /// Unnormalized log importance weights at plug-in value y: one
    /// likelihood evaluation per draw.
    fn log_weights(&self, test_x: &[f64], group: Option<usize>, y: f64) -> Vec<f64> {
        let t = self.t();
        let mut logw = Vec::with_capacity(t);
        for ti in 0..t {
            logw.push(self.model.loglik_unchecked(self.draws.row(ti), test_x, y, group));
        }
        logw
    }

    /// Self-normalize log weights; returns (w̃, ESS). Errors when every
    /// weight underflows to zero.
    fn normalize(&self, logw: &[f64], y: f64) -> Result<(Vec<f64>, f64)> {
        let lse = log_sum_exp(logw);
        if lse == f64::NEG_INFINITY {
            return Err(Error::DegenerateWeights { y });
        }
        let mut wt: Vec<f64> = logw.iter().map(|&lw| (lw - lse).exp()).collect();
        let total = kahan_sum(wt.iter().cloned());
        let inv = 1.0 / total;
        for w in &mut wt {
            *w *= inv;
        }
        let sum_sq = kahan_sum(wt.iter().map(|&w| w * w));
        let ess = (1.0 / sum_sq).clamp(1.0, wt.len() as f64);
        Ok((wt, ess))
    }

    fn aoi_scores(
        &self,
        logw: &[f64],
        members: &[usize],
        y: f64,
    ) -> Result<(Vec<f64>, f64)> {
        let (wt, ess) = self.normalize(logw, y)?;
        let mut scores = Vec::with_capacity(members.len() + 1);
        for &i in members {
            let row = self.train_lik.row(i);
            let row = row.to_slice().expect("train_lik is row-major");
            scores.push(dot(&wt, row));
        }
        // σ_{n+1}: the plug-in point's own AOI predictive density
        let sigma_new = wt.iter().zip(logw).map(|(&w, &lw)| w * lw.exp()).sum::<f64>();
        scores.push(sigma_new);
        Ok((scores, ess))
    }

    /// AOI predictive densities at plug-in value `y`: the n (or n_j)
    /// conformity scores followed by σ_{n+1}, plus the importance-weight ESS
    /// = 1/Σ w̃².
    pub fn aoi_predictives(
        &self,
        test_x: &[f64],
        group: Option<usize>,
        y: f64,
    ) -> Result<(Vec<f64>, f64)> {
        self.check_test_x(test_x)?;
        let members = self.members(group)?;
        let logw = self.log_weights(test_x, group, y);
        self.aoi_scores(&logw, &members, y)
    }

    /// The self-normalized importance weights w̃ at plug-in value `y`, with
    /// their ESS. Diagnostic surface: Σ w̃ = 1 up to ~1e-15 by construction.
    pub fn normalized_weights(
        &self,
        test_x: &[f64],
        group: Option<usize>,
        y: f64,
    ) -> Result<(Vec<f64>, f64)> {
        self.check_test_x(test_x)?;
        let logw = self.log_weights(test_x, group, y);
        self.normalize(&logw, y)
    }

    /// Exact rank π(y) and ESS at one outcome value (no grid).
    pub fn pi_at(&self, test_x: &[f64], group: Option<usize>, y: f64) -> Result<(f64, f64)> {
        let (scores, ess) = self.aoi_predictives(test_x, group, y)?;
        Ok((rank(&scores), ess))
    }

    /// Evaluate π and ESS on every grid point for one test covariate.
    pub fn rank_profile(
        &self,
        test_x: &[f64],
        group: Option<usize>,
        grid: &ConformalGrid,
        alpha: f64,
    ) -> Result<RankProfile> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidAlpha(alpha));
        }
        self.check_test_x(test_x)?;
        let members = self.members(group)?;
        let m = members.len();
        let mut pi = Vec::with_capacity(grid.len());
        let mut ess = Vec::with_capacity(grid.len());
        for &y in grid.points() {
            let logw = self.log_weights(test_x, group, y);
            match self.aoi_scores(&logw, &members, y) {
                Ok((scores, e)) => {
                    pi.push(rank(&scores));
                    ess.push(e);
                }
                Err(Error::DegenerateWeights { .. }) if self.policy == DegeneratePolicy::FloorRank => {
                    pi.push(1.0 / (m + 1) as f64);
                    ess.push(1.0);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(RankProfile { test_x: test_x.to_vec(), group, alpha, pi, ess })
    }

    /// Rank profile plus the thresholded prediction set.
    pub fn conformal_set(
        &self,
        test_x: &[f64],
        group: Option<usize>,
        grid: &ConformalGrid,
        alpha: f64,
    ) -> Result<(RankProfile, PredictionSet)> {
        let profile = self.rank_profile(test_x, group, grid, alpha)?;
        let set = profile.prediction_set(grid);
        Ok((profile, set))
    }

    /// Coverage flags for a test point with known outcome: membership of the
    /// nearest grid point in the set, and the exact-rank condition
    /// π(Y) > α from one extra AOI evaluation.
    pub fn exact_rank_coverage(
        &self,
        test: &Datum,
        grid: &ConformalGrid,
        alpha: f64,
    ) -> Result<ExactCoverage> {
        let profile = self.rank_profile(&test.x, test.group, grid, alpha)?;
        self.exact_rank_coverage_with_profile(test, grid, &profile)
    }

    /// Same as [`exact_rank_coverage`] but reusing an existing profile for
    /// the grid half of the check.
    ///
    /// [`exact_rank_coverage`]: ConformalEngine::exact_rank_coverage
    pub fn exact_rank_coverage_with_profile(
        &self,
        test: &Datum,
        grid: &ConformalGrid,
        profile: &RankProfile,
    ) -> Result<ExactCoverage> {
        if !test.y.is_finite() {
            return Err(Error::DataFormat(format!(
                "coverage evaluation needs a known outcome, got {}",
                test.y
            )));
        }
        let nearest = grid.nearest_index(test.y);
        let covered_grid = profile.pi[nearest] > profile.alpha;
        let covered_exact = match self.pi_at(&test.x, test.group, test.y) {
            Ok((pi, _)) => pi > profile.alpha,
            Err(Error::DegenerateWeights { .. }) if self.policy == DegeneratePolicy::FloorRank => {
                1.0 / (self.members(test.group)?.len() + 1) as f64 > profile.alpha
            }
            Err(e) => return Err(e),
        };
        Ok(ExactCoverage { covered_grid, covered_exact, nearest_index: nearest })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// One-shot convenience: build the engine and compute a single conformal
/// set. Prefer constructing [`ConformalEngine`] once when evaluating many
/// test points.
pub fn conformal_set(
    model: &LikelihoodModel,
    draws: &PosteriorDraws,
    data: &Dataset,
    test_x: &[f64],
    grid: &ConformalGrid,
    alpha: f64,
) -> Result<(RankProfile, PredictionSet)> {
    let group = None;
    ConformalEngine::new(model, draws, data)?.conformal_set(test_x, group, grid, alpha)
}
