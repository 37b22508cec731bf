//! Reference interval constructions: Bayes central credible intervals, Bayes
//! classification sets with the uninformative-set decomposition, and split
//! conformal prediction.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::conformal::RankProfile;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::model::{LikelihoodModel, ModelFamily};
use crate::posterior::PosteriorDraws;

/// Central (1−α) credible interval read off the Monte Carlo predictive CDF
/// on a grid.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CredibleInterval {
    pub lo: f64,
    pub hi: f64,
    pub alpha: f64,
    /// A quantile fell outside the grid range and was clamped to its edge.
    pub clamped: bool,
}

impl CredibleInterval {
    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }
}

/// Bayes central credible interval from the predictive CDF
/// F(y) = (1/T) Σ_t F_{θ_t}(y | x), evaluated on the grid via each draw's
/// exact Gaussian conditional CDF. Returns the tightest grid values
/// bracketing the α/2 and 1−α/2 quantiles.
pub fn bayes_interval(
    model: &LikelihoodModel,
    draws: &PosteriorDraws,
    test_x: &[f64],
    group: Option<usize>,
    grid: &crate::conformal::ConformalGrid,
    alpha: f64,
) -> Result<CredibleInterval> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if !model.is_regression() {
        return Err(Error::RegressionRequired);
    }
    let t = draws.t();
    let inv_t = 1.0 / t as f64;
    let points = grid.points();
    // validate once through the checked path
    model.predictive_cdf(draws.row(0), test_x, group, points[0])?;
    let cdf: Vec<f64> = points
        .iter()
        .map(|&y| {
            let mut f = 0.0;
            for ti in 0..t {
                f += model
                    .predictive_cdf(draws.row(ti), test_x, group, y)
                    .expect("validated above");
            }
            f * inv_t
        })
        .collect();

    let lo_q = alpha / 2.0;
    let hi_q = 1.0 - alpha / 2.0;
    // largest grid value with F ≤ α/2; smallest with F ≥ 1−α/2
    let mut clamped = false;
    let lo_idx = match cdf.iter().rposition(|&f| f <= lo_q) {
        Some(i) => i,
        None => {
            clamped = true;
            0
        }
    };
    let hi_idx = match cdf.iter().position(|&f| f >= hi_q) {
        Some(i) => i,
        None => {
            clamped = true;
            points.len() - 1
        }
    };
    Ok(CredibleInterval { lo: points[lo_idx], hi: points[hi_idx], alpha, clamped })
}

/// A subset of the binary label space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LabelSet {
    pub zero: bool,
    pub one: bool,
}

impl LabelSet {
    pub fn size(&self) -> usize {
        usize::from(self.zero) + usize::from(self.one)
    }

    pub fn is_empty(&self) -> bool {
        !self.zero && !self.one
    }

    pub fn contains(&self, y: f64) -> bool {
        if y >= 0.5 {
            self.one
        } else {
            self.zero
        }
    }

    pub fn labels(&self) -> Vec<u8> {
        let mut v = Vec::new();
        if self.zero {
            v.push(0);
        }
        if self.one {
            v.push(1);
        }
        v
    }
}

/// A classification prediction set with its diagnostics: `confidence` is the
/// greatest 1−α at which the set is a singleton, `credibility` (conformal
/// only) the boundary α at which the set empties — the p-value of the best
/// label.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ClassPredictionReport {
    pub set: LabelSet,
    /// Posterior predictive mass of label 1.
    pub p1: f64,
    pub confidence: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub credibility: Option<f64>,
}

/// Bayes classification set: the smallest of {0}, {1}, {0,1} holding at
/// least 1−α of the posterior predictive mass, with
/// p = (1/T) Σ_t σ(θ_tᵀx + θ₀_t). Never empty.
pub fn bayes_class_set(
    model: &LikelihoodModel,
    draws: &PosteriorDraws,
    test_x: &[f64],
    alpha: f64,
) -> Result<ClassPredictionReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if !matches!(model.family(), ModelFamily::Logistic { .. }) {
        return Err(Error::LogisticRequired);
    }
    if test_x.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: test_x.len() });
    }
    let d = model.dim();
    let t = draws.t();
    let mut p1 = 0.0;
    for ti in 0..t {
        let row = draws.row(ti);
        let mut z = row[d];
        for k in 0..d {
            z += row[k] * test_x[k];
        }
        p1 += sigmoid(z);
    }
    p1 /= t as f64;
    let p0 = 1.0 - p1;
    let level = 1.0 - alpha;
    // {0} if (1−p) ≥ (1−α); {1} if p ≥ (1−α); {0,1} if max ≤ (1−α);
    // when both singletons qualify (only possible at α ≥ 1/2) take the one
    // with the larger mass
    let set = if p1 >= level && p1 >= p0 {
        LabelSet { zero: false, one: true }
    } else if p0 >= level {
        LabelSet { zero: true, one: false }
    } else if p1 >= level {
        LabelSet { zero: false, one: true }
    } else {
        LabelSet { zero: true, one: true }
    };
    Ok(ClassPredictionReport { set, p1, confidence: p1.max(p0), credibility: None })
}

/// Conformal classification report from a two-point rank profile.
pub fn conformal_class_report(profile: &RankProfile, p1: f64) -> ClassPredictionReport {
    let (pi0, pi1) = (profile.pi[0], profile.pi[1]);
    ClassPredictionReport {
        set: LabelSet { zero: pi0 > profile.alpha, one: pi1 > profile.alpha },
        p1,
        confidence: 1.0 - pi0.min(pi1),
        credibility: Some(pi0.max(pi1)),
    }
}

/// Decomposition of classification sets into informative and uninformative
/// predictions for one method.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MethodDecomposition {
    /// Error rate among singleton predictions; absent when there are none.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub misclassification: Option<f64>,
    /// Rate of {0,1} sets.
    pub both_rate: f64,
    /// Rate of empty sets.
    pub empty_rate: f64,
    pub singleton_rate: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct UninformativeSummary {
    pub bayes: MethodDecomposition,
    pub conformal: MethodDecomposition,
}

fn decompose(sets: &[LabelSet], truths: &[f64]) -> MethodDecomposition {
    let n = sets.len() as f64;
    let mut both = 0usize;
    let mut empty = 0usize;
    let mut singles = 0usize;
    let mut wrong = 0usize;
    for (set, &y) in sets.iter().zip(truths) {
        match set.size() {
            2 => both += 1,
            0 => empty += 1,
            _ => {
                singles += 1;
                if !set.contains(y) {
                    wrong += 1;
                }
            }
        }
    }
    MethodDecomposition {
        misclassification: (singles > 0).then(|| wrong as f64 / singles as f64),
        both_rate: both as f64 / n,
        empty_rate: empty as f64 / n,
        singleton_rate: singles as f64 / n,
    }
}

/// Tabulate misclassification and uninformative-set rates for Bayes and
/// conformal classification predictions against known labels.
pub fn uninformative_decomposition(
    bayes: &[ClassPredictionReport],
    conformal: &[ClassPredictionReport],
    truths: &[f64],
) -> Result<UninformativeSummary> {
    if bayes.len() != truths.len() || conformal.len() != truths.len() {
        return Err(Error::InvalidConfig(
            "decomposition needs one truth per prediction report".into(),
        ));
    }
    if truths.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let bayes_sets: Vec<LabelSet> = bayes.iter().map(|r| r.set).collect();
    let cb_sets: Vec<LabelSet> = conformal.iter().map(|r| r.set).collect();
    Ok(UninformativeSummary {
        bayes: decompose(&bayes_sets, truths),
        conformal: decompose(&cb_sets, truths),
    })
}

/// Split-conformal fit: ridge point predictor on one random half, calibrated
/// residual quantile from the other.
#[derive(Debug, Clone)]
pub struct SplitFit {
    /// Ridge coefficients, intercept last.
    pub coef: Vec<f64>,
    /// Calibrated radius; `None` when ⌈(n₂+1)(1−α)⌉ > n₂ (the interval is
    /// unbounded and reported as such).
    pub radius: Option<f64>,
    pub alpha: f64,
}

/// Prediction interval μ̂(x) ± q from a split-conformal fit.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SplitInterval {
    pub center: f64,
    pub lo: f64,
    pub hi: f64,
    pub unbounded: bool,
    pub alpha: f64,
}

impl SplitInterval {
    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }
}

/// The ⌈(n₂+1)(1−α)⌉-th smallest calibration residual, or `None` when the
/// index overflows the calibration half.
pub fn split_quantile(residuals: &mut [f64], alpha: f64) -> Option<f64> {
    let n2 = residuals.len();
    let k = ((n2 + 1) as f64 * (1.0 - alpha)).ceil() as usize;
    if k > n2 {
        return None;
    }
    residuals.sort_by(|a, b| a.partial_cmp(b).expect("residuals are finite"));
    Some(residuals[k - 1])
}

/// Fit the split-conformal baseline once; reuse across test points. The data
/// is split at random (seeded) into a fitting half and a calibration half;
/// the point predictor is closed-form ridge with a vanishing penalty
/// 1e-6·n₂, i.e. essentially least squares on standardized data.
pub fn split_conformal_fit(data: &Dataset, alpha: f64, seed: u64) -> Result<SplitFit> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let n = data.len();
    if n < 4 {
        return Err(Error::InvalidConfig(format!("split conformal needs n >= 4, got {n}")));
    }
    let d = data.dim();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let n1 = n / 2;
    let (fit_idx, cal_idx) = idx.split_at(n1);
    let n2 = cal_idx.len();

    // ridge over [x, 1] with penalty λ = 1e-6·n₂
    let p = d + 1;
    let lambda = 1e-6 * n2 as f64;
    let mut xtx = DMatrix::<f64>::identity(p, p) * lambda;
    let mut xty = DVector::<f64>::zeros(p);
    for &i in fit_idx {
        let datum = data.get(i);
        let mut row = DVector::<f64>::zeros(p);
        for k in 0..d {
            row[k] = datum.x[k];
        }
        row[d] = 1.0;
        xtx += &row * row.transpose();
        xty += &row * datum.y;
    }
    let chol = Cholesky::new(xtx).ok_or(Error::SingularPriorCovariance)?;
    let coef_v = chol.solve(&xty);
    let coef: Vec<f64> = coef_v.iter().cloned().collect();

    let predict = |x: &[f64]| -> f64 {
        let mut mu = coef[d];
        for k in 0..d {
            mu += coef[k] * x[k];
        }
        mu
    };
    let mut residuals: Vec<f64> = cal_idx
        .iter()
        .map(|&i| {
            let datum = data.get(i);
            (datum.y - predict(&datum.x)).abs()
        })
        .collect();
    let radius = split_quantile(&mut residuals, alpha);
    Ok(SplitFit { coef, radius, alpha })
}

impl SplitFit {
    pub fn predict(&self, test_x: &[f64]) -> SplitInterval {
        let d = self.coef.len() - 1;
        let mut mu = self.coef[d];
        for (coef, x) in self.coef[..d].iter().zip(test_x) {
            mu += coef * x;
        }
        match self.radius {
            Some(q) => SplitInterval { center: mu, lo: mu - q, hi: mu + q, unbounded: false, alpha: self.alpha },
            None => SplitInterval {
                center: mu,
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
                unbounded: true,
                alpha: self.alpha,
            },
        }
    }
}

/// One-shot split conformal interval for a single test covariate.
pub fn split_conformal(data: &Dataset, test_x: &[f64], alpha: f64, seed: u64) -> Result<SplitInterval> {
    Ok(split_conformal_fit(data, alpha, seed)?.predict(test_x))
}
