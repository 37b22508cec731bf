//! Likelihood families, their priors, and parameter layouts.
//!
//! Three families are supported:
//!
//! * Gaussian linear regression `y ~ N(θᵀx + θ₀, τ²)` with either a
//!   Laplace(0, b) coefficient prior (flat θ₀, Gamma(1,1) hyperprior on b)
//!   or a Normal(0, sd) prior on coefficients and intercept; half-normal
//!   scale prior on τ in both cases.
//! * Logistic regression `P(y=1|x) = σ(θᵀx + θ₀)` with the same coefficient
//!   priors (no τ).
//! * Hierarchical Gaussian with per-group slopes and intercepts,
//!   `y ~ N(θⱼᵀx + θ₀ⱼ, τ²)`, partial pooling `θⱼₖ ~ N(φₖ, s²)`,
//!   `θ₀ⱼ ~ N(φ₀, s₀²)`, N(0,1) hyperpriors on the locations and Exp(1) on
//!   the scales s, s₀, τ.
//!
//! Every downstream computation consumes only the pointwise `log_likelihood`
//! / `log_prior` interface. Positivity constraints are expressed in the
//! layout; the sampler handles them by log-transform, so priors stay in the
//! natural parameterization and simply return −∞ outside the support.

use crate::data::Datum;
use crate::error::{Error, Result};
use crate::math::{half_normal_logpdf, log_sigmoid, normal_cdf, normal_logpdf};

/// Prior on regression coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoefPrior {
    /// Laplace(0, b) with b ~ Gamma(1,1) and a flat intercept prior.
    Laplace,
    /// Normal(0, sd²) on every coefficient including the intercept.
    Normal { sd: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelFamily {
    GaussianLinear { coef_prior: CoefPrior, tau_scale: f64 },
    Logistic { coef_prior: CoefPrior },
    HierarchicalGaussian { groups: usize },
}

/// One named parameter slot; `positive` marks scale parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub positive: bool,
}

/// Ordered parameter layout binding draw-matrix columns to model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    slots: Vec<ParamSlot>,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn names(&self) -> Vec<&str> {
        self.slots.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.name == name)
    }
}

/// A model family bound to a covariate dimension, with its parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodModel {
    family: ModelFamily,
    dim: usize,
    layout: ParamLayout,
}

fn slot(name: String, positive: bool) -> ParamSlot {
    ParamSlot { name, positive }
}

/// Column name for the k-th slope of group j; `theta.j` when d = 1,
/// `theta.k.j` otherwise. Hyperparameter locations follow the same rule
/// (`phi` vs `phi.k`).
fn hier_theta_name(d: usize, k: usize, j: usize) -> String {
    if d == 1 {
        format!("theta.{j}")
    } else {
        format!("theta.{k}.{j}")
    }
}

impl LikelihoodModel {
    pub fn gaussian_linear(dim: usize, coef_prior: CoefPrior, tau_scale: f64) -> Self {
        let mut slots: Vec<ParamSlot> = (1..=dim).map(|k| slot(format!("theta.{k}"), false)).collect();
        slots.push(slot("theta0".into(), false));
        slots.push(slot("tau".into(), true));
        if coef_prior == CoefPrior::Laplace {
            slots.push(slot("b".into(), true));
        }
        LikelihoodModel {
            family: ModelFamily::GaussianLinear { coef_prior, tau_scale },
            dim,
            layout: ParamLayout { slots },
        }
    }

    pub fn logistic(dim: usize, coef_prior: CoefPrior) -> Self {
        let mut slots: Vec<ParamSlot> = (1..=dim).map(|k| slot(format!("theta.{k}"), false)).collect();
        slots.push(slot("theta0".into(), false));
        if coef_prior == CoefPrior::Laplace {
            slots.push(slot("b".into(), true));
        }
        LikelihoodModel {
            family: ModelFamily::Logistic { coef_prior },
            dim,
            layout: ParamLayout { slots },
        }
    }

    pub fn hierarchical_gaussian(dim: usize, groups: usize) -> Self {
        assert!(groups >= 1, "hierarchical family needs at least one group");
        let mut slots = Vec::with_capacity(groups * (dim + 1) + dim + 4);
        for j in 1..=groups {
            for k in 1..=dim {
                slots.push(slot(hier_theta_name(dim, k, j), false));
            }
        }
        for j in 1..=groups {
            slots.push(slot(format!("theta0.{j}"), false));
        }
        for k in 1..=dim {
            let name = if dim == 1 { "phi".to_string() } else { format!("phi.{k}") };
            slots.push(slot(name, false));
        }
        slots.push(slot("phi0".into(), false));
        slots.push(slot("s".into(), true));
        slots.push(slot("s0".into(), true));
        slots.push(slot("tau".into(), true));
        LikelihoodModel {
            family: ModelFamily::HierarchicalGaussian { groups },
            dim,
            layout: ParamLayout { slots },
        }
    }

    pub fn family(&self) -> &ModelFamily {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn groups(&self) -> Option<usize> {
        match self.family {
            ModelFamily::HierarchicalGaussian { groups } => Some(groups),
            _ => None,
        }
    }

    pub fn is_regression(&self) -> bool {
        !matches!(self.family, ModelFamily::Logistic { .. })
    }

    // Column offsets into the layout. Kept as small helpers instead of a
    // cached index struct; the arithmetic is trivial.

    fn tau_index(&self) -> Option<usize> {
        match self.family {
            ModelFamily::GaussianLinear { .. } => Some(self.dim + 1),
            ModelFamily::Logistic { .. } => None,
            ModelFamily::HierarchicalGaussian { groups } => {
                Some(groups * (self.dim + 1) + self.dim + 3)
            }
        }
    }

    /// Columns holding the group-j marginal (θⱼ slopes, θ₀ⱼ, τ) of the
    /// hierarchical layout, in that order. This is the view the AOI weights
    /// need: per Appendix-style marginalization the importance weight depends
    /// only on (θⱼ, τ).
    pub fn group_marginal_columns(&self, group: usize) -> Result<Vec<usize>> {
        let groups = match self.family {
            ModelFamily::HierarchicalGaussian { groups } => groups,
            _ => return Err(Error::MissingGroup),
        };
        if group < 1 || group > groups {
            return Err(Error::UnknownGroup { group, groups });
        }
        let mut cols: Vec<usize> = ((group - 1) * self.dim..group * self.dim).collect();
        cols.push(groups * self.dim + (group - 1)); // theta0.j
        cols.push(self.tau_index().unwrap());
        Ok(cols)
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.layout.len() {
            return Err(Error::LayoutMismatch { expected: self.layout.len(), got: params.len() });
        }
        Ok(())
    }

    fn check_datum(&self, datum: &Datum) -> Result<()> {
        if datum.x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: datum.x.len() });
        }
        if matches!(self.family, ModelFamily::HierarchicalGaussian { .. }) && datum.group.is_none() {
            return Err(Error::MissingGroup);
        }
        if let (Some(groups), Some(g)) = (self.groups(), datum.group) {
            if g < 1 || g > groups {
                return Err(Error::UnknownGroup { group: g, groups });
            }
        }
        Ok(())
    }

    /// Linear predictor θᵀx + θ₀, using group-j coefficients for the
    /// hierarchical family.
    fn linear_predictor(&self, params: &[f64], x: &[f64], group: Option<usize>) -> f64 {
        match self.family {
            ModelFamily::GaussianLinear { .. } | ModelFamily::Logistic { .. } => {
                let mut s = 0.0;
                for k in 0..self.dim {
                    s += params[k] * x[k];
                }
                s + params[self.dim]
            }
            ModelFamily::HierarchicalGaussian { groups } => {
                let j = group.expect("hierarchical predictor needs a group") - 1;
                let base = j * self.dim;
                let mut s = 0.0;
                for k in 0..self.dim {
                    s += params[base + k] * x[k];
                }
                s + params[groups * self.dim + j]
            }
        }
    }

    /// log f_θ(y | x): Gaussian log density for the regression families, a
    /// numerically stable Bernoulli log mass for the logistic family.
    pub fn log_likelihood(&self, params: &[f64], datum: &Datum) -> Result<f64> {
        self.check_params(params)?;
        self.check_datum(datum)?;
        match self.family {
            ModelFamily::GaussianLinear { .. } | ModelFamily::HierarchicalGaussian { .. } => {
                let tau = params[self.tau_index().unwrap()];
                if tau <= 0.0 {
                    return Err(Error::NonPositiveScale { name: "tau".into(), value: tau });
                }
                let mu = self.linear_predictor(params, &datum.x, datum.group);
                Ok(normal_logpdf(datum.y, mu, tau))
            }
            ModelFamily::Logistic { .. } => {
                let z = self.linear_predictor(params, &datum.x, None);
                Ok(if datum.y > 0.5 { log_sigmoid(z) } else { log_sigmoid(-z) })
            }
        }
    }

    /// Same as [`log_likelihood`] without per-call validation; used by the
    /// engine's inner loops after a one-time layout/dimension check.
    ///
    /// [`log_likelihood`]: LikelihoodModel::log_likelihood
    pub(crate) fn loglik_unchecked(&self, params: &[f64], x: &[f64], y: f64, group: Option<usize>) -> f64 {
        debug_assert_eq!(params.len(), self.layout.len());
        debug_assert_eq!(x.len(), self.dim);
        match self.family {
            ModelFamily::GaussianLinear { .. } | ModelFamily::HierarchicalGaussian { .. } => {
                let tau = params[self.tau_index().unwrap()];
                let mu = self.linear_predictor(params, x, group);
                normal_logpdf(y, mu, tau)
            }
            ModelFamily::Logistic { .. } => {
                let z = self.linear_predictor(params, x, None);
                if y > 0.5 {
                    log_sigmoid(z)
                } else {
                    log_sigmoid(-z)
                }
            }
        }
    }

    /// Sum of all log prior densities. Flat priors contribute 0; any
    /// positivity-constrained parameter at or below 0 yields −∞.
    pub fn log_prior(&self, params: &[f64]) -> Result<f64> {
        self.check_params(params)?;
        let d = self.dim;
        Ok(match self.family {
            ModelFamily::GaussianLinear { coef_prior, tau_scale } => {
                let tau = params[d + 1];
                if tau <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                let mut lp = half_normal_logpdf(tau, tau_scale);
                lp += self.coef_log_prior(&coef_prior, params)?;
                if !lp.is_finite() {
                    return Ok(f64::NEG_INFINITY);
                }
                lp
            }
            ModelFamily::Logistic { coef_prior } => {
                let lp = self.coef_log_prior(&coef_prior, params)?;
                if !lp.is_finite() {
                    return Ok(f64::NEG_INFINITY);
                }
                lp
            }
            ModelFamily::HierarchicalGaussian { groups } => {
                let s = params[groups * (d + 1) + d + 1];
                let s0 = params[groups * (d + 1) + d + 2];
                let tau = params[groups * (d + 1) + d + 3];
                if s <= 0.0 || s0 <= 0.0 || tau <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                let phi = &params[groups * (d + 1)..groups * (d + 1) + d];
                let phi0 = params[groups * (d + 1) + d];
                let mut lp = 0.0;
                for j in 0..groups {
                    for k in 0..d {
                        lp += normal_logpdf(params[j * d + k], phi[k], s);
                    }
                    lp += normal_logpdf(params[groups * d + j], phi0, s0);
                }
                for &p in phi {
                    lp += normal_logpdf(p, 0.0, 1.0);
                }
                lp += normal_logpdf(phi0, 0.0, 1.0);
                // Exp(1) on each scale
                lp - s - s0 - tau
            }
        })
    }

    fn coef_log_prior(&self, prior: &CoefPrior, params: &[f64]) -> Result<f64> {
        let d = self.dim;
        Ok(match prior {
            CoefPrior::Laplace => {
                let b = params[self.layout.len() - 1];
                if b <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                let mut lp = -b; // Gamma(1,1) hyperprior on the scale
                for &theta in &params[..d] {
                    lp += -(2.0 * b).ln() - theta.abs() / b;
                }
                // flat prior on theta0 contributes 0
                lp
            }
            CoefPrior::Normal { sd } => {
                let mut lp = 0.0;
                for &theta in &params[..=d] {
                    lp += normal_logpdf(theta, 0.0, *sd);
                }
                lp
            }
        })
    }

    /// Conditional outcome CDF F_θ(y | x) for the regression families; the
    /// Monte Carlo average of these over draws is the Bayes predictive CDF.
    pub fn predictive_cdf(&self, params: &[f64], x: &[f64], group: Option<usize>, y: f64) -> Result<f64> {
        self.check_params(params)?;
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        match self.family {
            ModelFamily::Logistic { .. } => Err(Error::RegressionRequired),
            ModelFamily::GaussianLinear { .. } | ModelFamily::HierarchicalGaussian { .. } => {
                if matches!(self.family, ModelFamily::HierarchicalGaussian { .. }) && group.is_none() {
                    return Err(Error::MissingGroup);
                }
                let tau = params[self.tau_index().unwrap()];
                if tau <= 0.0 {
                    return Err(Error::NonPositiveScale { name: "tau".into(), value: tau });
                }
                let mu = self.linear_predictor(params, x, group);
                Ok(normal_cdf((y - mu) / tau))
            }
        }
    }
}
