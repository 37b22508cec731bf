//! Posterior draws: external ingestion, the exchange CSV format, and an
//! exact conjugate sampler used as a ground-truth source for validating the
//! importance-sampling path.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{LikelihoodModel, ParamLayout};

/// Where a draw matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrawsSource {
    ExternalFile,
    Metropolis,
    ConjugateExact,
}

/// Chain diagnostics attached by the built-in sampler. The ESS here is the
/// autocorrelation-based MCMC effective sample size, per parameter — distinct
/// from the importance-sampling ESS reported by the conformal engine.
#[derive(Debug, Clone, PartialEq)]
pub struct McmcDiagnostics {
    pub acceptance_rate: f64,
    pub param_ess: Vec<f64>,
}

impl McmcDiagnostics {
    pub fn min_ess(&self) -> f64 {
        self.param_ess.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// A T × p matrix of posterior parameter draws with a named column layout.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    matrix: Array2<f64>,
    layout: ParamLayout,
    source: DrawsSource,
    diagnostics: Option<McmcDiagnostics>,
}

impl PosteriorDraws {
    /// Wrap a draw matrix, validating finiteness and positivity against the
    /// layout.
    pub fn new(matrix: Array2<f64>, layout: ParamLayout, source: DrawsSource) -> Result<Self> {
        if matrix.nrows() == 0 {
            return Err(Error::InvalidConfig("draw matrix must have T >= 1 rows".into()));
        }
        if matrix.ncols() != layout.len() {
            return Err(Error::LayoutMismatch { expected: layout.len(), got: matrix.ncols() });
        }
        for (r, row) in matrix.rows().into_iter().enumerate() {
            for (c, slot) in layout.slots().iter().enumerate() {
                let v = row[c];
                if !v.is_finite() {
                    return Err(Error::DrawsConstraint { row: r + 1, name: slot.name.clone(), value: v });
                }
                if slot.positive && v <= 0.0 {
                    return Err(Error::DrawsConstraint { row: r + 1, name: slot.name.clone(), value: v });
                }
            }
        }
        Ok(PosteriorDraws { matrix, layout, source, diagnostics: None })
    }

    pub(crate) fn with_diagnostics(mut self, diagnostics: McmcDiagnostics) -> Self {
        self.diagnostics = Some(diagnostics);
        self
    }

    pub fn t(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn source(&self) -> DrawsSource {
        self.source
    }

    pub fn diagnostics(&self) -> Option<&McmcDiagnostics> {
        self.diagnostics.as_ref()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.matrix.row(t).to_slice().expect("draw matrix is row-major")
    }

    /// Column indices of the group-j marginal (θⱼ, θ₀ⱼ, τ) for hierarchical
    /// layouts. A view, not a copy: callers index the shared matrix.
    pub fn group_marginal(&self, model: &LikelihoodModel, group: usize) -> Result<Vec<usize>> {
        model.group_marginal_columns(group)
    }

    /// Serialize as CSV with 17 significant digits so parsing recovers every
    /// f64 bit-exactly.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(self.layout.names())?;
        for row in self.matrix.rows() {
            let rec: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Parse externally produced draws, mapping columns to the model's parameter
/// slots by name. Missing or extra columns, non-finite entries, and
/// positivity violations are rejected with the offending row.
pub fn ingest_draws<R: Read>(reader: R, model: &LikelihoodModel) -> Result<PosteriorDraws> {
    ingest_draws_inner(reader, model, Path::new("<memory>"))
}

pub fn ingest_draws_path(path: &Path, model: &LikelihoodModel) -> Result<PosteriorDraws> {
    let file = std::fs::File::open(path).map_err(|e| Error::DrawsFormat {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    ingest_draws_inner(std::io::BufReader::new(file), model, path)
}

fn ingest_draws_inner<R: Read>(reader: R, model: &LikelihoodModel, path: &Path) -> Result<PosteriorDraws> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let layout = model.layout();
    let fmt_err = |msg: String| Error::DrawsFormat { path: path.to_path_buf(), msg };

    // map layout slot -> csv column
    let mut col_of = Vec::with_capacity(layout.len());
    for slot in layout.slots() {
        match headers.iter().position(|h| h.trim() == slot.name) {
            Some(c) => col_of.push(c),
            None => return Err(fmt_err(format!("missing column `{}`", slot.name))),
        }
    }
    if headers.len() != layout.len() {
        let extra: Vec<&str> = headers
            .iter()
            .map(str::trim)
            .filter(|h| layout.index_of(h).is_none())
            .collect();
        return Err(fmt_err(format!("extra columns {extra:?} do not match any parameter slot")));
    }

    let mut values: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        for (slot, &c) in layout.slots().iter().zip(&col_of) {
            let raw = record.get(c).unwrap_or("").trim();
            let v: f64 = raw
                .parse()
                .map_err(|_| fmt_err(format!("row {}: cannot parse `{raw}` in `{}`", i + 1, slot.name)))?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(fmt_err("no draws".into()));
    }
    let matrix = Array2::from_shape_vec((rows, layout.len()), values).expect("shape agrees");
    PosteriorDraws::new(matrix, layout.clone(), DrawsSource::ExternalFile)
}

/// Exact i.i.d. sampler for the conjugate Gaussian linear model with known
/// noise sd: posterior N(μₙ, Σₙ) with Σₙ = (Σ₀⁻¹ + XᵀX/σ²)⁻¹ and
/// μₙ = Σₙ(Σ₀⁻¹μ₀ + Xᵀy/σ²).
///
/// The prior covers either the slopes alone (`prior_mean.len() == d`, the
/// intercept is fixed at 0) or slopes plus intercept
/// (`prior_mean.len() == d + 1`, intercept last). The emitted layout matches
/// a `GaussianLinear` model with a Normal coefficient prior: columns
/// `theta.1..theta.d, theta0, tau`, with `tau` pinned at `noise_sd` so that
/// downstream consumers see the known noise scale.
pub fn sample_conjugate_oracle(
    prior_mean: &[f64],
    prior_cov: &[Vec<f64>],
    noise_sd: f64,
    data: &Dataset,
    t: usize,
    seed: u64,
) -> Result<PosteriorDraws> {
    let p = prior_mean.len();
    if noise_sd <= 0.0 {
        return Err(Error::NonPositiveScale { name: "noise_sd".into(), value: noise_sd });
    }
    if t == 0 {
        return Err(Error::InvalidConfig("need T >= 1 draws".into()));
    }
    if prior_cov.len() != p || prior_cov.iter().any(|r| r.len() != p) {
        return Err(Error::InvalidConfig("prior covariance must be p x p".into()));
    }
    let d = data.dim();
    let with_intercept = if data.is_empty() {
        // no data to pin d; treat the final coordinate as intercept only when
        // the caller says so via p == d + 1 (d = 0 for an empty dataset)
        p == 1 && d == 0
    } else if p == d {
        false
    } else if p == d + 1 {
        true
    } else {
        return Err(Error::DimensionMismatch { expected: d, got: p });
    };

    let (mu_n, sigma_n) = conjugate_posterior(prior_mean, prior_cov, noise_sd, data, with_intercept)?;
    let chol = Cholesky::new(sigma_n.clone()).ok_or(Error::SingularPriorCovariance)?;
    let l = chol.l();

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let ncols = d + 2; // theta.1..d, theta0, tau
    let mut matrix = Array2::zeros((t, ncols));
    let mut z = DVector::zeros(p);
    for r in 0..t {
        for i in 0..p {
            z[i] = StandardNormal.sample(&mut rng);
        }
        let beta = &mu_n + &l * &z;
        for k in 0..d {
            matrix[(r, k)] = beta[k];
        }
        matrix[(r, d)] = if with_intercept { beta[p - 1] } else { 0.0 };
        matrix[(r, d + 1)] = noise_sd;
    }
    let layout = LikelihoodModel::gaussian_linear(d, crate::model::CoefPrior::Normal { sd: 1.0 }, 1.0)
        .layout()
        .clone();
    PosteriorDraws::new(matrix, layout, DrawsSource::ConjugateExact)
}

/// Closed-form posterior moments of the conjugate model above.
pub fn conjugate_posterior(
    prior_mean: &[f64],
    prior_cov: &[Vec<f64>],
    noise_sd: f64,
    data: &Dataset,
    with_intercept: bool,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = prior_mean.len();
    let sigma0 = DMatrix::from_fn(p, p, |i, j| prior_cov[i][j]);
    let chol0 = Cholesky::new(sigma0).ok_or(Error::SingularPriorCovariance)?;
    let prec0 = chol0.inverse();
    let mu0 = DVector::from_column_slice(prior_mean);

    let n = data.len();
    let design_row = |i: usize| -> DVector<f64> {
        let datum = data.get(i);
        let mut v = DVector::zeros(p);
        for k in 0..datum.x.len() {
            v[k] = datum.x[k];
        }
        if with_intercept {
            v[p - 1] = 1.0;
        }
        v
    };
    let inv_var = 1.0 / (noise_sd * noise_sd);
    let mut a = prec0.clone();
    let mut rhs = &prec0 * &mu0;
    for i in 0..n {
        let xi = design_row(i);
        a += &xi * xi.transpose() * inv_var;
        rhs += &xi * (data.get(i).y * inv_var);
    }
    let chol_a = Cholesky::new(a).ok_or(Error::SingularPriorCovariance)?;
    let sigma_n = chol_a.inverse();
    let mu_n = &sigma_n * rhs;
    Ok((mu_n, sigma_n))
}
