//! Within-group (Mondrian) conformal prediction for grouped data.
//!
//! Under partial exchangeability — the joint law is invariant to
//! permutations within each group — conformity scores ranked within group j
//! give per-group validity: P(Y ∈ C_{α_j}) ≥ 1 − α_j. The scores come from
//! the hierarchical model's posterior predictive, estimated with the same
//! AOI machinery as the exchangeable case; the importance weight for a
//! group-j query depends only on the group's marginal draws (θⱼ, τ), so no
//! extra sampling is needed.
//!
//! Because π_j takes values on the grid {1/(n_j+1), …, 1}, a level
//! α_j < 1/(n_j+1) cannot exclude anything: the set is the whole grid. The
//! engine emits that uninformative set with a feasibility flag rather than
//! erroring.

use serde::Serialize;

use crate::conformal::{ConformalEngine, ConformalGrid, PredictionSet, RankProfile};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelFamily;

/// A grouped dataset with per-group sizes; every group index 1..=J occurs.
#[derive(Debug, Clone)]
pub struct GroupedView<'a> {
    data: &'a Dataset,
    group_sizes: Vec<usize>,
}

impl<'a> GroupedView<'a> {
    pub fn new(data: &'a Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if !data.has_groups() {
            return Err(Error::MissingGroup);
        }
        let j_max = data.data().iter().filter_map(|d| d.group).max().unwrap();
        let mut group_sizes = vec![0usize; j_max];
        for datum in data.data() {
            group_sizes[datum.group.unwrap() - 1] += 1;
        }
        if let Some(j) = group_sizes.iter().position(|&n| n == 0) {
            return Err(Error::DataFormat(format!(
                "group {} has no training data (groups must cover 1..={})",
                j + 1,
                j_max
            )));
        }
        Ok(GroupedView { data, group_sizes })
    }

    pub fn dataset(&self) -> &Dataset {
        self.data
    }

    pub fn groups(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    pub fn size_of(&self, group: usize) -> Result<usize> {
        self.group_sizes
            .get(group.wrapping_sub(1))
            .copied()
            .ok_or(Error::UnknownGroup { group, groups: self.groups() })
    }
}

/// Per-group miscoverage levels with feasibility flags
/// (α_j ≥ 1/(n_j+1) is needed for the set to be anything but the whole grid).
#[derive(Debug, Clone, Serialize)]
pub struct GroupAlphaPolicy {
    pub alphas: Vec<f64>,
    pub feasible: Vec<bool>,
}

impl GroupAlphaPolicy {
    pub fn alpha_for(&self, group: usize) -> Result<f64> {
        self.alphas
            .get(group.wrapping_sub(1))
            .copied()
            .ok_or(Error::UnknownGroup { group, groups: self.alphas.len() })
    }

    pub fn feasible_for(&self, group: usize) -> Result<bool> {
        self.feasible
            .get(group.wrapping_sub(1))
            .copied()
            .ok_or(Error::UnknownGroup { group, groups: self.feasible.len() })
    }
}

pub fn alpha_is_feasible(alpha: f64, group_size: usize) -> bool {
    alpha >= 1.0 / (group_size + 1) as f64
}

/// One shared α for every group, with feasibility checked per group size.
pub fn uniform_alphas(grouped: &GroupedView, alpha: f64) -> Result<GroupAlphaPolicy> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let alphas = vec![alpha; grouped.groups()];
    let feasible = grouped.group_sizes().iter().map(|&n| alpha_is_feasible(alpha, n)).collect();
    Ok(GroupAlphaPolicy { alphas, feasible })
}

/// The smallest workable per-group levels: α_j = multiplier/(n_j+1), capped
/// just below 1. A multiplier slightly above 1 keeps the level clear of the
/// rank granularity boundary.
pub fn feasible_alphas(grouped: &GroupedView, multiplier: f64) -> Result<GroupAlphaPolicy> {
    if multiplier <= 1.0 {
        return Err(Error::InvalidConfig(format!(
            "feasible-alpha multiplier must exceed 1, got {multiplier}"
        )));
    }
    let alphas: Vec<f64> = grouped
        .group_sizes()
        .iter()
        .map(|&n| (multiplier / (n + 1) as f64).min(1.0 - 1e-9))
        .collect();
    let feasible = alphas
        .iter()
        .zip(grouped.group_sizes())
        .map(|(&a, &n)| alpha_is_feasible(a, n))
        .collect();
    Ok(GroupAlphaPolicy { alphas, feasible })
}

/// Within-group conformal set for a test covariate in group j: conformity
/// scores over the group's members plus the plug-in point, ranked within the
/// group, thresholded at α_j. The engine must be built from a hierarchical
/// model over the full grouped dataset.
pub fn group_conformal_set(
    engine: &ConformalEngine<'_>,
    grouped: &GroupedView<'_>,
    test_x: &[f64],
    group: usize,
    grid: &ConformalGrid,
    alpha_j: f64,
) -> Result<(RankProfile, PredictionSet)> {
    grouped.size_of(group)?;
    engine.conformal_set(test_x, Some(group), grid, alpha_j)
}

/// Convenience check that a model is the hierarchical family.
pub fn require_hierarchical(family: &ModelFamily) -> Result<usize> {
    match family {
        ModelFamily::HierarchicalGaussian { groups } => Ok(*groups),
        _ => Err(Error::MissingGroup),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::SetBody;
    use crate::data::Datum;
    use crate::model::{CoefPrior, LikelihoodModel};
    use crate::posterior::{DrawsSource, PosteriorDraws};
    use approx::assert_relative_eq;
    use ndarray::Array2;

    fn grouped_data(sizes: &[usize]) -> Dataset {
        let mut rows = Vec::new();
        let mut v = 0.0_f64;
        for (j, &n) in sizes.iter().enumerate() {
            for _ in 0..n {
                v += 0.37;
                rows.push(Datum::grouped(vec![v.sin()], v.cos() * 0.5, j + 1));
            }
        }
        Dataset::new(rows).unwrap()
    }

    fn hier_draws(model: &LikelihoodModel, rows: Vec<Vec<f64>>) -> PosteriorDraws {
        let t = rows.len();
        let p = rows[0].len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        PosteriorDraws::new(
            Array2::from_shape_vec((t, p), flat).unwrap(),
            model.layout().clone(),
            DrawsSource::ExternalFile,
        )
        .unwrap()
    }

    #[test]
    fn grouped_view_counts_and_validates() {
        let data = grouped_data(&[3, 2, 4]);
        let view = GroupedView::new(&data).unwrap();
        assert_eq!(view.groups(), 3);
        assert_eq!(view.group_sizes(), &[3, 2, 4]);
        assert_eq!(view.group_sizes().iter().sum::<usize>(), data.len());
        assert!(view.size_of(4).is_err());
    }

    #[test]
    fn grouped_view_rejects_gaps() {
        let data = Dataset::new(vec![
            Datum::grouped(vec![0.0], 0.0, 1),
            Datum::grouped(vec![0.1], 0.2, 3),
        ])
        .unwrap();
        assert!(GroupedView::new(&data).is_err());
    }

    #[test]
    fn feasible_alpha_formula() {
        let data = grouped_data(&[4, 52, 10]);
        let view = GroupedView::new(&data).unwrap();
        let policy = feasible_alphas(&view, 1.1).unwrap();
        assert_relative_eq!(policy.alphas[0], 0.22, max_relative = 1e-12);
        assert_relative_eq!(policy.alphas[1], 1.1 / 53.0, max_relative = 1e-12);
        assert!(policy.alphas[2] <= 0.1 + 1e-12);
        assert!(policy.feasible.iter().all(|&f| f));
        assert!(feasible_alphas(&view, 1.0).is_err());
    }

    #[test]
    fn uniform_alpha_flags_infeasible_small_groups() {
        let data = grouped_data(&[1, 30]);
        let view = GroupedView::new(&data).unwrap();
        let policy = uniform_alphas(&view, 0.2).unwrap();
        // n_1 = 1: needs α ≥ 0.5
        assert!(!policy.feasible[0]);
        assert!(policy.feasible[1]);
    }

    #[test]
    fn single_group_matches_flat_conformal_bitwise() {
        // J=1 hierarchical vs GaussianLinear on the same numbers
        let flat_model = LikelihoodModel::gaussian_linear(1, CoefPrior::Normal { sd: 1.0 }, 1.0);
        let hier_model = LikelihoodModel::hierarchical_gaussian(1, 1);
        let flat_data = Dataset::new(vec![
            Datum::new(vec![0.4], 0.3),
            Datum::new(vec![-0.2], -0.1),
            Datum::new(vec![1.0], 0.8),
        ])
        .unwrap();
        let hier_data = Dataset::new(
            flat_data
                .data()
                .iter()
                .map(|d| Datum::grouped(d.x.clone(), d.y, 1))
                .collect(),
        )
        .unwrap();
        let thetas = [(0.7, 0.05, 0.9), (0.5, -0.1, 1.1), (0.65, 0.0, 1.0)];
        let flat_draws = hier_draws(
            &flat_model,
            thetas.iter().map(|&(a, b, t)| vec![a, b, t]).collect(),
        );
        let hier_rows: Vec<Vec<f64>> = thetas
            .iter()
            .map(|&(a, b, t)| vec![a, b, 0.0, 0.0, 1.0, 1.0, t])
            .collect();
        let hdraws = hier_draws(&hier_model, hier_rows);

        let grid = ConformalGrid::regression(-3.0, 3.0, 25).unwrap();
        let flat_engine = ConformalEngine::new(&flat_model, &flat_draws, &flat_data).unwrap();
        let hier_engine = ConformalEngine::new(&hier_model, &hdraws, &hier_data).unwrap();
        let view = GroupedView::new(&hier_data).unwrap();

        let (pf, sf) = flat_engine.conformal_set(&[0.5], None, &grid, 0.2).unwrap();
        let (ph, sh) = group_conformal_set(&hier_engine, &view, &[0.5], 1, &grid, 0.2).unwrap();
        for (a, b) in pf.pi.iter().zip(&ph.pi) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(sf.measure, sh.measure);
    }

    #[test]
    fn tiny_group_rank_granularity() {
        // n_j = 1: π_j(y) ∈ {1/2, 1}; α_j < 1/2 includes everything with
        // π > α, α_j ≥ 1/2 may produce an empty set
        let model = LikelihoodModel::hierarchical_gaussian(1, 2);
        let data = Dataset::new(vec![
            Datum::grouped(vec![0.2], 0.4, 1),
            Datum::grouped(vec![0.5], 0.1, 2),
            Datum::grouped(vec![-0.3], 0.2, 2),
        ])
        .unwrap();
        let draws = hier_draws(
            &model,
            vec![
                vec![0.5, 0.4, 0.0, 0.1, 0.0, 0.0, 1.0, 1.0, 1.0],
                vec![0.6, 0.3, 0.1, 0.0, 0.0, 0.0, 1.0, 1.0, 0.9],
            ],
        );
        let engine = ConformalEngine::new(&model, &draws, &data).unwrap();
        let view = GroupedView::new(&data).unwrap();
        let grid = ConformalGrid::regression(-5.0, 5.0, 50).unwrap();

        let (profile, set) = group_conformal_set(&engine, &view, &[0.0], 1, &grid, 0.49).unwrap();
        for &p in &profile.pi {
            assert!(p == 0.5 || p == 1.0, "π must be 1/2 or 1, got {p}");
        }
        match &set.body {
            SetBody::Intervals { intervals } => {
                assert_eq!(intervals[0], [grid.lo(), grid.hi()]);
            }
            _ => panic!(),
        }
        // at α ≥ 1/2 only π = 1 survives; possibly empty
        let (_, set_hi) = group_conformal_set(&engine, &view, &[0.0], 1, &grid, 0.5).unwrap();
        assert!(set_hi.measure <= set.measure);
    }

    #[test]
    fn unknown_group_is_rejected() {
        let model = LikelihoodModel::hierarchical_gaussian(1, 2);
        let data = grouped_data(&[2, 2]);
        let draws = hier_draws(&model, vec![vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]]);
        let engine = ConformalEngine::new(&model, &draws, &data).unwrap();
        let view = GroupedView::new(&data).unwrap();
        let grid = ConformalGrid::regression(-1.0, 1.0, 5).unwrap();
        let err = group_conformal_set(&engine, &view, &[0.0], 3, &grid, 0.2).unwrap_err();
        assert!(matches!(err, Error::UnknownGroup { group: 3, .. }));
    }

    #[test]
    fn within_group_permutation_invariance_and_cross_group_dependence() {
        let model = LikelihoodModel::hierarchical_gaussian(1, 2);
        let base = vec![
            Datum::grouped(vec![0.2], 0.4, 1),
            Datum::grouped(vec![0.8], 0.9, 1),
            Datum::grouped(vec![-0.1], 0.0, 2),
            Datum::grouped(vec![0.4], 0.3, 2),
        ];
        let data = Dataset::new(base.clone()).unwrap();
        // permute inside group 2
        let permuted = Dataset::new(vec![
            base[0].clone(),
            base[1].clone(),
            base[3].clone(),
            base[2].clone(),
        ])
        .unwrap();
        let rows = vec![
            vec![0.5, -0.2, 0.3, 0.1, 0.0, 0.0, 1.0, 1.0, 1.0],
            vec![0.4, -0.1, 0.2, 0.0, 0.0, 0.0, 1.0, 1.0, 0.8],
        ];
        let draws = hier_draws(&model, rows);
        let grid = ConformalGrid::regression(-2.0, 2.0, 15).unwrap();
        let e1 = ConformalEngine::new(&model, &draws, &data).unwrap();
        let e2 = ConformalEngine::new(&model, &draws, &permuted).unwrap();
        let v1 = GroupedView::new(&data).unwrap();
        let v2 = GroupedView::new(&permuted).unwrap();
        let (p1, _) = group_conformal_set(&e1, &v1, &[0.3], 1, &grid, 0.3).unwrap();
        let (p2, _) = group_conformal_set(&e2, &v2, &[0.3], 1, &grid, 0.3).unwrap();
        for (a, b) in p1.pi.iter().zip(&p2.pi) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn scores_depend_on_other_groups_through_the_posterior() {
        // perturbing group 2's data changes the posterior, hence group 1's
        // conformity scores, while the rank floor 1/(n_1+1) persists
        let model = LikelihoodModel::hierarchical_gaussian(1, 2);
        let base = vec![
            Datum::grouped(vec![0.2], 0.4, 1),
            Datum::grouped(vec![0.8], 0.9, 1),
            Datum::grouped(vec![-0.1], 0.0, 2),
            Datum::grouped(vec![0.4], 0.3, 2),
        ];
        let data = Dataset::new(base.clone()).unwrap();
        let mut perturbed_rows = base;
        perturbed_rows[2].y += 5.0;
        perturbed_rows[3].y -= 3.0;
        let perturbed = Dataset::new(perturbed_rows).unwrap();

        let d1 = crate::metropolis::sample_metropolis(&model, &data, 300, 300, 17).unwrap();
        let d2 = crate::metropolis::sample_metropolis(&model, &perturbed, 300, 300, 17).unwrap();
        let grid = ConformalGrid::regression(-2.0, 2.0, 9).unwrap();
        let e1 = ConformalEngine::new(&model, &d1, &data).unwrap();
        let e2 = ConformalEngine::new(&model, &d2, &perturbed).unwrap();
        let (s1, _) = e1.aoi_predictives(&[0.3], Some(1), 0.5).unwrap();
        let (s2, _) = e2.aoi_predictives(&[0.3], Some(1), 0.5).unwrap();
        assert!(s1.iter().zip(&s2).any(|(a, b)| a != b));
        let v1 = GroupedView::new(&data).unwrap();
        let v2 = GroupedView::new(&perturbed).unwrap();
        let (p1, _) = group_conformal_set(&e1, &v1, &[0.3], 1, &grid, 0.3).unwrap();
        let (p2, _) = group_conformal_set(&e2, &v2, &[0.3], 1, &grid, 0.3).unwrap();
        for p in p1.pi.iter().chain(&p2.pi) {
            assert!(*p >= 1.0 / 3.0);
        }
    }
}
