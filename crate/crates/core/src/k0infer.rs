//! Repro-samples inference for the neighborhood size `k₀` from the untreated
//! outcomes.
//!
//! Two stages. A candidate set is collected from repro copies of the error
//! term: each copy `u*` is added as an extra regressor and the penalized fit
//! `‖(I − H_{k,u*}) y‖² + λk` picks a `k`. Then every candidate `k` is tested
//! by conditional resampling: draws `y*` share the fitted values and residual
//! norm of `y_obs` under `k`, and `k` is kept when the observed nuclear
//! statistic is not in the low-probability tail of its conditional law.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::group_means_rss;
use crate::partition::GroupPartition;
use crate::seeding::substream;

/// How the candidate set is formed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateMode {
    /// Penalized fits on `B` repro copies of the error.
    Repro,
    /// Every `k` in `0..=k_max` of the grid.
    Range,
}

/// Which λ values of each path contribute to the candidate set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaSelection {
    /// The λ whose selected model has the smallest BIC.
    Bic,
    /// Every λ of the grid.
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct K0Config {
    pub k_max: usize,
    pub b: usize,
    pub j: usize,
    /// `None` derives a grid from the data, see [`default_lambda_grid`].
    pub lambda_grid: Option<Vec<f64>>,
    pub lambda_prime_grid: Option<Vec<f64>>,
    pub alpha: f64,
    pub seed: u64,
    pub candidate_mode: CandidateMode,
    pub lambda_selection: LambdaSelection,
}

impl Default for K0Config {
    fn default() -> Self {
        K0Config {
            k_max: 4,
            b: 200,
            j: 100,
            lambda_grid: None,
            lambda_prime_grid: None,
            alpha: 0.05,
            seed: 0,
            candidate_mode: CandidateMode::Repro,
            lambda_selection: LambdaSelection::Bic,
        }
    }
}

impl K0Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("k0: {m}")));
        if self.b == 0 || self.j == 0 {
            return bad("B and J must be >= 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must be in (0, 1)");
        }
        for grid in [&self.lambda_grid, &self.lambda_prime_grid].into_iter().flatten() {
            if grid.is_empty() || grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
                return bad("lambda grids must be nonempty and positive");
            }
        }
        Ok(())
    }
}

/// Nested model ladder: partitions of the same untreated nodes for `k = 0..=K`.
#[derive(Clone, Copy, Debug)]
pub struct Ladder<'a> {
    parts: &'a [GroupPartition],
}

impl<'a> Ladder<'a> {
    /// `parts[i]` must be the partition at `k = i`, all over the same untreated nodes.
    pub fn new(parts: &'a [GroupPartition]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty model ladder".into()))?;
        for (i, p) in parts.iter().enumerate() {
            if p.k != i || p.untreated != first.untreated {
                return Err(Error::MismatchedInputs);
            }
        }
        Ok(Ladder { parts })
    }

    pub fn k_max(&self) -> usize {
        self.parts.len() - 1
    }

    pub fn n0(&self) -> usize {
        self.parts[0].n0()
    }

    pub fn partition(&self, k: usize) -> &GroupPartition {
        &self.parts[k]
    }

    fn check_len(&self, y: &[f64]) -> Result<()> {
        if y.len() == self.n0() {
            Ok(())
        } else {
            Err(Error::LengthMismatch {
                what: "untreated outcomes",
                got: y.len(),
                expected: self.n0(),
            })
        }
    }
}

/// `(I − H_k) v`: within-group deviations.
fn residualize(v: &[f64], part: &GroupPartition) -> Vec<f64> {
    let (means, _) = group_means_rss(v, &part.row_group, part.d());
    v.iter().zip(&part.row_group).map(|(x, &l)| x - means[l]).collect()
}

/// `‖(I − H_k) y‖²`.
pub fn residual_ss(y: &[f64], part: &GroupPartition) -> f64 {
    group_means_rss(y, &part.row_group, part.d()).1
}

/// Result of the penalized fit on one repro copy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReproFit {
    pub k_hat: usize,
    /// `‖(I − H_{k,u*}) y‖²` per `k`.
    pub values: Vec<f64>,
    /// `k` values where `(I − H_k) u* = 0`; their value ignores `u*`.
    pub degenerate: Vec<usize>,
}

fn repro_values(y: &[f64], ladder: &Ladder, u: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut values = Vec::with_capacity(ladder.k_max() + 1);
    let mut degenerate = Vec::new();
    for (k, part) in ladder.parts.iter().enumerate() {
        let ry = residualize(y, part);
        let ru = residualize(u, part);
        let rss: f64 = ry.iter().map(|v| v * v).sum();
        let uu: f64 = ru.iter().map(|v| v * v).sum();
        // (I−H_k)u* is orthogonal to C(X_k), so rᵀy = rᵀ(I−H_k)y.
        let uy: f64 = ru.iter().zip(&ry).map(|(a, b)| a * b).sum();
        if uu > 0.0 {
            values.push((rss - uy * uy / uu).max(0.0));
        } else {
            degenerate.push(k);
            values.push(rss);
        }
    }
    (values, degenerate)
}

fn penalized_argmin(values: &[f64], ks: &[usize], lambda: f64) -> usize {
    let mut best = 0;
    for i in 1..ks.len() {
        if values[i] + lambda * (ks[i] as f64) < values[best] + lambda * (ks[best] as f64) {
            best = i;
        }
    }
    best
}

/// `argmin_k ‖(I − H_{k,u*}) y‖² + λk`, ties to the smallest `k`.
pub fn penalized_fit_with_repro(
    y_obs: &[f64],
    ladder: &Ladder,
    u_star: &[f64],
    lambda: f64,
) -> Result<ReproFit> {
    ladder.check_len(y_obs)?;
    ladder.check_len(u_star)?;
    let (values, degenerate) = repro_values(y_obs, ladder, u_star);
    let ks: Vec<usize> = (0..=ladder.k_max()).collect();
    let k_hat = penalized_argmin(&values, &ks, lambda);
    Ok(ReproFit {
        k_hat,
        values,
        degenerate,
    })
}

/// Index minimising `n₀ log(rss/n₀) + df log n₀`; ties go to the smaller `df`.
pub fn bic_select(rss_by_model: &[f64], n0: usize, df_by_model: &[usize]) -> usize {
    assert_eq!(rss_by_model.len(), df_by_model.len());
    let n = n0 as f64;
    let bic = |i: usize| n * (rss_by_model[i] / n).ln() + df_by_model[i] as f64 * n.ln();
    let mut best = 0;
    for i in 1..rss_by_model.len() {
        let (bi, bb) = (bic(i), bic(best));
        if bi < bb || (bi == bb && df_by_model[i] < df_by_model[best]) {
            best = i;
        }
    }
    best
}

/// Geometric grid of 50 points from `σ̂²/100` (with `σ̂²` from the finest
/// model) to `‖(I − H₀) y‖²`. Every change point of the path
/// `k ↦ RSS_k + λk` lies below the upper end.
pub fn default_lambda_grid(y_obs: &[f64], ladder: &Ladder) -> Vec<f64> {
    const POINTS: usize = 50;
    let fine = ladder.partition(ladder.k_max());
    let dof = ladder.n0().saturating_sub(fine.d()).max(1);
    let sigma2 = residual_ss(y_obs, fine) / dof as f64;
    let lo = (sigma2 / 100.0).max(f64::MIN_POSITIVE);
    let hi = residual_ss(y_obs, ladder.partition(0)).max(lo * 10.0);
    let ratio = (hi / lo).powf(1.0 / (POINTS - 1) as f64);
    (0..POINTS).map(|i| lo * ratio.powi(i as i32)).collect()
}

/// Models (as positions in `ks`) visited by the λ path, deduplicated.
fn path_models(values: &[f64], ks: &[usize], grid: &[f64]) -> Vec<usize> {
    let mut seen: Vec<usize> = grid.iter().map(|&l| penalized_argmin(values, ks, l)).collect();
    seen.sort_unstable();
    seen.dedup();
    seen
}

fn select_on_path(
    values: &[f64],
    ks: &[usize],
    dfs: &[usize],
    grid: &[f64],
    n0: usize,
    selection: LambdaSelection,
) -> Vec<usize> {
    let models = path_models(values, ks, grid);
    match selection {
        LambdaSelection::All => models,
        LambdaSelection::Bic => {
            let rss: Vec<f64> = models.iter().map(|&i| values[i].max(f64::MIN_POSITIVE)).collect();
            let df: Vec<usize> = models.iter().map(|&i| dfs[i]).collect();
            vec![models[bic_select(&rss, n0, &df)]]
        }
    }
}

const TAG_CANDIDATE: u64 = 1;
const TAG_CONDITIONAL: u64 = 2;

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Candidate set `S_B`, sorted ascending.
pub fn build_candidate_set(y_obs: &[f64], ladder: &Ladder, config: &K0Config) -> Result<Vec<usize>> {
    config.validate()?;
    ladder.check_len(y_obs)?;
    let k_max = config.k_max.min(ladder.k_max());
    if config.candidate_mode == CandidateMode::Range {
        return Ok((0..=k_max).collect());
    }
    let ks: Vec<usize> = (0..=k_max).collect();
    let dfs: Vec<usize> = ks.iter().map(|&k| ladder.partition(k).d() + 1).collect();
    let grid = config
        .lambda_grid
        .clone()
        .unwrap_or_else(|| default_lambda_grid(y_obs, ladder));
    let n0 = ladder.n0();
    let sub = Ladder {
        parts: &ladder.parts[..=k_max],
    };
    let picks: Vec<Vec<usize>> = (0..config.b)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(config.seed, TAG_CANDIDATE, b as u64, 0);
            let u = normal_vec(&mut rng, n0);
            let (values, _) = repro_values(y_obs, &sub, &u);
            select_on_path(&values, &ks, &dfs, &grid, n0, config.lambda_selection)
        })
        .collect();
    let mut set: Vec<usize> = picks.into_iter().flatten().map(|i| ks[i]).collect();
    set.sort_unstable();
    set.dedup();
    Ok(set)
}

/// Draw `y* = H_k y + ‖(I−H_k) y‖ · (I−H_k)u / ‖(I−H_k)u‖` with `u ~ N(0, I)`.
pub fn conditional_repro_sample<R: rand::Rng + ?Sized>(
    y_obs: &[f64],
    partition: &GroupPartition,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n0 = partition.n0();
    if y_obs.len() != n0 {
        return Err(Error::LengthMismatch {
            what: "untreated outcomes",
            got: y_obs.len(),
            expected: n0,
        });
    }
    let (means, rss) = group_means_rss(y_obs, &partition.row_group, partition.d());
    if rss <= 0.0 {
        return Err(Error::ExactFit(partition.k));
    }
    let b = rss.sqrt();
    loop {
        let u: Vec<f64> = (0..n0).map(|_| StandardNormal.sample(rng)).collect();
        let ru = residualize(&u, partition);
        let norm = ru.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            return Ok(partition
                .row_group
                .iter()
                .zip(&ru)
                .map(|(&l, r)| means[l] + b * r / norm)
                .collect());
        }
    }
}

/// Nuclear statistic restricted to `candidates`: the BIC-best model on the λ′ path.
pub fn nuclear_statistic(y: &[f64], ladder: &Ladder, candidates: &[usize], grid: &[f64]) -> usize {
    let values: Vec<f64> = candidates
        .iter()
        .map(|&k| residual_ss(y, ladder.partition(k)))
        .collect();
    let dfs: Vec<usize> = candidates.iter().map(|&k| ladder.partition(k).d()).collect();
    let pick = select_on_path(&values, candidates, &dfs, grid, ladder.n0(), LambdaSelection::Bic);
    candidates[pick[0]]
}

/// `F̂(k') = Σ_{k'': p̂(k'') ≤ p̂(k')} p̂(k'')`.
pub fn cumulative_mass(p_hat: &BTreeMap<usize, f64>, k: usize) -> f64 {
    let pk = p_hat.get(&k).copied().unwrap_or(0.0);
    p_hat.values().filter(|&&p| p <= pk).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct K0ConfidenceSet {
    pub candidate_set: Vec<usize>,
    pub retained: Vec<usize>,
    /// `F̂(k̂(y_obs) | w_obs)` under each candidate `k`.
    pub f_hat: BTreeMap<usize, f64>,
    /// Conditional mass `p̂(k' | w_obs)` of the nuclear statistic, per candidate `k`.
    pub p_hat: BTreeMap<usize, BTreeMap<usize, f64>>,
    pub k_hat_obs: usize,
    /// Largest retained `k`, a conservative upper bound for `k₀`.
    pub k_alpha_star: Option<usize>,
    /// Candidates where `y_obs` is fit exactly; retained with `F̂ = 1`.
    pub exact_fit: Vec<usize>,
    pub alpha: f64,
}

impl K0ConfidenceSet {
    /// Retained set at another level, reusing the estimated `F̂`.
    pub fn retained_at(&self, alpha: f64) -> Vec<usize> {
        self.f_hat
            .iter()
            .filter(|(_, &f)| f >= alpha)
            .map(|(&k, _)| k)
            .collect()
    }
}

/// Confidence set over `candidate_set`.
pub fn confidence_set(
    y_obs: &[f64],
    ladder: &Ladder,
    candidate_set: &[usize],
    config: &K0Config,
) -> Result<K0ConfidenceSet> {
    config.validate()?;
    ladder.check_len(y_obs)?;
    if candidate_set.is_empty() {
        return Err(Error::InvalidParameter("empty candidate set".into()));
    }
    if let Some(&k) = candidate_set.iter().find(|&&k| k > ladder.k_max()) {
        return Err(Error::InvalidParameter(format!(
            "candidate k = {k} exceeds model ladder k_max = {}",
            ladder.k_max()
        )));
    }
    let mut cands = candidate_set.to_vec();
    cands.sort_unstable();
    cands.dedup();
    let grid = config
        .lambda_prime_grid
        .clone()
        .unwrap_or_else(|| default_lambda_grid(y_obs, ladder));
    let k_hat_obs = nuclear_statistic(y_obs, ladder, &cands, &grid);

    let per_k: Vec<(usize, Option<BTreeMap<usize, f64>>)> = cands
        .par_iter()
        .map(|&k| -> Result<_> {
            let part = ladder.partition(k);
            if residual_ss(y_obs, part) <= 0.0 {
                return Ok((k, None));
            }
            let mut counts: BTreeMap<usize, usize> = cands.iter().map(|&c| (c, 0)).collect();
            for j in 0..config.j {
                let mut rng = substream(config.seed, TAG_CONDITIONAL, k as u64, j as u64);
                let ystar = conditional_repro_sample(y_obs, part, &mut rng)?;
                *counts.get_mut(&nuclear_statistic(&ystar, ladder, &cands, &grid)).unwrap() += 1;
            }
            let p = counts
                .into_iter()
                .map(|(c, n)| (c, n as f64 / config.j as f64))
                .collect();
            Ok((k, Some(p)))
        })
        .collect::<Result<_>>()?;

    let mut f_hat = BTreeMap::new();
    let mut p_hat = BTreeMap::new();
    let mut exact_fit = Vec::new();
    for (k, p) in per_k {
        match p {
            None => {
                log::warn!("k0: y_obs lies in the column space at k = {k}; retained with F = 1");
                exact_fit.push(k);
                f_hat.insert(k, 1.0);
            }
            Some(p) => {
                f_hat.insert(k, cumulative_mass(&p, k_hat_obs));
                p_hat.insert(k, p);
            }
        }
    }
    let mut out = K0ConfidenceSet {
        candidate_set: cands,
        retained: vec![],
        f_hat,
        p_hat,
        k_hat_obs,
        k_alpha_star: None,
        exact_fit,
        alpha: config.alpha,
    };
    out.retained = out.retained_at(config.alpha);
    out.k_alpha_star = out.retained.last().copied();
    Ok(out)
}

/// Candidate set followed by the confidence set.
pub fn infer_k0(y_obs: &[f64], ladder: &Ladder, config: &K0Config) -> Result<K0ConfidenceSet> {
    let cands = build_candidate_set(y_obs, ladder, config)?;
    confidence_set(y_obs, ladder, &cands, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bic_prefers_fewer_parameters_on_ties() {
        assert_eq!(bic_select(&[3.0, 3.0], 100, &[5, 2]), 1);
        let n0 = 50usize;
        let n = n0 as f64;
        let rss1 = 10.0;
        let rss2 = rss1 * (-(n.ln()) * 3.0 / n).exp();
        let i = bic_select(&[rss1, rss2], n0, &[2, 5]);
        // Equal up to rounding; either the exact tie or float noise must not
        // pick the larger model unless it is strictly better.
        let b = |r: f64, d: usize| n * (r / n).ln() + d as f64 * n.ln();
        if b(rss2, 5) >= b(rss1, 2) {
            assert_eq!(i, 0);
        }
    }

    #[test]
    fn cumulative_mass_by_hand() {
        let p: BTreeMap<usize, f64> = [(0, 0.1), (1, 0.6), (2, 0.3)].into();
        assert!((cumulative_mass(&p, 1) - 1.0).abs() < 1e-15);
        assert!((cumulative_mass(&p, 2) - 0.4).abs() < 1e-15);
        assert!((cumulative_mass(&p, 0) - 0.1).abs() < 1e-15);
    }
}
