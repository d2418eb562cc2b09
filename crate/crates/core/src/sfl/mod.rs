//! Square-root fused clipped Lasso over group coefficients.
//!
//! The objective `sqrt(RSS/(2n₀)) + λ₁ Σ_{i<j} min(|β_i − β_j|, λ₂)` is split
//! as a difference of convex functions. Each DC step linearises the concave
//! part and solves the remaining convex problem by ADMM (see [`admm`]).
//! Coefficients closer than `group_merge_tol` are then merged and refit by
//! OLS on the merged design, which is what the CIs are built on.

mod admm;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

pub use admm::pair_count;
use admm::{apply_t, solve_subproblem, AdmmSettings, AdmmState, GroupStats};

use crate::error::{Error, Result};
use crate::estimators::{group_means_rss, AdetReport, BlockFit, Estimator, Method, DEFAULT_PROPENSITY_EPS};
use crate::netgraph::InterferenceGraph;
use crate::partition::GroupPartition;

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SflConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Initial ADMM penalty; adapted by residual balancing.
    pub rho: f64,
    pub dc_max_iter: usize,
    pub admm_max_iter: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub tol_dc: f64,
    /// `None` means `lambda2 / 2`.
    pub group_merge_tol: Option<f64>,
}

impl Default for SflConfig {
    fn default() -> Self {
        SflConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            rho: 1.0,
            dc_max_iter: 50,
            admm_max_iter: 20_000,
            tol_primal: 1e-8,
            tol_dual: 1e-8,
            tol_dc: 1e-8,
            group_merge_tol: None,
        }
    }
}

impl SflConfig {
    /// `λ₁ = λ₂ = c₀/√n` with `c₀ = 1/30`.
    pub fn for_sample_size(n: usize) -> Self {
        let lam = (1.0 / 30.0) / (n as f64).sqrt();
        SflConfig {
            lambda1: lam,
            lambda2: lam,
            ..Default::default()
        }
    }

    pub fn merge_tol(&self) -> f64 {
        self.group_merge_tol.unwrap_or(self.lambda2 / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("sfl: {what}")));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("lambda1 and lambda2 must be >= 0");
        }
        if !(self.rho > 0.0) {
            return bad("rho must be > 0");
        }
        if !(self.tol_primal > 0.0 && self.tol_dual > 0.0 && self.tol_dc > 0.0) {
            return bad("tolerances must be > 0");
        }
        if self.dc_max_iter == 0 || self.admm_max_iter == 0 {
            return bad("iteration limits must be >= 1");
        }
        if let Some(t) = self.group_merge_tol {
            if !(t > 0.0) {
                return bad("group_merge_tol must be > 0");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SflSolution {
    /// Refit coefficients, constant on each merged block.
    pub beta_grp: Vec<f64>,
    /// Raw DC/ADMM iterate before merging.
    pub beta_raw: Vec<f64>,
    /// Blocks of group indices, each ascending, ordered by smallest member.
    pub merged: Vec<Vec<usize>>,
    pub eta_grp: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub admm_iterations: usize,
    /// `‖Tβ − p‖_∞` at the end of the last ADMM solve.
    pub primal_residual: f64,
    /// A DC step that raised the objective (inexact subproblem) was discarded.
    pub safeguard_stop: bool,
    /// Some raw coefficient exceeded `10 · max|y|`.
    pub box_violation: bool,
}

impl SflSolution {
    pub fn m(&self) -> usize {
        self.merged.len()
    }

    /// Block index of each group.
    pub fn block_of_group(&self) -> Vec<usize> {
        let d = self.beta_grp.len();
        let mut out = vec![0; d];
        for (b, blk) in self.merged.iter().enumerate() {
            for &l in blk {
                out[l] = b;
            }
        }
        out
    }
}

/// Objective at `beta`, using group counts only.
pub fn sfl_objective(
    beta: &[f64],
    y_obs: &[f64],
    partition: &GroupPartition,
    lambda1: f64,
    lambda2: f64,
) -> f64 {
    let rss: f64 = y_obs
        .iter()
        .zip(&partition.row_group)
        .map(|(y, &l)| (y - beta[l]).powi(2))
        .sum();
    (rss / (2.0 * y_obs.len() as f64)).sqrt() + lambda1 * clipped_penalty(beta, lambda2)
}

fn clipped_penalty(beta: &[f64], lambda2: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..beta.len() {
        for j in i + 1..beta.len() {
            s += (beta[i] - beta[j]).abs().min(lambda2);
        }
    }
    s
}

fn objective_from_stats(stats: &GroupStats, beta: &[f64], cfg: &SflConfig) -> f64 {
    (stats.rss(beta) / (2.0 * stats.n0)).sqrt() + cfg.lambda1 * clipped_penalty(beta, cfg.lambda2)
}

/// Subgradient of `λ₁ Σ_{i<j} (|β_i − β_j| − λ₂)₊`, taking 0 at the kink.
fn concave_subgradient(beta: &[f64], lambda1: f64, lambda2: f64) -> Vec<f64> {
    let d = beta.len();
    let mut g = vec![0.0; d];
    for i in 0..d {
        for j in i + 1..d {
            let diff = beta[i] - beta[j];
            if diff.abs() > lambda2 {
                let s = lambda1 * diff.signum();
                g[i] += s;
                g[j] -= s;
            }
        }
    }
    g
}

/// DC iterations from the OLS group means.
pub fn dc_solve(y_obs: &[f64], partition: &GroupPartition, config: &SflConfig) -> Result<SflSolution> {
    config.validate()?;
    let (n0, d) = (partition.n0(), partition.d());
    if y_obs.len() != n0 {
        return Err(Error::LengthMismatch {
            what: "untreated outcomes",
            got: y_obs.len(),
            expected: n0,
        });
    }
    if n0 <= d {
        return Err(Error::InsufficientDof {
            observations: n0,
            parameters: d,
        });
    }
    let stats = GroupStats::new(y_obs, &partition.row_group, d);
    let mut beta = stats.means.clone();
    let mut obj = objective_from_stats(&stats, &beta, config);
    let mut trace = vec![obj];
    let mut converged = config.lambda1 == 0.0 || d <= 1;
    let mut safeguard_stop = false;
    let mut admm_iterations = 0;
    let mut primal_residual = 0.0;

    if !converged {
        if stats.within_ss <= 0.0 {
            return Err(Error::DegenerateResidual);
        }
        let mut tb = Vec::new();
        apply_t(&beta, &mut tb);
        let mut state = AdmmState {
            beta: beta.clone(),
            nu: tb.iter().map(|v| config.lambda1 * v.signum() * f64::from(*v != 0.0)).collect(),
            p: tb,
            rho: config.rho,
        };
        let settings = AdmmSettings {
            lambda1: config.lambda1,
            max_iter: config.admm_max_iter,
            tol_primal: config.tol_primal,
            tol_dual: config.tol_dual,
        };
        for _ in 0..config.dc_max_iter {
            let g = concave_subgradient(&beta, config.lambda1, config.lambda2);
            let out = solve_subproblem(&stats, &g, &settings, &mut state)?;
            admm_iterations += out.iterations;
            primal_residual = out.primal_residual;
            let new_obj = objective_from_stats(&stats, &state.beta, config);
            if new_obj > obj {
                safeguard_stop = true;
                log::debug!("sfl: DC step raised objective {obj} -> {new_obj}; keeping previous iterate");
                break;
            }
            let done = (obj - new_obj).abs() < config.tol_dc && out.converged;
            beta.copy_from_slice(&state.beta);
            obj = new_obj;
            trace.push(obj);
            if done {
                converged = true;
                break;
            }
        }
        if !converged && !safeguard_stop {
            log::warn!("sfl: no convergence within {} DC iterations", config.dc_max_iter);
        }
        converged |= safeguard_stop;
    }

    let merged = extract_groups(&beta, config.merge_tol());
    let block_of_row: Vec<usize> = {
        let mut bog = vec![0; d];
        for (b, blk) in merged.iter().enumerate() {
            for &l in blk {
                bog[l] = b;
            }
        }
        partition.row_group.iter().map(|&l| bog[l]).collect()
    };
    let (eta, _) = group_means_rss(y_obs, &block_of_row, merged.len());
    let mut beta_grp = vec![0.0; d];
    for (b, blk) in merged.iter().enumerate() {
        for &l in blk {
            beta_grp[l] = eta[b];
        }
    }
    let ymax = y_obs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let box_violation = beta.iter().any(|b| b.abs() > 10.0 * ymax);
    if box_violation {
        log::warn!("sfl: coefficient outside |beta| <= 10 max|y|");
    }
    Ok(SflSolution {
        beta_grp,
        beta_raw: beta,
        merged,
        eta_grp: eta,
        objective_trace: trace,
        converged,
        admm_iterations,
        primal_residual,
        safeguard_stop,
        box_violation,
    })
}

/// Single-linkage merge of coefficient values: sorted neighbours closer than
/// `merge_tol` share a block. Blocks are ordered by their smallest index.
pub fn extract_groups(beta: &[f64], merge_tol: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..beta.len()).collect();
    order.sort_by(|&a, &b| beta[a].total_cmp(&beta[b]).then(a.cmp(&b)));
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if pos > 0 && beta[i] - beta[order[pos - 1]] < merge_tol {
            blocks.last_mut().unwrap().push(i);
        } else {
            blocks.push(vec![i]);
        }
    }
    for blk in &mut blocks {
        blk.sort_unstable();
    }
    blocks.sort_by_key(|blk| blk[0]);
    blocks
}

/// OR or DR report using the merged-block refit.
pub fn adet_sfl(
    g: &InterferenceGraph,
    partition: &GroupPartition,
    solution: &SflSolution,
    alpha: f64,
    estimator: Estimator,
) -> Result<AdetReport> {
    adet_sfl_with_eps(g, partition, solution, alpha, estimator, DEFAULT_PROPENSITY_EPS)
}

/// As [`adet_sfl`] with a configurable propensity bound for DR.
pub fn adet_sfl_with_eps(
    g: &InterferenceGraph,
    partition: &GroupPartition,
    solution: &SflSolution,
    alpha: f64,
    estimator: Estimator,
    eps: f64,
) -> Result<AdetReport> {
    partition.check_graph(g)?;
    if solution.beta_grp.len() != partition.d() {
        return Err(Error::MismatchedInputs);
    }
    let m = solution.m();
    let n0 = partition.n0();
    if n0 <= m {
        return Err(Error::InsufficientDof {
            observations: n0,
            parameters: m,
        });
    }
    let block_of_group = solution.block_of_group();
    let block_of_row: Vec<usize> = partition.row_group.iter().map(|&l| block_of_group[l]).collect();
    let (means, rss) = group_means_rss(&partition.untreated_outcomes(g), &block_of_row, m);
    BlockFit {
        block_of_group: &block_of_group,
        means: &means,
        sigma2: rss / (n0 - m) as f64,
    }
    .report(g, partition, alpha, estimator, eps, Method::Sfl)
}

/// Smallest eigenvalue of the curvature of the square-root loss restricted to
/// the merged design, at the merged OLS residual.
pub fn restricted_eigenvalue_diag(
    y_obs: &[f64],
    partition: &GroupPartition,
    merged: &[Vec<usize>],
) -> Result<f64> {
    let m = merged.len();
    let mut block_of_group = vec![usize::MAX; partition.d()];
    for (b, blk) in merged.iter().enumerate() {
        for &l in blk {
            block_of_group[l] = b;
        }
    }
    if block_of_group.contains(&usize::MAX) {
        return Err(Error::InvalidParameter("merged blocks do not cover every group".into()));
    }
    let block_of_row: Vec<usize> = partition.row_group.iter().map(|&l| block_of_group[l]).collect();
    let (eta, rss) = group_means_rss(y_obs, &block_of_row, m);
    if rss <= 0.0 {
        return Err(Error::DegenerateResidual);
    }
    let n0 = y_obs.len() as f64;
    let mut sizes = vec![0.0; m];
    let mut dtr = vec![0.0; m];
    for (&y, &b) in y_obs.iter().zip(&block_of_row) {
        sizes[b] += 1.0;
        dtr[b] += y - eta[b];
    }
    let scale = 1.0 / (4.0 * n0 * n0 * (rss / (2.0 * n0)).powf(1.5));
    let mat = DMatrix::from_fn(m, m, |i, j| {
        let diag = if i == j { sizes[i] * rss } else { 0.0 };
        (diag - dtr[i] * dtr[j]) * scale
    });
    let eig = SymmetricEigen::new(mat);
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Whether `c_min > λ₁ (2M* + 1) / λ₂`. Always true when `λ₁ = 0`.
pub fn restricted_eigenvalue_condition(c_min: f64, lambda1: f64, lambda2: f64, m_star: usize) -> bool {
    if lambda1 == 0.0 {
        return true;
    }
    c_min > lambda1 * (2 * m_star + 1) as f64 / lambda2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipped_penalty_by_hand() {
        assert!((0.1 * clipped_penalty(&[0.0, 3.0], 1.0) - 0.1).abs() < 1e-15);
        assert_eq!(clipped_penalty(&[2.0; 5], 0.5), 0.0);
    }

    #[test]
    fn subgradient_sums_to_zero() {
        let g = concave_subgradient(&[0.0, 0.05, 1.0, -2.0], 0.3, 0.1);
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
        // Pair (0, 1) is inside the clip and contributes nothing.
        assert!((g[0] - 0.3 * (-1.0 + 1.0)).abs() < 1e-15);
        assert!((g[2] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn extract_groups_examples() {
        assert_eq!(extract_groups(&[1.0, 1.0 + 1e-9, 5.0], 0.01), vec![vec![0, 1], vec![2]]);
        assert_eq!(extract_groups(&[2.0; 4], 0.01), vec![vec![0, 1, 2, 3]]);
        // Sorted gaps 0.001, 0.3, 0.002.
        assert_eq!(
            extract_groups(&[1.301, 1.0, 1.303, 1.001], 0.01),
            vec![vec![0, 2], vec![1, 3]]
        );
    }

    #[test]
    fn condition_trivial_at_zero_lambda() {
        assert!(restricted_eigenvalue_condition(0.0, 0.0, 0.0, 10));
        assert!(!restricted_eigenvalue_condition(0.01, 1.0, 0.1, 3));
    }

    #[test]
    fn default_lambdas() {
        let c = SflConfig::for_sample_size(900);
        assert!((c.lambda1 - 1.0 / 900.0).abs() < 1e-15);
        assert_eq!(c.merge_tol(), c.lambda2 / 2.0);
    }
}
