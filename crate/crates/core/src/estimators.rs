//! OLS fits of the interference function and ADET point estimates with
//! normal-approximation confidence intervals.
//!
//! The untreated design is a block of group indicators, so every quantity
//! here reduces to per-group counts and sums. No dense matrix is formed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::netgraph::{all_depth_profiles, feature_key, ExposureMapping, FeatureKey, InterferenceGraph};
use crate::partition::{kappa_diagnostic, GroupPartition, KAPPA_WARN_THRESHOLD};

/// Default lower bound on propensities accepted by the DR estimator.
pub const DEFAULT_PROPENSITY_EPS: f64 = 1e-6;

/// OLS fit on the group-indicator design.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OlsFit {
    /// Per-group means of the untreated outcomes.
    pub beta_hat: Vec<f64>,
    pub sigma2_hat: f64,
    pub dof: usize,
    pub rss: f64,
}

pub fn ols_fit(g: &InterferenceGraph, partition: &GroupPartition) -> Result<OlsFit> {
    partition.check_graph(g)?;
    ols_fit_outcomes(&partition.untreated_outcomes(g), partition)
}

/// OLS fit for an arbitrary outcome vector indexed by untreated row.
pub fn ols_fit_outcomes(y_obs: &[f64], partition: &GroupPartition) -> Result<OlsFit> {
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
    let (beta_hat, rss) = group_means_rss(y_obs, &partition.row_group, d);
    let dof = n0 - d;
    Ok(OlsFit {
        beta_hat,
        sigma2_hat: rss / dof as f64,
        dof,
        rss,
    })
}

/// Group means and within-group residual sum of squares. Two passes so the
/// RSS is not computed by cancellation.
pub(crate) fn group_means_rss(y: &[f64], row_group: &[usize], d: usize) -> (Vec<f64>, f64) {
    let mut sums = vec![0.0; d];
    let mut counts = vec![0usize; d];
    for (&yi, &l) in y.iter().zip(row_group) {
        sums[l] += yi;
        counts[l] += 1;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    let rss = y
        .iter()
        .zip(row_group)
        .map(|(&yi, &l)| (yi - means[l]).powi(2))
        .sum();
    (means, rss)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "OLS")]
    Ols,
    #[serde(rename = "SFL")]
    Sfl,
    /// Coefficient on `z` in the homogeneous-effect regression over all nodes.
    #[serde(rename = "pooled-OLS")]
    PooledOls,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "OR")]
    Or,
    #[serde(rename = "DR")]
    Dr,
}

/// The three variance terms that multiply `sigma2_hat` inside the width.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WidthComponents {
    pub group_term: f64,
    pub treated_term: f64,
    pub propensity_term: f64,
}

impl WidthComponents {
    pub fn total(&self) -> f64 {
        self.group_term + self.treated_term + self.propensity_term
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub kappa_d32: f64,
    pub kappa_warning: bool,
    pub violations: usize,
}

impl Diagnostics {
    pub fn for_partition(p: &GroupPartition) -> Self {
        let kd = kappa_diagnostic(p);
        Diagnostics {
            kappa_d32: kd,
            kappa_warning: kd > KAPPA_WARN_THRESHOLD,
            violations: p.violations.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdetReport {
    pub tau_hat: f64,
    pub ci: (f64, f64),
    pub alpha: f64,
    pub method: Method,
    /// `None` for the pooled regression, which has no OR/DR split.
    pub estimator: Option<Estimator>,
    pub k: usize,
    /// Standard error `w`; the interval is `tau_hat ± z_{1-alpha/2} w`.
    pub se: f64,
    pub width_components: WidthComponents,
    pub sigma2_hat: f64,
    pub group_count_used: usize,
    pub diagnostics: Diagnostics,
}

impl AdetReport {
    pub fn width(&self) -> f64 {
        self.ci.1 - self.ci.0
    }

    pub fn covers(&self, tau: f64) -> bool {
        self.ci.0 <= tau && tau <= self.ci.1
    }
}

/// `Φ⁻¹(1 − alpha/2)`.
pub fn normal_quantile_two_sided(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} not in (0, 1)")));
    }
    Ok(Normal::standard().inverse_cdf(1.0 - alpha / 2.0))
}

pub fn adet_or(
    g: &InterferenceGraph,
    partition: &GroupPartition,
    fit: &OlsFit,
    alpha: f64,
) -> Result<AdetReport> {
    adet_ols(g, partition, fit, alpha, Estimator::Or, DEFAULT_PROPENSITY_EPS)
}

pub fn adet_dr(
    g: &InterferenceGraph,
    partition: &GroupPartition,
    fit: &OlsFit,
    alpha: f64,
) -> Result<AdetReport> {
    adet_ols(g, partition, fit, alpha, Estimator::Dr, DEFAULT_PROPENSITY_EPS)
}

/// OR or DR report from an OLS fit, with a configurable propensity bound.
pub fn adet_ols(
    g: &InterferenceGraph,
    partition: &GroupPartition,
    fit: &OlsFit,
    alpha: f64,
    estimator: Estimator,
    eps: f64,
) -> Result<AdetReport> {
    partition.check_graph(g)?;
    if fit.beta_hat.len() != partition.d() {
        return Err(Error::MismatchedInputs);
    }
    let identity: Vec<usize> = (0..partition.d()).collect();
    let blocks = BlockFit {
        block_of_group: &identity,
        means: &fit.beta_hat,
        sigma2: fit.sigma2_hat,
    };
    blocks.report(g, partition, alpha, estimator, eps, Method::Ols)
}

/// Groups merged into blocks, with a fitted value and variance estimate per block.
pub(crate) struct BlockFit<'a> {
    pub block_of_group: &'a [usize],
    pub means: &'a [f64],
    pub sigma2: f64,
}

impl BlockFit<'_> {
    pub fn report(
        &self,
        g: &InterferenceGraph,
        partition: &GroupPartition,
        alpha: f64,
        estimator: Estimator,
        eps: f64,
        method: Method,
    ) -> Result<AdetReport> {
        let q = normal_quantile_two_sided(alpha)?;
        partition.require_balanced()?;
        let n1 = partition.treated_match.len();
        if n1 == 0 {
            return Err(Error::NoTreatedNodes);
        }
        if estimator == Estimator::Dr {
            check_propensities(g.propensities(), eps)?;
        }
        let m = self.means.len();
        let y = g.outcomes();
        let p = g.propensities();
        let n1f = n1 as f64;

        let mut sizes = vec![0usize; m];
        for (l, grp) in partition.groups.iter().enumerate() {
            sizes[self.block_of_group[l]] += grp.size();
        }
        // Per-block weight: treated count, minus odds of untreated nodes for DR.
        let mut weight = vec![0.0; m];
        let mut tau_sum = 0.0;
        for (&i, &l) in &partition.treated_match {
            let b = self.block_of_group[l];
            weight[b] += 1.0;
            tau_sum += y[i] - self.means[b];
        }
        let mut propensity_term = 0.0;
        if estimator == Estimator::Dr {
            for (r, &i) in partition.untreated.iter().enumerate() {
                let b = self.block_of_group[partition.row_group[r]];
                let odds = p[i] / (1.0 - p[i]);
                weight[b] -= odds;
                tau_sum -= (y[i] - self.means[b]) * odds;
                propensity_term += odds * odds;
            }
            propensity_term /= n1f * n1f;
        }
        let group_term: f64 = weight
            .iter()
            .zip(&sizes)
            .map(|(&w, &s)| (w / n1f).powi(2) / s as f64)
            .sum();
        let components = WidthComponents {
            group_term,
            treated_term: 1.0 / n1f,
            propensity_term,
        };
        let tau_hat = tau_sum / n1f;
        let se = (components.total() * self.sigma2).sqrt();
        Ok(AdetReport {
            tau_hat,
            ci: (tau_hat - q * se, tau_hat + q * se),
            alpha,
            method,
            estimator: Some(estimator),
            k: partition.k,
            se,
            width_components: components,
            sigma2_hat: self.sigma2,
            group_count_used: m,
            diagnostics: Diagnostics::for_partition(partition),
        })
    }
}

fn check_propensities(p: &[f64], eps: f64) -> Result<()> {
    match p.iter().position(|&pi| !(pi > eps && pi < 1.0 - eps)) {
        None => Ok(()),
        Some(node) => Err(Error::PropensityAtBoundary {
            node,
            p: p[node],
            eps,
        }),
    }
}

/// CI for a homogeneous effect from the regression of `y` on `z` and the
/// group indicators over all `n` nodes.
pub fn pooled_adet_ci(
    g: &InterferenceGraph,
    mapping: &ExposureMapping,
    k: usize,
    alpha: f64,
) -> Result<AdetReport> {
    let keys: Vec<FeatureKey> = all_depth_profiles(g, k)
        .iter()
        .map(|prof| feature_key(prof, mapping, k))
        .collect();
    pooled_adet_ci_from_keys(g, &keys, k, alpha)
}

/// As [`pooled_adet_ci`] with precomputed keys (one per node).
///
/// Uses the Frisch–Waugh form: partialling the group indicators out of `z`
/// and `y` leaves within-group deviations, so the coefficient on `z` is
/// `Szy/Szz` with `Szz = Σ_g n1_g n0_g / n_g`.
pub fn pooled_adet_ci_from_keys(
    g: &InterferenceGraph,
    keys: &[FeatureKey],
    k: usize,
    alpha: f64,
) -> Result<AdetReport> {
    let q = normal_quantile_two_sided(alpha)?;
    let n = g.n();
    if keys.len() != n {
        return Err(Error::LengthMismatch {
            what: "feature keys",
            got: keys.len(),
            expected: n,
        });
    }
    let mut index: BTreeMap<&FeatureKey, usize> = BTreeMap::new();
    for key in keys {
        let next = index.len();
        index.entry(key).or_insert(next);
    }
    let d = index.len();
    let group: Vec<usize> = keys.iter().map(|key| index[key]).collect();
    if n <= d + 1 {
        return Err(Error::InsufficientDof {
            observations: n,
            parameters: d + 1,
        });
    }
    let y = g.outcomes();
    let z = g.treatments();
    let mut cnt = vec![0usize; d];
    let mut cnt1 = vec![0usize; d];
    let mut ysum = vec![0.0; d];
    for i in 0..n {
        cnt[group[i]] += 1;
        ysum[group[i]] += y[i];
        if z[i] {
            cnt1[group[i]] += 1;
        }
    }
    let zbar: Vec<f64> = (0..d).map(|l| cnt1[l] as f64 / cnt[l] as f64).collect();
    let ybar: Vec<f64> = (0..d).map(|l| ysum[l] / cnt[l] as f64).collect();
    let (mut szz, mut szy, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let l = group[i];
        let zt = if z[i] { 1.0 } else { 0.0 } - zbar[l];
        let yt = y[i] - ybar[l];
        szz += zt * zt;
        szy += zt * yt;
        syy += yt * yt;
    }
    if szz <= 0.0 {
        return Err(Error::RankDeficient(format!(
            "treatment is constant within every one of the {d} feature groups at k = {k}"
        )));
    }
    let tau_hat = szy / szz;
    let rss = (syy - szy * szy / szz).max(0.0);
    let sigma2 = rss / (n - d - 1) as f64;
    let se = (sigma2 / szz).sqrt();
    let smallest = cnt.iter().copied().min().unwrap_or(1);
    let kd = (d as f64).powf(1.5) / smallest as f64;
    Ok(AdetReport {
        tau_hat,
        ci: (tau_hat - q * se, tau_hat + q * se),
        alpha,
        method: Method::PooledOls,
        estimator: None,
        k,
        se,
        width_components: WidthComponents {
            group_term: 1.0 / szz,
            treated_term: 0.0,
            propensity_term: 0.0,
        },
        sigma2_hat: sigma2,
        group_count_used: d,
        diagnostics: Diagnostics {
            kappa_d32: kd,
            kappa_warning: kd > KAPPA_WARN_THRESHOLD,
            violations: 0,
        },
    })
}
