//! ADMM for the convex DC subproblem
//!
//!   min_β  sqrt(RSS(β)/(2n₀)) − gᵀβ + λ₁ Σ_{i<j} |β_i − β_j|
//!
//! split as `Tβ = p` where `T` is the pairwise-difference operator.

use crate::error::{Error, Result};

/// Group-level sufficient statistics of the untreated outcomes.
#[derive(Clone, Debug)]
pub(crate) struct GroupStats {
    pub sizes: Vec<f64>,
    pub means: Vec<f64>,
    /// Within-group sum of squares, the part of the RSS no β can remove.
    pub within_ss: f64,
    pub n0: f64,
}

impl GroupStats {
    pub fn new(y: &[f64], row_group: &[usize], d: usize) -> Self {
        let (means, within_ss) = crate::estimators::group_means_rss(y, row_group, d);
        let mut sizes = vec![0.0; d];
        for &l in row_group {
            sizes[l] += 1.0;
        }
        GroupStats {
            sizes,
            means,
            within_ss,
            n0: y.len() as f64,
        }
    }

    pub fn d(&self) -> usize {
        self.means.len()
    }

    pub fn rss(&self, beta: &[f64]) -> f64 {
        self.within_ss
            + beta
                .iter()
                .zip(&self.means)
                .zip(&self.sizes)
                .map(|((b, m), s)| s * (b - m).powi(2))
                .sum::<f64>()
    }
}

/// Number of unordered pairs, the row count of `T`.
pub fn pair_count(d: usize) -> usize {
    d * d.saturating_sub(1) / 2
}

pub(crate) fn apply_t(beta: &[f64], out: &mut Vec<f64>) {
    out.clear();
    for i in 0..beta.len() {
        for j in i + 1..beta.len() {
            out.push(beta[i] - beta[j]);
        }
    }
}

pub(crate) fn apply_t_transpose(q: &[f64], d: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut e = 0;
    for i in 0..d {
        for j in i + 1..d {
            out[i] += q[e];
            out[j] -= q[e];
            e += 1;
        }
    }
}

pub(crate) struct AdmmSettings {
    pub lambda1: f64,
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
}

pub(crate) struct AdmmState {
    pub beta: Vec<f64>,
    pub p: Vec<f64>,
    pub nu: Vec<f64>,
    pub rho: f64,
}

pub(crate) struct AdmmOutcome {
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: f64,
}

/// Runs ADMM from `state`, updating it in place.
pub(crate) fn solve_subproblem(
    stats: &GroupStats,
    g: &[f64],
    settings: &AdmmSettings,
    state: &mut AdmmState,
) -> Result<AdmmOutcome> {
    let d = stats.d();
    let mut tb = Vec::with_capacity(pair_count(d));
    let mut shift = vec![0.0; pair_count(d)];
    let mut tt = vec![0.0; d];
    let mut dp = vec![0.0; pair_count(d)];
    let mut primal = f64::INFINITY;
    let thresh = settings.lambda1;

    for it in 1..=settings.max_iter {
        let rho = state.rho;
        // rhs = g − Tᵀν + ρTᵀp, without the a∘ȳ term which depends on c.
        for (s, (&p, &nu)) in shift.iter_mut().zip(state.p.iter().zip(&state.nu)) {
            *s = rho * p - nu;
        }
        apply_t_transpose(&shift, d, &mut tt);
        for (t, &gi) in tt.iter_mut().zip(g) {
            *t += gi;
        }
        solve_beta(stats, &tt, rho, &mut state.beta)?;

        apply_t(&state.beta, &mut tb);
        primal = 0.0;
        for e in 0..tb.len() {
            // Over-relaxed splitting point.
            let relaxed = RELAX * tb[e] + (1.0 - RELAX) * state.p[e];
            let newp = soft_threshold(relaxed + state.nu[e] / rho, thresh / rho);
            dp[e] = newp - state.p[e];
            state.p[e] = newp;
            state.nu[e] += rho * (relaxed - newp);
            primal = primal.max((tb[e] - newp).abs());
        }
        apply_t_transpose(&dp, d, &mut tt);
        let dual = rho * tt.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if primal < settings.tol_primal && dual < settings.tol_dual {
            return Ok(AdmmOutcome {
                iterations: it,
                converged: true,
                primal_residual: primal,
            });
        }
        // Residual balancing. ν is unscaled so it needs no rescaling.
        if it % RHO_UPDATE_EVERY != 0 {
            continue;
        }
        if primal > 10.0 * dual {
            state.rho = (rho * 2.0).min(1e8);
        } else if dual > 10.0 * primal {
            state.rho = (rho / 2.0).max(1e-8);
        }
    }
    Ok(AdmmOutcome {
        iterations: settings.max_iter,
        converged: false,
        primal_residual: primal,
    })
}

const RELAX: f64 = 1.6;
const RHO_UPDATE_EVERY: usize = 10;

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// β-update. Stationarity reads
///
///   a∘(β − ȳ) + ρ(dI − 11ᵀ)β = b,   a_l = s_l / (√(2n₀) c),   c = ‖y − Xβ‖,
///
/// so β depends on the data only through the scalar `c`. For fixed `c` the
/// system is diagonal plus rank one; `c` itself is the root of
/// `φ(c) = sqrt(C + Σ s_l (β_l(c) − ȳ_l)²) − c`, which is positive at
/// `c = sqrt(C)` and negative for large `c`.
pub(crate) fn solve_beta(stats: &GroupStats, b: &[f64], rho: f64, beta: &mut [f64]) -> Result<()> {
    if stats.within_ss <= 0.0 {
        return Err(Error::DegenerateResidual);
    }
    let scale = (2.0 * stats.n0).sqrt();
    let phi = |c: f64, beta: &mut [f64]| -> f64 {
        linear_solve(stats, b, rho, scale * c, beta);
        stats.rss(beta).sqrt() - c
    };
    let mut lo = stats.within_ss.sqrt();
    let mut f_lo = phi(lo, beta);
    if f_lo <= 0.0 {
        return Ok(());
    }
    let mut hi = lo * 2.0;
    let mut f_hi = phi(hi, beta);
    while f_hi > 0.0 {
        lo = hi;
        f_lo = f_hi;
        hi *= 2.0;
        f_hi = phi(hi, beta);
        if !hi.is_finite() {
            return Err(Error::DegenerateResidual);
        }
    }
    // Illinois regula falsi.
    let mut side = 0i8;
    for _ in 0..200 {
        let c = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
        let fc = phi(c, beta);
        if fc == 0.0 || (hi - lo) <= 1e-15 * hi {
            return Ok(());
        }
        if fc > 0.0 {
            lo = c;
            f_lo = fc;
            if side == 1 {
                f_hi /= 2.0;
            }
            side = 1;
        } else {
            hi = c;
            f_hi = fc;
            if side == -1 {
                f_lo /= 2.0;
            }
            side = -1;
        }
        if (hi - lo) <= 1e-14 * hi {
            break;
        }
    }
    phi(0.5 * (lo + hi), beta);
    Ok(())
}

/// Solves `(diag(a) + ρ d I − ρ 11ᵀ) β = a∘ȳ + b` with `a_l = s_l / denom`
/// by Sherman–Morrison.
fn linear_solve(stats: &GroupStats, b: &[f64], rho: f64, denom: f64, beta: &mut [f64]) {
    let d = stats.d() as f64;
    // 1 − ρ Σ 1/(a_l + ρd) written as Σ a_l / (d (a_l + ρd)) to avoid
    // cancellation when every a_l is small against ρd.
    let mut gap = 0.0;
    let mut sum_x = 0.0;
    for l in 0..stats.d() {
        let a = stats.sizes[l] / denom;
        let diag = a + rho * d;
        let x = (a * stats.means[l] + b[l]) / diag;
        beta[l] = x;
        gap += a / (d * diag);
        sum_x += x;
    }
    let coef = rho * sum_x / gap;
    for (b, &size) in beta.iter_mut().zip(&stats.sizes) {
        *b += coef / (size / denom + rho * d);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn t_and_transpose_are_adjoint() {
        let beta = [0.3, -1.0, 2.5, 0.7];
        let q = [1.0, -2.0, 0.5, 3.0, 0.25, -1.5];
        let mut tb = Vec::new();
        apply_t(&beta, &mut tb);
        assert_eq!(tb.len(), pair_count(4));
        assert_eq!(pair_count(4), 6);
        let mut ttq = vec![0.0; 4];
        apply_t_transpose(&q, 4, &mut ttq);
        let lhs: f64 = tb.iter().zip(&q).map(|(a, b)| a * b).sum();
        let rhs: f64 = beta.iter().zip(&ttq).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn sherman_morrison_matches_dense() {
        let stats = GroupStats {
            sizes: vec![3.0, 10.0, 1.0, 6.0],
            means: vec![0.5, -1.0, 2.0, 0.0],
            within_ss: 4.0,
            n0: 20.0,
        };
        let b = [0.1, -0.2, 0.3, 0.05];
        let (rho, denom) = (0.7, 3.3);
        let mut beta = vec![0.0; 4];
        linear_solve(&stats, &b, rho, denom, &mut beta);
        let d = 4;
        let mut m = DMatrix::from_element(d, d, -rho);
        let mut rhs = DVector::zeros(d);
        for l in 0..d {
            let a = stats.sizes[l] / denom;
            m[(l, l)] += a + rho * d as f64;
            rhs[l] = a * stats.means[l] + b[l];
        }
        let x = m.lu().solve(&rhs).unwrap();
        for l in 0..d {
            assert!((beta[l] - x[l]).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_update_is_stationary() {
        let stats = GroupStats {
            sizes: vec![5.0, 8.0, 2.0],
            means: vec![1.0, 3.0, -2.0],
            within_ss: 9.0,
            n0: 15.0,
        };
        let b = [0.2, -0.1, 0.4];
        let rho = 1.3;
        let mut beta = vec![0.0; 3];
        solve_beta(&stats, &b, rho, &mut beta).unwrap();
        let c = stats.rss(&beta).sqrt();
        let scale = (2.0 * stats.n0).sqrt() * c;
        let sum: f64 = beta.iter().sum();
        for l in 0..3 {
            let grad = stats.sizes[l] * (beta[l] - stats.means[l]) / scale
                + rho * (3.0 * beta[l] - sum)
                - b[l];
            assert!(grad.abs() < 1e-10, "l = {l}: {grad}");
        }
    }
}
