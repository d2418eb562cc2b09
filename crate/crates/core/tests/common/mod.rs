//! Shared fixtures and dense reference computations for the integration tests.
#![allow(dead_code)]

use hnci::netgraph::{FeatureKey, InterferenceGraph};
use hnci::partition::GroupPartition;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

/// Erdős–Rényi graph with Bernoulli(p_i) treatment and outcomes that depend
/// on the treated neighbor count. `constant_p` fixes every propensity to one
/// random value.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, edge_p: f64, constant_p: bool) -> InterferenceGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < edge_p {
                edges.push((i, j));
            }
        }
    }
    let p: Vec<f64> = if constant_p {
        vec![rng.random_range(0.1..0.6); n]
    } else {
        (0..n).map(|_| rng.random_range(0.1..0.6)).collect()
    };
    let z: Vec<bool> = p.iter().map(|&pi| rng.random::<f64>() < pi).collect();
    let mut tn = vec![0usize; n];
    for &(u, v) in &edges {
        tn[u] += z[v] as usize;
        tn[v] += z[u] as usize;
    }
    let noise = Normal::new(0.0, 0.5).unwrap();
    let y = (0..n)
        .map(|i| if z[i] { 0.7 } else { 0.0 } + 0.4 * tn[i] as f64 + noise.sample(rng))
        .collect();
    InterferenceGraph::new(n, &edges, z, y, p).unwrap()
}

pub fn quantile(alpha: f64) -> f64 {
    StdNormal::new(0.0, 1.0).unwrap().inverse_cdf(1.0 - alpha / 2.0)
}

/// Row-by-block indicator matrix.
pub fn indicator(block_of_row: &[usize], m: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(block_of_row.len(), m);
    for (r, &b) in block_of_row.iter().enumerate() {
        x[(r, b)] = 1.0;
    }
    x
}

/// OR or DR estimate and interval width from the dense least-squares fit of
/// the untreated outcomes on block indicators.
pub fn dense_block_ci(
    g: &InterferenceGraph,
    part: &GroupPartition,
    block_of_group: &[usize],
    m: usize,
    dr: bool,
    alpha: f64,
) -> (f64, f64) {
    let n0 = part.n0();
    let rows: Vec<usize> = part.row_group.iter().map(|&l| block_of_group[l]).collect();
    let x = indicator(&rows, m);
    let y = DVector::from_iterator(n0, part.untreated.iter().map(|&i| g.outcomes()[i]));
    let xtx = x.transpose() * &x;
    let xtx_inv = xtx.clone().try_inverse().unwrap();
    let beta = &xtx_inv * x.transpose() * &y;
    let resid = &y - &x * &beta;
    let sigma2 = resid.norm_squared() / (n0 - m) as f64;

    let n1 = part.treated_match.len() as f64;
    let mut c = DVector::zeros(m);
    let mut tau = 0.0;
    for (&i, &l) in &part.treated_match {
        let b = block_of_group[l];
        c[b] += 1.0;
        tau += g.outcomes()[i] - beta[b];
    }
    let mut prop = 0.0;
    if dr {
        for (r, &i) in part.untreated.iter().enumerate() {
            let p = g.propensities()[i];
            let o = p / (1.0 - p);
            c[rows[r]] -= o;
            tau -= o * resid[r];
            prop += o * o;
        }
    }
    let c = c / n1;
    let total = 1.0 / n1 + (c.transpose() * &xtx_inv * &c)[(0, 0)] + prop / (n1 * n1);
    (tau / n1, 2.0 * quantile(alpha) * (sigma2 * total).sqrt())
}

/// Coefficient on `z` and interval width from the dense regression of `y`
/// on `[z, group indicators]` over all nodes. `None` if the design is singular.
pub fn dense_pooled(g: &InterferenceGraph, keys: &[FeatureKey], alpha: f64) -> Option<(f64, f64)> {
    let mut distinct: Vec<&FeatureKey> = keys.iter().collect();
    distinct.sort();
    distinct.dedup();
    let d = distinct.len();
    let n = g.n();
    let mut x = DMatrix::zeros(n, d + 1);
    for i in 0..n {
        x[(i, 0)] = g.is_treated(i) as u8 as f64;
        let l = distinct.binary_search(&&keys[i]).unwrap();
        x[(i, l + 1)] = 1.0;
    }
    let y = DVector::from_column_slice(g.outcomes());
    let xtx_inv = (x.transpose() * &x).try_inverse()?;
    let beta = &xtx_inv * x.transpose() * &y;
    let rss = (&y - &x * &beta).norm_squared();
    let sigma2 = rss / (n - d - 1) as f64;
    let se = (sigma2 * xtx_inv[(0, 0)]).sqrt();
    Some((beta[0], 2.0 * quantile(alpha) * se))
}

/// Hat matrix of the group-indicator design.
pub fn hat_matrix(part: &GroupPartition) -> DMatrix<f64> {
    let x = indicator(&part.row_group, part.d());
    let inv = (x.transpose() * &x).try_inverse().unwrap();
    &x * inv * x.transpose()
}

/// All set partitions of `0..d`, as block labels in restricted-growth form.
pub fn set_partitions(d: usize) -> Vec<Vec<usize>> {
    fn rec(i: usize, d: usize, cur: &mut Vec<usize>, max: usize, out: &mut Vec<Vec<usize>>) {
        if i == d {
            out.push(cur.clone());
            return;
        }
        for b in 0..=max + 1 {
            if i == 0 && b > 0 {
                break;
            }
            cur.push(b);
            rec(i + 1, d, cur, if i == 0 { 0 } else { max.max(b) }, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if d > 0 {
        rec(0, d, &mut Vec::new(), 0, &mut out);
    }
    out
}

/// Canonical form of a grouping: blocks sorted internally and by first member.
pub fn canonical(mut blocks: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    for b in &mut blocks {
        b.sort_unstable();
    }
    blocks.sort();
    blocks
}

pub fn blocks_from_labels(labels: &[usize]) -> Vec<Vec<usize>> {
    let m = labels.iter().max().map_or(0, |&x| x + 1);
    let mut blocks = vec![Vec::new(); m];
    for (l, &b) in labels.iter().enumerate() {
        blocks[b].push(l);
    }
    canonical(blocks)
}

/// Penalized square-root objective written out directly.
pub fn objective(beta: &[f64], y: &[f64], row_group: &[usize], l1: f64, l2: f64) -> f64 {
    let rss: f64 = y.iter().zip(row_group).map(|(v, &l)| (v - beta[l]).powi(2)).sum();
    let mut pen = 0.0;
    for i in 0..beta.len() {
        for j in i + 1..beta.len() {
            pen += (beta[i] - beta[j]).abs().min(l2);
        }
    }
    (rss / (2.0 * y.len() as f64)).sqrt() + l1 * pen
}

/// Grouping with the smallest objective among all set partitions, each
/// evaluated at its block means.
pub fn exhaustive_grouping(y: &[f64], row_group: &[usize], d: usize, l1: f64, l2: f64) -> Vec<Vec<usize>> {
    let mut best = (f64::INFINITY, Vec::new());
    for labels in set_partitions(d) {
        let m = labels.iter().max().unwrap() + 1;
        let mut sum = vec![0.0; m];
        let mut cnt = vec![0usize; m];
        for (v, &l) in y.iter().zip(row_group) {
            sum[labels[l]] += v;
            cnt[labels[l]] += 1;
        }
        let beta: Vec<f64> = (0..d).map(|l| sum[labels[l]] / cnt[labels[l]] as f64).collect();
        let obj = objective(&beta, y, row_group, l1, l2);
        if obj < best.0 {
            best = (obj, labels);
        }
    }
    blocks_from_labels(&best.1)
}
