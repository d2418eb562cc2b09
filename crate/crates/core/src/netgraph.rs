//! Interference graphs, breadth-first depth profiles and exposure mappings.
//!
//! A node's exposure at neighborhood size `k` is summarised by counting, for
//! every depth `1..=k` of the BFS tree rooted at the node, how many nodes sit
//! at that depth and how many of them are treated. An [`ExposureMapping`]
//! turns each `(treated, total)` pair into one exact key entry, so keys for
//! smaller `k` are always prefixes of keys for larger `k`.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Undirected simple graph with per-node treatment, outcome and propensity.
///
/// The adjacency structure is shared, so swapping outcomes for a new Monte
/// Carlo replication does not copy the graph.
#[derive(Clone, Debug)]
pub struct InterferenceGraph {
    adjacency: Arc<Vec<Vec<usize>>>,
    z: Arc<Vec<bool>>,
    y: Vec<f64>,
    p: Vec<f64>,
    fingerprint: u64,
}

impl InterferenceGraph {
    /// Builds and validates a graph from an undirected edge list.
    pub fn new(
        n: usize,
        edges: &[(usize, usize)],
        z: Vec<bool>,
        y: Vec<f64>,
        p: Vec<f64>,
    ) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n {
                return Err(Error::NodeOutOfRange { node: u, n });
            }
            if v >= n {
                return Err(Error::NodeOutOfRange { node: v, n });
            }
            if u == v {
                return Err(Error::SelfLoop(u));
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for (u, nbrs) in adjacency.iter_mut().enumerate() {
            nbrs.sort_unstable();
            if let Some(w) = nbrs.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::DuplicateEdge(u.min(w[0]), u.max(w[0])));
            }
        }
        Self::from_sorted_adjacency(adjacency, z, y, p)
    }

    fn from_sorted_adjacency(
        adjacency: Vec<Vec<usize>>,
        z: Vec<bool>,
        y: Vec<f64>,
        p: Vec<f64>,
    ) -> Result<Self> {
        let n = adjacency.len();
        check_len("z", z.len(), n)?;
        check_len("y", y.len(), n)?;
        check_len("p", p.len(), n)?;
        validate_outcomes(&y)?;
        validate_propensities(&p)?;
        let mut hasher = DefaultHasher::new();
        adjacency.hash(&mut hasher);
        z.hash(&mut hasher);
        Ok(Self {
            adjacency: Arc::new(adjacency),
            z: Arc::new(z),
            y,
            p,
            fingerprint: hasher.finish(),
        })
    }

    /// Same graph and treatments, new outcomes.
    pub fn with_outcomes(&self, y: Vec<f64>) -> Result<Self> {
        check_len("y", y.len(), self.n())?;
        validate_outcomes(&y)?;
        Ok(Self {
            y,
            ..self.clone()
        })
    }

    /// Same graph and treatments, externally supplied propensities.
    pub fn with_propensities(&self, p: Vec<f64>) -> Result<Self> {
        check_len("p", p.len(), self.n())?;
        validate_propensities(&p)?;
        Ok(Self {
            p,
            ..self.clone()
        })
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, nbrs)| nbrs.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
    }

    pub fn treatments(&self) -> &[bool] {
        &self.z
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.z[i]
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.y
    }

    pub fn propensities(&self) -> &[f64] {
        &self.p
    }

    pub fn treated_count(&self) -> usize {
        self.z.iter().filter(|&&t| t).count()
    }

    /// Hash of the adjacency structure and treatments; equal for graphs whose
    /// exposure partitions must agree.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::LengthMismatch {
            what,
            got,
            expected,
        });
    }
    Ok(())
}

fn validate_outcomes(y: &[f64]) -> Result<()> {
    match y.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFiniteOutcome(i)),
        None => Ok(()),
    }
}

fn validate_propensities(p: &[f64]) -> Result<()> {
    for (node, &pi) in p.iter().enumerate() {
        if !(pi > 0.0 && pi < 1.0) {
            return Err(Error::Overlap { node, p: pi });
        }
    }
    Ok(())
}

/// Node and treated-node counts at one BFS depth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DepthCount {
    pub total: usize,
    pub treated: usize,
}

/// Per-depth counts around one ego node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DepthProfile {
    pub ego: usize,
    /// Eccentricity of the ego inside its connected component.
    pub max_depth: usize,
    /// Counts for depths `1..=min(k_cap, max_depth)`.
    pub per_depth_counts: Vec<DepthCount>,
}

impl DepthProfile {
    /// Counts at `depth` (1-based), with empty depths past the eccentricity.
    pub fn at(&self, depth: usize) -> DepthCount {
        debug_assert!(depth >= 1);
        self.per_depth_counts
            .get(depth - 1)
            .copied()
            .unwrap_or_default()
    }
}

/// BFS from `ego`, recording counts for depths up to `k_cap`.
pub fn bfs_depth_profile(g: &InterferenceGraph, ego: usize, k_cap: usize) -> DepthProfile {
    let mut seen = vec![false; g.n()];
    bfs_with_scratch(g, ego, k_cap, &mut seen, &mut VecDeque::new())
}

fn bfs_with_scratch(
    g: &InterferenceGraph,
    ego: usize,
    k_cap: usize,
    seen: &mut [bool],
    queue: &mut VecDeque<(usize, usize)>,
) -> DepthProfile {
    let mut counts: Vec<DepthCount> = Vec::new();
    let mut visited = vec![ego];
    let mut max_depth = 0;
    seen[ego] = true;
    queue.clear();
    queue.push_back((ego, 0));
    while let Some((u, d)) = queue.pop_front() {
        for &v in g.neighbors(u) {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            visited.push(v);
            let dv = d + 1;
            max_depth = max_depth.max(dv);
            if dv <= k_cap {
                if counts.len() < dv {
                    counts.push(DepthCount::default());
                }
                let c = &mut counts[dv - 1];
                c.total += 1;
                c.treated += usize::from(g.is_treated(v));
            }
            queue.push_back((v, dv));
        }
    }
    for v in visited {
        seen[v] = false;
    }
    DepthProfile {
        ego,
        max_depth,
        per_depth_counts: counts,
    }
}

/// Depth profiles of every node, computed in parallel.
pub fn all_depth_profiles(g: &InterferenceGraph, k_cap: usize) -> Vec<DepthProfile> {
    (0..g.n())
        .into_par_iter()
        .map_init(
            || (vec![false; g.n()], VecDeque::new()),
            |(seen, queue), ego| bfs_with_scratch(g, ego, k_cap, seen, queue),
        )
        .collect()
}

/// Exact non-negative rational, kept in lowest terms. `0/0` is stored as `0/1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Ratio {
    num: u64,
    den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Self {
        if num == 0 {
            return Self { num: 0, den: 1 };
        }
        assert!(den > 0, "ratio {num}/0 is undefined");
        let g = gcd(num, den);
        Self {
            num: num / g,
            den: den / g,
        }
    }

    pub fn numer(&self) -> u64 {
        self.num
    }

    pub fn denom(&self) -> u64 {
        self.den
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Ord for Ratio {
    fn cmp(&self, other: &Self) -> Ordering {
        (u128::from(self.num) * u128::from(other.den))
            .cmp(&(u128::from(other.num) * u128::from(self.den)))
    }
}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// One coordinate of a feature key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KeyEntry {
    Level(i64),
    Proportion(Ratio),
}

impl KeyEntry {
    pub fn as_f64(self) -> f64 {
        match self {
            KeyEntry::Level(v) => v as f64,
            KeyEntry::Proportion(r) => r.to_f64(),
        }
    }
}

impl fmt::Display for KeyEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyEntry::Level(v) => write!(f, "{v}"),
            KeyEntry::Proportion(r) => write!(f, "{r}"),
        }
    }
}

/// Canonical exposure feature of a node at one neighborhood size: exactly `k`
/// entries, compared componentwise.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct FeatureKey(pub Vec<KeyEntry>);

impl FeatureKey {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entries(&self) -> &[KeyEntry] {
        &self.0
    }

    pub fn prefix(&self, k: usize) -> FeatureKey {
        FeatureKey(self.0[..k].to_vec())
    }

    pub fn values(&self) -> Vec<f64> {
        self.0.iter().map(|e| e.as_f64()).collect()
    }
}

impl fmt::Display for FeatureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

impl Serialize for FeatureKey {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// Per-depth rule `(treated, total, depth) -> level` for custom mappings.
pub type DepthRule = dyn Fn(usize, usize, usize) -> i64 + Send + Sync;

/// Maps a node's labeled k-hop neighborhood to a discrete feature, one
/// coordinate per depth.
#[derive(Clone)]
pub enum ExposureMapping {
    /// `floor(treated / width)`.
    TreatedCountBucket { width: u32 },
    /// `floor((treated / total) / step)`, with `0/0 = 0`.
    TreatedProportionBucket { step: f64 },
    /// `ceil((treated / total) / step)`, with `0/0 = 0`.
    TreatedProportionCeil { step: f64 },
    /// The exact proportion `treated / total`, with `0/0 = 0`.
    RawTreatedProportion,
    Custom { name: String, rule: Arc<DepthRule> },
}

// Guards floor/ceil against representation error in `step` (0.05 is inexact).
const BUCKET_SLACK: f64 = 1e-9;

impl ExposureMapping {
    pub fn treated_count_bucket(width: u32) -> Result<Self> {
        if width < 1 {
            return Err(Error::InvalidParameter("bucket width must be >= 1".into()));
        }
        Ok(Self::TreatedCountBucket { width })
    }

    pub fn treated_proportion_bucket(step: f64) -> Result<Self> {
        check_step(step)?;
        Ok(Self::TreatedProportionBucket { step })
    }

    pub fn treated_proportion_ceil(step: f64) -> Result<Self> {
        check_step(step)?;
        Ok(Self::TreatedProportionCeil { step })
    }

    pub fn custom<F>(name: impl Into<String>, rule: F) -> Self
    where
        F: Fn(usize, usize, usize) -> i64 + Send + Sync + 'static,
    {
        Self::Custom {
            name: name.into(),
            rule: Arc::new(rule),
        }
    }

    /// Key entry for one depth.
    pub fn entry(&self, count: DepthCount, depth: usize) -> KeyEntry {
        let DepthCount { total, treated } = count;
        let proportion = || {
            if total == 0 {
                0.0
            } else {
                treated as f64 / total as f64
            }
        };
        match self {
            Self::TreatedCountBucket { width } => KeyEntry::Level((treated / *width as usize) as i64),
            Self::TreatedProportionBucket { step } => {
                KeyEntry::Level((proportion() / step + BUCKET_SLACK).floor() as i64)
            }
            Self::TreatedProportionCeil { step } => {
                KeyEntry::Level((proportion() / step - BUCKET_SLACK).ceil() as i64)
            }
            Self::RawTreatedProportion => {
                KeyEntry::Proportion(Ratio::new(treated as u64, total as u64))
            }
            Self::Custom { rule, .. } => KeyEntry::Level(rule(treated, total, depth)),
        }
    }

    /// Short label used in reports, e.g. `count:4`.
    pub fn label(&self) -> String {
        match self {
            Self::TreatedCountBucket { width } => format!("count:{width}"),
            Self::TreatedProportionBucket { step } => format!("prop:{step}"),
            Self::TreatedProportionCeil { step } => format!("prop-ceil:{step}"),
            Self::RawTreatedProportion => "raw-prop".to_string(),
            Self::Custom { name, .. } => format!("custom:{name}"),
        }
    }

    /// Parses the labels produced by [`ExposureMapping::label`] (custom excluded).
    pub fn parse(spec: &str) -> Result<Self> {
        let (kind, arg) = match spec.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a.trim())),
            None => (spec.trim(), None),
        };
        let bad = || Error::InvalidParameter(format!("cannot parse mapping '{spec}'"));
        match (kind, arg) {
            ("count", Some(a)) => Self::treated_count_bucket(a.parse().map_err(|_| bad())?),
            ("prop", Some(a)) => Self::treated_proportion_bucket(a.parse().map_err(|_| bad())?),
            ("prop-ceil", Some(a)) => Self::treated_proportion_ceil(a.parse().map_err(|_| bad())?),
            ("raw-prop", None) => Ok(Self::RawTreatedProportion),
            _ => Err(bad()),
        }
    }
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "proportion step {step} not in (0, 1]"
        )));
    }
    Ok(())
}

impl fmt::Debug for ExposureMapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl Serialize for ExposureMapping {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

/// Feature key of length `k`. Depths past the ego's eccentricity are padded
/// with the mapping applied to an empty depth.
///
/// `profile` must have been computed with `k_cap >= k` unless the ego's
/// eccentricity is below `k`.
pub fn feature_key(profile: &DepthProfile, mapping: &ExposureMapping, k: usize) -> FeatureKey {
    debug_assert!(
        k <= profile.per_depth_counts.len() || profile.per_depth_counts.len() == profile.max_depth,
        "profile truncated below requested k"
    );
    FeatureKey(
        (1..=k)
            .map(|d| mapping.entry(profile.at(d), d))
            .collect(),
    )
}

/// `sum_j T_j / 2^j`, the halving-weight interference function over
/// per-depth treated proportions.
pub fn example_interference_value(key: &FeatureKey) -> f64 {
    key.entries()
        .iter()
        .enumerate()
        .map(|(j, e)| e.as_f64() / 2f64.powi(j as i32 + 1))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(usize, usize)], treated: &[usize]) -> InterferenceGraph {
        let mut z = vec![false; n];
        for &t in treated {
            z[t] = true;
        }
        InterferenceGraph::new(n, edges, z, vec![0.0; n], vec![0.5; n]).unwrap()
    }

    #[test]
    fn path_profile() {
        let g = graph(3, &[(0, 1), (1, 2)], &[1]);
        let prof = bfs_depth_profile(&g, 0, 2);
        assert_eq!(
            prof.per_depth_counts,
            vec![
                DepthCount { total: 1, treated: 1 },
                DepthCount { total: 1, treated: 0 }
            ]
        );
        assert_eq!(prof.max_depth, 2);
    }

    #[test]
    fn zero_cap_is_empty() {
        let g = graph(3, &[(0, 1), (1, 2)], &[1]);
        assert!(bfs_depth_profile(&g, 1, 0).per_depth_counts.is_empty());
    }

    #[test]
    fn star_saturates_at_depth_one() {
        let g = graph(5, &[(0, 1), (0, 2), (0, 3), (0, 4)], &[1, 2]);
        let prof = bfs_depth_profile(&g, 0, 3);
        assert_eq!(prof.per_depth_counts, vec![DepthCount { total: 4, treated: 2 }]);
        assert_eq!(prof.max_depth, 1);
    }

    #[test]
    fn rejects_bad_graphs() {
        let ok = |e: &[(usize, usize)]| {
            InterferenceGraph::new(3, e, vec![false; 3], vec![0.0; 3], vec![0.5; 3])
        };
        assert_eq!(ok(&[(0, 0)]).unwrap_err(), Error::SelfLoop(0));
        assert_eq!(ok(&[(0, 1), (1, 0)]).unwrap_err(), Error::DuplicateEdge(0, 1));
        assert!(matches!(ok(&[(0, 3)]), Err(Error::NodeOutOfRange { .. })));
        let p1 = InterferenceGraph::new(2, &[], vec![false; 2], vec![0.0; 2], vec![0.5, 1.0]);
        assert!(matches!(p1, Err(Error::Overlap { node: 1, .. })));
    }

    fn profile(counts: &[(usize, usize)]) -> DepthProfile {
        DepthProfile {
            ego: 0,
            max_depth: counts.len(),
            per_depth_counts: counts
                .iter()
                .map(|&(total, treated)| DepthCount { total, treated })
                .collect(),
        }
    }

    #[test]
    fn raw_proportion_keys() {
        let node1 = profile(&[(3, 1), (3, 2)]);
        let key = feature_key(&node1, &ExposureMapping::RawTreatedProportion, 3);
        assert_eq!(key.to_string(), "(1/3, 2/3, 0)");
        let node2 = profile(&[(1, 0), (2, 1), (2, 1)]);
        let key2 = feature_key(&node2, &ExposureMapping::RawTreatedProportion, 3);
        assert_eq!(key2.to_string(), "(0, 1/2, 1/2)");
        assert!((example_interference_value(&key) - 1.0 / 3.0).abs() < 1e-15);
        assert!((example_interference_value(&key2) - 3.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn zero_k_key_is_empty() {
        let p = profile(&[(3, 1)]);
        assert!(feature_key(&p, &ExposureMapping::RawTreatedProportion, 0).is_empty());
        assert_eq!(example_interference_value(&FeatureKey::default()), 0.0);
    }

    #[test]
    fn count_bucket_keys() {
        let p = profile(&[(10, 5), (30, 9)]);
        let m = ExposureMapping::treated_count_bucket(4).unwrap();
        assert_eq!(
            feature_key(&p, &m, 2).entries(),
            &[KeyEntry::Level(1), KeyEntry::Level(2)]
        );
    }

    #[test]
    fn proportion_bucket_is_exact_at_boundaries() {
        // 3/20 = 0.15 sits exactly on a bucket edge of width 0.05.
        let m = ExposureMapping::treated_proportion_bucket(0.05).unwrap();
        assert_eq!(m.entry(DepthCount { total: 20, treated: 3 }, 1), KeyEntry::Level(3));
        let c = ExposureMapping::treated_proportion_ceil(0.05).unwrap();
        assert_eq!(c.entry(DepthCount { total: 20, treated: 3 }, 1), KeyEntry::Level(3));
        assert_eq!(c.entry(DepthCount { total: 0, treated: 0 }, 1), KeyEntry::Level(0));
    }

    #[test]
    fn ratio_ordering_is_numeric() {
        assert!(Ratio::new(1, 3) < Ratio::new(1, 2));
        assert_eq!(Ratio::new(2, 4), Ratio::new(1, 2));
        assert_eq!(Ratio::new(0, 0), Ratio::new(0, 7));
    }

    #[test]
    fn mapping_labels_round_trip() {
        for spec in ["count:4", "prop:0.05", "prop-ceil:0.05", "raw-prop"] {
            assert_eq!(ExposureMapping::parse(spec).unwrap().label(), spec);
        }
        assert!(ExposureMapping::parse("count:0").is_err());
        assert!(ExposureMapping::parse("prop:1.5").is_err());
    }
}
