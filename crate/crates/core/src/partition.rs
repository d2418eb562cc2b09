//! Exposure-group partitions of the untreated nodes and treated-node matching.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::netgraph::{
    all_depth_profiles, feature_key, DepthProfile, ExposureMapping, FeatureKey, InterferenceGraph,
    KeyEntry,
};

/// Untreated nodes sharing one feature key.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExposureGroup {
    pub key: FeatureKey,
    /// Untreated node ids, ascending.
    pub members: Vec<usize>,
    /// Treated nodes matched to this group.
    pub treated_count: usize,
}

impl ExposureGroup {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Number of nodes, treated or not, carrying this key.
    pub fn all_member_count(&self) -> usize {
        self.members.len() + self.treated_count
    }
}

/// Partition of the untreated nodes at one neighborhood size `k`.
///
/// Groups are ordered lexicographically by key, which fixes the column order
/// of the implicit indicator design. The design is never materialised: its
/// Gram matrix is `diag(group sizes)`.
#[derive(Clone, Debug, Serialize)]
pub struct GroupPartition {
    pub k: usize,
    pub groups: Vec<ExposureGroup>,
    /// Untreated node ids in ascending order; row `r` of `y_obs` is node `untreated[r]`.
    pub untreated: Vec<usize>,
    /// Group index of each untreated row.
    pub row_group: Vec<usize>,
    /// Treated node id -> group index, for matched treated nodes.
    pub treated_match: BTreeMap<usize, usize>,
    /// Treated nodes whose key has no untreated counterpart.
    pub violations: Vec<usize>,
    #[serde(skip)]
    fingerprint: u64,
    #[serde(skip)]
    mapping_label: String,
}

impl GroupPartition {
    /// Number of groups `d(k)`.
    pub fn d(&self) -> usize {
        self.groups.len()
    }

    pub fn n0(&self) -> usize {
        self.untreated.len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(ExposureGroup::size).collect()
    }

    /// Outcomes of the untreated nodes, in row order.
    pub fn untreated_outcomes(&self, g: &InterferenceGraph) -> Vec<f64> {
        let y = g.outcomes();
        self.untreated.iter().map(|&i| y[i]).collect()
    }

    pub fn is_balanced(&self) -> bool {
        self.violations.is_empty()
    }

    /// Fails with [`Error::UnmatchedTreated`] when some treated node is unmatched.
    pub fn require_balanced(&self) -> Result<()> {
        match self.violations.first() {
            None => Ok(()),
            Some(&first) => Err(Error::UnmatchedTreated {
                count: self.violations.len(),
                first,
            }),
        }
    }

    /// Copy with the unmatched treated nodes dropped from the estimand.
    ///
    /// The target becomes the average effect over matched treated nodes only.
    pub fn trim_unmatched(&self) -> (GroupPartition, Vec<usize>) {
        let mut out = self.clone();
        let dropped = std::mem::take(&mut out.violations);
        (out, dropped)
    }

    pub fn mapping_label(&self) -> &str {
        &self.mapping_label
    }

    /// Fails with [`Error::MismatchedInputs`] if this partition was built on another graph.
    pub fn check_graph(&self, g: &InterferenceGraph) -> Result<()> {
        if self.fingerprint == g.fingerprint() {
            Ok(())
        } else {
            Err(Error::MismatchedInputs)
        }
    }

    pub(crate) fn same_source(&self, other: &GroupPartition) -> bool {
        self.fingerprint == other.fingerprint
            && self.mapping_label == other.mapping_label
            && self.untreated == other.untreated
    }
}

/// Partition at neighborhood size `k`. Runs one BFS per node.
pub fn build_partition(
    g: &InterferenceGraph,
    mapping: &ExposureMapping,
    k: usize,
) -> Result<GroupPartition> {
    let profiles = all_depth_profiles(g, k);
    partition_from_profiles(g, &profiles, mapping, k)
}

/// Partitions for every `k` in `0..=k_max`, sharing one BFS pass.
pub fn build_partitions(
    g: &InterferenceGraph,
    mapping: &ExposureMapping,
    k_max: usize,
) -> Result<Vec<GroupPartition>> {
    let profiles = all_depth_profiles(g, k_max);
    (0..=k_max)
        .map(|k| partition_from_profiles(g, &profiles, mapping, k))
        .collect()
}

/// Partition at `k` from precomputed profiles (computed with `k_cap >= k`).
pub fn partition_from_profiles(
    g: &InterferenceGraph,
    profiles: &[DepthProfile],
    mapping: &ExposureMapping,
    k: usize,
) -> Result<GroupPartition> {
    let keys: Vec<FeatureKey> = profiles
        .iter()
        .map(|prof| feature_key(prof, mapping, k))
        .collect();
    partition_from_keys(g, &keys, k, mapping.label())
}

/// Partition of untreated rows from integer labels, with no graph behind it.
/// Group `l` holds the rows labelled with the `l`-th smallest label. Useful
/// for driving the regression solvers on externally grouped data.
pub fn partition_from_labels(labels: &[i64]) -> Result<GroupPartition> {
    if labels.is_empty() {
        return Err(Error::AllTreated);
    }
    let mut by_label: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (r, &lab) in labels.iter().enumerate() {
        by_label.entry(lab).or_default().push(r);
    }
    let mut row_group = vec![0; labels.len()];
    let groups = by_label
        .into_iter()
        .enumerate()
        .map(|(l, (lab, members))| {
            for &r in &members {
                row_group[r] = l;
            }
            ExposureGroup {
                key: FeatureKey(vec![KeyEntry::Level(lab)]),
                members,
                treated_count: 0,
            }
        })
        .collect();
    Ok(GroupPartition {
        k: 0,
        groups,
        untreated: (0..labels.len()).collect(),
        row_group,
        treated_match: BTreeMap::new(),
        violations: vec![],
        fingerprint: 0,
        mapping_label: "labels".into(),
    })
}

/// Partition from one feature key per node.
pub fn partition_from_keys(
    g: &InterferenceGraph,
    keys: &[FeatureKey],
    k: usize,
    mapping_label: String,
) -> Result<GroupPartition> {
    assert_eq!(keys.len(), g.n(), "one key per node");
    let mut by_key: BTreeMap<&FeatureKey, Vec<usize>> = BTreeMap::new();
    let mut untreated = Vec::new();
    for (i, key) in keys.iter().enumerate() {
        if !g.is_treated(i) {
            by_key.entry(key).or_default().push(i);
            untreated.push(i);
        }
    }
    if untreated.is_empty() {
        return Err(Error::AllTreated);
    }
    let index: BTreeMap<&FeatureKey, usize> = by_key
        .keys()
        .enumerate()
        .map(|(l, &key)| (key, l))
        .collect();
    let mut groups: Vec<ExposureGroup> = by_key
        .into_iter()
        .map(|(key, members)| ExposureGroup {
            key: key.clone(),
            members,
            treated_count: 0,
        })
        .collect();

    let mut treated_match = BTreeMap::new();
    let mut violations = Vec::new();
    for (i, key) in keys.iter().enumerate() {
        if g.is_treated(i) {
            match index.get(key) {
                Some(&l) => {
                    groups[l].treated_count += 1;
                    treated_match.insert(i, l);
                }
                None => violations.push(i),
            }
        }
    }

    let mut row_group = vec![0; untreated.len()];
    let mut row_of = vec![usize::MAX; g.n()];
    for (r, &i) in untreated.iter().enumerate() {
        row_of[i] = r;
    }
    for (l, grp) in groups.iter().enumerate() {
        for &i in &grp.members {
            row_group[row_of[i]] = l;
        }
    }

    Ok(GroupPartition {
        k,
        groups,
        untreated,
        row_group,
        treated_match,
        violations,
        fingerprint: g.fingerprint(),
        mapping_label,
    })
}

/// True iff every group of `fine` lies inside a single group of `coarse`.
pub fn refinement_check(coarse: &GroupPartition, fine: &GroupPartition) -> Result<bool> {
    if !coarse.same_source(fine) {
        return Err(Error::MismatchedInputs);
    }
    let mut coarse_of = BTreeMap::new();
    for (l, grp) in coarse.groups.iter().enumerate() {
        for &i in &grp.members {
            coarse_of.insert(i, l);
        }
    }
    Ok(fine.groups.iter().all(|grp| {
        let mut owners = grp.members.iter().map(|i| coarse_of.get(i));
        let first = owners.next().flatten();
        first.is_some() && owners.all(|o| o == first)
    }))
}

/// `kappa * d(k)^{3/2}` with `kappa = max_l 1/|S_l|`. Large values mean the
/// asymptotic normal approximation for the OLS-based intervals is strained.
pub fn kappa_diagnostic(p: &GroupPartition) -> f64 {
    let smallest = p.groups.iter().map(ExposureGroup::size).min().unwrap_or(1);
    (p.d() as f64).powf(1.5) / smallest as f64
}

/// Default threshold above which [`kappa_diagnostic`] is reported as a warning.
pub const KAPPA_WARN_THRESHOLD: f64 = 1.0;
