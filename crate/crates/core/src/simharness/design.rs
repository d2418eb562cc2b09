use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::netgraph::{all_depth_profiles, feature_key, DepthProfile, ExposureMapping, InterferenceGraph};

/// Edge-probability function of latent positions `ξ ~ U[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Graphon {
    ErdosRenyi { p: f64 },
    /// Six equal blocks; within block `ℓ` the edge probability is `ℓ/40`,
    /// across blocks `0.3/40`.
    SixBlock,
}

impl Graphon {
    pub fn prob(&self, xi: f64, xj: f64) -> f64 {
        match *self {
            Graphon::ErdosRenyi { p } => p,
            Graphon::SixBlock => {
                let bi = block_of(xi);
                if bi == block_of(xj) {
                    bi as f64 / 40.0
                } else {
                    0.3 / 40.0
                }
            }
        }
    }
}

fn block_of(xi: f64) -> usize {
    ((xi * 6.0).ceil() as usize).clamp(1, 6)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Law {
    Constant { value: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Law {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Law::Constant { value } => value,
            Law::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match *self {
            Law::Constant { value } => (value, value),
            Law::Uniform { lo, hi } => (lo, hi),
        }
    }
}

/// Interference function of the true `k₀`-hop exposure.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InterferenceFn {
    Zero,
    /// `Σ_l c_l T_l / max_i T_{i,l}` over depths `l = 1..=coefs.len()`, with
    /// `T` the design mapping's per-depth entries.
    NormalizedLinear { coefs: Vec<f64> },
    /// `Σ_{l=1..3} 2^{-l} ⌈p_l / 0.05⌉ / max_i p_{i,l}` with `p_l` the treated
    /// proportion at depth `l`.
    StaircaseK3,
    /// `Σ_j T_j / 2^j` over raw treated proportions at depths `1..=k₀`.
    HalvingProportions,
}

impl InterferenceFn {
    /// Depth the function reads.
    pub fn depth(&self, k0: usize) -> usize {
        match self {
            InterferenceFn::Zero => 0,
            InterferenceFn::NormalizedLinear { coefs } => coefs.len(),
            InterferenceFn::StaircaseK3 => 3,
            InterferenceFn::HalvingProportions => k0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SimDesign {
    pub name: String,
    pub n: usize,
    pub graphon: Graphon,
    pub propensity: Law,
    pub tau: Law,
    /// Mapping used both to define the truth and by the analyst.
    pub mapping: ExposureMapping,
    pub k0: usize,
    pub interference: InterferenceFn,
    pub noise_sd: f64,
    /// Outer repetitions: graph, treatment and effects redrawn.
    pub outer_reps: usize,
    /// Inner replications: only the noise redrawn.
    pub inner_reps: usize,
    pub seed: u64,
}

impl SimDesign {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(format!("design {}: {m}", self.name)));
        if self.n < 2 {
            return bad("n must be >= 2".into());
        }
        if let Graphon::ErdosRenyi { p } = self.graphon {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("edge probability {p} not in [0, 1]"));
            }
        }
        let (lo, hi) = self.propensity.bounds();
        if !(lo > 0.0 && hi < 1.0 && lo <= hi) {
            return bad(format!("propensities must lie in (0, 1), got [{lo}, {hi}]"));
        }
        let (lo, hi) = self.tau.bounds();
        if lo > hi {
            return bad("tau law has lo > hi".into());
        }
        if !(self.noise_sd >= 0.0) {
            return bad("noise_sd must be >= 0".into());
        }
        if self.outer_reps == 0 || self.inner_reps == 0 {
            return bad("repetition counts must be >= 1".into());
        }
        if self.interference.depth(self.k0) > self.k0 {
            return bad("interference function reads beyond k0".into());
        }
        Ok(())
    }
}

/// Draws latent positions, edges, propensities and treatments. Outcomes are zero.
pub fn generate_graph<R: Rng + ?Sized>(design: &SimDesign, rng: &mut R) -> Result<InterferenceGraph> {
    let n = design.n;
    let xi: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = design.graphon.prob(xi[i], xi[j]);
            if p > 0.0 && rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let p: Vec<f64> = (0..n).map(|_| design.propensity.sample(rng)).collect();
    let z: Vec<bool> = p.iter().map(|&pi| rng.random::<f64>() < pi).collect();
    InterferenceGraph::new(n, &edges, z, vec![0.0; n], p)
}

/// True interference values `f_i` for every node, normalizers taken over the
/// realised network. A depth whose maximum is zero contributes nothing.
pub fn interference_values(g: &InterferenceGraph, design: &SimDesign) -> Vec<f64> {
    let depth = design.interference.depth(design.k0);
    if depth == 0 {
        return vec![0.0; g.n()];
    }
    let profiles = all_depth_profiles(g, depth);
    interference_from_profiles(&profiles, design)
}

pub(crate) fn interference_from_profiles(profiles: &[DepthProfile], design: &SimDesign) -> Vec<f64> {
    let n = profiles.len();
    let proportion = |prof: &DepthProfile, l: usize| {
        let c = prof.at(l);
        if c.total == 0 {
            0.0
        } else {
            c.treated as f64 / c.total as f64
        }
    };
    match &design.interference {
        InterferenceFn::Zero => vec![0.0; n],
        InterferenceFn::NormalizedLinear { coefs } => {
            let t: Vec<Vec<f64>> = profiles
                .iter()
                .map(|prof| feature_key(prof, &design.mapping, coefs.len()).values())
                .collect();
            let mut f = vec![0.0; n];
            for (l, &c) in coefs.iter().enumerate() {
                let max = t.iter().map(|v| v[l]).fold(f64::NEG_INFINITY, f64::max);
                if max <= 0.0 {
                    log::info!("interference: depth {} has zero maximum; term dropped", l + 1);
                    continue;
                }
                for i in 0..n {
                    f[i] += c * t[i][l] / max;
                }
            }
            f
        }
        InterferenceFn::StaircaseK3 => {
            let mut f = vec![0.0; n];
            for l in 1..=3 {
                let p: Vec<f64> = profiles.iter().map(|prof| proportion(prof, l)).collect();
                let max = p.iter().copied().fold(0.0, f64::max);
                if max <= 0.0 {
                    log::info!("interference: depth {l} has zero maximum; term dropped");
                    continue;
                }
                let w = 0.5f64.powi(l as i32);
                for i in 0..n {
                    let stair = (p[i] / 0.05 - 1e-9).ceil().max(0.0);
                    f[i] += w * stair / max;
                }
            }
            f
        }
        InterferenceFn::HalvingProportions => profiles
            .iter()
            .map(|prof| {
                (1..=design.k0)
                    .map(|l| proportion(prof, l) * 0.5f64.powi(l as i32))
                    .sum()
            })
            .collect(),
    }
}

/// `y_i = z_i τ_i + f_i + ε_i`. Returns the graph with outcomes attached and
/// the ADET `Σ z_i τ_i / Σ z_i`.
pub fn generate_outcomes<R: Rng + ?Sized>(
    g: &InterferenceGraph,
    tau_i: &[f64],
    f: &[f64],
    noise_sd: f64,
    rng: &mut R,
) -> Result<(InterferenceGraph, f64)> {
    let z = g.treatments();
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let y: Vec<f64> = (0..g.n())
        .map(|i| if z[i] { tau_i[i] } else { 0.0 } + f[i] + noise.sample(rng))
        .collect();
    Ok((g.with_outcomes(y)?, true_adet(z, tau_i)))
}

pub fn true_adet(z: &[bool], tau_i: &[f64]) -> f64 {
    let (s, c) = z
        .iter()
        .zip(tau_i)
        .filter(|(&zi, _)| zi)
        .fold((0.0, 0usize), |(s, c), (_, &t)| (s + t, c + 1));
    if c == 0 {
        f64::NAN
    } else {
        s / c as f64
    }
}

/// Desk-scale presets. `outer_reps` and `inner_reps` are the defaults used by
/// the shipped studies and can be overridden.
pub mod presets {
    use super::*;

    /// Homogeneous effect, ER(0.005), staircase interference with `k₀ = 3`.
    /// Every replication draws a fresh graph and treatment vector.
    pub fn staircase() -> SimDesign {
        SimDesign {
            name: "staircase".into(),
            n: 1000,
            graphon: Graphon::ErdosRenyi { p: 0.005 },
            propensity: Law::Constant { value: 0.2 },
            tau: Law::Constant { value: 0.6 },
            mapping: ExposureMapping::TreatedProportionCeil { step: 0.05 },
            k0: 3,
            interference: InterferenceFn::StaircaseK3,
            noise_sd: 0.2,
            outer_reps: 300,
            inner_reps: 1,
            seed: 20240101,
        }
    }

    /// Settings 1 to 4: graphon ER(0.02) or six-block, mapping count/4 or
    /// proportion/0.05, `k₀ = 2`, `f = 5 T₁/max + 2.5 T₂/max`.
    pub fn setting(which: u8) -> Result<SimDesign> {
        let (graphon, mapping) = match which {
            1 => (Graphon::ErdosRenyi { p: 0.02 }, ExposureMapping::TreatedCountBucket { width: 4 }),
            2 => (Graphon::ErdosRenyi { p: 0.02 }, ExposureMapping::TreatedProportionBucket { step: 0.05 }),
            3 => (Graphon::SixBlock, ExposureMapping::TreatedCountBucket { width: 4 }),
            4 => (Graphon::SixBlock, ExposureMapping::TreatedProportionBucket { step: 0.05 }),
            _ => return Err(Error::InvalidParameter(format!("no setting {which}; expected 1-4"))),
        };
        Ok(SimDesign {
            name: format!("setting{which}"),
            n: 1000,
            graphon,
            propensity: Law::Uniform { lo: 0.03, hi: 0.06 },
            tau: Law::Uniform { lo: 0.6, hi: 0.8 },
            mapping,
            k0: 2,
            interference: InterferenceFn::NormalizedLinear { coefs: vec![5.0, 2.5] },
            noise_sd: 0.5,
            outer_reps: 20,
            inner_reps: 200,
            seed: 20240200 + which as u64,
        })
    }

    /// Setting `which` with the neighborhood-size study's interference for `k0 ∈ {0, 1, 2}`.
    pub fn k0_study(which: u8, k0: usize) -> Result<SimDesign> {
        let mut d = setting(which)?;
        d.interference = match k0 {
            0 => InterferenceFn::Zero,
            1 => InterferenceFn::NormalizedLinear { coefs: vec![1.5] },
            2 => InterferenceFn::NormalizedLinear { coefs: vec![10.0, 1.2] },
            _ => return Err(Error::InvalidParameter(format!("k0 study defined for k0 in 0..=2, got {k0}"))),
        };
        d.k0 = k0;
        d.name = format!("k0-setting{which}-k{k0}");
        d.outer_reps = 100;
        d.inner_reps = 1;
        d.seed = 20240300 + 10 * which as u64 + k0 as u64;
        Ok(d)
    }

    pub fn by_name(name: &str) -> Result<SimDesign> {
        match name {
            "staircase" => Ok(staircase()),
            "setting1" => setting(1),
            "setting2" => setting(2),
            "setting3" => setting(3),
            "setting4" => setting(4),
            _ => {
                if let Some(rest) = name.strip_prefix("k0-setting") {
                    let mut parts = rest.splitn(2, "-k");
                    let s = parts.next().and_then(|v| v.parse().ok());
                    let k = parts.next().and_then(|v| v.parse().ok());
                    if let (Some(s), Some(k)) = (s, k) {
                        return k0_study(s, k);
                    }
                }
                Err(Error::InvalidParameter(format!(
                    "unknown preset {name:?}; expected staircase, setting1-4 or k0-setting<S>-k<K>"
                )))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn er(n: usize, p: f64) -> SimDesign {
        let mut d = presets::setting(1).unwrap();
        d.n = n;
        d.graphon = Graphon::ErdosRenyi { p };
        d
    }

    #[test]
    fn er_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = generate_graph(&er(5, 1.0), &mut rng).unwrap();
        assert_eq!(g.edge_count(), 10);
        let g = generate_graph(&er(5, 0.0), &mut rng).unwrap();
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn six_block_probabilities() {
        let g = Graphon::SixBlock;
        assert!((g.prob(0.05, 0.1) - 1.0 / 40.0).abs() < 1e-15);
        assert!((g.prob(0.95, 0.99) - 6.0 / 40.0).abs() < 1e-15);
        assert!((g.prob(0.05, 0.95) - 0.3 / 40.0).abs() < 1e-15);
    }

    #[test]
    fn noiseless_outcomes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut d = er(30, 0.1);
        d.k0 = 0;
        d.interference = InterferenceFn::Zero;
        d.tau = Law::Constant { value: 0.6 };
        d.propensity = Law::Constant { value: 0.5 };
        let g = generate_graph(&d, &mut rng).unwrap();
        let f = interference_values(&g, &d);
        let tau = vec![0.6; 30];
        let (g2, adet) = generate_outcomes(&g, &tau, &f, 0.0, &mut rng).unwrap();
        for i in 0..30 {
            assert_eq!(g2.outcomes()[i], if g.is_treated(i) { 0.6 } else { 0.0 });
        }
        assert!((adet - 0.6).abs() < 1e-15);
    }

    #[test]
    fn adet_is_treated_mean() {
        let z = [true, false, true, true];
        let t = [0.6, 5.0, 0.7, 0.8];
        assert!((true_adet(&z, &t) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn preset_names() {
        assert_eq!(presets::by_name("k0-setting1-k2").unwrap().k0, 2);
        assert!(presets::by_name("setting9").is_err());
        for name in ["staircase", "setting1", "setting2", "setting3", "setting4"] {
            presets::by_name(name).unwrap().validate().unwrap();
        }
    }
}
