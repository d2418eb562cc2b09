use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::design::{generate_graph, generate_outcomes, interference_from_profiles, SimDesign};
use crate::error::{Error, Result};
use crate::estimators::{adet_ols, ols_fit, pooled_adet_ci_from_keys, AdetReport, Estimator, DEFAULT_PROPENSITY_EPS};
use crate::k0infer::{infer_k0, CandidateMode, K0Config, Ladder};
use crate::netgraph::{all_depth_profiles, feature_key, DepthProfile, FeatureKey, InterferenceGraph};
use crate::partition::{partition_from_profiles, GroupPartition};
use crate::seeding::substream;
use crate::sfl::{adet_sfl, dc_solve, SflConfig};

const TAG_GRAPH: u64 = 11;
const TAG_NOISE: u64 = 12;
const TAG_K0: u64 = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum StudyMethod {
    #[serde(rename = "pooled-ols")]
    PooledOls,
    #[serde(rename = "or-ols")]
    OrOls,
    #[serde(rename = "dr-ols")]
    DrOls,
    #[serde(rename = "or-sfl")]
    OrSfl,
    #[serde(rename = "dr-sfl")]
    DrSfl,
}

impl StudyMethod {
    pub const FOUR: [StudyMethod; 4] = [Self::OrOls, Self::DrOls, Self::OrSfl, Self::DrSfl];

    pub fn label(self) -> &'static str {
        match self {
            Self::PooledOls => "pooled-ols",
            Self::OrOls => "or-ols",
            Self::DrOls => "dr-ols",
            Self::OrSfl => "or-sfl",
            Self::DrSfl => "dr-sfl",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [Self::PooledOls, Self::OrOls, Self::DrOls, Self::OrSfl, Self::DrSfl]
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s:?}")))
    }

    fn needs_matching(self) -> bool {
        self != Self::PooledOls
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AdetStudySpec {
    pub k_values: Vec<usize>,
    pub methods: Vec<StudyMethod>,
    pub alpha: f64,
    /// `None` means `SflConfig::for_sample_size(n)`.
    pub sfl: Option<SflConfig>,
    /// Redraws of graph and treatment allowed per repetition when some
    /// treated node has no untreated match at a studied `k`.
    pub max_redraws: usize,
}

impl AdetStudySpec {
    pub fn new(k_values: Vec<usize>, methods: Vec<StudyMethod>) -> Self {
        AdetStudySpec {
            k_values,
            methods,
            alpha: 0.05,
            sfl: None,
            max_redraws: 100,
        }
    }
}

/// Coverage and width for one method at one `k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub method: StudyMethod,
    pub k: usize,
    pub coverage: f64,
    pub mean_width: f64,
    /// Standard error of `mean_width` across replications.
    pub width_se: f64,
    pub replications: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
struct Tally {
    covered: usize,
    count: usize,
    failures: usize,
    width_sum: f64,
    width_sq: f64,
}

impl Tally {
    fn add(&mut self, r: &Result<AdetReport>, tau: f64) {
        match r {
            Ok(rep) => {
                let w = rep.width();
                self.count += 1;
                self.covered += rep.covers(tau) as usize;
                self.width_sum += w;
                self.width_sq += w * w;
            }
            Err(e) => {
                log::debug!("replication failed: {e}");
                self.failures += 1;
            }
        }
    }

    fn merge(&mut self, o: &Tally) {
        self.covered += o.covered;
        self.count += o.count;
        self.failures += o.failures;
        self.width_sum += o.width_sum;
        self.width_sq += o.width_sq;
    }

    fn summary(&self, method: StudyMethod, k: usize) -> CellSummary {
        let n = self.count as f64;
        let mean = if self.count > 0 { self.width_sum / n } else { f64::NAN };
        let var = if self.count > 1 {
            ((self.width_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        CellSummary {
            method,
            k,
            coverage: if self.count > 0 { self.covered as f64 / n } else { f64::NAN },
            mean_width: mean,
            width_se: (var / n).sqrt(),
            replications: self.count,
            failures: self.failures,
        }
    }
}

/// Cell summaries restricted to one outer repetition.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RepetitionSummary {
    pub repetition: usize,
    pub redraws: usize,
    pub n1: usize,
    pub true_tau: f64,
    pub cells: Vec<CellSummary>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AdetStudyResult {
    pub design: SimDesign,
    pub spec: AdetStudySpec,
    pub cells: Vec<CellSummary>,
    pub repetitions: Vec<RepetitionSummary>,
    pub total_redraws: usize,
}

impl AdetStudyResult {
    pub fn cell(&self, method: StudyMethod, k: usize) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.method == method && c.k == k)
    }

    /// One row per cell.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("design,method,k,coverage,mean_width,width_se,replications,failures\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.6},{:.6e},{},{}",
                self.design.name,
                c.method.label(),
                c.k,
                c.coverage,
                c.mean_width,
                c.width_se,
                c.replications,
                c.failures
            );
        }
        s
    }
}

/// A drawn repetition: network, treatments, effects and true interference.
pub struct DrawnRepetition {
    pub graph: InterferenceGraph,
    pub profiles: Vec<DepthProfile>,
    pub tau_i: Vec<f64>,
    pub f: Vec<f64>,
    pub redraws: usize,
}

/// Draws graph, treatment, effects and `f` for repetition `rep`, redrawing
/// while `accept` rejects the draw.
pub fn draw_repetition(
    design: &SimDesign,
    rep: usize,
    depth: usize,
    max_redraws: usize,
    accept: impl Fn(&InterferenceGraph, &[DepthProfile]) -> bool,
) -> Result<DrawnRepetition> {
    let depth = depth.max(design.interference.depth(design.k0));
    for attempt in 0..=max_redraws {
        let mut rng = substream(design.seed, TAG_GRAPH, rep as u64, attempt as u64);
        let graph = generate_graph(design, &mut rng)?;
        let n1 = graph.treated_count();
        if n1 == 0 || n1 == graph.n() {
            continue;
        }
        let profiles = all_depth_profiles(&graph, depth);
        if !accept(&graph, &profiles) {
            continue;
        }
        let tau_i = (0..design.n).map(|_| design.tau.sample(&mut rng)).collect();
        let f = interference_from_profiles(&profiles, design);
        return Ok(DrawnRepetition {
            graph,
            profiles,
            tau_i,
            f,
            redraws: attempt,
        });
    }
    Err(Error::InvalidParameter(format!(
        "repetition {rep}: no acceptable draw after {max_redraws} redraws"
    )))
}

/// Replication study of ADET intervals.
pub fn run_adet_study(design: &SimDesign, spec: &AdetStudySpec) -> Result<AdetStudyResult> {
    design.validate()?;
    if spec.k_values.is_empty() || spec.methods.is_empty() {
        return Err(Error::InvalidParameter("study needs at least one k and one method".into()));
    }
    let sfl = spec.sfl.clone().unwrap_or_else(|| SflConfig::for_sample_size(design.n));
    sfl.validate()?;
    let k_max = *spec.k_values.iter().max().unwrap();
    let needs_matching = spec.methods.iter().any(|m| m.needs_matching());
    let cells: Vec<(StudyMethod, usize)> = spec
        .methods
        .iter()
        .flat_map(|&m| spec.k_values.iter().map(move |&k| (m, k)))
        .collect();

    let reps: Vec<(RepetitionSummary, Vec<Tally>)> = (0..design.outer_reps)
        .into_par_iter()
        .map(|rep| -> Result<_> {
            let drawn = draw_repetition(design, rep, k_max, spec.max_redraws, |g, prof| {
                !needs_matching
                    || spec.k_values.iter().all(|&k| {
                        partition_from_profiles(g, prof, &design.mapping, k)
                            .map(|p| p.is_balanced())
                            .unwrap_or(false)
                    })
            })?;
            let g0 = &drawn.graph;
            let parts: Vec<GroupPartition> = spec
                .k_values
                .iter()
                .map(|&k| partition_from_profiles(g0, &drawn.profiles, &design.mapping, k))
                .collect::<Result<_>>()?;
            let keys: Vec<Vec<FeatureKey>> = spec
                .k_values
                .iter()
                .map(|&k| drawn.profiles.iter().map(|p| feature_key(p, &design.mapping, k)).collect())
                .collect();
            let mut tallies = vec![Tally::default(); cells.len()];
            let mut true_tau = f64::NAN;
            for j in 0..design.inner_reps {
                let mut rng = substream(design.seed, TAG_NOISE, rep as u64, j as u64);
                let (g, tau) = generate_outcomes(g0, &drawn.tau_i, &drawn.f, design.noise_sd, &mut rng)?;
                true_tau = tau;
                for (ki, &k) in spec.k_values.iter().enumerate() {
                    let part = &parts[ki];
                    let fit = ols_fit(&g, part);
                    let sol = if spec.methods.iter().any(|m| matches!(m, StudyMethod::OrSfl | StudyMethod::DrSfl)) {
                        Some(dc_solve(&part.untreated_outcomes(&g), part, &sfl))
                    } else {
                        None
                    };
                    for (ci, &(m, ck)) in cells.iter().enumerate() {
                        if ck != k {
                            continue;
                        }
                        let alpha = spec.alpha;
                        let r = match m {
                            StudyMethod::PooledOls => pooled_adet_ci_from_keys(&g, &keys[ki], k, alpha),
                            StudyMethod::OrOls | StudyMethod::DrOls => {
                                let est = if m == StudyMethod::OrOls { Estimator::Or } else { Estimator::Dr };
                                fit.clone()
                                    .and_then(|f| adet_ols(&g, part, &f, alpha, est, DEFAULT_PROPENSITY_EPS))
                            }
                            StudyMethod::OrSfl | StudyMethod::DrSfl => {
                                let est = if m == StudyMethod::OrSfl { Estimator::Or } else { Estimator::Dr };
                                sol.clone().unwrap().and_then(|s| adet_sfl(&g, part, &s, alpha, est))
                            }
                        };
                        tallies[ci].add(&r, tau);
                    }
                }
            }
            let summary = RepetitionSummary {
                repetition: rep,
                redraws: drawn.redraws,
                n1: g0.treated_count(),
                true_tau,
                cells: cells
                    .iter()
                    .zip(&tallies)
                    .map(|(&(m, k), t)| t.summary(m, k))
                    .collect(),
            };
            Ok((summary, tallies))
        })
        .collect::<Result<_>>()?;

    let mut totals = vec![Tally::default(); cells.len()];
    let mut repetitions = Vec::with_capacity(reps.len());
    let mut total_redraws = 0;
    for (summary, tallies) in reps {
        for (t, r) in totals.iter_mut().zip(&tallies) {
            t.merge(r);
        }
        total_redraws += summary.redraws;
        repetitions.push(summary);
    }
    Ok(AdetStudyResult {
        design: design.clone(),
        spec: spec.clone(),
        cells: cells
            .iter()
            .zip(&totals)
            .map(|(&(m, k), t)| t.summary(m, k))
            .collect(),
        repetitions,
        total_redraws,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct K0RepetitionRecord {
    pub repetition: usize,
    pub mode: CandidateMode,
    pub candidate_set: Vec<usize>,
    pub retained: Vec<usize>,
    pub covered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct K0Summary {
    pub mode: CandidateMode,
    pub k0: usize,
    pub coverage: f64,
    pub mean_cardinality: f64,
    pub repetitions: usize,
    /// Share of repetitions with `k₀ ≤ k*_α`.
    pub upper_bound_rate: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct K0StudyResult {
    pub design: SimDesign,
    pub config: K0Config,
    pub summaries: Vec<K0Summary>,
    pub records: Vec<K0RepetitionRecord>,
}

impl K0StudyResult {
    pub fn summary(&self, mode: &CandidateMode) -> Option<&K0Summary> {
        self.summaries.iter().find(|s| &s.mode == mode)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("design,mode,k0,coverage,mean_cardinality,upper_bound_rate,repetitions\n");
        for r in &self.summaries {
            let mode = match r.mode {
                CandidateMode::Repro => "repro",
                CandidateMode::Range => "range",
            };
            let _ = writeln!(
                s,
                "{},{},{},{:.4},{:.4},{:.4},{}",
                self.design.name, mode, r.k0, r.coverage, r.mean_cardinality, r.upper_bound_rate, r.repetitions
            );
        }
        s
    }
}

/// Neighborhood-size study: one outcome draw per repetition, a confidence
/// set per candidate mode.
pub fn run_k0_study(design: &SimDesign, config: &K0Config, modes: &[CandidateMode]) -> Result<K0StudyResult> {
    design.validate()?;
    config.validate()?;
    let k_max = config.k_max;
    let per_rep: Vec<Vec<K0RepetitionRecord>> = (0..design.outer_reps)
        .into_par_iter()
        .map(|rep| -> Result<_> {
            let drawn = draw_repetition(design, rep, k_max, 100, |g, prof| {
                partition_from_profiles(g, prof, &design.mapping, k_max)
                    .map(|p| p.n0() > p.d() + 1)
                    .unwrap_or(false)
            })?;
            let mut rng = substream(design.seed, TAG_NOISE, rep as u64, 0);
            let (g, _) = generate_outcomes(&drawn.graph, &drawn.tau_i, &drawn.f, design.noise_sd, &mut rng)?;
            let parts: Vec<GroupPartition> = (0..=k_max)
                .map(|k| partition_from_profiles(&g, &drawn.profiles, &design.mapping, k))
                .collect::<Result<_>>()?;
            let ladder = Ladder::new(&parts)?;
            let y_obs = parts[0].untreated_outcomes(&g);
            let rep_seed: u64 = substream(config.seed ^ design.seed, TAG_K0, rep as u64, 0).random();
            modes
                .iter()
                .map(|mode| {
                    let cfg = K0Config {
                        candidate_mode: mode.clone(),
                        seed: rep_seed,
                        ..config.clone()
                    };
                    let cs = infer_k0(&y_obs, &ladder, &cfg)?;
                    Ok(K0RepetitionRecord {
                        repetition: rep,
                        mode: mode.clone(),
                        covered: cs.retained.contains(&design.k0),
                        candidate_set: cs.candidate_set,
                        retained: cs.retained,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let records: Vec<K0RepetitionRecord> = per_rep.into_iter().flatten().collect();
    let summaries = modes
        .iter()
        .map(|mode| {
            let rs: Vec<&K0RepetitionRecord> = records.iter().filter(|r| &r.mode == mode).collect();
            let n = rs.len() as f64;
            K0Summary {
                mode: mode.clone(),
                k0: design.k0,
                coverage: rs.iter().filter(|r| r.covered).count() as f64 / n,
                mean_cardinality: rs.iter().map(|r| r.retained.len() as f64).sum::<f64>() / n,
                repetitions: rs.len(),
                upper_bound_rate: rs
                    .iter()
                    .filter(|r| r.retained.last().is_some_and(|&k| k >= design.k0))
                    .count() as f64
                    / n,
            }
        })
        .collect();
    Ok(K0StudyResult {
        design: design.clone(),
        config: config.clone(),
        summaries,
        records,
    })
}
