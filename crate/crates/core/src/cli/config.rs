//! TOML run configuration. Every section rejects unknown keys; command-line
//! flags take precedence over values read here.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::k0infer::{CandidateMode, LambdaSelection};
use crate::sfl::SflConfig;

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub input: InputSection,
    #[serde(default)]
    pub validate: ValidateSection,
    #[serde(default)]
    pub adet: AdetSection,
    #[serde(default)]
    pub k0: K0Section,
    #[serde(default)]
    pub simulate: SimulateSection,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    pub nodes: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    /// Mapping spec such as `prop:0.05`, `prop-ceil:0.05`, `count:4` or `raw-prop`.
    pub mapping: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    pub k_max: Option<usize>,
    pub kappa_threshold: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Ols,
    Sfl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorArg {
    Or,
    Dr,
    /// Homogeneous-effect regression over all nodes; ignores `--method`.
    Pooled,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdetSection {
    pub k: Option<usize>,
    pub method: Option<MethodArg>,
    pub estimator: Option<EstimatorArg>,
    pub alpha: Option<f64>,
    pub strict: Option<bool>,
    pub propensity_eps: Option<f64>,
    #[serde(default)]
    pub sfl: SflSection,
}

/// SFL tuning. Omitted `lambda1`/`lambda2` fall back to `(1/30)/sqrt(n)`.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SflSection {
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub rho: Option<f64>,
    pub dc_max_iter: Option<usize>,
    pub admm_max_iter: Option<usize>,
    pub tol_primal: Option<f64>,
    pub tol_dual: Option<f64>,
    pub tol_dc: Option<f64>,
    pub group_merge_tol: Option<f64>,
}

impl SflSection {
    /// Fills unset fields from `SflConfig::for_sample_size(n)`.
    pub fn resolve(&self, n: usize) -> SflConfig {
        let mut c = SflConfig::for_sample_size(n);
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { c.$f = v; })*};
        }
        set!(lambda1, lambda2, rho, dc_max_iter, admm_max_iter, tol_primal, tol_dual, tol_dc);
        c.group_merge_tol = self.group_merge_tol.or(c.group_merge_tol);
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateModeArg {
    Repro,
    Range,
}

impl From<CandidateModeArg> for CandidateMode {
    fn from(m: CandidateModeArg) -> Self {
        match m {
            CandidateModeArg::Repro => CandidateMode::Repro,
            CandidateModeArg::Range => CandidateMode::Range,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct K0Section {
    pub max_k: Option<usize>,
    pub candidate_mode: Option<CandidateModeArg>,
    #[serde(alias = "B")]
    pub b: Option<usize>,
    #[serde(alias = "J")]
    pub j: Option<usize>,
    pub alpha: Option<f64>,
    pub lambda_grid: Option<Vec<f64>>,
    pub lambda_prime_grid: Option<Vec<f64>>,
    pub lambda_selection: Option<LambdaSelection>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    Adet,
    K0,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub preset: Option<String>,
    pub study: Option<StudyKind>,
    pub outer_reps: Option<usize>,
    pub inner_reps: Option<usize>,
    pub k_values: Option<Vec<usize>>,
    pub methods: Option<Vec<String>>,
    pub alpha: Option<f64>,
    pub max_redraws: Option<usize>,
    pub max_k: Option<usize>,
    #[serde(alias = "B")]
    pub b: Option<usize>,
    #[serde(alias = "J")]
    pub j: Option<usize>,
    pub modes: Option<Vec<CandidateModeArg>>,
    /// CSV summary table path.
    pub table: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                path: origin.to_string(),
                line,
                message: e.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        // Relative input paths are resolved against the config file's directory.
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.input.nodes, &mut cfg.input.edges].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_document() {
        let cfg = RunConfig::parse(
            r#"
seed = 7
[input]
nodes = "n.csv"
edges = "e.csv"
mapping = "prop:0.05"
[adet]
k = 2
method = "sfl"
estimator = "dr"
[adet.sfl]
lambda1 = 0.01
lambda2 = 0.5
[k0]
max_k = 3
candidate_mode = "range"
B = 50
[simulate]
preset = "setting1"
modes = ["repro", "range"]
"#,
            "t",
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.adet.method, Some(MethodArg::Sfl));
        assert_eq!(cfg.adet.sfl.lambda2, Some(0.5));
        assert_eq!(cfg.k0.b, Some(50));
        assert_eq!(cfg.k0.candidate_mode, Some(CandidateModeArg::Range));
    }

    #[test]
    fn unknown_keys_rejected() {
        for doc in ["sed = 1", "[adet]\nkk = 2", "[adet.sfl]\nlambda3 = 1", "[extra]\n"] {
            assert!(
                matches!(RunConfig::parse(doc, "t"), Err(Error::Parse { .. })),
                "{doc}"
            );
        }
    }

    #[test]
    fn error_line() {
        match RunConfig::parse("seed = 1\n[adet]\nk = \"two\"\n", "t") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
