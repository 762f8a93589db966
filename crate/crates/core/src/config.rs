//! Experiment configuration files.
//!
//! A config is a TOML document. Every key is optional except `experiment`;
//! missing keys take the defaults of that experiment (see
//! [`ExperimentConfig::defaults`]), so `experiment = "fig1"` alone is a
//! valid file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bounds::BoundVariant;
use crate::error::{Error, Result};
use crate::gcn::{Nonlinearity, MAX_ORDER};
use crate::random::SbmParams;
use crate::training::{FeatureMode, Readout, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Fig1,
    Fig2,
    Fig3,
    EdgeCriticality,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [
        ExperimentKind::Fig1,
        ExperimentKind::Fig2,
        ExperimentKind::Fig3,
        ExperimentKind::EdgeCriticality,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ExperimentKind::Fig1 => "fig1",
            ExperimentKind::Fig2 => "fig2",
            ExperimentKind::Fig3 => "fig3",
            ExperimentKind::EdgeCriticality => "edge-criticality",
        }
    }

    fn valid_ids() -> String {
        Self::ALL.iter().map(|k| k.id()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edges" => Ok(ExperimentKind::EdgeCriticality),
            _ => Self::ALL
                .into_iter()
                .find(|k| k.id() == s)
                .ok_or_else(|| Error::Config(vec![format!(
                    "unknown experiment `{s}`; valid ids: {}",
                    Self::valid_ids()
                )])),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            _ => Err(Error::Config(vec![format!("unknown scale `{s}`; valid: desk, paper")])),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub communities: Vec<usize>,
    pub p_intra: f64,
    pub p_inter: f64,
    pub require_connected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountsConfig {
    /// Graph realisations (fig1, fig2, edge-criticality).
    pub graphs: usize,
    /// Perturbation draws per graph and x-value; for fig3, per test graph.
    pub trials: usize,
    /// Largest number of perturbed edges (fig1, fig3).
    pub max_edges: usize,
    /// Perturbation probabilities (fig2).
    pub probabilities: Vec<f64>,
    pub train_graphs: usize,
    pub test_graphs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub order: usize,
    pub nonlinearity: Nonlinearity,
    pub learning_rate: f64,
    pub epochs: usize,
    pub readout: Readout,
    /// Node features of the graph-classification task (fig3).
    pub features: FeatureMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    pub variant: BoundVariant,
    /// Eigenvalues closer than this are treated as one cluster.
    pub gap_tol: f64,
    /// Bernoulli perturbations also insert absent pairs (fig2).
    pub include_insertions: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankKey {
    /// Single-edge deterministic bound.
    #[default]
    Bound,
    LambdaTerm,
    /// First-order shift of the second-smallest eigenvalue.
    FiedlerShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    /// Intra-community share of the deletions of each fig3 curve.
    pub intra_fractions: Vec<f64>,
    /// Edge-criticality ranking key.
    pub rank_by: RankKey,
    /// Rank the edges of this graph file instead of SBM samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub graph: GraphConfig,
    pub counts: CountsConfig,
    pub model: ModelConfig,
    pub bound: BoundConfig,
    pub policy: PolicyConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// Desk-scale defaults of an experiment.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let fig3 = kind == ExperimentKind::Fig3;
        ExperimentConfig {
            experiment: kind,
            seed: 0,
            graph: GraphConfig {
                communities: if fig3 { vec![10, 10, 10] } else { vec![15, 15] },
                p_intra: 0.7,
                p_inter: 0.08,
                require_connected: true,
            },
            counts: CountsConfig {
                graphs: 10,
                trials: if fig3 { 10 } else { 100 },
                max_edges: if fig3 { 20 } else { 10 },
                probabilities: vec![0.01, 0.05, 0.1, 0.2, 0.3],
                train_graphs: 60,
                test_graphs: 30,
            },
            model: ModelConfig {
                order: 3,
                nonlinearity: Nonlinearity::Relu,
                learning_rate: 0.05,
                epochs: 500,
                readout: if fig3 { Readout::MeanPool } else { Readout::None },
                features: FeatureMode::CommunityCoded,
                basis_scale: None,
            },
            bound: BoundConfig {
                variant: BoundVariant::AsPrinted,
                gap_tol: crate::spectral::DEFAULT_GAP_TOL,
                include_insertions: false,
            },
            policy: PolicyConfig {
                intra_fractions: vec![1.0, 0.67, 0.33, 0.0],
                rank_by: RankKey::Bound,
                graph_file: None,
            },
            output: OutputConfig {
                dir: PathBuf::from(format!("results/{}", kind.id())),
            },
        }
    }

    /// Sets the graph and trial counts of a scale preset.
    pub fn apply_scale(&mut self, scale: Scale) {
        let c = &mut self.counts;
        match (self.experiment, scale) {
            (ExperimentKind::Fig3, Scale::Desk) => {
                c.train_graphs = 60;
                c.test_graphs = 30;
            }
            (ExperimentKind::Fig3, Scale::Paper) => {
                c.train_graphs = 200;
                c.test_graphs = 100;
            }
            (_, Scale::Desk) => {
                c.graphs = 10;
                c.trials = 100;
            }
            (_, Scale::Paper) => {
                c.graphs = 50;
                c.trials = 1000;
            }
        }
    }

    pub fn sbm(&self, seed: u64) -> SbmParams {
        SbmParams {
            communities: self.graph.communities.clone(),
            p_intra: self.graph.p_intra,
            p_inter: self.graph.p_inter,
            seed,
            require_connected: self.graph.require_connected,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.model.learning_rate,
            epochs: self.model.epochs,
            seed,
            order: self.model.order,
            nonlinearity: self.model.nonlinearity,
            loss: Default::default(),
            readout: self.model.readout,
            basis_scale: self.model.basis_scale,
        }
    }

    /// Every violated constraint, one message per field.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut prob = |name: &str, x: f64| {
            if !(0.0..=1.0).contains(&x) {
                v.push(format!("{name} must lie in [0, 1], got {x}"));
            }
        };
        prob("graph.p_intra", self.graph.p_intra);
        prob("graph.p_inter", self.graph.p_inter);
        if self.seed > i64::MAX as u64 {
            v.push(format!("seed must be at most {}, got {}", i64::MAX, self.seed));
        }
        if self.graph.communities.is_empty() {
            v.push("graph.communities must list at least one size".into());
        }
        if self.graph.communities.contains(&0) {
            v.push("graph.communities sizes must be at least 1".into());
        }
        let c = &self.counts;
        for (name, value) in [("counts.graphs", c.graphs), ("counts.trials", c.trials)] {
            if value == 0 {
                v.push(format!("{name} must be at least 1"));
            }
        }
        match self.experiment {
            ExperimentKind::Fig2 => {
                if c.probabilities.is_empty() {
                    v.push("counts.probabilities must not be empty".into());
                }
                for &p in &c.probabilities {
                    if !(p > 0.0 && p < 1.0) {
                        v.push(format!("counts.probabilities entries must lie in (0, 1), got {p}"));
                    }
                }
            }
            ExperimentKind::Fig3 => {
                if c.train_graphs < 2 {
                    v.push("counts.train_graphs must be at least 2".into());
                }
                if c.test_graphs == 0 {
                    v.push("counts.test_graphs must be at least 1".into());
                }
                if self.graph.communities.len() < 2 {
                    v.push("graph.communities needs two or more communities for cut sizes".into());
                }
                if self.policy.intra_fractions.is_empty() {
                    v.push("policy.intra_fractions must not be empty".into());
                }
                for &f in &self.policy.intra_fractions {
                    if !(0.0..=1.0).contains(&f) {
                        v.push(format!("policy.intra_fractions entries must lie in [0, 1], got {f}"));
                    }
                }
                if self.model.readout == Readout::None {
                    v.push("model.readout must be mean-pool or sum-pool for fig3".into());
                }
            }
            _ => {}
        }
        let m = &self.model;
        if m.order > MAX_ORDER {
            v.push(format!("model.order must be at most {MAX_ORDER}, got {}", m.order));
        }
        if !(m.learning_rate > 0.0 && m.learning_rate.is_finite()) {
            v.push(format!("model.learning_rate must be positive, got {}", m.learning_rate));
        }
        if m.epochs == 0 {
            v.push("model.epochs must be at least 1".into());
        }
        if let Some(s) = m.basis_scale {
            if !(s > 0.0 && s.is_finite()) {
                v.push(format!("model.basis_scale must be positive, got {s}"));
            }
        }
        if !(self.bound.gap_tol > 0.0 && self.bound.gap_tol.is_finite()) {
            v.push(format!("bound.gap_tol must be positive, got {}", self.bound.gap_tol));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    /// Parses a config document, filling absent keys with the defaults of
    /// its experiment, then validates it.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
        let kind = match user.get("experiment") {
            Some(toml::Value::String(s)) => s.parse::<ExperimentKind>()?,
            Some(other) => {
                return Err(Error::Config(vec![format!(
                    "experiment must be a string, got {other}; valid ids: {}",
                    ExperimentKind::valid_ids()
                )]))
            }
            None => {
                return Err(Error::Config(vec![format!(
                    "missing `experiment`; valid ids: {}",
                    ExperimentKind::valid_ids()
                )]))
            }
        };
        let mut merged = toml::Table::try_from(Self::defaults(kind))
            .map_err(|e| Error::Config(vec![e.to_string()]))?;
        merge(&mut merged, user);
        // accept the short alias in the file too
        merged.insert("experiment".into(), toml::Value::String(kind.id().into()));
        let cfg: ExperimentConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_toml_str("experiment = \"fig1\"\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::defaults(ExperimentKind::Fig1));
        assert_eq!(cfg.graph.communities, vec![15, 15]);
        assert_eq!(cfg.model.order, 3);
    }

    #[test]
    fn bad_probability_names_field() {
        let err = ExperimentConfig::from_toml_str("experiment = \"fig1\"\n[graph]\np_intra = 1.5\n")
            .unwrap_err();
        assert!(err.to_string().contains("graph.p_intra"), "{err}");
    }

    #[test]
    fn unknown_experiment_lists_ids() {
        let err = ExperimentConfig::from_toml_str("experiment = \"fig9\"\n").unwrap_err();
        let msg = err.to_string();
        for id in ["fig1", "fig2", "fig3", "edge-criticality"] {
            assert!(msg.contains(id), "{msg}");
        }
    }

    #[test]
    fn all_violations_listed() {
        let text = "experiment = \"fig2\"\n[counts]\ntrials = 0\nprobabilities = [0.0, 0.5]\n[model]\nepochs = 0\n";
        let Error::Config(v) = ExperimentConfig::from_toml_str(text).unwrap_err() else {
            panic!("expected config error");
        };
        assert_eq!(v.len(), 3, "{v:?}");
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(ExperimentConfig::from_toml_str("experiment = \"fig1\"\n[graph]\np_itra = 0.5\n").is_err());
    }

    #[test]
    fn round_trip() {
        for kind in ExperimentKind::ALL {
            let mut cfg = ExperimentConfig::defaults(kind);
            cfg.seed = 17;
            cfg.model.basis_scale = Some(4.0);
            let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn scale_presets() {
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::Fig1);
        cfg.apply_scale(Scale::Paper);
        assert_eq!((cfg.counts.graphs, cfg.counts.trials), (50, 1000));
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::Fig3);
        cfg.apply_scale(Scale::Paper);
        assert_eq!((cfg.counts.train_graphs, cfg.counts.test_graphs), (200, 100));
    }

    #[test]
    fn alias_edges() {
        let cfg = ExperimentConfig::from_toml_str("experiment = \"edges\"\n").unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::EdgeCriticality);
    }
}
