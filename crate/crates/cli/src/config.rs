//! Experiment configuration: a TOML document with strict key checking.

use std::path::{Path, PathBuf};

use mgproj::data::{SubspaceMixtureConfig, TokenTaskConfig, WigglyConfig};
use mgproj::models::{TiedEncoderConfig, ToyNetConfig};
use mgproj::training::{EtaMode, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Wiggly,
    Token,
    SubspaceValidation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationConfig {
    /// Smoothing strengths to test.
    pub alphas: Vec<f64>,
    /// Target values of `margin / (α σ ‖w_f‖)`.
    pub ratios: Vec<f64>,
    /// `‖w_f‖`, the fine (complement) part of the probe classifier.
    pub fine_norm: f64,
    /// Below this sample count the report carries an insufficient-sample warning.
    pub min_samples: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self { alphas: vec![1.0, 0.75, 0.5, 0.25], ratios: vec![0.0, 1.0, 2.0], fine_norm: 2.0, min_samples: 10_000 }
    }
}

/// Everything `run` needs. Plain and projector variants share every field; the
/// variant only switches the projector on or off.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub task: Task,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_grid_resolution")]
    pub grid_resolution: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub wiggly: WigglyConfig,
    #[serde(default)]
    pub toynet: ToyNetConfig,
    #[serde(default)]
    pub token: TokenTaskConfig,
    #[serde(default)]
    pub encoder: TiedEncoderConfig,
    #[serde(default)]
    pub subspace: SubspaceMixtureConfig,
    #[serde(default)]
    pub validation: ValidationConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_grid_resolution() -> usize {
    200
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Plain,
    Proj,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Plain, Variant::Proj];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Proj => "proj",
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(format!("config error: {e}")))?;
        cfg.validate(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    /// Semantic checks. Messages point at the line of the offending table when
    /// it appears in `source`.
    pub fn validate(&self, source: &str) -> CliResult<()> {
        let at = |table: &str, msg: String| {
            let loc = locate_table(source, table).map(|l| format!("line {l} ")).unwrap_or_default();
            CliError::Config(format!("config error at {loc}[{table}]: {msg}"))
        };
        let top = |key: &str, msg: &str| {
            let loc = locate_key(source, key).map(|l| format!("line {l} ")).unwrap_or_default();
            CliError::Config(format!("config error at {loc}`{key}`: {msg}"))
        };
        if self.experiment.is_empty()
            || !self.experiment.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(top("experiment", "name must be nonempty and use only [A-Za-z0-9_-]"));
        }
        if self.seeds.is_empty() {
            return Err(top("seeds", "at least one seed is required"));
        }
        if self.grid_resolution < 2 {
            return Err(top("grid_resolution", "must be >= 2"));
        }
        let core = |table: &str, r: mgproj::Result<()>| r.map_err(|e| at(table, e.to_string()));
        core("train", self.train.validate())?;
        match self.task {
            Task::Wiggly => {
                core("wiggly", self.wiggly.validate())?;
                core("toynet", self.variant_toynet(Variant::Proj).validate())?;
                if self.train.eta_mode == EtaMode::Learnable {
                    return Err(at("train", "eta_mode = learnable has no effect on the wiggly task".into()));
                }
            }
            Task::Token => {
                core("token", self.token.validate())?;
                let enc = self.variant_encoder(Variant::Proj);
                core("encoder", enc.validate())?;
                if enc.vocab_size != self.token.vocab_size || enc.seq_len != self.token.t {
                    return Err(at("encoder", "vocab_size and seq_len must match [token] vocab_size and t".into()));
                }
                if !enc.has_projector() {
                    return Err(at("encoder", "the proj variant needs multiscale widths or seq_coarse".into()));
                }
                if self.train.eta_mode == EtaMode::Learnable && !enc.learnable_eta {
                    return Err(at("encoder", "eta_mode = learnable requires learnable_eta = true".into()));
                }
            }
            Task::SubspaceValidation => {
                core("subspace", self.subspace.validate())?;
                let v = &self.validation;
                if v.alphas.is_empty() || v.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
                    return Err(at("validation", "alphas must be nonempty and lie in [0, 1]".into()));
                }
                if v.ratios.is_empty() || v.ratios.iter().any(|r| !(*r >= 0.0)) {
                    return Err(at("validation", "ratios must be nonempty and >= 0".into()));
                }
                if !(v.fine_norm > 0.0) {
                    return Err(at("validation", "fine_norm must be > 0".into()));
                }
            }
        }
        Ok(())
    }

    pub fn variant_toynet(&self, v: Variant) -> ToyNetConfig {
        ToyNetConfig { use_projector: v == Variant::Proj, ..self.toynet.clone() }
    }

    pub fn variant_encoder(&self, v: Variant) -> TiedEncoderConfig {
        match v {
            Variant::Proj => self.encoder.clone(),
            Variant::Plain => TiedEncoderConfig {
                multiscale: Vec::new(),
                seq_coarse: None,
                learnable_eta: false,
                ..self.encoder.clone()
            },
        }
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.output_dir.join(&self.experiment)
    }
}

/// 1-based line of a `[table]` header.
pub fn locate_table(source: &str, table: &str) -> Option<usize> {
    let header = format!("[{table}]");
    source.lines().position(|l| l.trim() == header).map(|i| i + 1)
}

/// 1-based line of a top-level `key = …` assignment.
pub fn locate_key(source: &str, key: &str) -> Option<usize> {
    source
        .lines()
        .take_while(|l| !l.trim_start().starts_with('['))
        .position(|l| l.split('=').next().map(str::trim) == Some(key))
        .map(|i| i + 1)
}

/// Parses `"a,b,c"` into seeds.
pub fn parse_seed_list(text: &str) -> CliResult<Vec<u64>> {
    let seeds = text
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<u64>().map_err(|_| CliError::Config(format!("invalid seed {s:?}"))))
        .collect::<CliResult<Vec<_>>>()?;
    if seeds.is_empty() {
        return Err(CliError::Config("seed list is empty".into()));
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "experiment = \"t\"\ntask = \"wiggly\"\nseeds = [1, 2]\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.seeds, vec![1, 2]);
        assert_eq!(cfg.grid_resolution, 200);
        assert_eq!(cfg.toynet, ToyNetConfig::default());
        assert_eq!(cfg.encoder, TiedEncoderConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected_with_line() {
        let text = format!("{MINIMAL}\n[toynet]\nhiden = 3\n");
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("hiden"), "{err}");
        assert!(err.contains("line 6"), "{err}");
    }

    #[test]
    fn semantic_errors_point_at_table() {
        let text = format!("{MINIMAL}\n[toynet]\ncoarse_dim = 40\n");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("line 5 [toynet]"), "{err}");
        let no_seeds = "experiment = \"t\"\ntask = \"wiggly\"\nseeds = []\n";
        assert!(ExperimentConfig::parse(no_seeds).unwrap_err().to_string().contains("line 3"));
    }

    #[test]
    fn token_task_needs_a_projector() {
        let text = "experiment = \"t\"\ntask = \"token\"\nseeds = [0]\n\n[encoder]\nd = 8\n";
        let err = ExperimentConfig::parse(text).unwrap_err().to_string();
        assert!(err.contains("line 5 [encoder]"), "{err}");
    }

    #[test]
    fn resolved_config_round_trips() {
        let text = format!(
            "{MINIMAL}\n[train]\neta_mode = {{ fixed = 0.5 }}\n\n[encoder]\nseq_coarse = 4\n\n[[wiggly.components]]\namplitude = 0.1\nfrequency = 2.0\nphase = 0.3\n"
        );
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let again = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.train.eta_mode, EtaMode::Fixed(0.5));
    }

    #[test]
    fn variants_differ_only_in_projector_fields() {
        let text = format!("{MINIMAL}\n[encoder]\nmultiscale = [2, 4, 8]\n");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let plain = cfg.variant_toynet(Variant::Plain);
        let proj = cfg.variant_toynet(Variant::Proj);
        assert_eq!(ToyNetConfig { use_projector: true, ..plain }, proj);
        let e = cfg.variant_encoder(Variant::Plain);
        assert!(!e.has_projector());
        assert_eq!(TiedEncoderConfig { multiscale: vec![2, 4, 8], ..e }, cfg.variant_encoder(Variant::Proj));
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seed_list("3, 4,5").unwrap(), vec![3, 4, 5]);
        assert!(parse_seed_list("x").is_err());
        assert!(parse_seed_list("").is_err());
    }
}
