//! Flat `key = value` configuration files. Blank lines and lines starting
//! with `#` are ignored; unknown keys are errors.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use super::{HarnessError, Result};
use crate::dsp::DspConfig;
use crate::features::AugmentConfig;
use crate::fedcore::FederationConfig;
use crate::forest::ForestConfig;
use crate::fusion::FusionPolicy;
use crate::nn::CnnArch;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    Fer,
}

/// Sizes and difficulty of the generated multimodal task.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSettings {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub physio_noise: f64,
    pub image_noise: f64,
    /// Share of samples whose face is occluded.
    pub visual_corruption: f64,
    /// Share of samples whose physiological window is a sensor artefact.
    pub physio_corruption: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            train_per_class: 40,
            test_per_class: 10,
            physio_noise: 1.0,
            image_noise: 0.1,
            visual_corruption: 0.2,
            physio_corruption: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FerSettings {
    pub csv: Option<PathBuf>,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl Default for FerSettings {
    fn default() -> Self {
        Self {
            csv: None,
            train_per_class: 100,
            test_per_class: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub federation: FederationConfig,
    pub fusion: FusionPolicy,
    pub dsp: DspConfig,
    pub forest: ForestConfig,
    pub seed: u64,
    pub individual_epochs: usize,
    pub centralized_epochs: usize,
    pub data: DataSource,
    pub synth: SynthSettings,
    pub fer: FerSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            federation: FederationConfig::default(),
            fusion: FusionPolicy::default(),
            dsp: DspConfig::default(),
            forest: ForestConfig::default(),
            seed: 0,
            individual_epochs: 4,
            centralized_epochs: 40,
            data: DataSource::Synthetic,
            synth: SynthSettings::default(),
            fer: FerSettings::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| HarnessError::BadConfigValue {
        line,
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(HarnessError::BadConfigValue {
            line,
            key: key.into(),
            value: value.into(),
        }),
    }
}

fn parse_arch(key: &str, value: &str, line: usize) -> Result<CnnArch> {
    match value {
        "paper" => Ok(CnnArch::paper()),
        "desk" => Ok(CnnArch::desk()),
        "reduced" => Ok(CnnArch::reduced()),
        _ => Err(HarnessError::BadConfigValue {
            line,
            key: key.into(),
            value: value.into(),
        }),
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(csv) = &cfg.fer.csv {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.fer.csv = Some(dir.join(csv));
                }
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or(HarnessError::MalformedConfigLine(line))?;
            cfg.set(key, value, line)?;
        }
        cfg.federation.seed = cfg.seed;
        cfg.federation.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str, line: usize) -> Result<()> {
        let f = &mut self.federation;
        match key {
            "federation.rounds" => f.rounds = parse(key, v, line)?,
            "federation.local_epochs" => f.local_epochs = parse(key, v, line)?,
            "federation.clients" => f.n_clients = parse(key, v, line)?,
            "federation.timeout_s" => {
                f.straggler_timeout = Duration::from_secs_f64(parse(key, v, line)?)
            }
            "federation.join_timeout_s" => {
                f.join_timeout = Duration::from_secs_f64(parse(key, v, line)?)
            }
            "federation.reset_optimizer" => {
                f.reset_optimizer_each_round = parse_bool(key, v, line)?
            }
            "optimizer.lr" => f.adam.lr = parse(key, v, line)?,
            "optimizer.decay" => f.adam.decay = parse(key, v, line)?,
            "training.batch_size" => f.batch_size = parse(key, v, line)?,
            "training.augment" => {
                f.augment = parse_bool(key, v, line)?.then(AugmentConfig::default)
            }
            "training.validation_fraction" => f.validation_fraction = parse(key, v, line)?,
            "model.arch" => f.arch = parse_arch(key, v, line)?,
            "fusion.mode" => {
                self.fusion = v.parse().map_err(|_| HarnessError::BadConfigValue {
                    line,
                    key: key.into(),
                    value: v.into(),
                })?
            }
            "dsp.sample_rate_hz" => self.dsp.sample_rate_hz = parse(key, v, line)?,
            "dsp.cutoff_hz" => self.dsp.cutoff_hz = parse(key, v, line)?,
            "forest.trees" => self.forest.n_trees = parse(key, v, line)?,
            "forest.max_depth" => {
                self.forest.max_depth = match v {
                    "none" | "unlimited" => None,
                    _ => Some(parse(key, v, line)?),
                }
            }
            "seed" => self.seed = parse(key, v, line)?,
            "individual.epochs" => self.individual_epochs = parse(key, v, line)?,
            "centralized.epochs" => self.centralized_epochs = parse(key, v, line)?,
            "data.source" => {
                self.data = match v {
                    "synthetic" => DataSource::Synthetic,
                    "fer" => DataSource::Fer,
                    _ => {
                        return Err(HarnessError::BadConfigValue {
                            line,
                            key: key.into(),
                            value: v.into(),
                        })
                    }
                }
            }
            "data.fer_csv" => self.fer.csv = Some(PathBuf::from(v)),
            "data.fer_train_per_class" => self.fer.train_per_class = parse(key, v, line)?,
            "data.fer_test_per_class" => self.fer.test_per_class = parse(key, v, line)?,
            "synth.train_per_class" => self.synth.train_per_class = parse(key, v, line)?,
            "synth.test_per_class" => self.synth.test_per_class = parse(key, v, line)?,
            "synth.physio_noise" => self.synth.physio_noise = parse(key, v, line)?,
            "synth.image_noise" => self.synth.image_noise = parse(key, v, line)?,
            "synth.visual_corruption" => self.synth.visual_corruption = parse(key, v, line)?,
            "synth.physio_corruption" => self.synth.physio_corruption = parse(key, v, line)?,
            _ => {
                return Err(HarnessError::UnknownConfigKey {
                    line,
                    key: key.into(),
                })
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_keys() {
        let cfg = ExperimentConfig::parse(
            "# comment\n\
             federation.rounds = 10\n\
             federation.local_epochs=2\n\
             federation.clients = 4\n\
             federation.timeout_s = 1.5\n\
             optimizer.lr = 0.001\n\
             optimizer.decay = 0.9\n\
             fusion.mode = sum\n\
             \n\
             dsp.sample_rate_hz = 8\n\
             forest.trees = 50\n\
             seed = 7\n",
        )
        .unwrap();
        assert_eq!(cfg.federation.rounds, 10);
        assert_eq!(cfg.federation.local_epochs, 2);
        assert_eq!(cfg.federation.n_clients, 4);
        assert_eq!(
            cfg.federation.straggler_timeout,
            Duration::from_millis(1500)
        );
        assert_eq!(cfg.federation.adam.lr, 0.001);
        assert_eq!(cfg.federation.adam.decay, 0.9);
        assert_eq!(cfg.fusion, FusionPolicy::ProbabilitySum);
        assert_eq!(cfg.dsp.sample_rate_hz, 8.0);
        assert_eq!(cfg.forest.n_trees, 50);
        assert_eq!((cfg.seed, cfg.federation.seed), (7, 7));
    }

    #[test]
    fn errors_name_the_line() {
        assert_eq!(
            ExperimentConfig::parse("seed = 1\nbogus = 2"),
            Err(HarnessError::UnknownConfigKey {
                line: 2,
                key: "bogus".into()
            })
        );
        assert_eq!(
            ExperimentConfig::parse("seed 1"),
            Err(HarnessError::MalformedConfigLine(1))
        );
        assert!(matches!(
            ExperimentConfig::parse("federation.rounds = many"),
            Err(HarnessError::BadConfigValue { line: 1, .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("federation.rounds = 0"),
            Err(HarnessError::Federation(_))
        ));
    }
}
