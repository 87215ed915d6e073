//! Experiment harness: configuration, datasets, the three training modes and
//! result export.

mod config;
mod experiment;
mod fer;
mod report;
mod synth;
mod task;

use std::path::PathBuf;

use thiserror::Error;

use crate::dsp::DspError;
use crate::features::FeatureError;
use crate::fedcore::FedError;
use crate::forest::ForestError;
use crate::nn::NnError;

pub use config::{DataSource, ExperimentConfig, FerSettings, SynthSettings};
pub use experiment::{
    curve_from_history, evaluate_multimodal, run_centralized, run_experiment, run_federated,
    run_individual, MultimodalScores,
};
pub use fer::{load_fer_csv, read_fer_csv, usage_counts, FerRecord, Usage};
pub use report::{
    curve_csv, export_report, ConfusionMatrix, CurvePoint, ExperimentMode, ExperimentReport,
};
pub use synth::{
    default_profiles, face_template, gen_synthetic_physio, synth_face, synth_window,
    synthetic_features, ClassProfile, SynthImageConfig, SynthPhysioConfig, SynthWindow,
};
pub use task::{build_task, client_images, fer_task, synthetic_task, ClientData, MultiSample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("config line {line}: bad value {value:?} for {key}")]
    BadConfigValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("config line {0}: expected key = value")]
    MalformedConfigLine(usize),
    #[error("config line {line}: unknown key {key}")]
    UnknownConfigKey { line: usize, key: String },
    #[error("unknown mode {0:?}")]
    UnknownMode(String),
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("bad FER header: {0}")]
    BadHeader(String),
    #[error("FER row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Federation(#[from] FedError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Forest(#[from] ForestError),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
