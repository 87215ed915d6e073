//! Per-client multimodal datasets: each sample pairs a face with the
//! physiological features of a window carrying the same emotion.

use std::path::Path;

use super::config::{DataSource, ExperimentConfig};
use super::fer::{load_fer_csv, read_fer_csv, FerRecord, Usage};
use super::synth::{synth_face, synth_window, SynthImageConfig, SynthPhysioConfig};
use super::{HarnessError, Result};
use crate::features::{extract_physio_features, EmotionLabel, PhysioFeatures};
use crate::forest::LabeledFeatures;
use crate::nn::ImageSample;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiSample {
    pub image: Vec<f64>,
    pub physio: PhysioFeatures,
    pub label: EmotionLabel,
}

impl MultiSample {
    pub fn image_sample(&self) -> ImageSample {
        ImageSample {
            pixels: self.image.clone(),
            label: self.label,
        }
    }

    pub fn labeled_features(&self) -> LabeledFeatures {
        LabeledFeatures::new(self.physio, self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClientData {
    pub train: Vec<MultiSample>,
    pub test: Vec<MultiSample>,
}

fn physio_config(cfg: &ExperimentConfig, client: usize) -> SynthPhysioConfig {
    SynthPhysioConfig {
        noise_sigma: cfg.synth.physio_noise,
        artefact_rate: cfg.synth.physio_corruption,
        sample_rate_hz: cfg.dsp.sample_rate_hz,
        dsp: cfg.dsp.clone(),
        seed: seed::derive(cfg.seed, &[seed::tag::PARTITION, client as u64]),
        ..SynthPhysioConfig::default()
    }
}

fn physio_for(
    cfg: &SynthPhysioConfig,
    label: EmotionLabel,
    index: usize,
) -> Result<PhysioFeatures> {
    Ok(extract_physio_features(
        &synth_window(cfg, label, index)?.window,
    )?)
}

/// Fully synthetic task: `train_per_class + test_per_class` samples of every
/// emotion per client.
pub fn synthetic_task(cfg: &ExperimentConfig) -> Result<Vec<ClientData>> {
    let s = &cfg.synth;
    let image_cfg = SynthImageConfig {
        noise_sigma: s.image_noise,
        occlusion_rate: s.visual_corruption,
        ..SynthImageConfig::default()
    };
    (0..cfg.federation.n_clients)
        .map(|c| {
            let pcfg = physio_config(cfg, c);
            let mut data = ClientData::default();
            for i in 0..s.train_per_class + s.test_per_class {
                for label in EmotionLabel::ALL {
                    let mut rng = seed::stream(
                        cfg.seed,
                        &[seed::tag::IMAGE, c as u64, label.index() as u64, i as u64],
                    );
                    let (image, _) = synth_face(label, &mut rng, &image_cfg);
                    let sample = MultiSample {
                        image: image.into_pixels(),
                        physio: physio_for(&pcfg, label, i)?,
                        label,
                    };
                    if i < s.train_per_class {
                        data.train.push(sample);
                    } else {
                        data.test.push(sample);
                    }
                }
            }
            Ok(data)
        })
        .collect()
}

/// Takes up to `per_class` records of each emotion, in file order.
fn stratified<'a>(records: &[&'a FerRecord], per_class: Option<usize>) -> Vec<&'a FerRecord> {
    let mut taken = [0usize; EmotionLabel::COUNT];
    records
        .iter()
        .filter(|r| {
            let k = r.label.index();
            let keep = per_class.is_none_or(|cap| taken[k] < cap);
            taken[k] += usize::from(keep);
            keep
        })
        .copied()
        .collect()
}

/// FER faces dealt round-robin to the clients, each paired with a synthetic
/// physiological window of the same emotion. `full` uses every Training and
/// PublicTest row instead of the stratified subset.
pub fn fer_task(
    cfg: &ExperimentConfig,
    records: &[FerRecord],
    full: bool,
) -> Result<Vec<ClientData>> {
    let n = cfg.federation.n_clients;
    let pick = |usage: Usage, cap: usize| {
        let rows: Vec<&FerRecord> = records.iter().filter(|r| r.usage == usage).collect();
        stratified(&rows, (!full).then_some(cap))
    };
    let train = pick(Usage::Training, cfg.fer.train_per_class);
    let test = pick(Usage::PublicTest, cfg.fer.test_per_class);
    if train.is_empty() || test.is_empty() {
        return Err(HarnessError::InsufficientData(format!(
            "need Training and PublicTest rows, found {} and {}",
            train.len(),
            test.len()
        )));
    }
    let mut clients = vec![ClientData::default(); n];
    let mut counters = vec![[0usize; EmotionLabel::COUNT]; n];
    for (split, rows) in [(0, &train), (1, &test)] {
        for (i, r) in rows.iter().enumerate() {
            let c = i % n;
            let pcfg = physio_config(cfg, c);
            let k = &mut counters[c][r.label.index()];
            let sample = MultiSample {
                image: r.image().into_pixels(),
                physio: physio_for(&pcfg, r.label, *k)?,
                label: r.label,
            };
            *k += 1;
            if split == 0 {
                clients[c].train.push(sample);
            } else {
                clients[c].test.push(sample);
            }
        }
    }
    Ok(clients)
}

/// Builds the configured task.
pub fn build_task(cfg: &ExperimentConfig, full_fer: bool) -> Result<Vec<ClientData>> {
    match cfg.data {
        DataSource::Synthetic => synthetic_task(cfg),
        DataSource::Fer => {
            let path =
                cfg.fer.csv.as_ref().ok_or_else(|| {
                    HarnessError::InsufficientData("data.fer_csv is not set".into())
                })?;
            fer_task(cfg, &load_fer_csv(path)?, full_fer)
        }
    }
}

/// Training images for one client process: every row of `<dir>/train.csv`
/// (FER format) when that file exists, otherwise the client's share of the
/// synthetic task.
pub fn client_images(
    cfg: &ExperimentConfig,
    dir: &Path,
    client: usize,
) -> Result<Vec<ImageSample>> {
    let csv = dir.join("train.csv");
    if csv.is_file() {
        let file = std::fs::File::open(&csv).map_err(|_| HarnessError::MissingFile(csv.clone()))?;
        let rows = read_fer_csv(std::io::BufReader::new(file))?;
        return Ok(rows
            .iter()
            .map(|r| ImageSample::new(r.image(), r.label))
            .collect());
    }
    if cfg.data != DataSource::Synthetic {
        return Err(HarnessError::MissingFile(csv));
    }
    if client >= cfg.federation.n_clients {
        return Err(HarnessError::InsufficientData(format!(
            "client {client} of {}",
            cfg.federation.n_clients
        )));
    }
    let mut task = synthetic_task(cfg)?;
    Ok(task
        .swap_remove(client)
        .train
        .iter()
        .map(MultiSample::image_sample)
        .collect())
}
