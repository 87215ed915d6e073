//! The three training regimes on a per-client task.
//!
//! Every mode trains the CNN on the same per-client training splits (the
//! validation holdout is removed exactly as a federated client removes it)
//! and fits random forests on the full per-client training data. Accuracy is
//! always measured on the union of the client test sets.

use std::time::Instant;

use super::config::ExperimentConfig;
use super::report::{ConfusionMatrix, CurvePoint, ExperimentMode, ExperimentReport};
use super::task::{ClientData, MultiSample};
use super::{HarnessError, Result};
use crate::fedcore::{
    run_federation, split_validation, ClientSetup, FederationHistory, TestMetrics,
};
use crate::forest::{fit_forest, predict_forest, Forest, LabeledFeatures};
use crate::fusion::fuse;
use crate::fusion::FusionPolicy;
use crate::nn::{
    evaluate, predict_visual, train_local, AdamState, CnnModel, ImageSample, TrainConfig,
};
use crate::seed;

/// Confusion matrices of the two unimodal predictors and their fusion.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MultimodalScores {
    pub physio: ConfusionMatrix,
    pub visual: ConfusionMatrix,
    pub fused: ConfusionMatrix,
}

impl MultimodalScores {
    fn merge(&mut self, other: &MultimodalScores) {
        self.physio.merge(&other.physio);
        self.visual.merge(&other.visual);
        self.fused.merge(&other.fused);
    }
}

/// Scores `model` and `forest` on `samples`, fusing per sample.
pub fn evaluate_multimodal(
    model: &CnnModel,
    forest: &Forest,
    samples: &[MultiSample],
    policy: FusionPolicy,
) -> Result<MultimodalScores> {
    let mut s = MultimodalScores::default();
    for x in samples {
        let (pv, lv) = predict_visual(model, &x.image)?;
        let (pp, lp) = predict_forest(forest, &x.physio)?;
        s.visual.add(x.label, lv);
        s.physio.add(x.label, lp);
        s.fused.add(x.label, fuse(&pv, &pp, policy));
    }
    Ok(s)
}

fn client_seed(cfg: &ExperimentConfig, client: usize) -> u64 {
    seed::derive(cfg.federation.seed, &[seed::tag::CLIENT, client as u64])
}

fn images(samples: &[MultiSample]) -> Vec<ImageSample> {
    samples.iter().map(MultiSample::image_sample).collect()
}

fn features(samples: &[MultiSample]) -> Vec<LabeledFeatures> {
    samples.iter().map(MultiSample::labeled_features).collect()
}

fn union_test(task: &[ClientData]) -> Vec<MultiSample> {
    task.iter().flat_map(|c| c.test.iter().cloned()).collect()
}

/// Client `c`'s CNN training split, identical to what a federated client
/// trains on.
fn cnn_train_split(cfg: &ExperimentConfig, task: &[ClientData], c: usize) -> Vec<ImageSample> {
    split_validation(
        &images(&task[c].train),
        cfg.federation.validation_fraction,
        client_seed(cfg, c),
    )
    .0
}

fn check_task(task: &[ClientData]) -> Result<()> {
    if task.is_empty()
        || task.iter().any(|c| c.train.is_empty())
        || task.iter().all(|c| c.test.is_empty())
    {
        return Err(HarnessError::InsufficientData(
            "every client needs training data and some client needs test data".into(),
        ));
    }
    Ok(())
}

/// Epoch-by-epoch training of one CNN, timing each epoch.
fn train_epochs(
    cfg: &ExperimentConfig,
    train: &[ImageSample],
    epochs: usize,
    seed: u64,
) -> Result<(CnnModel, Vec<CurvePoint>)> {
    let f = &cfg.federation;
    let mut model = CnnModel::init(f.arch, f.seed)?;
    let mut adam = AdamState::new(f.adam);
    let train_cfg = TrainConfig {
        epochs: 1,
        batch_size: f.batch_size,
        augment: f.augment,
        round_to_f32: true,
    };
    let mut curve = Vec::with_capacity(epochs);
    for index in 0..epochs {
        let t0 = Instant::now();
        let m = train_local(&mut model, train, &train_cfg, &mut adam, seed)?;
        let last = m.last().expect("one epoch ran");
        curve.push(CurvePoint {
            index,
            loss: last.loss,
            accuracy: last.accuracy,
            test_loss: None,
            test_accuracy: None,
            wall_clock_s: t0.elapsed().as_secs_f64(),
        });
    }
    Ok((model, curve))
}

fn finish_curve(model: &CnnModel, test: &[MultiSample], curve: &mut [CurvePoint]) -> Result<()> {
    if let Some(last) = curve.last_mut() {
        let eval = evaluate(model, &images(test))?;
        last.test_loss = Some(eval.loss);
        last.test_accuracy = Some(eval.accuracy);
    }
    Ok(())
}

/// Client 0 alone: one CNN and one forest trained on its own data.
pub fn run_individual(cfg: &ExperimentConfig, task: &[ClientData]) -> Result<ExperimentReport> {
    check_task(task)?;
    let test = union_test(task);
    let start = Instant::now();
    let train = cnn_train_split(cfg, task, 0);
    let (model, mut curve) = train_epochs(cfg, &train, cfg.individual_epochs, client_seed(cfg, 0))?;
    let forest = fit_forest(
        &features(&task[0].train),
        &cfg.forest,
        seed::derive(cfg.seed, &[seed::tag::FOREST, 0]),
    )?;
    let wall_clock_s = start.elapsed().as_secs_f64();
    finish_curve(&model, &test, &mut curve)?;
    let scores = evaluate_multimodal(&model, &forest, &test, cfg.fusion)?;
    Ok(report(
        cfg,
        ExperimentMode::Individual,
        scores,
        curve,
        wall_clock_s,
        train.len(),
        test.len(),
        0,
        cfg.individual_epochs,
        1,
    ))
}

/// All clients' data pooled on one machine.
pub fn run_centralized(cfg: &ExperimentConfig, task: &[ClientData]) -> Result<ExperimentReport> {
    check_task(task)?;
    let test = union_test(task);
    let start = Instant::now();
    let train: Vec<ImageSample> = (0..task.len())
        .flat_map(|c| cnn_train_split(cfg, task, c))
        .collect();
    let (model, mut curve) =
        train_epochs(cfg, &train, cfg.centralized_epochs, cfg.federation.seed)?;
    let pooled: Vec<LabeledFeatures> = task.iter().flat_map(|c| features(&c.train)).collect();
    let forest = fit_forest(
        &pooled,
        &cfg.forest,
        seed::derive(cfg.seed, &[seed::tag::FOREST]),
    )?;
    let wall_clock_s = start.elapsed().as_secs_f64();
    finish_curve(&model, &test, &mut curve)?;
    let scores = evaluate_multimodal(&model, &forest, &test, cfg.fusion)?;
    Ok(report(
        cfg,
        ExperimentMode::Centralized,
        scores,
        curve,
        wall_clock_s,
        train.len(),
        test.len(),
        0,
        cfg.centralized_epochs,
        task.len(),
    ))
}

/// FedAvg over the clients' CNNs; each client keeps a local forest. Each
/// client's test samples are scored with the final global CNN and that
/// client's forest.
pub fn run_federated(cfg: &ExperimentConfig, task: &[ClientData]) -> Result<ExperimentReport> {
    check_task(task)?;
    let f = &cfg.federation;
    if task.len() != f.n_clients {
        return Err(HarnessError::InsufficientData(format!(
            "{} clients configured, task has {}",
            f.n_clients,
            task.len()
        )));
    }
    let test = union_test(task);
    let test_images = images(&test);
    let start = Instant::now();
    let setups = task
        .iter()
        .enumerate()
        .map(|(c, d)| ClientSetup::new(c as u32, images(&d.train), f.seed))
        .collect();
    let mut eval_model = CnnModel::zeros(f.arch)?;
    let mut evaluator = |w: &crate::nn::ModelWeights| {
        eval_model.set_weights(w.clone()).ok()?;
        let e = evaluate(&eval_model, &test_images).ok()?;
        Some(TestMetrics {
            loss: e.loss,
            accuracy: e.accuracy,
        })
    };
    let outcome = run_federation(f, setups, Some(&mut evaluator))?;
    let forests = task
        .iter()
        .enumerate()
        .map(|(c, d)| {
            fit_forest(
                &features(&d.train),
                &cfg.forest,
                seed::derive(cfg.seed, &[seed::tag::FOREST, c as u64]),
            )
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let wall_clock_s = start.elapsed().as_secs_f64();

    let history = outcome.history;
    let model = CnnModel::from_weights(f.arch, history.final_weights.clone())?;
    let mut scores = MultimodalScores::default();
    for (d, forest) in task.iter().zip(&forests) {
        scores.merge(&evaluate_multimodal(&model, forest, &d.test, cfg.fusion)?);
    }
    let curve = curve_from_history(&history);
    let train_samples = (0..task.len())
        .map(|c| cnn_train_split(cfg, task, c).len())
        .sum();
    let rounds = curve.len();
    Ok(report(
        cfg,
        ExperimentMode::Federated,
        scores,
        curve,
        wall_clock_s,
        train_samples,
        test.len(),
        rounds,
        f.local_epochs,
        task.len(),
    ))
}

/// One curve point per closed round.
pub fn curve_from_history(history: &FederationHistory) -> Vec<CurvePoint> {
    history
        .rounds
        .iter()
        .enumerate()
        .map(|(index, r)| CurvePoint {
            index,
            loss: r.loss,
            accuracy: r.accuracy,
            test_loss: r.test.map(|t| t.loss),
            test_accuracy: r.test.map(|t| t.accuracy),
            wall_clock_s: r.wall_clock_s,
        })
        .collect()
}

pub fn run_experiment(
    cfg: &ExperimentConfig,
    task: &[ClientData],
    mode: ExperimentMode,
) -> Result<ExperimentReport> {
    match mode {
        ExperimentMode::Individual => run_individual(cfg, task),
        ExperimentMode::Centralized => run_centralized(cfg, task),
        ExperimentMode::Federated => run_federated(cfg, task),
    }
}

#[allow(clippy::too_many_arguments)]
fn report(
    cfg: &ExperimentConfig,
    mode: ExperimentMode,
    scores: MultimodalScores,
    curve: Vec<CurvePoint>,
    wall_clock_s: f64,
    train_samples: usize,
    test_samples: usize,
    rounds: usize,
    epochs: usize,
    clients: usize,
) -> ExperimentReport {
    ExperimentReport {
        mode,
        wall_clock_s,
        rounds,
        epochs,
        clients,
        train_samples,
        test_samples,
        fusion: cfg.fusion,
        curve,
        confusion_physio: scores.physio,
        confusion_visual: scores.visual,
        confusion_fused: scores.fused,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synthetic_task;
    use crate::nn::CnnArch;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.synth.train_per_class = 3;
        cfg.synth.test_per_class = 1;
        cfg.federation.arch = CnnArch::reduced();
        cfg.federation.rounds = 2;
        cfg.federation.local_epochs = 1;
        cfg.federation.batch_size = 8;
        cfg.individual_epochs = 1;
        cfg.centralized_epochs = 2;
        cfg.forest.n_trees = 5;
        cfg
    }

    fn reduced_task(cfg: &ExperimentConfig) -> Vec<ClientData> {
        let mut task = synthetic_task(cfg).unwrap();
        let shrink = |s: &mut MultiSample| {
            s.image = (0..8)
                .flat_map(|r| (0..8).map(move |c| (r * 6, c * 6)))
                .map(|(r, c)| s.image[r * 48 + c])
                .collect()
        };
        for c in &mut task {
            c.train.iter_mut().chain(c.test.iter_mut()).for_each(shrink);
        }
        task
    }

    #[test]
    fn modes_report_consistently() {
        let cfg = small();
        let task = reduced_task(&cfg);
        for mode in [
            ExperimentMode::Individual,
            ExperimentMode::Centralized,
            ExperimentMode::Federated,
        ] {
            let r = run_experiment(&cfg, &task, mode).unwrap();
            assert_eq!(r.mode, mode);
            assert_eq!(r.test_samples, 21);
            for cm in [r.confusion_physio, r.confusion_visual, r.confusion_fused] {
                assert_eq!(cm.total(), 21);
            }
            let steps = match mode {
                ExperimentMode::Individual => 1,
                ExperimentMode::Centralized => 2,
                ExperimentMode::Federated => 2,
            };
            assert_eq!(r.curve.len(), steps);
            assert!(r.wall_clock_s > 0.0);
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = small();
        let task = reduced_task(&cfg);
        let a = run_federated(&cfg, &task).unwrap();
        let b = run_federated(&cfg, &task).unwrap();
        assert_eq!(a.without_timing(), b.without_timing());
    }
}
