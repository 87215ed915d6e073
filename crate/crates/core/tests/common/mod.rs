#![allow(dead_code)]

use fedfuse::fedcore::{ClientUpdate, UpdateMetrics};
use fedfuse::forest::{fit_forest, predict_forest, ForestConfig, LabeledFeatures};
use fedfuse::harness::{synthetic_features, SynthPhysioConfig};
use fedfuse::nn::{CnnArch, CnnModel, ModelWeights, NamedTensor};
use fedfuse::seed::{self, Rng};
use fedfuse::transport::serialize_weights;
use fedfuse::transport::{Message, MessageKind, RoundSummary, UpdatePayload, WelcomePayload};
use fedfuse::EmotionLabel;
use rand::Rng as _;

/// Largest relative error between backprop and central differences over
/// every parameter of the reduced CNN on a random batch, dropout masks
/// held fixed. Denominators are floored at 1e-6 so that gradients too
/// small to resolve by differencing are compared absolutely.
pub fn gradient_check(seed_value: u64) -> f64 {
    let arch = CnnArch::reduced();
    let mut model = CnnModel::init(arch, seed_value).unwrap();
    let mut rng = seed::stream(seed_value, &[99]);
    for t in model.weights_mut().tensors_mut() {
        if t.dims.len() == 1 {
            t.data
                .iter_mut()
                .for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
    }
    let images: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            (0..arch.input_pixels())
                .map(|_| rng.random::<f64>())
                .collect()
        })
        .collect();
    let refs: Vec<&[f64]> = images.iter().map(Vec::as_slice).collect();
    let labels: Vec<EmotionLabel> = (0..3)
        .map(|i| EmotionLabel::from_index((i * 3) % 7).unwrap())
        .collect();

    let mask_rng = || Some(seed::stream(seed_value, &[7]));
    let (_, analytic) = model.backward(&refs, &labels, mask_rng().as_mut()).unwrap();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for ti in 0..model.weights().tensors().len() {
        for i in 0..model.weights().tensors()[ti].data.len() {
            let orig = model.weights().tensors()[ti].data[i];
            model.weights_mut().tensors_mut()[ti].data[i] = orig + h;
            let up = model.loss(&refs, &labels, mask_rng().as_mut()).unwrap();
            model.weights_mut().tensors_mut()[ti].data[i] = orig - h;
            let down = model.loss(&refs, &labels, mask_rng().as_mut()).unwrap();
            model.weights_mut().tensors_mut()[ti].data[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.tensors()[ti].data[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

pub fn weights(shapes: &[Vec<usize>], rng: &mut Rng) -> ModelWeights {
    ModelWeights::new(
        shapes
            .iter()
            .enumerate()
            .map(|(i, dims)| {
                let n = dims.iter().product();
                let scale = 10f64.powi(rng.random_range(-3..3));
                let data = (0..n)
                    .map(|_| rng.random_range(-1.0..1.0) * scale)
                    .collect();
                NamedTensor::new(format!("t{i}"), dims.clone(), data).unwrap()
            })
            .collect(),
    )
    .unwrap()
}

/// A random update set: up to five clients, up to 10^4 values in total.
pub fn random_updates(rng: &mut Rng) -> Vec<ClientUpdate> {
    let n_tensors = rng.random_range(1..=3);
    let shapes: Vec<Vec<usize>> = (0..n_tensors)
        .map(|_| match rng.random_range(0..3) {
            0 => vec![rng.random_range(1..=3000)],
            1 => vec![rng.random_range(1..=50), rng.random_range(1..=60)],
            _ => vec![rng.random_range(1..=8), rng.random_range(1..=4), 3, 3],
        })
        .collect();
    let clients = rng.random_range(1..=5);
    let mut ids: Vec<u32> = (0..20).collect();
    rand::seq::SliceRandom::shuffle(&mut ids[..], rng);
    (0..clients)
        .map(|c| ClientUpdate {
            client_id: ids[c],
            round: 3,
            weights: weights(&shapes, rng),
            sample_count: rng.random_range(1..=100_000),
            metrics: UpdateMetrics::default(),
        })
        .collect()
}

/// Plain loop `sum_n m_n w_n / M` in input order, with the matching scale
/// `sum_n m_n |w_n| / M` for relative errors.
pub fn scalar_weighted_mean(updates: &[ClientUpdate]) -> Vec<Vec<(f64, f64)>> {
    let total: f64 = updates.iter().map(|u| u.sample_count as f64).sum();
    let first = updates[0].weights.tensors();
    (0..first.len())
        .map(|t| {
            (0..first[t].data.len())
                .map(|i| {
                    let mut sum = 0.0;
                    let mut scale = 0.0;
                    for u in updates {
                        let v = u.weights.tensors()[t].data[i];
                        sum += u.sample_count as f64 * v;
                        scale += u.sample_count as f64 * v.abs();
                    }
                    (sum / total, scale / total)
                })
                .collect()
        })
        .collect()
}

/// Largest relative error of `fedavg` against [`scalar_weighted_mean`].
pub fn fedavg_error(updates: &[ClientUpdate]) -> f64 {
    let got = fedfuse::fedcore::fedavg(updates).unwrap();
    let want = scalar_weighted_mean(updates);
    let mut worst: f64 = 0.0;
    for (t, rows) in got.tensors().iter().zip(&want) {
        for (&g, &(w, scale)) in t.data.iter().zip(rows) {
            if scale > 0.0 {
                worst = worst.max((g - w).abs() / scale);
            } else {
                assert_eq!(g, 0.0);
            }
        }
    }
    worst
}

pub fn fixture_weights() -> ModelWeights {
    let t =
        |name: &str, dims: Vec<usize>, data: Vec<f64>| NamedTensor::new(name, dims, data).unwrap();
    ModelWeights::new(vec![
        t(
            "conv1.w",
            vec![2, 1, 3, 3],
            (0..18).map(|i| (i as f64 - 9.0) / 8.0).collect(),
        ),
        t("conv1.b", vec![2], vec![0.5, -0.25]),
        t(
            "dense.w",
            vec![3, 2],
            (0..6).map(|i| i as f64 * 0.125).collect(),
        ),
        t("out.b", vec![1], vec![-3.0]),
    ])
    .unwrap()
}

/// Committed frames and the messages they encode.
pub fn golden_messages() -> Vec<(&'static [u8], Message)> {
    let blob = serialize_weights(&fixture_weights()).unwrap();
    let update = UpdatePayload {
        sample_count: 252,
        loss: 1.25,
        accuracy: 0.5,
        weights: fixture_weights(),
    };
    let summary = RoundSummary {
        loss: 0.75,
        accuracy: 0.8125,
        participants: 3,
    };
    let welcome = WelcomePayload {
        rounds: 20,
        local_epochs: 4,
    };
    vec![
        (
            include_bytes!("../fixtures/frame_hello.bin"),
            Message::empty(MessageKind::Hello, 0, 2),
        ),
        (
            include_bytes!("../fixtures/frame_welcome.bin"),
            Message::new(MessageKind::Welcome, 0, 1, welcome.encode()),
        ),
        (
            include_bytes!("../fixtures/frame_global_model.bin"),
            Message::new(MessageKind::GlobalModel, 3, 0, blob),
        ),
        (
            include_bytes!("../fixtures/frame_update.bin"),
            Message::new(MessageKind::Update, 3, 2, update.encode().unwrap()),
        ),
        (
            include_bytes!("../fixtures/frame_round_done.bin"),
            Message::new(MessageKind::RoundDone, 3, 1, summary.encode()),
        ),
        (
            include_bytes!("../fixtures/frame_shutdown.bin"),
            Message::empty(MessageKind::Shutdown, 20, 0),
        ),
        (
            include_bytes!("../fixtures/frame_error.bin"),
            Message::new(MessageKind::Error, 5, 1, b"timeout".to_vec()),
        ),
    ]
}

/// HRV, EDA maximum and temperature range by explicit loops.
pub fn brute_force_features(hr: &[f64], eda: &[f64], temp: &[f64]) -> [f64; 3] {
    let mut diffs = 0.0;
    for i in 1..hr.len() {
        diffs += (hr[i] - hr[i - 1]).abs();
    }
    let mut eda_max = eda[0];
    for &x in eda {
        if x > eda_max {
            eda_max = x;
        }
    }
    let (mut lo, mut hi) = (temp[0], temp[0]);
    for &x in temp {
        if x < lo {
            lo = x;
        }
        if x > hi {
            hi = x;
        }
    }
    [diffs / (hr.len() - 1) as f64, eda_max, hi - lo]
}

/// Held-out accuracy of a 200-tree forest on noisy but artefact-free windows.
pub fn separable_accuracy() -> (f64, f64) {
    let labelled = |seed_value: u64, per_class: usize| -> Vec<LabeledFeatures> {
        let cfg = SynthPhysioConfig {
            windows_per_class: per_class,
            seed: seed_value,
            ..SynthPhysioConfig::default()
        };
        synthetic_features(&cfg)
            .unwrap()
            .into_iter()
            .map(|(f, l)| LabeledFeatures::new(f, l))
            .collect()
    };
    let train = labelled(100, 50);
    let test = labelled(200, 30);
    let forest = fit_forest(&train, &ForestConfig::default(), 1).unwrap();
    let mut correct = 0;
    let mut worst_sum: f64 = 0.0;
    for s in &test {
        let (p, label) = predict_forest(&forest, &s.features).unwrap();
        assert_eq!(p.probs().len(), 7);
        worst_sum = worst_sum.max((p.probs().iter().sum::<f64>() - 1.0).abs());
        correct += usize::from(label == s.label);
    }
    (correct as f64 / test.len() as f64, worst_sum)
}
