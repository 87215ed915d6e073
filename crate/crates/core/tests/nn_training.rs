use fedfuse::nn::{
    evaluate, train_local, AdamConfig, AdamState, CnnArch, CnnModel, ImageSample, TrainConfig,
};
use fedfuse::EmotionLabel;

#[test]
fn repeated_sample_loss_never_rises() {
    let arch = CnnArch::reduced().without_dropout();
    let sample = ImageSample {
        pixels: (0..64).map(|p| (p % 9) as f64 / 9.0).collect(),
        label: EmotionLabel::Fear,
    };
    let data = vec![sample; 8];
    let mut model = CnnModel::init(arch, 4).unwrap();
    let mut adam = AdamState::new(AdamConfig {
        lr: 1e-3,
        ..AdamConfig::default()
    });
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let mut last = f64::INFINITY;
    for epoch in 0..30 {
        let loss = evaluate(&model, &data).unwrap().loss;
        assert!(loss <= last + 1e-6, "epoch {epoch}: {loss} after {last}");
        last = loss;
        train_local(&mut model, &data, &cfg, &mut adam, 1).unwrap();
    }
}

#[test]
fn bright_versus_dark_is_learned_in_four_epochs() {
    let arch = CnnArch::reduced();
    let data: Vec<ImageSample> = (0..64)
        .map(|i| {
            let bright = i % 2 == 0;
            let level = if bright { 0.8 } else { 0.2 };
            ImageSample {
                pixels: (0..64)
                    .map(|p| level + ((i * 7 + p) % 5) as f64 * 0.02)
                    .collect(),
                label: if bright {
                    EmotionLabel::Happy
                } else {
                    EmotionLabel::Sad
                },
            }
        })
        .collect();
    let mut model = CnnModel::init(arch, 2).unwrap();
    let mut adam = AdamState::new(AdamConfig {
        lr: 1e-2,
        ..AdamConfig::default()
    });
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 8,
        ..TrainConfig::default()
    };
    train_local(&mut model, &data, &cfg, &mut adam, 3).unwrap();
    let acc = evaluate(&model, &data).unwrap().accuracy;
    assert!(acc >= 0.99, "train accuracy {acc}");
}
