//! Temporary diagnostic: endpoint behavior of the desk-scale configuration
//! at smaller learning rates, to confirm the within-epoch error rattle is
//! step-size-driven rather than a gradient defect.

use simplexnet_core::convnet::Preset;
use simplexnet_core::data;
use simplexnet_core::trainer::{evaluate, run_epoch, FeatureSpec, StageKind, TrainConfig, TrainState};

fn main() {
    let root = std::path::PathBuf::from("crates/core/data");
    let train_set = data::load_mnist::<f64>(
        &root.join("train-images-idx3-ubyte"),
        &root.join("train-labels-idx1-ubyte"),
    )
    .unwrap()
    .seeded_subset(5000, 101)
    .unwrap()
    .zero_padded(2);
    let test_set = data::load_mnist::<f64>(
        &root.join("t10k-images-idx3-ubyte"),
        &root.join("t10k-labels-idx1-ubyte"),
    )
    .unwrap()
    .seeded_subset(1000, 102)
    .unwrap()
    .zero_padded(2);

    for h in [0.5f64, 0.3, 0.1] {
        let config = TrainConfig::new(
            StageKind::RescaledRegular,
            FeatureSpec::Convnet(Preset::MnistSmaller),
            h,
            16,
            3,
            7,
        );
        let mut state = TrainState::init(&config, &train_set).unwrap();
        let mut errs = Vec::new();
        for epoch in 0..3 {
            run_epoch(&mut state, &train_set, &config, epoch).unwrap();
            errs.push(evaluate(&state, &test_set, true));
        }
        println!("rescaled h={h} seed 7: per-epoch test_error={errs:?}");
    }
}
