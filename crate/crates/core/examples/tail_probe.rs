//! Temporary diagnostic: measures the distribution of head-input norms
//! ‖y‖ = ‖Ax‖ and per-sample gradient magnitudes after two epochs of the
//! desk-scale configuration, to test whether a low-‖y‖ tail drives the
//! within-epoch error rattle.

use simplexnet_core::convnet::Preset;
use simplexnet_core::data;
use simplexnet_core::stage;
use simplexnet_core::tensor;
use simplexnet_core::trainer::{
    run_epoch, FeatureSpec, Head, StageKind, TrainConfig, TrainState,
};

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

    let config = TrainConfig::new(
        StageKind::RescaledRegular,
        FeatureSpec::Convnet(Preset::MnistSmaller),
        1.0,
        16,
        3,
        7,
    );
    let mut state = TrainState::init(&config, &train_set).unwrap();
    for epoch in 0..2 {
        run_epoch(&mut state, &train_set, &config, epoch).unwrap();
        eprintln!("epoch {} done", epoch + 1);
    }

    let (params, targets) = match &state.head {
        Head::Rescaled { params, targets } => (params, targets),
        _ => unreachable!(),
    };
    let a = params.matrix();

    // Per-sample: ‖x‖, ‖y‖, and the stage gradient magnitude ‖g_y‖·‖x‖
    // (the Frobenius norm of that sample's contribution to grad_A).
    let mut rows = Vec::with_capacity(train_set.len());
    for i in 0..train_set.len() {
        let x = state.features_for(train_set.image(i)).unwrap();
        let y = tensor::matvec(a, &x).unwrap();
        let ny = tensor::euclidean_norm(&y);
        let nx = tensor::euclidean_norm(&x);
        let label = train_set.label(i);
        let (_, grad_a, _) = stage::cost_and_backward(params, &x, targets, label).unwrap();
        rows.push((ny, nx, tensor::frobenius_norm(&grad_a)));
    }
    rows.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    let pick = |f: f64| rows[(f * (rows.len() - 1) as f64) as usize];
    println!("percentiles of ‖y‖ (with ‖x‖ and per-sample ‖grad_A‖ at that sample):");
    for (tag, f) in [
        ("min", 0.0),
        ("p01", 0.01),
        ("p05", 0.05),
        ("p25", 0.25),
        ("p50", 0.50),
        ("p75", 0.75),
        ("p99", 0.99),
        ("max", 1.0),
    ] {
        let (ny, nx, ga) = pick(f);
        println!("  {tag}: ‖y‖={ny:.4}  ‖x‖={nx:.1}  ‖grad_A‖={ga:.3}");
    }
    let mean_ga = rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64;
    let max_ga = rows.iter().map(|r| r.2).fold(0.0f64, f64::max);
    println!("per-sample ‖grad_A‖: mean={mean_ga:.3} max={max_ga:.3}");
    println!(
        "‖A‖_F={:.3}; an h=1 mean-gradient step of norm g rotates A by ≈ g/4",
        tensor::frobenius_norm(a)
    );
}
