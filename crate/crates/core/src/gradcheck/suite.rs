//! The suite proper: random instances per operator, finite differences on the
//! cost side only, and the gradient-norm bound audit. Every instance draw is
//! seeded, so a report is reproducible from its config.

use num_complex::Complex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{
    central_gradient, max_relative_error, random_complex_away_from_zero, random_tensor,
    random_unit, spectral_norm, uniform, FaultInjection, GradCheckConfig, GradCheckReport,
    OperatorReport,
};
use crate::convnet::{
    avgpool2x2, avgpool2x2_backward, convnet_backward, convnet_forward, modulus, modulus_backward,
    real_conv_backward_inputs, real_conv_backward_kernels, real_conv_valid, ArchitectureSpec,
    ConvParams, ConvStageSpec, KernelBank,
};
use crate::error::Result;
use crate::logistic::{logistic_cost, logistic_cost_and_backward};
use crate::rng::{derive_seed, seeded};
use crate::simplex::{regular_simplex, standard_simplex, TargetSet};
use crate::stage::{self, ClassifierParams};
use crate::tensor::{euclidean_norm, matvec, ComplexImage, Image, Tensor};

/// Denominator floor for the relative error, so components whose true
/// gradient is near zero are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-3;

/// Directions this close to degenerate are redrawn: finite differences would
/// amplify curvature there, not expose gradient bugs.
const DIRECTION_MARGIN: f64 = 0.1;

/// Complex convolution outputs this close to the modulus kink are redrawn.
const KINK_MARGIN: f64 = 5e-2;

/// Runs every operator check plus the gradient-norm bound audit.
pub fn run(config: &GradCheckConfig) -> Result<GradCheckReport> {
    let operators = vec![
        check_stage_cost(config)?,
        check_logistic_cost(config)?,
        check_modulus(config)?,
        check_avgpool(config)?,
        check_convolution(config)?,
        check_convnet(config)?,
        check_pipeline(config)?,
    ];
    let bound_violations = check_bound(config)?;
    Ok(GradCheckReport {
        operators,
        tolerance: config.tolerance,
        bound_instances: config.bound_instances,
        bound_violations,
    })
}

fn flatten_pair(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    a.data().iter().chain(b.data()).copied().collect()
}

fn random_targets(rng: &mut ChaCha8Rng, regular: bool) -> Result<TargetSet<f64>> {
    let k = rng.gen_range(2..=5usize);
    if regular {
        let m = rng.gen_range((k - 1).max(2)..=k + 2);
        regular_simplex(k, m)
    } else {
        standard_simplex(k, k)
    }
}

/// Joint gradient of the normalized-projection cost in `A` and `x`.
fn check_stage_cost(config: &GradCheckConfig) -> Result<OperatorReport> {
    let mut rng = seeded(derive_seed(config.seed, 10));
    let mut worst = 0.0f64;
    for instance in 0..config.instances {
        let targets = random_targets(&mut rng, instance % 2 == 0)?;
        let (k, m) = (targets.k(), targets.m());
        let n = rng.gen_range(m..=m + 5);
        let a = random_tensor(&mut rng, vec![m, n], -1.0, 1.0);
        let x = loop {
            let x = random_tensor(&mut rng, vec![n], -1.0, 1.0);
            if euclidean_norm(&matvec(&a, &x)?) > DIRECTION_MARGIN {
                break x;
            }
        };
        let label = rng.gen_range(1..=k);
        let params = ClassifierParams::from_matrix(a.clone())?;
        let (_, grad_a, grad_x) = stage::cost_and_backward(&params, &x, &targets, label)?;
        let analytic = flatten_pair(&grad_a, &grad_x);
        let point = flatten_pair(&a, &x);
        let f = |p: &[f64]| {
            let a = Tensor::new(vec![m, n], p[..m * n].to_vec()).unwrap();
            let params = ClassifierParams::from_matrix(a).unwrap();
            let x = Tensor::from_vec(p[m * n..].to_vec());
            let out = stage::forward(&params, &x, &targets).unwrap();
            stage::cost(&out.z, targets.target(label)).unwrap()
        };
        let fd = central_gradient(f, &point, config.step);
        worst = worst.max(max_relative_error(&analytic, &fd, REL_FLOOR));
    }
    Ok(OperatorReport {
        name: "stage-cost",
        instances: config.instances,
        max_rel_error: worst,
    })
}

/// Joint gradient of the multinomial-logistic cost in `A` and `x`.
fn check_logistic_cost(config: &GradCheckConfig) -> Result<OperatorReport> {
    let mut rng = seeded(derive_seed(config.seed, 11));
    let mut worst = 0.0f64;
    for _ in 0..config.instances {
        let k = rng.gen_range(2..=6usize);
        let n = rng.gen_range(k..=k + 5);
        let a = random_tensor(&mut rng, vec![k, n], -1.0, 1.0);
        let x = random_tensor(&mut rng, vec![n], -1.0, 1.0);
        let label = rng.gen_range(1..=k);
        let params = ClassifierParams::from_matrix(a.clone())?;
        let (_, grad_a, grad_x) = logistic_cost_and_backward(&params, &x, label)?;
        let analytic = flatten_pair(&grad_a, &grad_x);
        let point = flatten_pair(&a, &x);
        let f = |p: &[f64]| {
            let a = Tensor::new(vec![k, n], p[..k * n].to_vec()).unwrap();
            let x = Tensor::from_vec(p[k * n..].to_vec());
            logistic_cost(&matvec(&a, &x).unwrap(), label).unwrap()
        };
        let fd = central_gradient(f, &point, config.step);
        worst = worst.max(max_relative_error(&analytic, &fd, REL_FLOOR));
    }
    Ok(OperatorReport {
        name: "logistic-cost",
        instances: config.instances,
        max_rel_error: worst,
    })
}

/// Gradient of a weighted sum of pixel moduli in the complex pixels (as
/// independent real and imaginary parts).
fn check_modulus(config: &GradCheckConfig) -> Result<OperatorReport> {
    let mut rng = seeded(derive_seed(config.seed, 12));
    let sign = match config.fault {
        FaultInjection::ModulusGradSignFlip => -1.0,
        FaultInjection::None => 1.0,
    };
    let mut worst = 0.0f64;
    for _ in 0..config.instances {
        let h = rng.gen_range(2..=4usize);
        let w = rng.gen_range(2..=4usize);
        let pixels = random_complex_away_from_zero(&mut rng, h * w);
        let image = ComplexImage::new(h, w, pixels.clone())?;
        let weights = random_tensor(&mut rng, vec![h, w], -1.0, 1.0);
        let cotangent = modulus_backward(&image, &weights)?;
        let analytic: Vec<f64> = cotangent
            .data()
            .iter()
            .flat_map(|c| [sign * c.re, sign * c.im])
            .collect();
        let point: Vec<f64> = pixels.iter().flat_map(|c| [c.re, c.im]).collect();
        let f = |p: &[f64]| {
            let px: Vec<Complex<f64>> = p.chunks(2).map(|q| Complex::new(q[0], q[1])).collect();
            let img = ComplexImage::new(h, w, px).unwrap();
            modulus(&img)
                .data()
                .iter()
                .zip(weights.data())
                .map(|(v, g)| v * g)
                .sum()
        };
        let fd = central_gradient(f, &point, config.step);
        worst = worst.max(max_relative_error(&analytic, &fd, REL_FLOOR));
    }
    Ok(OperatorReport {
        name: "modulus",
        instances: config.instances,
        max_rel_error: worst,
    })
}

/// Gradient of a weighted sum of 2×2-pooled pixels in the input pixels.
fn check_avgpool(config: &GradCheckConfig) -> Result<OperatorReport> {
    let mut rng = seeded(derive_seed(config.seed, 13));
    let mut worst = 0.0f64;
    for _ in 0..config.instances {
        let h = 2 * rng.gen_range(1..=3usize);
        let w = 2 * rng.gen_range(1..=3usize);
        let input = random_tensor(&mut rng, vec![h, w], -1.0, 1.0);
        let weights = random_tensor(&mut rng, vec![h / 2, w / 2], -1.0, 1.0);
        let analytic = avgpool2x2_backward(&weights).data().to_vec();
        let f = |p: &[f64]| {
            let img = Tensor::new(vec![h, w], p.to_vec()).unwrap();
            avgpool2x2(&img)
                .unwrap()
                .data()
                .iter()
                .zip(weights.data())
                .map(|(v, g)| v * g)
                .sum()
        };
        let fd = central_gradient(f, input.data(), config.step);
        worst = worst.max(max_relative_error(&analytic, &fd, REL_FLOOR));
    }
    Ok(OperatorReport {
        name: "avgpool",
        instances: config.instances,
        max_rel_error: worst,
    })
}

/// Joint gradient of a real-weighted reading of the valid cross-correlation,
/// in the complex kernels and the real input planes.
fn check_convolution(config: &GradCheckConfig) -> Result<OperatorReport> {
    let mut rng = seeded(derive_seed(config.seed, 14));
    let mut worst = 0.0f64;
    for _ in 0..config.instances {
        let ii = rng.gen_range(1..=2usize);
        let oo = rng.gen_range(1..=2usize);
        let ks = rng.gen_range(1..=3usize);
        let s = rng.gen_range(ks + 1..=ks + 3);
        let conv = s - ks + 1;
        let kernels: Vec<Complex<f64>> = (0..ii * oo * ks * ks)
            .map(|_| Complex::new(uniform(&mut rng, -1.0, 1.0), uniform(&mut rng, -1.0, 1.0)))
            .collect();
        let bank = KernelBank::new(ii, oo, ks, kernels.clone())?;
        let inputs: Vec<Tensor<f64>> = (0..ii)
            .map(|_| random_tensor(&mut rng, vec![s, s], -1.0, 1.0))
            .collect();
        let grads: Vec<ComplexImage<f64>> = (0..oo)
            .map(|_| {
                let px = (0..conv * conv)
                    .map(|_| {
                        Complex::new(uniform(&mut rng, -1.0, 1.0), uniform(&mut rng, -1.0, 1.0))
                    })
                    .collect();
                ComplexImage::new(conv, conv, px)
            })
            .collect::<Result<_>>()?;

        let grad_bank = real_conv_backward_kernels(&inputs, &grads, &bank)?;
        let grad_inputs = real_conv_backward_inputs(&bank, &grads, s)?;
        let mut analytic: Vec<f64> = grad_bank
            .data()
            .iter()
            .flat_map(|c| [c.re, c.im])
            .collect();
        for g in &grad_inputs {
            analytic.extend_from_slice(g.data());
        }
        let mut point: Vec<f64> = kernels.iter().flat_map(|c| [c.re, c.im]).collect();
        for x in &inputs {
            point.extend_from_slice(x.data());
        }

        let nk = 2 * ii * oo * ks * ks;
        let f = |p: &[f64]| {
            let kd: Vec<Complex<f64>> =
                p[..nk].chunks(2).map(|q| Complex::new(q[0], q[1])).collect();
            let bank = KernelBank::new(ii, oo, ks, kd).unwrap();
            let mut planes = Vec::with_capacity(ii);
            let mut off = nk;
            for _ in 0..ii {
                planes.push(Tensor::new(vec![s, s], p[off..off + s * s].to_vec()).unwrap());
                off += s * s;
            }
            let outs = real_conv_valid(&planes, &bank).unwrap();
            outs.iter()
                .zip(&grads)
                .flat_map(|(c, g)| {
                    c.data()
                        .iter()
                        .zip(g.data())
                        .map(|(cv, gv)| cv.re * gv.re + cv.im * gv.im)
                })
                .sum()
        };
        let fd = central_gradient(f, &point, config.step);
        worst = worst.max(max_relative_error(&analytic, &fd, REL_FLOOR));
    }
    Ok(OperatorReport {
        name: "convolution",
        instances: config.instances,
        max_rel_error: worst,
    })
}

fn tiny_arch() -> ArchitectureSpec {
    ArchitectureSpec::new(vec![
        ConvStageSpec::new(1, 2, 3, 8).unwrap(),
        ConvStageSpec::new(2, 2, 2, 3).unwrap(),
    ])
    .expect("valid test architecture")
}

fn conv_params_to_flat(params: &ConvParams<f64>) -> Vec<f64> {
    params
        .stages()
        .iter()
        .flat_map(|b| b.data().iter().flat_map(|c| [c.re, c.im]))
        .collect()
}

fn conv_params_from_flat(arch: &ArchitectureSpec, flat: &[f64]) -> ConvParams<f64> {
    let mut params = ConvParams::zeros(arch);
    let mut it = flat.iter();
    for bank in params.stages_mut() {
        for c in bank.data_mut() {
            c.re = *it.next().unwrap();
            c.im = *it.next().unwrap();
        }
    }
    params
}

/// Draws kernels and an image whose convolution outputs all clear the
/// modulus kink, so central differences stay on one branch.
fn kink_free_instance(
    rng: &mut ChaCha8Rng,
    arch: &ArchitectureSpec,
) -> Result<(ConvParams<f64>, Image<f64>)> {
    loop {
        let params = ConvParams::init(arch, rng.gen());
        let pixels = arch.channels() * arch.input_size() * arch.input_size();
        let image = Image::new(
            arch.channels(),
            arch.input_size(),
            arch.input_size(),
            (0..pixels).map(|_| rng.gen::<f64>()).collect(),
        )?;
        let (_, trace) = convnet_forward(arch, &params, &image)?;
        let clear = trace
            .conv_outputs()
            .iter()
            .flatten()
            .all(|img| img.data().iter().all(|c| c.norm() > KINK_MARGIN));
        if clear {
            return Ok((params, image));
        }
    }
}

/// Gradient of a weighted reading of the full feature map in the kernels.
fn check_convnet(config: &GradCheckConfig) -> Result<OperatorReport> {
    let mut rng = seeded(derive_seed(config.seed, 15));
    let arch = tiny_arch();
    let mut worst = 0.0f64;
    for _ in 0..config.instances {
        let (params, image) = kink_free_instance(&mut rng, &arch)?;
        let weights = random_tensor(&mut rng, vec![arch.feature_len()], -1.0, 1.0);
        let (_, trace) = convnet_forward(&arch, &params, &image)?;
        let analytic = conv_params_to_flat(&convnet_backward(&arch, &params, &trace, &weights)?);
        let point = conv_params_to_flat(&params);
        let f = |p: &[f64]| {
            let params = conv_params_from_flat(&arch, p);
            let (features, _) = convnet_forward(&arch, &params, &image).unwrap();
            features
                .data()
                .iter()
                .zip(weights.data())
                .map(|(v, g)| v * g)
                .sum()
        };
        let fd = central_gradient(f, &point, config.step);
        worst = worst.max(max_relative_error(&analytic, &fd, REL_FLOOR));
    }
    Ok(OperatorReport {
        name: "convnet",
        instances: config.instances,
        max_rel_error: worst,
    })
}

/// End-to-end gradient of the stage cost through the convnet, jointly in the
/// kernels and `A`.
fn check_pipeline(config: &GradCheckConfig) -> Result<OperatorReport> {
    let mut rng = seeded(derive_seed(config.seed, 16));
    let arch = tiny_arch();
    let n = arch.feature_len();
    let targets = regular_simplex::<f64>(3, 3)?;
    let mut worst = 0.0f64;
    for _ in 0..config.instances {
        let (params, image, a, x) = loop {
            let (params, image) = kink_free_instance(&mut rng, &arch)?;
            let a = ClassifierParams::init(3, n, rng.gen())?;
            let (x, _) = convnet_forward(&arch, &params, &image)?;
            if euclidean_norm(&matvec(a.matrix(), &x)?) > DIRECTION_MARGIN {
                break (params, image, a, x);
            }
        };
        let label = rng.gen_range(1..=3usize);
        let (_, grad_a, grad_x) = stage::cost_and_backward(&a, &x, &targets, label)?;
        let (_, trace) = convnet_forward(&arch, &params, &image)?;
        let grad_kernels = convnet_backward(&arch, &params, &trace, &grad_x)?;
        let mut analytic = conv_params_to_flat(&grad_kernels);
        analytic.extend_from_slice(grad_a.data());
        let mut point = conv_params_to_flat(&params);
        point.extend_from_slice(a.matrix().data());

        let nk = params.real_param_count();
        let f = |p: &[f64]| {
            let params = conv_params_from_flat(&arch, &p[..nk]);
            let a = ClassifierParams::from_matrix(
                Tensor::new(vec![3, n], p[nk..].to_vec()).unwrap(),
            )
            .unwrap();
            let (x, _) = convnet_forward(&arch, &params, &image).unwrap();
            let out = stage::forward(&a, &x, &targets).unwrap();
            stage::cost(&out.z, targets.target(label)).unwrap()
        };
        let fd = central_gradient(f, &point, config.step);
        worst = worst.max(max_relative_error(&analytic, &fd, REL_FLOOR));
    }
    Ok(OperatorReport {
        name: "pipeline",
        instances: config.instances,
        max_rel_error: worst,
    })
}

/// Audits `‖∂c/∂x‖ ≤ 4·σ(A)/‖Ax‖` on random instances and checks that the
/// right-hand side is invariant under rescaling `A` by `β ∈ {0.5, 2, 10}`
/// (to 1e-12 relative). Either failure counts as a violation.
fn check_bound(config: &GradCheckConfig) -> Result<usize> {
    let mut rng = seeded(derive_seed(config.seed, 17));
    let mut violations = 0usize;
    for instance in 0..config.bound_instances {
        let targets = random_targets(&mut rng, instance % 2 == 0)?;
        let (k, m) = (targets.k(), targets.m());
        let n = rng.gen_range(m..=m + 5);
        let a = random_tensor(&mut rng, vec![m, n], -1.0, 1.0);
        let x = loop {
            let x = random_unit(&mut rng, n).scaled(uniform(&mut rng, 0.5, 2.0));
            if euclidean_norm(&matvec(&a, &x)?) > 1e-3 {
                break x;
            }
        };
        let label = rng.gen_range(1..=k);
        let params = ClassifierParams::from_matrix(a.clone())?;
        let (_, _, grad_x) = stage::cost_and_backward(&params, &x, &targets, label)?;
        let lhs = euclidean_norm(&grad_x);

        let power_seed = rng.gen::<u64>();
        let rhs_of = |beta: f64| -> Result<f64> {
            let scaled = a.scaled(beta);
            let sigma = spectral_norm(&scaled, power_seed);
            Ok(4.0 * sigma / euclidean_norm(&matvec(&scaled, &x)?))
        };
        let rhs = rhs_of(1.0)?;
        let bound_ok = lhs <= rhs * (1.0 + 1e-9);
        let invariant = [0.5, 2.0, 10.0]
            .iter()
            .map(|&beta| rhs_of(beta))
            .collect::<Result<Vec<_>>>()?
            .iter()
            .all(|r| (r / rhs - 1.0).abs() <= 1e-12);
        if !bound_ok || !invariant {
            violations += 1;
        }
    }
    Ok(violations)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduced_suite_passes() {
        let config = GradCheckConfig {
            instances: 10,
            bound_instances: 50,
            ..GradCheckConfig::default()
        };
        let report = run(&config).unwrap();
        assert!(report.passed(), "failures: {:?}", report.failing_operators());
        let names: Vec<_> = report.operators.iter().map(|o| o.name).collect();
        assert_eq!(
            names,
            vec![
                "stage-cost",
                "logistic-cost",
                "modulus",
                "avgpool",
                "convolution",
                "convnet",
                "pipeline"
            ]
        );
    }

    #[test]
    fn full_suite_meets_criterion_counts() {
        let config = GradCheckConfig::default();
        assert!(config.instances >= 100);
        assert!(config.bound_instances >= 1000);
        let report = run(&config).unwrap();
        assert!(report.passed(), "failures: {:?}", report.failing_operators());
        for op in &report.operators {
            assert!(op.max_rel_error < 1e-4, "{}: {}", op.name, op.max_rel_error);
        }
        assert_eq!(report.bound_violations, 0);
    }

    #[test]
    fn sign_flip_fault_is_caught_and_named() {
        let config = GradCheckConfig {
            instances: 10,
            bound_instances: 10,
            fault: FaultInjection::ModulusGradSignFlip,
            ..GradCheckConfig::default()
        };
        let report = run(&config).unwrap();
        assert!(!report.passed());
        assert_eq!(report.failing_operators(), vec!["modulus"]);
    }
}
