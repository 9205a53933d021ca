//! Minibatched stochastic gradient descent over the joint convnet +
//! classification-head parameters. Each epoch permutes the training set with
//! an epoch-specific seeded generator, partitions it into minibatches (the
//! final short one is processed, not dropped), applies one update per
//! minibatch with the *mean* gradient and a single learning rate `h` for all
//! parameters, and — for the rescaled stage kinds — renormalizes `A` to
//! Frobenius norm `sqrt(m)` after every minibatch. Degenerate-direction
//! samples contribute zero gradient and are counted, never fatal.

use std::io;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::convnet::{convnet_backward, convnet_forward, ArchitectureSpec, ConvParams, Preset};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::logistic::{logistic_classify, logistic_cost_and_backward};
use crate::rng::{derive_seed, seeded};
use crate::scalar::{real, Real};
use crate::simplex::{regular_simplex, standard_simplex, TargetSet};
use crate::stage::{self, ClassifierParams};
use crate::tensor::{matvec, Image, Tensor};

/// Fixed chunk width for parallel minibatch evaluation. Chunk results are
/// combined in index order, so the outcome does not depend on thread count.
const PARALLEL_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    RescaledRegular,
    RescaledStandard,
    Logistic,
}

impl StageKind {
    pub const ALL: [StageKind; 3] = [
        StageKind::RescaledRegular,
        StageKind::RescaledStandard,
        StageKind::Logistic,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StageKind::RescaledRegular => "rescaled-regular",
            StageKind::RescaledStandard => "rescaled-standard",
            StageKind::Logistic => "logistic",
        }
    }

    pub fn is_rescaled(&self) -> bool {
        !matches!(self, StageKind::Logistic)
    }
}

impl std::fmt::Display for StageKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StageKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StageKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown stage kind '{s}'")))
    }
}

/// Which feature generator feeds the head: the raw flattened pixels, or a
/// convnet preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSpec {
    Identity,
    Convnet(Preset),
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub stage_kind: StageKind,
    pub features: FeatureSpec,
    /// Learning rate; `0` is allowed and makes every update a no-op.
    pub h: f64,
    /// Target dimension (for logistic, must equal the class count).
    pub m: usize,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub seed: u64,
    /// `false` selects the single-threaded reference path.
    pub parallel: bool,
}

impl TrainConfig {
    pub fn new(
        stage_kind: StageKind,
        features: FeatureSpec,
        h: f64,
        m: usize,
        epochs: usize,
        seed: u64,
    ) -> Self {
        Self {
            stage_kind,
            features,
            h,
            m,
            epochs,
            minibatch_size: 100,
            seed,
            parallel: true,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if !self.h.is_finite() || self.h < 0.0 {
            return Err(Error::Contract(format!(
                "learning rate must be finite and >= 0, got {}",
                self.h
            )));
        }
        if self.minibatch_size == 0 {
            return Err(Error::Contract("minibatch size must be >= 1".into()));
        }
        if self.stage_kind == StageKind::Logistic && self.m != k {
            return Err(Error::Contract(format!(
                "the logistic stage requires m = k; got m = {} with k = {k}",
                self.m
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Features<R: Real> {
    Identity { n: usize },
    Convnet { arch: ArchitectureSpec, params: ConvParams<R> },
}

impl<R: Real> Features<R> {
    pub fn n(&self) -> usize {
        match self {
            Features::Identity { n } => *n,
            Features::Convnet { arch, .. } => arch.feature_len(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Head<R: Real> {
    Rescaled {
        params: ClassifierParams<R>,
        targets: TargetSet<R>,
    },
    Logistic {
        params: ClassifierParams<R>,
    },
}

impl<R: Real> Head<R> {
    pub fn params(&self) -> &ClassifierParams<R> {
        match self {
            Head::Rescaled { params, .. } | Head::Logistic { params } => params,
        }
    }

    fn is_rescaled(&self) -> bool {
        matches!(self, Head::Rescaled { .. })
    }
}

#[derive(Debug, Clone)]
pub struct TrainState<R: Real> {
    pub features: Features<R>,
    pub head: Head<R>,
}

impl<R: Real> TrainState<R> {
    /// Builds the initial state for a config against a dataset's geometry.
    /// Parameter streams are derived from the config seed, so convnet kernels
    /// and `A` get independent deterministic draws.
    pub fn init(config: &TrainConfig, dataset: &LabeledDataset<R>) -> Result<Self> {
        config.validate(dataset.k())?;
        let features = match config.features {
            FeatureSpec::Identity => Features::Identity {
                n: dataset.channels() * dataset.height() * dataset.width(),
            },
            FeatureSpec::Convnet(preset) => {
                let arch = preset.spec();
                if arch.channels() != dataset.channels()
                    || dataset.height() != arch.input_size()
                    || dataset.width() != arch.input_size()
                {
                    return Err(Error::Dimension(format!(
                        "dataset images are {}x{}x{}, preset {preset} expects {}x{s}x{s}",
                        dataset.channels(),
                        dataset.height(),
                        dataset.width(),
                        arch.channels(),
                        s = arch.input_size(),
                    )));
                }
                let params = ConvParams::init(&arch, derive_seed(config.seed, 1));
                Features::Convnet { arch, params }
            }
        };
        let n = features.n();
        let a = ClassifierParams::init(config.m, n, derive_seed(config.seed, 2))?;
        let head = match config.stage_kind {
            StageKind::RescaledRegular => Head::Rescaled {
                targets: regular_simplex(dataset.k(), config.m)?,
                params: a,
            },
            StageKind::RescaledStandard => Head::Rescaled {
                targets: standard_simplex(dataset.k(), config.m)?,
                params: a,
            },
            StageKind::Logistic => Head::Logistic { params: a },
        };
        Ok(Self { features, head })
    }

    /// Assembles a state from parts, checking that the head's column count
    /// matches the feature length. Intended for tests and parameter reload.
    pub fn from_parts(features: Features<R>, head: Head<R>) -> Result<Self> {
        if head.params().n() != features.n() {
            return Err(Error::Dimension(format!(
                "head expects {} features, generator produces {}",
                head.params().n(),
                features.n()
            )));
        }
        Ok(Self { features, head })
    }

    pub fn n(&self) -> usize {
        self.features.n()
    }

    /// Feature vector for one image (no trace retained).
    pub fn features_for(&self, image: &Image<R>) -> Result<Tensor<R>> {
        match &self.features {
            Features::Identity { n } => {
                if image.data().len() != *n {
                    return Err(Error::Dimension(format!(
                        "image has {} pixels, identity features expect {n}",
                        image.data().len()
                    )));
                }
                Ok(Tensor::from_vec(image.data().to_vec()))
            }
            Features::Convnet { arch, params } => {
                Ok(convnet_forward(arch, params, image)?.0)
            }
        }
    }

    /// Predicted 1-based class; degenerate directions surface as errors.
    pub fn classify(&self, image: &Image<R>) -> Result<usize> {
        let x = self.features_for(image)?;
        match &self.head {
            Head::Rescaled { params, targets } => {
                Ok(stage::forward(params, &x, targets)?.predicted_class)
            }
            Head::Logistic { params } => {
                Ok(logistic_classify(&matvec(params.matrix(), &x)?))
            }
        }
    }

    fn all_finite(&self) -> bool {
        let conv_ok = match &self.features {
            Features::Identity { .. } => true,
            Features::Convnet { params, .. } => params.all_finite(),
        };
        conv_ok && self.head.params().matrix().all_finite()
    }
}

/// Per-epoch aggregates; costs are over processed (non-skipped) samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub mean_cost: f64,
    pub max_cost: f64,
    pub skips: usize,
    pub updates: usize,
    pub samples: usize,
}

/// Sum of per-sample results for part of a minibatch.
struct BatchAccum<R: Real> {
    grad_a: Tensor<R>,
    grad_conv: Option<ConvParams<R>>,
    cost_sum: R,
    max_cost: R,
    processed: usize,
    skips: usize,
}

impl<R: Real> BatchAccum<R> {
    fn empty(state: &TrainState<R>) -> Self {
        let p = state.head.params();
        Self {
            grad_a: Tensor::zeros(vec![p.m(), p.n()]),
            grad_conv: match &state.features {
                Features::Identity { .. } => None,
                Features::Convnet { arch, .. } => Some(ConvParams::zeros(arch)),
            },
            cost_sum: R::zero(),
            max_cost: R::zero(),
            processed: 0,
            skips: 0,
        }
    }

    fn absorb_sample(&mut self, state: &TrainState<R>, image: &Image<R>, label: usize) -> Result<()> {
        // Degenerate directions (‖Ax‖ ≈ 0) are skipped and counted; the
        // normalized cost is undefined there.
        let result = match (&state.features, &state.head) {
            (Features::Identity { .. }, Head::Rescaled { params, targets }) => {
                let x = state.features_for(image)?;
                stage::cost_and_backward(params, &x, targets, label).map(|(c, ga, _)| (c, ga, None))
            }
            (Features::Identity { .. }, Head::Logistic { params }) => {
                let x = state.features_for(image)?;
                logistic_cost_and_backward(params, &x, label).map(|(c, ga, _)| (c, ga, None))
            }
            (Features::Convnet { arch, params: conv }, head) => {
                let (x, trace) = convnet_forward(arch, conv, image)?;
                let stage_result = match head {
                    Head::Rescaled { params, targets } => {
                        stage::cost_and_backward(params, &x, targets, label)
                    }
                    Head::Logistic { params } => logistic_cost_and_backward(params, &x, label),
                };
                stage_result.and_then(|(c, ga, gx)| {
                    Ok((c, ga, Some(convnet_backward(arch, conv, &trace, &gx)?)))
                })
            }
        };
        match result {
            Ok((cost, grad_a, grad_conv)) => {
                self.grad_a = self.grad_a.add_scaled(R::one(), &grad_a)?;
                if let (Some(acc), Some(g)) = (self.grad_conv.as_mut(), grad_conv.as_ref()) {
                    acc.add_scaled(R::one(), g)?;
                }
                self.cost_sum = self.cost_sum + cost;
                self.max_cost = self.max_cost.max(cost);
                self.processed += 1;
                Ok(())
            }
            Err(Error::DegenerateDirection { .. }) => {
                self.skips += 1;
                Ok(())
            }
            Err(other) => Err(other),
        }
    }

    fn merge(mut self, other: Self) -> Result<Self> {
        self.grad_a = self.grad_a.add_scaled(R::one(), &other.grad_a)?;
        match (self.grad_conv.as_mut(), other.grad_conv.as_ref()) {
            (Some(acc), Some(g)) => acc.add_scaled(R::one(), g)?,
            (None, None) => {}
            _ => return Err(Error::Consistency("mixed feature gradient kinds".into())),
        }
        self.cost_sum = self.cost_sum + other.cost_sum;
        self.max_cost = self.max_cost.max(other.max_cost);
        self.processed += other.processed;
        self.skips += other.skips;
        Ok(self)
    }
}

fn minibatch_gradients<R: Real>(
    state: &TrainState<R>,
    dataset: &LabeledDataset<R>,
    batch: &[usize],
    parallel: bool,
) -> Result<BatchAccum<R>> {
    if parallel {
        let partials: Vec<Result<BatchAccum<R>>> = batch
            .par_chunks(PARALLEL_CHUNK)
            .map(|chunk| {
                let mut acc = BatchAccum::empty(state);
                for &i in chunk {
                    acc.absorb_sample(state, dataset.image(i), dataset.label(i))?;
                }
                Ok(acc)
            })
            .collect();
        // Combine in chunk order so the result is independent of scheduling.
        let mut total = BatchAccum::empty(state);
        for partial in partials {
            total = total.merge(partial?)?;
        }
        Ok(total)
    } else {
        let mut acc = BatchAccum::empty(state);
        for &i in batch {
            acc.absorb_sample(state, dataset.image(i), dataset.label(i))?;
        }
        Ok(acc)
    }
}

/// One epoch: permute, partition, update per minibatch, rescale `A` for the
/// rescaled head. See `run_epoch_observed` for a hook after each update.
pub fn run_epoch<R: Real>(
    state: &mut TrainState<R>,
    dataset: &LabeledDataset<R>,
    config: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats> {
    run_epoch_observed(state, dataset, config, epoch, &mut |_, _| ())
}

/// As [`run_epoch`], invoking `observer(minibatch_index, state)` after every
/// parameter update (post-rescale). Used to audit invariants mid-run.
pub fn run_epoch_observed<R: Real>(
    state: &mut TrainState<R>,
    dataset: &LabeledDataset<R>,
    config: &TrainConfig,
    epoch: usize,
    observer: &mut dyn FnMut(usize, &TrainState<R>),
) -> Result<EpochStats> {
    if dataset.is_empty() {
        return Err(Error::Dimension("cannot train on an empty dataset".into()));
    }
    if config.minibatch_size == 0 {
        return Err(Error::Contract("minibatch size must be >= 1".into()));
    }

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = seeded(derive_seed(config.seed, 1000 + epoch as u64));
    for i in (1..order.len()).rev() {
        let j = rand::Rng::gen_range(&mut rng, 0..=i);
        order.swap(i, j);
    }

    let mut cost_sum = 0.0;
    let mut max_cost = 0.0f64;
    let mut processed = 0usize;
    let mut skips = 0usize;
    let mut updates = 0usize;

    for (mb_index, batch) in order.chunks(config.minibatch_size).enumerate() {
        let accum = minibatch_gradients(state, dataset, batch, config.parallel)?;

        // Mean gradient over the whole minibatch; skipped samples contribute
        // zero but stay in the divisor.
        let step = real::<R>(config.h / batch.len() as f64);
        match &mut state.head {
            Head::Rescaled { params, .. } => {
                let mut updated = stage::sgd_step(params, &accum.grad_a, step)?;
                updated = updated.rescale()?;
                *params = updated;
            }
            Head::Logistic { params } => {
                *params = stage::sgd_step(params, &accum.grad_a, step)?;
            }
        }
        if let (Features::Convnet { params, .. }, Some(grads)) =
            (&mut state.features, accum.grad_conv.as_ref())
        {
            params.add_scaled(-step, grads)?;
        }
        if !state.all_finite() {
            return Err(Error::NonFinite {
                minibatch: mb_index,
                detail: format!(
                    "h = {} with stage kind {} produced a non-finite parameter",
                    config.h,
                    if state.head.is_rescaled() { "rescaled" } else { "logistic" },
                ),
            });
        }
        observer(mb_index, state);

        cost_sum += accum.cost_sum.to_f64().unwrap();
        max_cost = max_cost.max(accum.max_cost.to_f64().unwrap());
        processed += accum.processed;
        skips += accum.skips;
        updates += 1;
    }

    Ok(EpochStats {
        mean_cost: if processed > 0 {
            cost_sum / processed as f64
        } else {
            0.0
        },
        max_cost,
        skips,
        updates,
        samples: processed + skips,
    })
}

/// Fraction of samples whose prediction differs from the label; degenerate
/// samples count as errors. A pure fold, invariant to dataset order.
pub fn evaluate<R: Real>(
    state: &TrainState<R>,
    dataset: &LabeledDataset<R>,
    parallel: bool,
) -> f64 {
    let misses = |range: &[usize]| -> usize {
        range
            .iter()
            .filter(|&&i| match state.classify(dataset.image(i)) {
                Ok(predicted) => predicted != dataset.label(i),
                Err(_) => true,
            })
            .count()
    };
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let errors: usize = if parallel {
        indices
            .par_chunks(PARALLEL_CHUNK)
            .map(|chunk| misses(chunk))
            .sum()
    } else {
        misses(&indices)
    };
    errors as f64 / dataset.len() as f64
}

/// One row of the training log; the CSV schema is
/// `epoch,stage_kind,h,m,train_error,test_error,mean_cost,skips,seconds`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub stage_kind: StageKind,
    pub h: f64,
    pub m: usize,
    pub train_error: f64,
    pub test_error: f64,
    pub mean_cost: f64,
    pub skips: usize,
    pub seconds: f64,
}

impl MetricsRecord {
    /// Equality on everything except the wall-clock field.
    pub fn same_metrics(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.stage_kind == other.stage_kind
            && self.h == other.h
            && self.m == other.m
            && self.train_error == other.train_error
            && self.test_error == other.test_error
            && self.mean_cost == other.mean_cost
            && self.skips == other.skips
    }
}

pub fn metrics_csv_header() -> &'static str {
    "epoch,stage_kind,h,m,train_error,test_error,mean_cost,skips,seconds"
}

pub fn write_metrics_csv(records: &[MetricsRecord], out: &mut impl io::Write) -> io::Result<()> {
    writeln!(out, "{}", metrics_csv_header())?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.3}",
            r.epoch,
            r.stage_kind,
            r.h,
            r.m,
            r.train_error,
            r.test_error,
            r.mean_cost,
            r.skips,
            r.seconds
        )?;
    }
    Ok(())
}

/// Full training run: `config.epochs` epochs, evaluating train and test error
/// after each. Deterministic given the seed (bit-identical metrics for the
/// serial path; within reduction-order tolerance for the parallel path, which
/// is itself deterministic per chunking).
pub fn train<R: Real>(
    config: &TrainConfig,
    train_set: &LabeledDataset<R>,
    test_set: &LabeledDataset<R>,
) -> Result<(TrainState<R>, Vec<MetricsRecord>)> {
    if train_set.k() != test_set.k()
        || train_set.channels() != test_set.channels()
        || train_set.height() != test_set.height()
        || train_set.width() != test_set.width()
    {
        return Err(Error::Consistency(
            "train and test sets disagree on classes or image shape".into(),
        ));
    }
    let mut state = TrainState::init(config, train_set)?;
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let t0 = Instant::now();
        let stats = run_epoch(&mut state, train_set, config, epoch)?;
        let train_error = evaluate(&state, train_set, config.parallel);
        let test_error = evaluate(&state, test_set, config.parallel);
        records.push(MetricsRecord {
            epoch: epoch + 1,
            stage_kind: config.stage_kind,
            h: config.h,
            m: config.m,
            train_error,
            test_error,
            mean_cost: stats.mean_cost,
            skips: stats.skips,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    Ok((state, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convnet::ConvStageSpec;
    use crate::data::synthetic_separable;
    use crate::tensor::frobenius_norm;
    use rand::Rng;

    fn identity_config(stage_kind: StageKind, h: f64, m: usize, epochs: usize) -> TrainConfig {
        TrainConfig::new(stage_kind, FeatureSpec::Identity, h, m, epochs, 7)
    }

    fn tiny_conv_state(seed: u64) -> (TrainState<f64>, ArchitectureSpec) {
        let arch = ArchitectureSpec::new(vec![
            ConvStageSpec::new(1, 2, 3, 8).unwrap(),
            ConvStageSpec::new(2, 2, 2, 3).unwrap(),
        ])
        .unwrap();
        let params = ConvParams::init(&arch, derive_seed(seed, 1));
        let n = arch.feature_len();
        let head = Head::Rescaled {
            params: ClassifierParams::init(4, n, derive_seed(seed, 2)).unwrap(),
            targets: regular_simplex(3, 4).unwrap(),
        };
        let state = TrainState::from_parts(
            Features::Convnet { arch: arch.clone(), params },
            head,
        )
        .unwrap();
        (state, arch)
    }

    fn tiny_conv_dataset(samples: usize, seed: u64) -> LabeledDataset<f64> {
        let mut rng = crate::rng::seeded(seed);
        let images = (0..samples)
            .map(|_| {
                Image::new(1, 8, 8, (0..64).map(|_| rng.gen::<f64>()).collect()).unwrap()
            })
            .collect();
        let labels = (0..samples).map(|i| 1 + i % 3).collect();
        LabeledDataset::new(images, labels, 3).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(identity_config(StageKind::Logistic, 1.0, 5, 1).validate(5).is_ok());
        assert!(identity_config(StageKind::Logistic, 1.0, 5, 1).validate(3).is_err());
        assert!(identity_config(StageKind::RescaledRegular, -0.5, 5, 1)
            .validate(3)
            .is_err());
        let mut c = identity_config(StageKind::RescaledRegular, 1.0, 5, 1);
        c.minibatch_size = 0;
        assert!(c.validate(3).is_err());
    }

    #[test]
    fn zero_learning_rate_is_a_fixed_point() {
        let data = synthetic_separable::<f64>(6, 2, 20, 3).unwrap();
        let mut config = identity_config(StageKind::RescaledRegular, 0.0, 3, 1);
        config.minibatch_size = 7; // exercises a short final minibatch too
        let mut state = TrainState::init(&config, &data).unwrap();
        let before = state.head.params().clone();
        let stats = run_epoch(&mut state, &data, &config, 0).unwrap();
        assert_eq!(stats.samples, 40);
        assert_eq!(stats.updates, 6);
        // A is only touched by the renormalization, which is a fixed point of
        // an already-normalized matrix up to floating-point rescaling noise.
        for (a, b) in state
            .head
            .params()
            .matrix()
            .data()
            .iter()
            .zip(before.matrix().data())
        {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
        }

        // With a convnet, kernels must be bit-identical (no rescale applies).
        let (mut state, _) = tiny_conv_state(5);
        let data = tiny_conv_dataset(10, 6);
        let kernels_before = match &state.features {
            Features::Convnet { params, .. } => params.clone(),
            _ => unreachable!(),
        };
        let mut config = identity_config(StageKind::RescaledRegular, 0.0, 4, 1);
        config.minibatch_size = 4;
        run_epoch(&mut state, &data, &config, 0).unwrap();
        match &state.features {
            Features::Convnet { params, .. } => assert_eq!(params, &kernels_before),
            _ => unreachable!(),
        }
    }

    #[test]
    fn partition_covers_every_sample() {
        let data = synthetic_separable::<f64>(4, 2, 125, 9).unwrap(); // 250 samples
        let config = identity_config(StageKind::RescaledRegular, 0.1, 3, 1);
        let mut state = TrainState::init(&config, &data).unwrap();
        let stats = run_epoch(&mut state, &data, &config, 0).unwrap();
        assert_eq!(stats.updates, 3); // 100 + 100 + 50
        assert_eq!(stats.samples, 250);
        assert_eq!(stats.skips, 0);
    }

    #[test]
    fn renormalization_holds_after_every_minibatch() {
        let data = synthetic_separable::<f64>(5, 3, 40, 11).unwrap();
        let mut config = identity_config(StageKind::RescaledRegular, 1.0, 4, 1);
        config.minibatch_size = 10;
        let mut state = TrainState::init(&config, &data).unwrap();
        let mut audited = 0;
        run_epoch_observed(&mut state, &data, &config, 0, &mut |_, s| {
            let norm = frobenius_norm(s.head.params().matrix());
            assert!((norm - 2.0).abs() < 1e-10, "‖A‖_F = {norm}");
            audited += 1;
        })
        .unwrap();
        assert_eq!(audited, 12);
    }

    #[test]
    fn untrained_ten_class_error_is_chance_level() {
        let mut rng = crate::rng::seeded(21);
        let images: Vec<Image<f64>> = (0..2000)
            .map(|_| Image::new(1, 1, 20, (0..20).map(|_| rng.gen::<f64>()).collect()).unwrap())
            .collect();
        let labels: Vec<usize> = (0..2000).map(|i| 1 + i % 10).collect();
        let data = LabeledDataset::new(images, labels, 10).unwrap();
        let config = identity_config(StageKind::RescaledRegular, 1.0, 16, 0);
        let state = TrainState::init(&config, &data).unwrap();
        let error = evaluate(&state, &data, false);
        assert!((error - 0.9).abs() < 0.05, "error {error}");
    }

    #[test]
    fn evaluate_is_order_invariant() {
        let data = synthetic_separable::<f64>(6, 3, 30, 13).unwrap();
        let config = identity_config(StageKind::RescaledRegular, 1.0, 4, 0);
        let state = TrainState::init(&config, &data).unwrap();
        let reordered = data.seeded_subset(data.len(), 99).unwrap();
        assert_eq!(
            evaluate(&state, &data, false),
            evaluate(&state, &reordered, false)
        );
    }

    #[test]
    fn smoke_training_reaches_zero_train_error() {
        let train_set = synthetic_separable::<f64>(10, 2, 100, 17).unwrap();
        let test_set = synthetic_separable::<f64>(10, 2, 30, 18).unwrap();
        for stage_kind in [StageKind::RescaledRegular, StageKind::Logistic] {
            let m = 2; // logistic requires m = k; use the same for both
            let config = TrainConfig::new(stage_kind, FeatureSpec::Identity, 1.0, m, 10, 23);
            let (_, records) = train(&config, &train_set, &test_set).unwrap();
            let last = records.last().unwrap();
            assert_eq!(last.train_error, 0.0, "{stage_kind}: {records:?}");
            assert!(last.test_error < 0.1, "{stage_kind}");
        }
    }

    #[test]
    fn training_metrics_are_deterministic() {
        let train_set = synthetic_separable::<f64>(8, 3, 50, 29).unwrap();
        let test_set = synthetic_separable::<f64>(8, 3, 20, 30).unwrap();
        let mut config = TrainConfig::new(
            StageKind::RescaledRegular,
            FeatureSpec::Identity,
            1.0,
            5,
            3,
            31,
        );
        config.minibatch_size = 16;
        let (_, r1) = train(&config, &train_set, &test_set).unwrap();
        let (_, r2) = train(&config, &train_set, &test_set).unwrap();
        assert_eq!(r1.len(), 3);
        assert!(r1
            .iter()
            .zip(&r2)
            .all(|(a, b)| a.same_metrics(b)));
    }

    #[test]
    fn minibatch_gradient_is_mean_of_sample_gradients() {
        let data = synthetic_separable::<f64>(5, 2, 1, 37).unwrap(); // 2 samples
        let mut config = identity_config(StageKind::RescaledRegular, 0.7, 3, 1);
        config.minibatch_size = 2;
        config.parallel = false;
        let mut state = TrainState::init(&config, &data).unwrap();
        let before = state.head.params().clone();
        let targets = match &state.head {
            Head::Rescaled { targets, .. } => targets.clone(),
            _ => unreachable!(),
        };

        // Expected update from per-sample gradients, averaged by hand.
        let mut mean_grad = Tensor::zeros(vec![3, 5]);
        for (image, label) in data.iter() {
            let x = Tensor::from_vec(image.data().to_vec());
            let (ga, _) = stage::backward(&before, &x, &targets, label).unwrap();
            mean_grad = mean_grad.add_scaled(0.5, &ga).unwrap();
        }
        let expected = stage::sgd_step(&before, &mean_grad, 0.7)
            .unwrap()
            .rescale()
            .unwrap();

        run_epoch(&mut state, &data, &config, 0).unwrap();
        for (a, b) in state
            .head
            .params()
            .matrix()
            .data()
            .iter()
            .zip(expected.matrix().data())
        {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn parallel_and_serial_updates_agree() {
        let data = tiny_conv_dataset(30, 41);
        let mut config = identity_config(StageKind::RescaledRegular, 0.5, 4, 1);
        config.minibatch_size = 30;

        let (mut serial_state, _) = tiny_conv_state(43);
        let (mut parallel_state, _) = tiny_conv_state(43);
        config.parallel = false;
        run_epoch(&mut serial_state, &data, &config, 0).unwrap();
        config.parallel = true;
        run_epoch(&mut parallel_state, &data, &config, 0).unwrap();

        for (a, b) in serial_state
            .head
            .params()
            .matrix()
            .data()
            .iter()
            .zip(parallel_state.head.params().matrix().data())
        {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        match (&serial_state.features, &parallel_state.features) {
            (Features::Convnet { params: s, .. }, Features::Convnet { params: p, .. }) => {
                for (a, b) in s.stages()[0].data().iter().zip(p.stages()[0].data()) {
                    assert!((a - b).norm() <= 1e-12 * b.norm().max(1.0));
                }
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn degenerate_samples_are_skipped_and_counted() {
        // An all-zero image maps to y = 0, which has no direction.
        let zero = Image::new(1, 1, 4, vec![0.0; 4]).unwrap();
        let mut rng = crate::rng::seeded(51);
        let mut images = vec![zero];
        let mut labels = vec![1usize];
        for i in 0..9 {
            images.push(Image::new(1, 1, 4, (0..4).map(|_| rng.gen::<f64>()).collect()).unwrap());
            labels.push(1 + i % 2);
        }
        let data = LabeledDataset::new(images, labels, 2).unwrap();
        let config = identity_config(StageKind::RescaledRegular, 0.5, 3, 1);
        let mut state = TrainState::init(&config, &data).unwrap();
        let stats = run_epoch(&mut state, &data, &config, 0).unwrap();
        assert_eq!(stats.skips, 1);
        assert_eq!(stats.samples, 10);
        // The skipped sample also counts as an evaluation error.
        assert!(evaluate(&state, &data, false) >= 0.1);
    }

    #[test]
    fn nonfinite_parameters_abort_with_minibatch_index() {
        let mut rng = crate::rng::seeded(61);
        let images: Vec<Image<f64>> = (0..10)
            .map(|_| {
                Image::new(1, 1, 4, (0..4).map(|_| rng.gen::<f64>() * 1e5).collect()).unwrap()
            })
            .collect();
        let labels = (0..10).map(|i| 1 + i % 2).collect();
        let data = LabeledDataset::new(images, labels, 2).unwrap();
        let config = identity_config(StageKind::Logistic, 1e304, 2, 1);
        let mut state = TrainState::init(&config, &data).unwrap();
        let err = run_epoch(&mut state, &data, &config, 0).unwrap_err();
        match err {
            Error::NonFinite { minibatch, .. } => assert_eq!(minibatch, 0),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn rescaled_training_is_stable_across_learning_rates() {
        let train_set = synthetic_separable::<f64>(10, 2, 50, 71).unwrap();
        let test_set = synthetic_separable::<f64>(10, 2, 10, 72).unwrap();
        for h in [0.1, 1.0, 10.0, 100.0] {
            let config = TrainConfig::new(
                StageKind::RescaledRegular,
                FeatureSpec::Identity,
                h,
                4,
                3,
                73,
            );
            let (state, records) = train(&config, &train_set, &test_set).unwrap();
            assert!(state.all_finite(), "h={h}");
            for r in &records {
                assert!(r.mean_cost >= 0.0 && r.mean_cost <= 4.0, "h={h}: {r:?}");
            }
        }
    }

    #[test]
    fn csv_schema_and_rows() {
        let record = MetricsRecord {
            epoch: 1,
            stage_kind: StageKind::RescaledRegular,
            h: 0.5,
            m: 16,
            train_error: 0.25,
            test_error: 0.3,
            mean_cost: 1.5,
            skips: 2,
            seconds: 0.123456,
        };
        let mut out = Vec::new();
        write_metrics_csv(&[record], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,stage_kind,h,m,train_error,test_error,mean_cost,skips,seconds"
        );
        assert_eq!(lines.next().unwrap(), "1,rescaled-regular,0.5,16,0.25,0.3,1.5,2,0.123");
    }

    #[test]
    fn stage_kind_round_trips() {
        for kind in StageKind::ALL {
            assert_eq!(kind.name().parse::<StageKind>().unwrap(), kind);
        }
        assert!("rescaled".parse::<StageKind>().is_err());
    }
}
