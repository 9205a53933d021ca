//! The five subcommands. Training and sweeping work in `f64`; every output
//! file is written to a temporary sibling and renamed into place.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use simplexnet_core::convnet::{ConvParams, Preset};
use simplexnet_core::gradcheck::{self, GradCheckConfig};
use simplexnet_core::simplex::{regular_simplex, standard_simplex};
use simplexnet_core::stage::ClassifierParams;
use simplexnet_core::trainer::{
    self, FeatureSpec, Features, Head, MetricsRecord, StageKind, TrainConfig, TrainState,
};

use crate::config::{DumpArgs, EvalArgs, GradcheckArgs, ResolvedRun, RunArgs};
use crate::datasets;
use crate::{CliError, CliResult};

pub fn train(args: RunArgs) -> CliResult<i32> {
    let run = args.resolve()?;
    if run.stages.len() != 1 || run.h.len() != 1 || run.m.len() != 1 {
        return Err(CliError::Usage(
            "train takes exactly one --stage, one --h, and one --m; lists are for sweep".into(),
        ));
    }
    let pair = datasets::load_pair(&run.dataset)?;
    let features = datasets::feature_spec(&run.arch, &pair.train)?;
    let stage_kind = run.stages[0];
    let config = train_config(&run, stage_kind, features, run.h[0], run.m[0]);
    config
        .validate(pair.train.k())
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let (state, records) = trainer::train(&config, &pair.train, &pair.test)?;

    let mut csv = String::new();
    let mut body = Vec::new();
    trainer::write_metrics_csv(&records, &mut body)
        .map_err(|e| CliError::Data(format!("cannot format metrics: {e}")))?;
    csv.push_str(&String::from_utf8_lossy(&body));
    atomic_write(&run.out, csv.as_bytes())?;

    if let Some(base) = &run.params_out {
        save_params(base, &state, stage_kind, pair.train.k())?;
    }
    if let Some(last) = records.last() {
        println!(
            "epoch {}: train_error={} test_error={} mean_cost={}",
            last.epoch, last.train_error, last.test_error, last.mean_cost
        );
    }
    Ok(0)
}

pub fn evaluate(args: EvalArgs) -> CliResult<i32> {
    let (dataset, params_in) = args.resolve()?;
    let pair = datasets::load_pair(&dataset)?;
    let state = load_state(&params_in)?;
    let pixel_count = pair.train.channels() * pair.train.height() * pair.train.width();
    if let Features::Identity { n } = &state.features {
        if *n != pixel_count {
            return Err(CliError::Data(format!(
                "saved parameters expect {n} pixels per image, dataset has {pixel_count}"
            )));
        }
    }
    println!("train_error={}", trainer::evaluate(&state, &pair.train, true));
    println!("test_error={}", trainer::evaluate(&state, &pair.test, true));
    Ok(0)
}

#[derive(Debug, Clone, Copy)]
struct SeriesSpec {
    stage: StageKind,
    h: f64,
    m: usize,
}

impl SeriesSpec {
    fn id(&self) -> String {
        format!("{}/h={}/m={}", self.stage, self.h, self.m)
    }
}

pub fn sweep(args: RunArgs) -> CliResult<i32> {
    let run = args.resolve()?;
    let pair = datasets::load_pair(&run.dataset)?;
    let features = datasets::feature_spec(&run.arch, &pair.train)?;
    let k = pair.train.k();

    let mut series = Vec::new();
    for &stage in &run.stages {
        // The logistic stage has no free target dimension: m is forced to k
        // and the m list yields a single series per h.
        let ms: Vec<usize> = if stage == StageKind::Logistic {
            vec![k]
        } else {
            run.m.clone()
        };
        for &h in &run.h {
            for &m in &ms {
                series.push(SeriesSpec { stage, h, m });
            }
        }
    }

    let run_series = |spec: &SeriesSpec| -> Result<Vec<MetricsRecord>, String> {
        let config = train_config(&run, spec.stage, features, spec.h, spec.m);
        config.validate(k).map_err(|e| e.to_string())?;
        trainer::train(&config, &pair.train, &pair.test)
            .map(|(_, records)| records)
            .map_err(|e| e.to_string())
    };
    let results: Vec<Result<Vec<MetricsRecord>, String>> = if run.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(run.jobs)
            .build()
            .map_err(|e| CliError::Data(format!("cannot build a {}-thread pool: {e}", run.jobs)))?;
        pool.install(|| series.par_iter().map(run_series).collect())
    } else {
        series.iter().map(run_series).collect()
    };

    let mut csv = String::from("series,stage,h,m,epoch,test_error\n");
    for (spec, result) in series.iter().zip(&results) {
        let id = spec.id();
        match result {
            Ok(records) => {
                for r in records {
                    writeln!(
                        csv,
                        "{id},{},{},{},{},{}",
                        spec.stage, spec.h, spec.m, r.epoch, r.test_error
                    )
                    .expect("string write");
                }
            }
            Err(msg) => {
                eprintln!("series {id} failed: {msg}");
                writeln!(csv, "{id},{},{},{},0,failed", spec.stage, spec.h, spec.m)
                    .expect("string write");
            }
        }
    }
    atomic_write(&run.out, csv.as_bytes())?;

    // Best-of-both summary: the best rescaled and the best logistic series by
    // final test error; ties go to lower h, then lower m.
    let mut best = String::from("role,series,stage,h,m,final_test_error\n");
    for (role, keep_logistic) in [("best-rescaled", false), ("best-logistic", true)] {
        let winner = series
            .iter()
            .zip(&results)
            .filter(|(spec, _)| (spec.stage == StageKind::Logistic) == keep_logistic)
            .filter_map(|(spec, result)| match result {
                Ok(records) => records.last().map(|r| (spec, r.test_error)),
                Err(_) => None,
            })
            .min_by(|(a, ea), (b, eb)| {
                (ea, a.h, a.m)
                    .partial_cmp(&(eb, b.h, b.m))
                    .expect("finite error rates")
            });
        if let Some((spec, error)) = winner {
            writeln!(
                best,
                "{role},{},{},{},{},{error}",
                spec.id(),
                spec.stage,
                spec.h,
                spec.m
            )
            .expect("string write");
        }
    }
    atomic_write(&best_path(&run.out), best.as_bytes())?;
    Ok(0)
}

pub fn gradcheck(args: GradcheckArgs) -> CliResult<i32> {
    let config = GradCheckConfig {
        seed: args.seed.unwrap_or(7),
        ..GradCheckConfig::default()
    };
    let report = gradcheck::run(&config)?;
    for op in &report.operators {
        println!(
            "{}: max relative error {:.3e} over {} instances",
            op.name, op.max_rel_error, op.instances
        );
    }
    println!(
        "gradient-bound: {} violations over {} instances",
        report.bound_violations, report.bound_instances
    );
    if report.passed() {
        println!("PASS (tolerance {:e})", report.tolerance);
        Ok(0)
    } else {
        println!("FAIL: {}", report.failing_operators().join(", "));
        Ok(1)
    }
}

pub fn dump_targets(args: DumpArgs) -> CliResult<i32> {
    let stage = args
        .stage
        .ok_or_else(|| CliError::Usage("--stage is required".into()))?
        .parse::<StageKind>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let k = args.k.ok_or_else(|| CliError::Usage("--k is required".into()))?;
    let m = args.m.ok_or_else(|| CliError::Usage("--m is required".into()))?;
    let targets = match stage {
        StageKind::RescaledRegular => regular_simplex::<f64>(k, m),
        StageKind::RescaledStandard => standard_simplex::<f64>(k, m),
        StageKind::Logistic => {
            return Err(CliError::Usage(
                "the logistic stage has no target vectors; choose a rescaled stage".into(),
            ))
        }
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let text = targets.dump();
    match args.out {
        Some(path) => atomic_write(&path, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn train_config(
    run: &ResolvedRun,
    stage: StageKind,
    features: FeatureSpec,
    h: f64,
    m: usize,
) -> TrainConfig {
    let mut config = TrainConfig::new(stage, features, h, m, run.epochs, run.seed);
    config.minibatch_size = run.minibatch;
    config
}

/// Writes to a `.tmp` sibling and renames into place, so readers never see a
/// partial file.
fn atomic_write(path: &Path, contents: &[u8]) -> CliResult<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!("{}.tmp", file_name.to_string_lossy()));
    std::fs::write(&tmp, contents)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::Data(format!("cannot move {} into place: {e}", tmp.display())))?;
    Ok(())
}

fn suffixed(base: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}.{suffix}", base.display()))
}

fn best_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = out
        .extension()
        .map(|e| format!(".{}", e.to_string_lossy()))
        .unwrap_or_default();
    out.with_file_name(format!("{stem}-best{ext}"))
}

/// Sidecar layout: `<base>.stage` holds the head matrix, `<base>.conv` the
/// kernels (when a convnet is in play), `<base>.meta` the text needed to
/// rebuild the rest (stage kind, architecture, class count).
fn save_params(
    base: &Path,
    state: &TrainState<f64>,
    stage_kind: StageKind,
    k: usize,
) -> CliResult<()> {
    atomic_write(&suffixed(base, "stage"), &state.head.params().to_blob())?;
    let arch_name = match &state.features {
        Features::Identity { .. } => "identity".to_string(),
        Features::Convnet { params, .. } => {
            atomic_write(&suffixed(base, "conv"), &params.to_bytes())?;
            Preset::ALL
                .iter()
                .find(|p| params.matches(&p.spec()))
                .map(|p| p.name().to_string())
                .ok_or_else(|| {
                    CliError::Data("trained convnet does not match any named preset".into())
                })?
        }
    };
    let meta = format!("stage_kind={stage_kind}\narch={arch_name}\nk={k}\n");
    atomic_write(&suffixed(base, "meta"), meta.as_bytes())
}

fn load_state(base: &Path) -> CliResult<TrainState<f64>> {
    let meta_path = suffixed(base, "meta");
    let text = std::fs::read_to_string(&meta_path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", meta_path.display())))?;
    let mut stage_kind = None;
    let mut arch = None;
    let mut k = None;
    for line in text.lines() {
        match line.split_once('=') {
            Some(("stage_kind", v)) => stage_kind = Some(v.parse::<StageKind>()?),
            Some(("arch", v)) => arch = Some(v.to_string()),
            Some(("k", v)) => {
                k = Some(v.parse::<usize>().map_err(|_| {
                    CliError::Data(format!("bad class count '{v}' in {}", meta_path.display()))
                })?)
            }
            _ => {
                return Err(CliError::Data(format!(
                    "unrecognized line '{line}' in {}",
                    meta_path.display()
                )))
            }
        }
    }
    let (stage_kind, arch, k) = match (stage_kind, arch, k) {
        (Some(s), Some(a), Some(k)) => (s, a, k),
        _ => {
            return Err(CliError::Data(format!(
                "{} must define stage_kind, arch, and k",
                meta_path.display()
            )))
        }
    };

    let head_params = ClassifierParams::<f64>::load(&suffixed(base, "stage"))?;
    let features = if arch == "identity" {
        Features::Identity {
            n: head_params.n(),
        }
    } else {
        let preset = arch.parse::<Preset>()?;
        Features::Convnet {
            arch: preset.spec(),
            params: ConvParams::load(&suffixed(base, "conv"))?,
        }
    };
    let head = match stage_kind {
        StageKind::RescaledRegular => Head::Rescaled {
            targets: regular_simplex(k, head_params.m())?,
            params: head_params,
        },
        StageKind::RescaledStandard => Head::Rescaled {
            targets: standard_simplex(k, head_params.m())?,
            params: head_params,
        },
        StageKind::Logistic => Head::Logistic {
            params: head_params,
        },
    };
    Ok(TrainState::from_parts(features, head)?)
}
