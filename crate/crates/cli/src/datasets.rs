//! Dataset and feature-generator resolution. `mnist` and `cifar10` resolve
//! their conventional file names under the data root (`$SIMPLEXNET_DATA_DIR`,
//! defaulting to `./data`); `raw:<dir>` reads the crate's raw binary layout
//! from `<dir>/train` and `<dir>/test`.

use std::path::{Path, PathBuf};

use simplexnet_core::convnet::Preset;
use simplexnet_core::data::{load_cifar10, load_mnist, load_raw_dir, LabeledDataset};
use simplexnet_core::trainer::FeatureSpec;

use crate::{CliError, CliResult};

pub struct DatasetPair {
    pub train: LabeledDataset<f64>,
    pub test: LabeledDataset<f64>,
}

pub fn data_root() -> PathBuf {
    std::env::var_os("SIMPLEXNET_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

fn require_file(path: PathBuf) -> CliResult<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::Data(format!(
            "missing dataset file {}",
            path.display()
        )))
    }
}

pub fn load_pair(dataset: &str) -> CliResult<DatasetPair> {
    if let Some(dir) = dataset.strip_prefix("raw:") {
        let dir = Path::new(dir);
        for split in ["train", "test"] {
            for file in ["images.bin", "labels.bin"] {
                require_file(dir.join(split).join(file))?;
            }
        }
        Ok(DatasetPair {
            train: load_raw_dir(&dir.join("train"))?,
            test: load_raw_dir(&dir.join("test"))?,
        })
    } else if dataset == "mnist" {
        let root = data_root();
        let train = load_mnist(
            &require_file(root.join("train-images-idx3-ubyte"))?,
            &require_file(root.join("train-labels-idx1-ubyte"))?,
        )?;
        let test = load_mnist(
            &require_file(root.join("t10k-images-idx3-ubyte"))?,
            &require_file(root.join("t10k-labels-idx1-ubyte"))?,
        )?;
        // 28x28 inputs are zero-padded to the 32x32 the presets expect.
        Ok(DatasetPair {
            train: train.zero_padded(2),
            test: test.zero_padded(2),
        })
    } else if dataset == "cifar10" {
        let root = data_root();
        let mut batches = Vec::new();
        for i in 1..=5 {
            batches.push(require_file(root.join(format!("data_batch_{i}.bin")))?);
        }
        Ok(DatasetPair {
            train: load_cifar10(&batches)?,
            test: load_cifar10(&[require_file(root.join("test_batch.bin"))?])?,
        })
    } else {
        Err(CliError::Usage(format!(
            "unknown dataset '{dataset}' (expected mnist, cifar10, or raw:<dir>)"
        )))
    }
}

/// Maps an `--arch` name to a feature generator for the given images:
/// `identity` flattens pixels; `larger`/`smaller` pick whichever preset
/// matches the image geometry.
pub fn feature_spec(arch: &str, data: &LabeledDataset<f64>) -> CliResult<FeatureSpec> {
    let candidates: &[Preset] = match arch {
        "identity" => return Ok(FeatureSpec::Identity),
        "larger" => &[Preset::MnistLarger, Preset::CifarLarger, Preset::ImagenetLarger],
        "smaller" => &[
            Preset::MnistSmaller,
            Preset::CifarSmaller,
            Preset::ImagenetSmaller,
        ],
        other => {
            return Err(CliError::Usage(format!(
                "unknown architecture '{other}' (expected larger, smaller, or identity)"
            )))
        }
    };
    candidates
        .iter()
        .find(|p| {
            let spec = p.spec();
            spec.channels() == data.channels()
                && spec.input_size() == data.height()
                && spec.input_size() == data.width()
        })
        .map(|&p| FeatureSpec::Convnet(p))
        .ok_or_else(|| {
            CliError::Data(format!(
                "no {arch} preset accepts {}x{}x{} images",
                data.channels(),
                data.height(),
                data.width()
            ))
        })
}
