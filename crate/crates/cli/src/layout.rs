//! On-disk layout shared by the subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use microjoint::baselines::TwoStepOutput;
use microjoint::experiment::{prepare, Fit, Model, Prepared};
use microjoint::io::{self, RunManifest};
use microjoint::model::{sbp_pivot, Preprocessing};
use microjoint::prediction::{fixed_balances, raw_balances};
use microjoint::simulation::TestSet;
use microjoint::{Dataset, Hyperparams, PartitionSpec, SamplerConfig};
use serde::{Deserialize, Serialize};

pub const FIT_RECORD: &str = "fit.json";
pub const PARTITION: &str = "partition.txt";

/// Training directory for `dir`: its `train/` subdirectory if there is one.
pub fn train_dir(dir: &Path) -> PathBuf {
    let sub = dir.join("train");
    if sub.join("y.csv").exists() {
        sub
    } else {
        dir.to_path_buf()
    }
}

/// Sibling directory of a replicate's `train/`, when the layout has one.
pub fn sibling(train: &Path, name: &str) -> Option<PathBuf> {
    if train.file_name()? != "train" {
        return None;
    }
    let dir = train.parent()?.join(name);
    dir.is_dir().then_some(dir)
}

pub fn load_partition(path: Option<&Path>, n_taxa: usize) -> anyhow::Result<PartitionSpec> {
    let spec = match path {
        Some(p) => io::read_partition(p)?,
        None => sbp_pivot(n_taxa)?,
    };
    if spec.n_taxa() != n_taxa {
        bail!("partition covers {} taxa but the data has {n_taxa}", spec.n_taxa());
    }
    Ok(spec)
}

/// What `fit` recorded about itself, enough to rebuild the fit later.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub format_version: u32,
    pub model: Model,
    /// Absolute path of the training data.
    pub data: PathBuf,
    pub hyper: Hyperparams,
    pub config: SamplerConfig,
    pub preprocessing: Preprocessing,
}

/// Writes the chain(s) of `fit` below `out`.
pub fn write_fit(out: &Path, fit: &Fit) -> anyhow::Result<()> {
    match fit.model {
        Model::Joint => io::write_chain(&out.join("chain"), &fit.lm_chain)?,
        Model::DmlmBayes => {
            io::write_chain(&out.join("stage1"), &fit.dm_chain)?;
            io::write_chain(&out.join("stage2"), &fit.lm_chain)?;
        }
    }
    Ok(())
}

/// A fit reloaded from disk.
pub struct Loaded {
    pub record: FitRecord,
    pub spec: PartitionSpec,
    pub prep: Prepared,
    pub fit: Fit,
    /// Stage-two balances, for two-step fits.
    pub two_step: Option<TwoStepOutput>,
}

pub fn load_fit(dir: &Path, test: Option<&Path>) -> anyhow::Result<Loaded> {
    let record: FitRecord =
        io::read_json(&dir.join(FIT_RECORD)).with_context(|| format!("{} is not a fit directory", dir.display()))?;
    let train: Dataset = io::read_dataset(&record.data)?;
    let spec = io::read_partition(&dir.join(PARTITION))?;
    let test_dir = match test {
        Some(t) => Some(t.to_path_buf()),
        None => sibling(&record.data, "test"),
    };
    let test = match test_dir {
        Some(t) => io::read_test_set(&t)?,
        None => TestSet { z: train.z().clone(), x: train.x().clone(), y: None },
    };
    let prep = prepare(&train, &test)?;
    if prep.pre != record.preprocessing {
        bail!("training data at {} changed since the fit", record.data.display());
    }
    let (fit, two_step) = match record.model {
        Model::Joint => {
            let chain = io::read_chain(&dir.join("chain"))?;
            (Fit::joint(&prep, chain, &spec)?, None)
        }
        Model::DmlmBayes => {
            let stage1 = io::read_chain(&dir.join("stage1"))?;
            let stage2 = io::read_chain(&dir.join("stage2"))?;
            let psi_bar = stage1.psi_mean.clone();
            let raw = raw_balances(&psi_bar, &spec, record.hyper.delta)?;
            let (balances, scaling) = fixed_balances(raw, record.config.standardize_balances)?;
            let out = TwoStepOutput { stage1, psi_bar, balances, scaling, stage2 };
            (Fit::two_step(&prep, out.clone(), &spec, &record.hyper)?, Some(out))
        }
    };
    Ok(Loaded { record, spec, prep, fit, two_step })
}

pub fn absolute(p: &Path) -> anyhow::Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

pub fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Collects provenance while a command runs.
pub struct Provenance {
    command: &'static str,
    started: Instant,
}

impl Provenance {
    pub fn start(command: &'static str) -> Self {
        Provenance { command, started: Instant::now() }
    }

    pub fn finish(
        self,
        dir: &Path,
        seed: Option<u64>,
        config: serde_json::Value,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
    ) -> anyhow::Result<()> {
        RunManifest {
            command: self.command.to_owned(),
            schema_version: io::FORMAT_VERSION,
            code_version: env!("CARGO_PKG_VERSION").to_owned(),
            seed,
            config,
            inputs,
            outputs,
            duration_secs: self.started.elapsed().as_secs_f64(),
        }
        .write(dir)?;
        Ok(())
    }
}
