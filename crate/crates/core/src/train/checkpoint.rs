//! Checkpoint directories: `manifest.json` plus one `TFCK0001` file per
//! parameter tensor and per batch-norm statistic.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::BatchNormStats;
use crate::container;
use crate::error::{Error, Result};
use crate::nn::{Network, NetworkConfig};
use crate::tensor::Tensor;

pub const FORMAT: &str = "tfcnet-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub epoch: usize,
    /// Learning rate of the epoch the checkpoint was taken after.
    pub lr: f32,
    pub network: NetworkConfig,
    pub params: Vec<TensorEntry>,
    pub batch_norm: Vec<TensorEntry>,
}

fn file_name(name: &str, suffix: &str) -> String {
    format!("{name}{suffix}.tfck")
}

pub fn save_checkpoint(dir: &Path, network: &Network, config: &NetworkConfig, epoch: usize, lr: f32) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut params = Vec::new();
    for (decl, t) in network.decls().iter().zip(network.params()) {
        let file = file_name(&decl.name, "");
        container::write(&dir.join(&file), t)?;
        params.push(TensorEntry {
            name: decl.name.clone(),
            shape: t.shape().to_vec(),
            file,
        });
    }
    let mut batch_norm = Vec::new();
    for (name, stats) in network.bn_names().iter().zip(network.bn_stats()) {
        let c = stats.mean.len();
        let t = Tensor::new(&[2, c], stats.mean.iter().chain(&stats.var).copied().collect())?;
        let file = file_name(name, ".stats");
        container::write(&dir.join(&file), &t)?;
        batch_norm.push(TensorEntry {
            name: name.clone(),
            shape: vec![2, c],
            file,
        });
    }
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        epoch,
        lr,
        network: config.clone(),
        params,
        batch_norm,
    };
    let path = dir.join("manifest.json");
    fs::write(
        &path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| Error::io(&path, e))
}

/// Load and check against the network built from the stored config.
pub fn load_checkpoint(dir: &Path) -> Result<(Network, CheckpointManifest)> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::IncompatibleCheckpoint(format!("{}: {e}", path.display())))?;
    if manifest.format != FORMAT {
        return Err(Error::IncompatibleCheckpoint(format!(
            "unknown format `{}`",
            manifest.format
        )));
    }
    let spec = manifest.network.build_spec()?;
    let mut params = Vec::with_capacity(manifest.params.len());
    for e in &manifest.params {
        let t = container::read(&dir.join(&e.file))?;
        if t.shape() != e.shape.as_slice() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "{}: stored shape differs from manifest",
                e.name
            )));
        }
        params.push(t);
    }
    let mut bn = Vec::with_capacity(manifest.batch_norm.len());
    for e in &manifest.batch_norm {
        let t = container::read(&dir.join(&e.file))?;
        if t.rank() != 2 || t.dim(0) != 2 {
            return Err(Error::IncompatibleCheckpoint(format!(
                "{}: statistics must be (2, C)",
                e.name
            )));
        }
        let (mean, var) = t.data().split_at(t.dim(1));
        bn.push(BatchNormStats {
            mean: mean.to_vec(),
            var: var.to_vec(),
        });
    }
    let network = Network::from_parts(spec, params, bn)?;
    let names_match = network
        .decls()
        .iter()
        .zip(&manifest.params)
        .all(|(d, e)| d.name == e.name)
        && network
            .bn_names()
            .iter()
            .zip(&manifest.batch_norm)
            .all(|(n, e)| *n == e.name);
    if !names_match {
        return Err(Error::IncompatibleCheckpoint(
            "parameter names differ from the network layout".into(),
        ));
    }
    Ok((network, manifest))
}
