pub mod ablate;
pub mod eval;
pub mod gradcheck;
pub mod predict;
pub mod synth;
pub mod train;

use std::path::Path;

use mbtnet::data::{DatasetManifest, MANIFEST_NAME};
use mbtnet::model::{MbtNet, ModelConfig};
use mbtnet::tensor::ParamStore;
use mbtnet::trainer::load_checkpoint;

use crate::config::{ModelFlags, RunConfig, RUN_CONFIG_NAME};
use crate::error::{CliError, CliResult};

/// Creates `dir`, refusing an existing non-empty one unless `force` is set.
pub fn prepare_out(dir: &Path, force: bool) -> CliResult<()> {
    if !force {
        if let Ok(mut entries) = std::fs::read_dir(dir) {
            if entries.next().is_some() {
                return Err(CliError::usage(format!(
                    "output directory {} is not empty (pass --force to write into it)",
                    dir.display()
                )));
            }
        }
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Accepts a dataset directory or the manifest inside it.
pub fn load_manifest(path: &Path) -> CliResult<DatasetManifest> {
    let file = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
    let manifest = DatasetManifest::load(&file)?;
    manifest.check_disjoint()?;
    Ok(manifest)
}

/// Run configuration recorded next to a checkpoint, if any.
pub fn stored_config(checkpoint: &Path) -> CliResult<Option<RunConfig>> {
    let path = checkpoint.parent().unwrap_or(Path::new(".")).join(RUN_CONFIG_NAME);
    if !path.is_file() {
        return Ok(None);
    }
    RunConfig::load(&path).map(Some)
}

fn architecture_differences(a: &ModelConfig, b: &ModelConfig) -> Vec<&'static str> {
    a.differing_fields(b)
        .into_iter()
        .filter(|f| !f.starts_with("input_"))
        .collect()
}

/// Resolves the configuration for a saved model. The record written at
/// training time is authoritative; architecture flags must agree with it.
pub fn checkpoint_config(checkpoint: &Path, flags: &ModelFlags) -> CliResult<RunConfig> {
    let requested = RunConfig::from_flags(flags)?;
    let Some(stored) = stored_config(checkpoint)? else {
        return Ok(requested);
    };
    if flags.touches_model() {
        let diff = architecture_differences(&requested.model, &stored.model);
        if !diff.is_empty() {
            return Err(mbtnet::Error::CheckpointMismatch(format!(
                "configuration differs from the one recorded with {} in: {}",
                checkpoint.display(),
                diff.join(", ")
            ))
            .into());
        }
    }
    Ok(stored)
}

/// Builds the network for `cfg` at the given input size and loads weights.
pub fn load_model(cfg: &RunConfig, checkpoint: &Path, input: (usize, usize)) -> CliResult<(MbtNet, ParamStore<f32>)> {
    let (net, mut store) = MbtNet::build::<f32>(&cfg.model, cfg.seed)?;
    load_checkpoint(checkpoint, &mut store)?;
    let net = net.with_input_size(input.0, input.1).map_err(|e| match e {
        mbtnet::Error::Config { field, reason } if field == "input_size" => mbtnet::Error::Config {
            field,
            reason: format!("{reason}; pad the image to a multiple of 8"),
        },
        other => other,
    })?;
    Ok((net, store))
}
