use mbtnet::data::{synthesize_dataset, DatasetManifest, Split};

use super::prepare_out;
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::SynthArgs;

pub fn run(args: &SynthArgs) -> CliResult<DatasetManifest> {
    let cfg = RunConfig::from_flags(&args.model)?;
    prepare_out(&args.out.out, args.out.force)?;
    cfg.save(&args.out.out)?;
    let manifest = synthesize_dataset(&cfg.synth, &cfg.dataset, &args.out.out)?;
    println!(
        "wrote {} patches to {} (train {}, val {}, test {})",
        manifest.records.len(),
        args.out.out.display(),
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test)
    );
    Ok(manifest)
}
