use mbtnet::data::{load_split, Split};
use mbtnet::model::MbtNet;
use mbtnet::trainer::{load_checkpoint, train, TrainReport, LAST_CHECKPOINT};

use super::{load_manifest, prepare_out, stored_config};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::TrainArgs;

pub fn run(args: &TrainArgs) -> CliResult<TrainReport> {
    let out = &args.out.out;
    let mut cfg = RunConfig::from_flags(&args.model)?;
    let manifest = load_manifest(&args.data)?;
    let train_set = load_split(&manifest, Split::Train, &cfg.masks)?;
    let val_set = load_split(&manifest, Split::Val, &cfg.masks)?;
    let Some(first) = train_set.first() else {
        return Err(CliError::usage(format!("{} has no training records", args.data.display())));
    };
    cfg.model.input_size = first.image.dims();
    cfg.finish()?;

    let last = out.join(LAST_CHECKPOINT);
    if args.resume {
        if let Some(stored) = stored_config(&last)? {
            let diff = stored.model.differing_fields(&cfg.model);
            if !diff.is_empty() {
                return Err(mbtnet::Error::CheckpointMismatch(format!(
                    "cannot resume with a different model; differing fields: {}",
                    diff.join(", ")
                ))
                .into());
            }
        }
    } else {
        prepare_out(out, args.out.force)?;
    }
    std::fs::create_dir_all(out)?;
    cfg.save(out)?;

    let (net, mut store) = MbtNet::build::<f32>(&cfg.model, cfg.seed)?;
    let mut state = cfg.train.fresh_state(&store);
    if args.resume {
        state = load_checkpoint(&last, &mut store)?;
        println!("resuming after epoch {}", state.epoch);
    }
    println!(
        "training {} ({} parameters) on {} patches, validating on {}",
        cfg.model.label(),
        net.parameter_count(),
        train_set.len(),
        val_set.len()
    );
    let report = train(&net, &mut store, &mut state, &train_set, &val_set, &cfg.train, Some(out), |e| {
        println!(
            "epoch {:>3}  loss {:.4} (body {:.4} edge {:.4} final {:.4})  val loss {:.4}  {}  lr {:.2e}  {:.1}s",
            e.epoch, e.train_loss, e.train_body, e.train_edge, e.train_final, e.val_loss, e.val, e.lr, e.seconds
        );
    })?;
    if report.best_epoch > 0 {
        println!("best validation DICE {:.4} at epoch {}", report.best_dice, report.best_epoch);
    }
    Ok(report)
}
