use std::fmt::Write as _;

use mbtnet::data::load_split;
use mbtnet::supervision::{evaluate, MetricsReport, MetricsSummary};
use mbtnet::trainer::predict_logits;

use super::{checkpoint_config, load_manifest, load_model};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::EvalArgs;

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "id,dice,f1,se,sp";

/// Logit standing in for a certain prediction in oracle mode.
const ORACLE_LOGIT: f32 = 20.0;

fn row(id: &str, dice: f64, f1: f64, se: f64, sp: f64) -> String {
    format!("{id},{dice:.6},{f1:.6},{se:.6},{sp:.6}")
}

/// Per-image rows followed by `pooled` and `mean` summary rows.
pub fn metrics_table(summary: &MetricsSummary) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    for (id, r) in &summary.per_image {
        line(row(id, r.dice, r.f1, r.sensitivity, r.specificity));
    }
    let p: MetricsReport = summary.pooled();
    line(row("pooled", p.dice, p.f1, p.sensitivity, p.specificity));
    let m = summary.mean();
    line(row("mean", m.dice, m.f1, m.sensitivity, m.specificity));
    out
}

pub fn run(args: &EvalArgs) -> CliResult<MetricsSummary> {
    let cfg = match (&args.checkpoint, args.oracle_mode) {
        (Some(ckpt), false) => checkpoint_config(ckpt, &args.model)?,
        (_, true) => RunConfig::from_flags(&args.model)?,
        (None, false) => return Err(CliError::usage("--checkpoint is required unless --oracle-mode is given")),
    };
    let manifest = load_manifest(&args.data)?;
    let records = load_split(&manifest, args.split, &cfg.masks)?;
    if records.is_empty() {
        return Err(CliError::usage(format!("split {} of {} is empty", args.split, args.data.display())));
    }
    let threshold = cfg.train.threshold;
    let mut summary = MetricsSummary::default();
    if args.oracle_mode {
        for r in &records {
            let logits: Vec<f32> = r
                .masks
                .final_mask
                .to_binary()
                .iter()
                .map(|&b| if b { ORACLE_LOGIT } else { -ORACLE_LOGIT })
                .collect();
            summary.push(r.id.clone(), evaluate(&logits, &r.masks.final_mask, threshold)?);
        }
    } else {
        let ckpt = args.checkpoint.as_deref().expect("checked above");
        let mut loaded = None;
        for r in &records {
            let dims = r.image.dims();
            let reload = !matches!(&loaded, Some((d, _, _)) if *d == dims);
            if reload {
                let (net, store) = load_model(&cfg, ckpt, dims)?;
                loaded = Some((dims, net, store));
            }
            let (_, net, store) = loaded.as_ref().expect("loaded above");
            let logits = predict_logits(net, store, r)?;
            summary.push(r.id.clone(), evaluate(&logits, &r.masks.final_mask, threshold)?);
        }
    }
    let table = metrics_table(&summary);
    let mut shown = String::new();
    for (id, r) in &summary.per_image {
        let _ = writeln!(shown, "{id:<20} {r}");
    }
    let _ = writeln!(shown, "{:<20} {}", "pooled", summary.pooled());
    let m = summary.mean();
    let _ = writeln!(
        shown,
        "{:<20} DICE {:.4}  F1 {:.4}  SE {:.4}  SP {:.4}",
        "mean", m.dice, m.f1, m.sensitivity, m.specificity
    );
    print!("{shown}");
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(METRICS_FILE), table)?;
    }
    Ok(summary)
}
