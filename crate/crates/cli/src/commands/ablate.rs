use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use mbtnet::data::{load_split, synthesize_dataset, SampleRecord, Split};
use mbtnet::model::MbtNet;
use mbtnet::supervision::MetricsReport;
use mbtnet::trainer::{load_checkpoint, train, validate, BEST_CHECKPOINT};

use super::{load_manifest, prepare_out};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::AblateArgs;

pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_HEADER: &str =
    "model,tr_depth,body_edge,params,best_epoch,dice,f1,se,sp,train_body,train_edge,train_final,train_loss";

pub const DEPTHS: [usize; 5] = [0, 1, 2, 3, 4];

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub label: String,
    pub tr_depth: usize,
    pub body_edge: bool,
    pub params: usize,
    pub best_epoch: usize,
    /// Best checkpoint scored on the held-out split.
    pub metrics: MetricsReport,
    /// Loss components averaged over the last training epoch.
    pub train_body: f64,
    pub train_edge: f64,
    pub train_final: f64,
    pub train_loss: f64,
}

impl AblationRow {
    pub fn csv_row(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{},{},{}",
            self.label,
            self.tr_depth,
            if self.body_edge { "on" } else { "off" },
            self.params,
            self.best_epoch,
            m.dice,
            m.f1,
            m.sensitivity,
            m.specificity,
            self.train_body,
            self.train_edge,
            self.train_final,
            self.train_loss
        )
    }
}

/// The ten grid cells in report order: depth-major, body/edge on first.
pub fn grid(base: &RunConfig) -> CliResult<Vec<RunConfig>> {
    let mut out = Vec::new();
    for depth in DEPTHS {
        for body_edge in [true, false] {
            let mut cfg = base.clone();
            cfg.model.tr_depth = depth;
            cfg.model.body_edge = body_edge;
            cfg.finish()?;
            out.push(cfg);
        }
    }
    Ok(out)
}

fn run_dir(root: &Path, cfg: &RunConfig) -> PathBuf {
    let be = if cfg.model.body_edge { "be" } else { "nobe" };
    root.join("runs").join(format!("tr{}-{be}", cfg.model.tr_depth))
}

fn run_cell(cfg: &RunConfig, dir: &Path, train_set: &[SampleRecord], val_set: &[SampleRecord], score_set: &[SampleRecord]) -> CliResult<AblationRow> {
    std::fs::create_dir_all(dir)?;
    cfg.save(dir)?;
    let (net, mut store) = MbtNet::build::<f32>(&cfg.model, cfg.seed)?;
    let mut state = cfg.train.fresh_state(&store);
    let report = train(&net, &mut store, &mut state, train_set, val_set, &cfg.train, Some(dir), |_| {})?;
    load_checkpoint(&dir.join(BEST_CHECKPOINT), &mut store)?;
    let scored = validate(&net, &store, score_set, &cfg.train.weights, cfg.train.threshold)?;
    let last = report.epochs.last().ok_or_else(|| CliError::usage("ablation needs at least one epoch"))?;
    Ok(AblationRow {
        label: cfg.model.label(),
        tr_depth: cfg.model.tr_depth,
        body_edge: cfg.model.body_edge,
        params: net.parameter_count(),
        best_epoch: report.best_epoch,
        metrics: scored.metrics.pooled(),
        train_body: last.train_body,
        train_edge: last.train_edge,
        train_final: last.train_final,
        train_loss: last.train_loss,
    })
}

pub fn render(rows: &[AblationRow]) -> String {
    let mut text = String::from(ABLATION_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    text
}

pub fn run(args: &AblateArgs) -> CliResult<Vec<AblationRow>> {
    let root = &args.out.out;
    let mut base = RunConfig::from_flags(&args.model)?;
    if base.train.epochs == 0 {
        return Err(CliError::usage("ablation needs at least one epoch"));
    }
    prepare_out(root, args.out.force)?;
    base.save(root)?;
    let manifest = match &args.data {
        Some(p) => load_manifest(p)?,
        None => synthesize_dataset(&base.synth, &base.dataset, &root.join("data"))?,
    };
    let train_set = load_split(&manifest, Split::Train, &base.masks)?;
    let val_set = load_split(&manifest, Split::Val, &base.masks)?;
    let test_set = load_split(&manifest, Split::Test, &base.masks)?;
    let first = train_set
        .first()
        .ok_or_else(|| CliError::usage("the ablation dataset has no training records"))?;
    base.model.input_size = first.image.dims();
    let cells = grid(&base)?;
    let score_set = if test_set.is_empty() { &val_set } else { &test_set };
    println!(
        "ablation: {} runs of {} epochs, scored on {} {} patches",
        cells.len(),
        base.train.epochs,
        score_set.len(),
        if test_set.is_empty() { "val" } else { "test" }
    );

    let results: Vec<Mutex<Option<CliResult<AblationRow>>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    let announce = |row: &CliResult<AblationRow>| match row {
        Ok(r) => println!(
            "{:<8} body/edge {:<3}  params {:>7}  {}",
            r.label,
            if r.body_edge { "on" } else { "off" },
            r.params,
            r.metrics
        ),
        Err(e) => println!("run failed: {e}"),
    };
    let work = |i: usize| {
        let row = run_cell(&cells[i], &run_dir(root, &cells[i]), &train_set, &val_set, score_set);
        announce(&row);
        *results[i].lock().expect("no panics while holding the lock") = Some(row);
    };
    if args.parallel {
        let next = AtomicUsize::new(0);
        let workers = std::thread::available_parallelism().map_or(2, |n| n.get().max(2)).min(cells.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= cells.len() {
                        break;
                    }
                    work(i);
                });
            }
        });
    } else {
        (0..cells.len()).for_each(work);
    }

    let rows = results
        .into_iter()
        .map(|m| m.into_inner().expect("no panics while holding the lock").expect("every cell ran"))
        .collect::<CliResult<Vec<_>>>()?;
    std::fs::write(root.join(ABLATION_FILE), render(&rows))?;
    println!("table written to {}", root.join(ABLATION_FILE).display());
    Ok(rows)
}
