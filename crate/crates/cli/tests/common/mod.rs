#![allow(dead_code)]

use std::path::{Path, PathBuf};

use clap::Parser;
use mbtnet_cli::{Cli, Command};

/// Small dataset geometry: 32x32 patches from 64x64 mosaics, 4/2/2 split.
pub const SMALL_CONFIG: &str = "\
model.widths = 4,8,16,32
synth.height = 64
synth.width = 64
synth.cells = 12
data.train_images = 2
data.val_images = 1
data.test_images = 1
data.patches_per_image = 2
data.patch_size = 32
";

pub fn write_small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.conf");
    std::fs::write(&p, SMALL_CONFIG).unwrap();
    p
}

pub fn parse(args: &[&str]) -> Command {
    let mut full = vec!["mbtnet"];
    full.extend_from_slice(args);
    Cli::try_parse_from(full).expect("valid arguments").command
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Relative paths and contents of every file below `dir`, sorted.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
