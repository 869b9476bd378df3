//! Line-oriented dataset index: `split<TAB>image<TAB>mask`, with paths
//! relative to the manifest's directory. `#` starts a comment line.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train, val or test)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub split: Split,
    pub image: PathBuf,
    pub mask: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    /// Parses manifest text without touching the file system.
    pub fn parse(text: &str, source: &str, root: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let err = |reason: String| Error::Parse {
                path: source.to_owned(),
                line,
                reason,
            };
            let fields: Vec<&str> = trimmed.split('\t').collect();
            let [split, image, mask] = fields[..] else {
                return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
            };
            let split = split.trim().parse::<Split>().map_err(err)?;
            if image.is_empty() || mask.is_empty() {
                return Err(err("empty path".into()));
            }
            records.push(ManifestRecord {
                split,
                image: PathBuf::from(image),
                mask: PathBuf::from(mask),
            });
        }
        let manifest = Self {
            root: root.to_path_buf(),
            records,
        };
        manifest.check_disjoint()?;
        Ok(manifest)
    }

    /// Reads a manifest and verifies every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let root = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let manifest = Self::parse(&text, &path.display().to_string(), &root)?;
        manifest.check_files()?;
        Ok(manifest)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!("{}\t{}\t{}\n", r.split, r.image.display(), r.mask.display()));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    pub fn check_files(&self) -> Result<()> {
        for r in &self.records {
            for p in [&r.image, &r.mask] {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::MissingFile(full));
                }
            }
        }
        Ok(())
    }

    /// A file may appear in only one split.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut owner: HashMap<&Path, Split> = HashMap::new();
        for r in &self.records {
            for p in [r.image.as_path(), r.mask.as_path()] {
                match owner.get(p) {
                    Some(&s) if s != r.split => {
                        return Err(Error::OverlappingSplits {
                            path: p.to_path_buf(),
                            first: s.to_string(),
                            second: r.split.to_string(),
                        })
                    }
                    _ => {
                        owner.insert(p, r.split);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_reports_line_numbers() {
        let text = "# header\ntrain\ta.png\tam.png\n\nval\tb.png\n";
        let err = DatasetManifest::parse(text, "m.tsv", Path::new("")).unwrap_err().to_string();
        assert!(err.contains("m.tsv: line 4"), "{err}");
        let err = DatasetManifest::parse("bogus\ta\tb\n", "m.tsv", Path::new(""))
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 1") && err.contains("bogus"), "{err}");
    }

    #[test]
    fn overlapping_splits_are_rejected() {
        let text = "train\ta.png\tam.png\nval\ta.png\tbm.png\n";
        let err = DatasetManifest::parse(text, "m", Path::new("")).unwrap_err();
        assert!(matches!(err, Error::OverlappingSplits { .. }), "{err}");
    }

    #[test]
    fn render_parse_round_trip() {
        let text = "train\timages/a.png\tmasks/a.png\ntest\timages/b.png\tmasks/b.png\n";
        let m = DatasetManifest::parse(text, "m", Path::new("/data")).unwrap();
        assert_eq!(m.render(), text);
        assert_eq!(m.count(Split::Train), 1);
        assert_eq!(m.resolve(&m.records[1].image), Path::new("/data/images/b.png"));
    }
}
