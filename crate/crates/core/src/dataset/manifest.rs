use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DatasetError, Result};

pub const MANIFEST_HEADER: [&str; 3] = ["path", "label", "split"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bad,
    Good,
}

impl Label {
    /// Good is the positive class.
    pub fn target(self) -> u8 {
        match self {
            Label::Good => 1,
            Label::Bad => 0,
        }
    }

    pub fn from_target(t: u8) -> Self {
        if t == 1 {
            Label::Good
        } else {
            Label::Bad
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Good => "good",
            Label::Bad => "bad",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "good" => Ok(Label::Good),
            "bad" => Ok(Label::Bad),
            other => Err(format!("unknown label '{other}' (expected good or bad)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
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

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}' (expected train or test)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Record {
    /// Relative to the image root, `/`-separated.
    pub path: String,
    pub label: Label,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(MANIFEST_HEADER)?;
        for r in &self.records {
            w.write_record([r.path.as_str(), r.label.as_str(), r.split.as_str()])?;
        }
        w.flush().map_err(|e| DatasetError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(())
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_manifest(file)
}

/// Parses manifest CSV. Every malformed row is reported with its line number.
pub fn parse_manifest(reader: impl Read) -> Result<Manifest> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(h) => h?,
        None => return Err(DatasetError::MissingHeader("file is empty".into())),
    };
    let header: Vec<&str> = header.iter().map(|s| s.trim_start_matches('\u{feff}')).collect();
    if header != MANIFEST_HEADER {
        return Err(DatasetError::MissingHeader(format!(
            "expected `path,label,split`, found `{}`",
            header.join(",")
        )));
    }

    let mut records = Vec::new();
    let mut problems = Vec::new();
    let mut seen = HashSet::new();
    for row in rows {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != 3 {
            problems.push(format!("line {line}: expected 3 fields, found {}", row.len()));
            continue;
        }
        let path = row[0].trim();
        let parsed = (|| -> std::result::Result<Record, String> {
            if path.is_empty() {
                return Err("empty path".into());
            }
            Ok(Record {
                path: path.to_string(),
                label: row[1].trim().parse()?,
                split: row[2].trim().parse()?,
            })
        })();
        match parsed {
            Ok(rec) => {
                if !seen.insert(rec.path.clone()) {
                    problems.push(format!("line {line}: duplicate path '{}'", rec.path));
                } else {
                    records.push(rec);
                }
            }
            Err(msg) => problems.push(format!("line {line}: {msg}")),
        }
    }
    if !problems.is_empty() {
        return Err(DatasetError::Malformed(problems));
    }
    if records.is_empty() {
        log::warn!("manifest has a header but no records");
    }
    Ok(Manifest { records })
}

/// Builds a manifest from a `<root>/<train|test>/<good|bad>/<image>` tree.
/// Directory names are matched case-insensitively; files that are not
/// JPEG or PNG are skipped. Records are sorted by path.
pub fn manifest_from_dir(root: impl AsRef<Path>) -> Result<Manifest> {
    let root = root.as_ref();
    let io = |p: &Path, e| DatasetError::Io {
        path: p.display().to_string(),
        source: e,
    };
    let mut records = Vec::new();
    for split_dir in fs::read_dir(root).map_err(|e| io(root, e))? {
        let split_dir = split_dir.map_err(|e| io(root, e))?;
        let split_name = split_dir.file_name().to_string_lossy().to_lowercase();
        let Ok(split) = split_name.parse::<Split>() else {
            continue;
        };
        if !split_dir.path().is_dir() {
            continue;
        }
        for label_dir in fs::read_dir(split_dir.path()).map_err(|e| io(&split_dir.path(), e))? {
            let label_dir = label_dir.map_err(|e| io(&split_dir.path(), e))?;
            let label_name = label_dir.file_name().to_string_lossy().to_lowercase();
            let Ok(label) = label_name.parse::<Label>() else {
                continue;
            };
            if !label_dir.path().is_dir() {
                continue;
            }
            for img in fs::read_dir(label_dir.path()).map_err(|e| io(&label_dir.path(), e))? {
                let img = img.map_err(|e| io(&label_dir.path(), e))?;
                let name = img.file_name().to_string_lossy().into_owned();
                let ext = name.rsplit('.').next().unwrap_or("").to_lowercase();
                if !matches!(ext.as_str(), "jpg" | "jpeg" | "png") || !img.path().is_file() {
                    continue;
                }
                records.push(Record {
                    path: format!(
                        "{}/{}/{}",
                        split_dir.file_name().to_string_lossy(),
                        label_dir.file_name().to_string_lossy(),
                        name
                    ),
                    label,
                    split,
                });
            }
        }
    }
    records.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(Manifest { records })
}

/// Counts per label and split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub train_good: usize,
    pub train_bad: usize,
    pub test_good: usize,
    pub test_bad: usize,
}

impl DatasetStats {
    pub fn train_total(&self) -> usize {
        self.train_good + self.train_bad
    }

    pub fn test_total(&self) -> usize {
        self.test_good + self.test_bad
    }

    pub fn good_total(&self) -> usize {
        self.train_good + self.test_good
    }

    pub fn bad_total(&self) -> usize {
        self.train_bad + self.test_bad
    }

    pub fn total(&self) -> usize {
        self.train_total() + self.test_total()
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10}{:>8}{:>8}{:>8}", "", "Good", "Bad", "Total")?;
        writeln!(
            f,
            "{:<10}{:>8}{:>8}{:>8}",
            "Training",
            self.train_good,
            self.train_bad,
            self.train_total()
        )?;
        writeln!(
            f,
            "{:<10}{:>8}{:>8}{:>8}",
            "Test",
            self.test_good,
            self.test_bad,
            self.test_total()
        )?;
        write!(
            f,
            "{:<10}{:>8}{:>8}{:>8}",
            "Total",
            self.good_total(),
            self.bad_total(),
            self.total()
        )
    }
}

pub fn stats(manifest: &Manifest) -> DatasetStats {
    let mut s = DatasetStats::default();
    for r in &manifest.records {
        match (r.split, r.label) {
            (Split::Train, Label::Good) => s.train_good += 1,
            (Split::Train, Label::Bad) => s.train_bad += 1,
            (Split::Test, Label::Good) => s.test_good += 1,
            (Split::Test, Label::Bad) => s.test_bad += 1,
        }
    }
    s
}
