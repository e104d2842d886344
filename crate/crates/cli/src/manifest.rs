//! `path,label,split` dataset manifests.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use scenefuse_core::labels::{class_index, class_name};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Eval => "eval",
        })
    }
}

impl FromStr for Split {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => bail!("unknown split {other:?} (train, eval)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    /// Path as written in the manifest.
    pub path: String,
    /// Path resolved against the manifest's directory.
    pub resolved: PathBuf,
    pub label: usize,
    pub split: Split,
}

impl Entry {
    /// Clip id: the file stem, shared by feature files and embedding rows.
    pub fn id(&self) -> String {
        Path::new(&self.path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<Entry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .with_context(|| format!("cannot read manifest {}", path.display()))?;
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["path", "label", "split"] {
            bail!("manifest header must be `path,label,split`, got {:?}", headers);
        }
        let mut entries = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            if rec.len() != 3 {
                bail!("{}:{line}: expected 3 fields", path.display());
            }
            let label = class_index(&rec[1]).with_context(|| format!("{}:{line}", path.display()))?;
            let split = rec[2].parse().with_context(|| format!("{}:{line}", path.display()))?;
            entries.push(Entry {
                path: rec[0].to_string(),
                resolved: base.join(&rec[0]),
                label,
                split,
            });
        }
        let manifest = Manifest { entries };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            bail!("empty manifest");
        }
        let mut paths = HashSet::new();
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !paths.insert(e.path.as_str()) {
                bail!("duplicate manifest path {}", e.path);
            }
            if !ids.insert(e.id()) {
                bail!("two manifest rows share the clip id {}", e.id());
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<&Entry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["path", "label", "split"])?;
        for e in &self.entries {
            w.write_record([e.path.as_str(), class_name(e.label)?, &e.split.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "path,label,split\naudio/a.wav,bus,train\nb.wav,tram,eval\n").unwrap();
        let m = Manifest::load(&path).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[0].resolved, dir.path().join("audio/a.wav"));
        assert_eq!(m.entries[0].id(), "a");
        assert_eq!(m.entries[1].label, 9);
        assert_eq!(m.split(Split::Eval).len(), 1);
    }

    #[test]
    fn bad_manifests_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        for body in [
            "path,label,split\n",
            "path,label,split\na.wav,beach,train\n",
            "path,label,split\na.wav,bus,test\n",
            "path,label,split\na.wav,bus,train\na.wav,bus,eval\n",
            "path,label,split\nx/a.wav,bus,train\ny/a.wav,bus,eval\n",
            "file,label,split\na.wav,bus,train\n",
        ] {
            std::fs::write(&path, body).unwrap();
            assert!(Manifest::load(&path).is_err(), "{body:?}");
        }
        std::fs::write(&path, "path,label,split\n").unwrap();
        let err = Manifest::load(&path).unwrap_err();
        assert_eq!(err.to_string(), "empty manifest");
    }
}
