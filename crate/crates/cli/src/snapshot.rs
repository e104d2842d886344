//! Plain-text `key=value` config snapshots written next to command outputs.

use std::fmt::Display;
use std::path::Path;

use anyhow::{Context, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Snapshot {
    pub entries: Vec<(String, String)>,
}

impl Snapshot {
    pub fn new(command: &str) -> Self {
        let mut s = Self::default();
        s.set("command", command);
        s
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        self
    }

    #[cfg(test)]
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    #[cfg(test)]
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Self::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                anyhow::bail!("line {}: expected key=value", i + 1);
            };
            s.set(k.trim(), v.trim());
        }
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())
            .with_context(|| format!("cannot write config snapshot {}", path.display()))
    }
}

/// Snapshot path for a command whose output is a single file.
pub fn beside(output: &Path) -> std::path::PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".config.txt");
    output.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut s = Snapshot::new("train");
        s.set("lr", 1e-4).set("mixup_alpha", "off").set("lr", 0.001);
        let back = Snapshot::parse(&s.render()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.get("lr"), Some("0.001"));
        assert!(Snapshot::parse("novalue\n").is_err());
    }

    #[test]
    fn beside_appends_suffix() {
        assert_eq!(beside(Path::new("out/p.csv")), Path::new("out/p.csv.config.txt"));
    }
}
