//! Engine configuration and the line-oriented `key = value` file format.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fade::SelectionMode;
use crate::layout::LayoutConfig;
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq)]
pub struct FadeConfig {
    pub enabled: bool,
    /// Delete persistence threshold in logical seconds.
    pub d_th_s: f64,
    /// Saturation-triggered selection mode (`So` or `Sd`).
    pub selection: SelectionMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalConfig {
    pub enabled: bool,
    pub segment_bytes: u64,
    /// Logical seconds between purge passes; 0 disables automatic purging.
    pub purge_interval_s: f64,
    pub sync: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub layout: LayoutConfig,
    /// Write buffer capacity M in bytes.
    pub buffer_bytes: usize,
    /// Size ratio T between adjacent levels.
    pub size_ratio: u64,
    /// Ingested operations per logical second.
    pub ingest_rate: u64,
    /// Upper end of the sort-key domain, used by the key histogram.
    pub key_space: u64,
    pub fade: FadeConfig,
    /// Skip point deletes whose key no filter reports as present.
    pub blind_delete_suppression: bool,
    pub wal: WalConfig,
    pub manifest_sync: bool,
    pub exec: Exec,
    /// Extra consistency checks (shadow scans before page drops, level
    /// disjointness after every structural change).
    pub paranoid: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            layout: LayoutConfig::default(),
            buffer_bytes: 1 << 20,
            size_ratio: 10,
            ingest_rate: 1024,
            key_space: u64::MAX,
            fade: FadeConfig { enabled: false, d_th_s: 3600.0, selection: SelectionMode::So },
            blind_delete_suppression: false,
            wal: WalConfig { enabled: false, segment_bytes: 4 << 20, purge_interval_s: 0.0, sync: false },
            manifest_sync: false,
            exec: Exec::Parallel,
            paranoid: false,
        }
    }
}

impl Config {
    /// Baseline engine: saturation-only compaction, one page per delete tile.
    pub fn classic() -> Self {
        let mut c = Config::default();
        c.layout.h = 1;
        c
    }

    /// Delete-aware compaction with `h` pages per delete tile.
    pub fn lethe(d_th_s: f64, h: usize) -> Self {
        let mut c = Config::default();
        c.layout.h = h;
        c.fade.enabled = true;
        c.fade.d_th_s = d_th_s;
        c.blind_delete_suppression = true;
        c
    }

    /// Desk-scale tree: 64KB buffer, 256-byte entries, size ratio 4 and
    /// files of 16 pages.
    pub fn desk(mut self) -> Self {
        self.layout.entry_size = 256;
        self.layout.pages_per_file = 16;
        self.buffer_bytes = 64 << 10;
        self.size_ratio = 4;
        self.key_space = 1 << 40;
        self
    }

    pub fn is_lethe(&self) -> bool {
        self.fade.enabled
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        if self.size_ratio < 2 {
            return Err(Error::InvalidParams(format!("size ratio must be at least 2, got {}", self.size_ratio)));
        }
        if self.ingest_rate == 0 {
            return Err(Error::InvalidParams("ingest rate must be positive".into()));
        }
        if self.buffer_bytes < self.layout.entry_size {
            return Err(Error::InvalidParams("buffer smaller than one entry".into()));
        }
        if self.fade.enabled && (self.fade.d_th_s.is_nan() || self.fade.d_th_s <= 0.0) {
            return Err(Error::InvalidParams(format!("fade.d_th_s must be positive, got {}", self.fade.d_th_s)));
        }
        if self.fade.selection == SelectionMode::Dd {
            return Err(Error::InvalidParams("fade.selection must be so or sd".into()));
        }
        Ok(())
    }

    /// D_th in ticks.
    pub fn d_th_ticks(&self) -> u64 {
        (self.fade.d_th_s * self.ingest_rate as f64) as u64
    }

    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::InvalidParams(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "layout.h" | "kiwi.h" => self.layout.h = parse(key, value)?,
            "layout.pages_per_file" => self.layout.pages_per_file = parse(key, value)?,
            "layout.page_size" => self.layout.page_size = parse(key, value)?,
            "layout.entry_size" => self.layout.entry_size = parse(key, value)?,
            "layout.bits_per_entry" => self.layout.bits_per_entry = parse(key, value)?,
            "buffer.bytes" => self.buffer_bytes = parse(key, value)?,
            "tree.size_ratio" => self.size_ratio = parse(key, value)?,
            "tree.ingest_rate" => self.ingest_rate = parse(key, value)?,
            "tree.key_space" => self.key_space = parse(key, value)?,
            "fade.enabled" => self.fade.enabled = parse(key, value)?,
            "fade.d_th_s" => self.fade.d_th_s = parse(key, value)?,
            "fade.selection" => self.fade.selection = parse(key, value)?,
            "delete.blind_suppression" => self.blind_delete_suppression = parse(key, value)?,
            "wal.enabled" => self.wal.enabled = parse(key, value)?,
            "wal.segment_bytes" => self.wal.segment_bytes = parse(key, value)?,
            "wal.purge_interval_s" => self.wal.purge_interval_s = parse(key, value)?,
            "wal.sync" => self.wal.sync = parse(key, value)?,
            "manifest.sync" => self.manifest_sync = parse(key, value)?,
            "exec.parallel" => self.exec = if parse::<bool>(key, value)? { Exec::Parallel } else { Exec::Sequential },
            "compaction.style" => {
                if value != "leveled-partial" {
                    return Err(Error::InvalidParams(format!("unsupported compaction.style {value}")));
                }
            }
            "debug.paranoid" => self.paranoid = parse(key, value)?,
            _ => return Err(Error::InvalidParams(format!("unknown config key {key}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` pair, ignoring keys outside the engine's
    /// namespaces so engine and workload settings can share one file.
    pub fn apply(&mut self, pairs: &BTreeMap<String, String>) -> Result<()> {
        const ENGINE: &[&str] = &[
            "layout.",
            "kiwi.",
            "buffer.",
            "tree.",
            "fade.",
            "delete.",
            "wal.",
            "manifest.",
            "exec.",
            "compaction.",
            "debug.",
        ];
        for (k, v) in pairs {
            if ENGINE.iter().any(|p| k.starts_with(p)) {
                self.set(k, v)?;
            }
        }
        Ok(())
    }
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidParams(format!("line {}: expected key = value", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn read_pairs(path: &Path) -> Result<BTreeMap<String, String>> {
    parse_pairs(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_applies() {
        let text = "# engine\nfade.enabled = true\nfade.d_th_s=120\nfade.selection = sd\nwal.enabled = true\nwal.purge_interval_s = 5\nworkload.ops = 10\n";
        let pairs = parse_pairs(text).unwrap();
        let mut c = Config::classic();
        c.apply(&pairs).unwrap();
        assert!(c.fade.enabled && c.wal.enabled);
        assert_eq!(c.fade.d_th_s, 120.0);
        assert_eq!(c.fade.selection, SelectionMode::Sd);
        assert_eq!(c.wal.purge_interval_s, 5.0);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_pairs("novalue").is_err());
        let mut c = Config::default();
        assert!(c.set("fade.enabled", "maybe").is_err());
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("compaction.style", "tiered").is_err());
        c.size_ratio = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn presets() {
        let c = Config::lethe(60.0, 8);
        assert!(c.is_lethe() && c.blind_delete_suppression);
        assert_eq!(c.layout.h, 8);
        assert_eq!(c.d_th_ticks(), 60 * 1024);
        assert!(!Config::classic().is_lethe());
    }
}
