//! Model-oracle harness shared by the integration suites.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use lethekv::store::MemStore;
use lethekv::{Config, Engine};
use proptest::prelude::*;

pub const DOMAIN: u64 = 1 << 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyMode {
    /// Delete key equals sort key.
    Equal,
    /// Delete key is the tick at which the version was written.
    Timestamp,
}

#[derive(Debug, Clone)]
pub enum Op {
    Put(u64, u8),
    Delete(u64),
    RangeDelete(u64, u64),
    Get(u64),
    Scan(u64, u64),
    SecondaryLookup(u64, u64),
    /// In equal mode a delete-key range; in timestamp mode `[0, x)` where
    /// `x` is the given fraction (per mille) of the current time.
    SecondaryDelete(u64, u64),
    Flush,
    Reopen,
}

fn key() -> impl Strategy<Value = u64> {
    prop_oneof![3 => 0u64..64, 1 => 0u64..DOMAIN]
}

pub fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        30 => (key(), any::<u8>()).prop_map(|(k, v)| Op::Put(k, v)),
        8 => key().prop_map(Op::Delete),
        2 => (key(), 1u64..64).prop_map(|(k, w)| Op::RangeDelete(k, k + w)),
        10 => key().prop_map(Op::Get),
        2 => (key(), 1u64..200).prop_map(|(k, w)| Op::Scan(k, k + w)),
        2 => (key(), 1u64..200).prop_map(|(k, w)| Op::SecondaryLookup(k, k + w)),
        1 => (key(), 0u64..1000).prop_map(|(k, w)| Op::SecondaryDelete(k, w)),
        1 => Just(Op::Flush),
        1 => Just(Op::Reopen),
    ]
}

pub fn ops(max: usize) -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(op(), 1..max)
}

/// Small pages and buffers so short sequences flush and compact often.
pub fn small(mut cfg: Config, h: usize) -> Config {
    cfg.layout.h = h;
    cfg.layout.page_size = 512;
    cfg.layout.entry_size = 64;
    cfg.layout.pages_per_file = 8;
    cfg.buffer_bytes = 768;
    cfg.size_ratio = 3;
    cfg.ingest_rate = 1;
    cfg.key_space = DOMAIN;
    cfg.paranoid = true;
    cfg
}

pub fn lethe_small(h: usize) -> Config {
    let mut c = small(Config::lethe(60.0, h), h);
    c.fade.d_th_s = 60.0;
    c
}

/// Latest event per key: visible value and the delete key of that version.
#[derive(Debug, Default, Clone)]
pub struct Model {
    pub map: BTreeMap<u64, (Option<Vec<u8>>, u64)>,
}

impl Model {
    pub fn get(&self, k: u64) -> Option<Vec<u8>> {
        self.map.get(&k).and_then(|(v, _)| v.clone())
    }

    pub fn scan(&self, lo: u64, hi: u64) -> Vec<(u64, Vec<u8>)> {
        self.map.range(lo..hi).filter_map(|(k, (v, _))| v.clone().map(|v| (*k, v))).collect()
    }

    pub fn secondary(&self, lo: u64, hi: u64) -> Vec<u64> {
        self.map.iter().filter(|(_, (v, dk))| v.is_some() && *dk >= lo && *dk < hi).map(|(k, _)| *k).collect()
    }

    /// Removes every key whose latest version has delete key in range.
    pub fn secondary_delete(&mut self, lo: u64, hi: u64) {
        for (v, dk) in self.map.values_mut() {
            if *dk >= lo && *dk < hi {
                *v = None;
            }
        }
    }
}

pub struct Harness {
    pub store: MemStore,
    pub cfg: Config,
    pub engine: Engine,
    pub model: Model,
    pub mode: KeyMode,
}

impl Harness {
    pub fn new(cfg: Config, mode: KeyMode) -> Self {
        let store = MemStore::new();
        let engine = Engine::open(Arc::new(store.clone()), cfg.clone()).expect("open");
        Harness { store, cfg, engine, model: Model::default(), mode }
    }

    fn dk(&self, k: u64) -> u64 {
        match self.mode {
            KeyMode::Equal => k,
            KeyMode::Timestamp => self.engine.now() + 1,
        }
    }

    pub fn apply(&mut self, op: &Op) -> Result<(), String> {
        let e = |r: lethekv::Error| r.to_string();
        match *op {
            Op::Put(k, v) => {
                let dk = self.dk(k);
                self.engine.put(k, dk, vec![v; 4]).map_err(e)?;
                self.model.map.insert(k, (Some(vec![v; 4]), dk));
            }
            Op::Delete(k) => {
                let dk = self.dk(k);
                self.engine.delete_with_key(k, dk).map_err(e)?;
                self.model.map.insert(k, (None, dk));
            }
            Op::RangeDelete(lo, hi) => {
                self.engine.range_delete(lo, hi).map_err(e)?;
                for (v, dk) in self.model.map.range_mut(lo..hi).map(|(_, x)| x) {
                    *v = None;
                    *dk = u64::MAX;
                }
            }
            Op::Get(k) => {
                let got = self.engine.get(k).map_err(e)?;
                if got != self.model.get(k) {
                    return Err(format!("get({k}) = {got:?}, model {:?}", self.model.get(k)));
                }
            }
            Op::Scan(lo, hi) => {
                let got = self.engine.range_scan(lo, hi).map_err(e)?;
                if got != self.model.scan(lo, hi) {
                    return Err(format!("scan({lo}, {hi}) diverged"));
                }
            }
            Op::SecondaryLookup(lo, hi) => {
                let (lo, hi) = self.delete_range(lo, hi);
                let got: Vec<u64> =
                    self.engine.secondary_range_lookup(lo, hi).map_err(e)?.entries.iter().map(|x| x.sort_key).collect();
                let want = self.model.secondary(lo, hi);
                if got != want {
                    return Err(format!("secondary lookup [{lo}, {hi}): {got:?} vs {want:?}"));
                }
            }
            Op::SecondaryDelete(a, b) => {
                let (lo, hi) = match self.mode {
                    KeyMode::Equal => (a, a + b % 128 + 1),
                    KeyMode::Timestamp => (0, (self.engine.now() + 1) * b / 1000 + 1),
                };
                self.engine.secondary_range_delete(lo, hi).map_err(e)?;
                self.model.secondary_delete(lo, hi);
            }
            Op::Flush => {
                self.engine.flush().map_err(e)?;
            }
            Op::Reopen => self.reopen()?,
        }
        Ok(())
    }

    fn delete_range(&self, a: u64, b: u64) -> (u64, u64) {
        match self.mode {
            KeyMode::Equal => (a, b),
            KeyMode::Timestamp => {
                let now = self.engine.now() + 1;
                let lo = a % now;
                (lo, lo + b)
            }
        }
    }

    /// Crash (drop without closing) when the log is on, clean close otherwise.
    pub fn reopen(&mut self) -> Result<(), String> {
        if !self.cfg.wal.enabled {
            self.engine.close().map_err(|e| e.to_string())?;
        }
        let engine = Engine::open(Arc::new(self.store.clone()), self.cfg.clone()).map_err(|e| e.to_string())?;
        self.engine = engine;
        Ok(())
    }

    /// Every key in the domain plus a full scan.
    pub fn check_all(&mut self) -> Result<(), String> {
        let got = self.engine.range_scan(0, u64::MAX).map_err(|e| e.to_string())?;
        if got != self.model.scan(0, u64::MAX) {
            return Err(format!(
                "full scan diverged: {} engine vs {} model",
                got.len(),
                self.model.scan(0, u64::MAX).len()
            ));
        }
        for k in self.model.map.keys().copied().collect::<Vec<_>>() {
            self.apply(&Op::Get(k))?;
        }
        self.engine.version().check_disjoint()?;
        Ok(())
    }
}

pub fn run_sequence(cfg: Config, mode: KeyMode, ops: &[Op]) -> Result<(), String> {
    let mut h = Harness::new(cfg, mode);
    for (i, op) in ops.iter().enumerate() {
        h.apply(op).map_err(|m| format!("op {i} {op:?}: {m}"))?;
    }
    h.check_all()
}
