//! Simulated memory spaces, scratch pooling and the transfer ledger.
//!
//! The device space is ordinary host memory with a different tag. Transfers
//! between spaces are accounted byte-exactly and priced with a
//! latency + size / bandwidth model.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MemorySpace {
    Host,
    Device,
}

impl fmt::Display for MemorySpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MemorySpace::Host => "host",
            MemorySpace::Device => "device",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    HostToDevice,
    DeviceToHost,
}

impl Direction {
    pub fn between(from: MemorySpace, to: MemorySpace) -> Option<Direction> {
        match (from, to) {
            (MemorySpace::Host, MemorySpace::Device) => Some(Direction::HostToDevice),
            (MemorySpace::Device, MemorySpace::Host) => Some(Direction::DeviceToHost),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::HostToDevice => "h2d",
            Direction::DeviceToHost => "d2h",
        })
    }
}

/// Analytic interconnect cost: every transfer pays `latency_s` plus
/// `bytes / bandwidth_bytes_per_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    pub latency_s: f64,
    pub bandwidth_bytes_per_s: f64,
}

impl Default for LinkModel {
    /// Synthetic PCIe-class placeholder: 5 us, 64 GB/s.
    fn default() -> Self {
        LinkModel {
            latency_s: 5e-6,
            bandwidth_bytes_per_s: 64e9,
        }
    }
}

impl LinkModel {
    pub fn time(&self, transfers: u64, bytes: u64) -> f64 {
        transfers as f64 * self.latency_s + bytes as f64 / self.bandwidth_bytes_per_s
    }
}

/// Label attached to each transfer for the per-row CSV dump.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TransferTag {
    pub variant: String,
    pub kernel: String,
}

impl TransferTag {
    pub fn new(variant: impl Into<String>, kernel: impl Into<String>) -> Self {
        TransferTag {
            variant: variant.into(),
            kernel: kernel.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DirectionTotals {
    pub bytes: u64,
    pub transfers: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerRow {
    pub tag: TransferTag,
    pub direction: Direction,
    pub bytes: u64,
    pub transfers: u64,
    pub modeled_time_s: f64,
}

/// Point-in-time copy of a ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerSnapshot {
    pub h2d: DirectionTotals,
    pub d2h: DirectionTotals,
    pub modeled_time_s: f64,
}

impl LedgerSnapshot {
    pub fn total_bytes(&self) -> u64 {
        self.h2d.bytes + self.d2h.bytes
    }

    pub fn total_transfers(&self) -> u64 {
        self.h2d.transfers + self.d2h.transfers
    }

    /// Traffic recorded between `earlier` and `self`, priced with `model`.
    pub fn since(&self, earlier: &LedgerSnapshot, model: &LinkModel) -> LedgerSnapshot {
        let d = |a: DirectionTotals, b: DirectionTotals| DirectionTotals {
            bytes: a.bytes - b.bytes,
            transfers: a.transfers - b.transfers,
        };
        let h2d = d(self.h2d, earlier.h2d);
        let d2h = d(self.d2h, earlier.d2h);
        LedgerSnapshot {
            h2d,
            d2h,
            modeled_time_s: model.time(h2d.transfers + d2h.transfers, h2d.bytes + d2h.bytes),
        }
    }
}

/// Exact byte accounting for host/device transfers. Safe to share between
/// threads; totals accumulate atomically.
#[derive(Debug)]
pub struct TransferLedger {
    model: LinkModel,
    h2d_bytes: AtomicU64,
    h2d_count: AtomicU64,
    d2h_bytes: AtomicU64,
    d2h_count: AtomicU64,
    rows: Mutex<BTreeMap<(TransferTag, Direction), DirectionTotals>>,
}

impl TransferLedger {
    pub fn new(model: LinkModel) -> Self {
        TransferLedger {
            model,
            h2d_bytes: AtomicU64::new(0),
            h2d_count: AtomicU64::new(0),
            d2h_bytes: AtomicU64::new(0),
            d2h_count: AtomicU64::new(0),
            rows: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn model(&self) -> LinkModel {
        self.model
    }

    pub fn record(&self, tag: &TransferTag, direction: Direction, bytes: u64) {
        let (b, c) = match direction {
            Direction::HostToDevice => (&self.h2d_bytes, &self.h2d_count),
            Direction::DeviceToHost => (&self.d2h_bytes, &self.d2h_count),
        };
        b.fetch_add(bytes, Ordering::Relaxed);
        c.fetch_add(1, Ordering::Relaxed);
        let mut rows = self.rows.lock().expect("ledger lock");
        let row = rows.entry((tag.clone(), direction)).or_default();
        row.bytes += bytes;
        row.transfers += 1;
    }

    pub fn totals(&self, direction: Direction) -> DirectionTotals {
        let (b, c) = match direction {
            Direction::HostToDevice => (&self.h2d_bytes, &self.h2d_count),
            Direction::DeviceToHost => (&self.d2h_bytes, &self.d2h_count),
        };
        DirectionTotals {
            bytes: b.load(Ordering::Relaxed),
            transfers: c.load(Ordering::Relaxed),
        }
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        let h2d = self.totals(Direction::HostToDevice);
        let d2h = self.totals(Direction::DeviceToHost);
        LedgerSnapshot {
            h2d,
            d2h,
            modeled_time_s: self
                .model
                .time(h2d.transfers + d2h.transfers, h2d.bytes + d2h.bytes),
        }
    }

    pub fn rows(&self) -> Vec<LedgerRow> {
        let rows = self.rows.lock().expect("ledger lock");
        rows.iter()
            .map(|((tag, dir), t)| LedgerRow {
                tag: tag.clone(),
                direction: *dir,
                bytes: t.bytes,
                transfers: t.transfers,
                modeled_time_s: self.model.time(t.transfers, t.bytes),
            })
            .collect()
    }
}

impl Default for TransferLedger {
    fn default() -> Self {
        TransferLedger::new(LinkModel::default())
    }
}

/// Key for a pooled scratch buffer: one pool slot per (variant, kernel, role).
pub type ScratchKey = (String, String, &'static str);

/// Lazily grown scratch storage. Capacity per key only ever grows.
#[derive(Debug, Default)]
pub struct ScratchPool {
    free: Mutex<HashMap<ScratchKey, Vec<Vec<u8>>>>,
    high_water: Mutex<HashMap<ScratchKey, usize>>,
}

impl ScratchPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Storage with at least `bytes` capacity, reused from the pool when possible.
    pub fn take(&self, key: &ScratchKey, bytes: usize) -> Vec<u8> {
        let mut v = self
            .free
            .lock()
            .expect("pool lock")
            .get_mut(key)
            .and_then(Vec::pop)
            .unwrap_or_default();
        if v.capacity() < bytes {
            v.reserve(bytes - v.len());
        }
        let mut hw = self.high_water.lock().expect("pool lock");
        let e = hw.entry(key.clone()).or_insert(0);
        *e = (*e).max(v.capacity());
        v
    }

    pub fn give(&self, key: &ScratchKey, storage: Vec<u8>) {
        self.free
            .lock()
            .expect("pool lock")
            .entry(key.clone())
            .or_default()
            .push(storage);
    }

    pub fn capacity(&self, key: &ScratchKey) -> usize {
        self.high_water
            .lock()
            .expect("pool lock")
            .get(key)
            .copied()
            .unwrap_or(0)
    }

    pub fn keys(&self) -> usize {
        self.high_water.lock().expect("pool lock").len()
    }
}

/// A named memory space with its scratch pool.
#[derive(Debug)]
pub struct Arena {
    space: MemorySpace,
    pool: ScratchPool,
}

impl Arena {
    pub fn new(space: MemorySpace) -> Self {
        Arena {
            space,
            pool: ScratchPool::new(),
        }
    }

    pub fn space(&self) -> MemorySpace {
        self.space
    }

    pub fn pool(&self) -> &ScratchPool {
        &self.pool
    }
}

/// Host and device arenas joined by a modeled link.
#[derive(Debug)]
pub struct Interconnect {
    pub host: Arena,
    pub device: Arena,
    pub ledger: TransferLedger,
}

impl Interconnect {
    pub fn new(model: LinkModel) -> Self {
        Interconnect {
            host: Arena::new(MemorySpace::Host),
            device: Arena::new(MemorySpace::Device),
            ledger: TransferLedger::new(model),
        }
    }

    pub fn arena(&self, space: MemorySpace) -> &Arena {
        match space {
            MemorySpace::Host => &self.host,
            MemorySpace::Device => &self.device,
        }
    }
}

impl Default for Interconnect {
    fn default() -> Self {
        Interconnect::new(LinkModel::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modeled_time_formula() {
        let m = LinkModel {
            latency_s: 5e-6,
            bandwidth_bytes_per_s: 64e9,
        };
        assert_eq!(m.time(1, 5632), 5e-6 + 5632.0 / 64e9);
        let ledger = TransferLedger::new(m);
        let tag = TransferTag::new("v", "k");
        ledger.record(&tag, Direction::HostToDevice, 5632);
        ledger.record(&tag, Direction::DeviceToHost, 5632);
        let s = ledger.snapshot();
        assert_eq!(s.h2d.bytes, 5632);
        assert_eq!(
            s.d2h,
            DirectionTotals {
                bytes: 5632,
                transfers: 1
            }
        );
        assert_eq!(s.total_bytes(), 2 * 5632);
        assert_eq!(s.modeled_time_s, 2.0 * 5e-6 + 11264.0 / 64e9);
        let rows = ledger.rows();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].modeled_time_s, 5e-6 + 5632.0 / 64e9);
    }

    #[test]
    fn ledger_is_shared_across_threads() {
        let ledger = TransferLedger::default();
        let tag = TransferTag::new("v", "k");
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    for _ in 0..1000 {
                        ledger.record(&tag, Direction::HostToDevice, 3);
                    }
                });
            }
        });
        let t = ledger.totals(Direction::HostToDevice);
        assert_eq!(
            t,
            DirectionTotals {
                bytes: 24_000,
                transfers: 8000
            }
        );
        assert_eq!(ledger.rows()[0].transfers, 8000);
    }

    #[test]
    fn pool_grows_monotonically() {
        let pool = ScratchPool::new();
        let key: ScratchKey = ("v".into(), "k".into(), "view");
        let a = pool.take(&key, 100);
        assert!(a.capacity() >= 100);
        pool.give(&key, a);
        let cap = pool.capacity(&key);
        let b = pool.take(&key, 10);
        assert!(b.capacity() >= 100, "reused buffer keeps its size");
        pool.give(&key, b);
        assert_eq!(pool.capacity(&key), cap);
        let c = pool.take(&key, 1000);
        assert!(pool.capacity(&key) >= 1000);
        pool.give(&key, c);
        assert_eq!(pool.keys(), 1);
    }

    #[test]
    fn directions() {
        assert_eq!(
            Direction::between(MemorySpace::Host, MemorySpace::Device),
            Some(Direction::HostToDevice)
        );
        assert_eq!(
            Direction::between(MemorySpace::Host, MemorySpace::Host),
            None
        );
    }
}
