//! System and GPU page tables with opportunistic PTE fragments.
//!
//! A page's fragment is the largest `f` such that its enclosing `2^f`-aligned
//! virtual run is fully mapped, physically contiguous, `2^f`-aligned in
//! physical space and flag-homogeneous. Each table keeps, per order, the set
//! of aligned blocks satisfying that condition; mapping or unmapping a batch
//! updates only the ancestors of the touched pages.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::ops::Range;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TableId {
    System,
    Gpu,
}

/// Access-permission set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Flags(u8);

impl Flags {
    pub const READ: Flags = Flags(1);
    pub const WRITE: Flags = Flags(2);
    pub const RW: Flags = Flags(3);

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn from_bits(b: u8) -> Flags {
        Flags(b & 3)
    }

    pub fn contains(self, other: Flags) -> bool {
        self.0 & other.0 == other.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PageTableEntry {
    pub frame: u64,
    pub flags: Flags,
    pub fragment: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GpuAccess {
    Hit,
    ReplayableFault,
    FatalFault,
}

#[derive(Clone, Debug, Default)]
struct Table {
    entries: BTreeMap<u64, (u64, Flags)>,
    /// `good[o - 1]` holds indices `b` of order-`o` blocks (pages `b << o ..`).
    good: Vec<HashSet<u64>>,
}

impl Table {
    fn new(limit: u8) -> Self {
        Table {
            entries: BTreeMap::new(),
            good: vec![HashSet::new(); limit as usize],
        }
    }

    fn limit(&self) -> u8 {
        self.good.len() as u8
    }

    fn is_good(&self, order: u8, block: u64) -> bool {
        if order == 0 {
            self.entries.contains_key(&block)
        } else {
            self.good[order as usize - 1].contains(&block)
        }
    }

    fn eval(&self, order: u8, block: u64) -> bool {
        let left = block << 1;
        if !(self.is_good(order - 1, left) && self.is_good(order - 1, left | 1)) {
            return false;
        }
        let half = 1u64 << (order - 1);
        let first = block << order;
        let (fl, gl) = self.entries[&first];
        let (fr, gr) = self.entries[&(first + half)];
        fl % (half << 1) == 0 && fr == fl + half && gl == gr
    }

    /// Re-derives block goodness above a sorted list of changed pages.
    fn refresh(&mut self, mut changed: Vec<u64>) {
        changed.dedup();
        for order in 1..=self.limit() {
            let mut next = Vec::new();
            let mut last = None;
            for &c in &changed {
                let parent = c >> 1;
                if last == Some(parent) {
                    continue;
                }
                last = Some(parent);
                let now = self.eval(order, parent);
                let set = &mut self.good[order as usize - 1];
                let was = set.contains(&parent);
                if now != was {
                    if now {
                        set.insert(parent);
                    } else {
                        set.remove(&parent);
                    }
                    next.push(parent);
                }
            }
            if next.is_empty() {
                break;
            }
            changed = next;
        }
    }

    fn fragment(&self, va_page: u64) -> u8 {
        let mut f = 0;
        while f < self.limit() && self.good[f as usize].contains(&(va_page >> (f + 1))) {
            f += 1;
        }
        f
    }

    fn entry(&self, va_page: u64) -> Option<PageTableEntry> {
        self.entries.get(&va_page).map(|&(frame, flags)| PageTableEntry {
            frame,
            flags,
            fragment: self.fragment(va_page),
        })
    }
}

/// The system page table and its GPU mirror.
#[derive(Clone, Debug)]
pub struct DualTable {
    system: Table,
    gpu: Table,
}

impl Default for DualTable {
    fn default() -> Self {
        Self::new()
    }
}

impl DualTable {
    /// Tables with the full 5-bit fragment range.
    pub fn new() -> Self {
        Self::with_fragment_limit(31)
    }

    pub fn with_fragment_limit(limit: u8) -> Self {
        let limit = limit.min(31);
        DualTable {
            system: Table::new(limit),
            gpu: Table::new(limit),
        }
    }

    pub fn fragment_limit(&self) -> u8 {
        self.system.limit()
    }

    fn table(&self, id: TableId) -> &Table {
        match id {
            TableId::System => &self.system,
            TableId::Gpu => &self.gpu,
        }
    }

    pub fn map(&mut self, id: TableId, va_page: u64, frame: u64, flags: Flags) -> Result<()> {
        self.map_range(id, va_page, &[frame], flags)
    }

    /// Installs `frames[i]` at `va_start + i`; all-or-nothing.
    pub fn map_range(&mut self, id: TableId, va_start: u64, frames: &[u64], flags: Flags) -> Result<()> {
        let target = self.table(id);
        for (i, &frame) in frames.iter().enumerate() {
            let va = va_start + i as u64;
            if target.entries.contains_key(&va) {
                return Err(Error::AlreadyMapped(va));
            }
            if id == TableId::Gpu && self.system.entries.get(&va).map(|e| e.0) != Some(frame) {
                return Err(Error::MirrorViolation(va));
            }
        }
        let t = match id {
            TableId::System => &mut self.system,
            TableId::Gpu => &mut self.gpu,
        };
        for (i, &frame) in frames.iter().enumerate() {
            t.entries.insert(va_start + i as u64, (frame, flags));
        }
        t.refresh((va_start..va_start + frames.len() as u64).collect());
        Ok(())
    }

    /// Removes a range from both tables; returns the number of system entries removed.
    pub fn unmap_range(&mut self, range: Range<u64>) -> u64 {
        let mut removed = 0;
        let mut gpu_removed = Vec::new();
        let mut sys_removed = Vec::new();
        for va in range {
            if self.system.entries.remove(&va).is_some() {
                removed += 1;
                sys_removed.push(va);
            }
            if self.gpu.entries.remove(&va).is_some() {
                gpu_removed.push(va);
            }
        }
        self.system.refresh(sys_removed);
        self.gpu.refresh(gpu_removed);
        removed
    }

    pub fn lookup(&self, id: TableId, va_page: u64) -> Option<PageTableEntry> {
        self.table(id).entry(va_page)
    }

    pub fn is_mapped(&self, id: TableId, va_page: u64) -> bool {
        self.table(id).entries.contains_key(&va_page)
    }

    pub fn compute_fragment(&self, id: TableId, va_page: u64) -> Result<u8> {
        let t = self.table(id);
        if !t.entries.contains_key(&va_page) {
            return Err(Error::Unmapped(va_page));
        }
        Ok(t.fragment(va_page))
    }

    /// Mirrors system entries of `range` into the GPU table; returns how many
    /// entries were newly copied.
    pub fn propagate(&mut self, range: Range<u64>) -> Result<u64> {
        if let Some(va) = range.clone().find(|va| !self.system.entries.contains_key(va)) {
            return Err(Error::Unmapped(va));
        }
        let mut copied = Vec::new();
        for va in range {
            if !self.gpu.entries.contains_key(&va) {
                let e = self.system.entries[&va];
                self.gpu.entries.insert(va, e);
                copied.push(va);
            }
        }
        let n = copied.len() as u64;
        self.gpu.refresh(copied);
        Ok(n)
    }

    pub fn gpu_access(&self, va_page: u64, xnack: bool) -> GpuAccess {
        if self.gpu.entries.contains_key(&va_page) {
            GpuAccess::Hit
        } else if xnack {
            GpuAccess::ReplayableFault
        } else {
            GpuAccess::FatalFault
        }
    }

    pub fn len(&self, id: TableId) -> usize {
        self.table(id).entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.system.entries.is_empty()
    }

    /// `va_page frame fragment` triples, one per line, in VA order.
    pub fn dump(&self, id: TableId) -> String {
        let t = self.table(id);
        let mut out = String::new();
        for (&va, &(frame, _)) in &t.entries {
            let _ = writeln!(out, "{va} {frame} {}", t.fragment(va));
        }
        out
    }

    /// Checks `gpu ⊆ system` with equal frames.
    pub fn mirror_holds(&self) -> bool {
        self.gpu
            .entries
            .iter()
            .all(|(va, e)| self.system.entries.get(va).map(|s| s.0) == Some(e.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys_frags(t: &DualTable, pages: Range<u64>) -> Vec<u8> {
        pages.map(|p| t.compute_fragment(TableId::System, p).unwrap()).collect()
    }

    #[test]
    fn single_page_then_gpu_lookup() {
        let mut t = DualTable::new();
        t.map(TableId::System, 7, 42, Flags::RW).unwrap();
        t.map(TableId::Gpu, 7, 42, Flags::RW).unwrap();
        assert_eq!(t.lookup(TableId::Gpu, 7).unwrap().frame, 42);
        assert_eq!(t.compute_fragment(TableId::Gpu, 7).unwrap(), 0);
    }

    #[test]
    fn gpu_map_needs_system_entry() {
        let mut t = DualTable::new();
        assert_eq!(t.map(TableId::Gpu, 3, 3, Flags::RW), Err(Error::MirrorViolation(3)));
        t.map(TableId::System, 3, 3, Flags::RW).unwrap();
        assert_eq!(t.map(TableId::Gpu, 3, 4, Flags::RW), Err(Error::MirrorViolation(3)));
    }

    #[test]
    fn double_map_rejected() {
        let mut t = DualTable::new();
        t.map(TableId::System, 1, 1, Flags::RW).unwrap();
        assert_eq!(t.map(TableId::System, 1, 2, Flags::RW), Err(Error::AlreadyMapped(1)));
    }

    #[test]
    fn aligned_runs() {
        let mut t = DualTable::new();
        let frames: Vec<u64> = (1024..2048).collect();
        t.map_range(TableId::System, 4096, &frames, Flags::RW).unwrap();
        assert!(sys_frags(&t, 4096..5120).iter().all(|&f| f == 10));

        let mut t = DualTable::new();
        let frames: Vec<u64> = (32..48).collect();
        t.map_range(TableId::System, 16, &frames, Flags::RW).unwrap();
        assert_eq!(sys_frags(&t, 16..32), vec![4; 16]);

        let mut t = DualTable::new();
        t.map_range(TableId::System, 0, &[0, 1, 2], Flags::RW).unwrap();
        assert_eq!(sys_frags(&t, 0..3), vec![1, 1, 0]);
    }

    #[test]
    fn misaligned_physical_run_has_no_fragment() {
        let mut t = DualTable::new();
        t.map_range(TableId::System, 0, &[1, 2, 3, 4], Flags::RW).unwrap();
        assert_eq!(sys_frags(&t, 0..4), vec![0, 0, 0, 0]);
    }

    #[test]
    fn flags_must_match() {
        let mut t = DualTable::new();
        t.map(TableId::System, 0, 0, Flags::RW).unwrap();
        t.map(TableId::System, 1, 1, Flags::READ).unwrap();
        assert_eq!(sys_frags(&t, 0..2), vec![0, 0]);
    }

    #[test]
    fn limit_caps_fragment() {
        let mut t = DualTable::with_fragment_limit(3);
        let frames: Vec<u64> = (0..64).collect();
        t.map_range(TableId::System, 0, &frames, Flags::RW).unwrap();
        assert!(sys_frags(&t, 0..64).iter().all(|&f| f == 3));
    }

    #[test]
    fn propagate_is_idempotent_and_keeps_fragments() {
        let mut t = DualTable::new();
        let frames: Vec<u64> = (256..356).collect();
        t.map_range(TableId::System, 256, &frames, Flags::RW).unwrap();
        assert_eq!(t.propagate(256..356).unwrap(), 100);
        assert_eq!(t.propagate(256..356).unwrap(), 0);
        assert_eq!(t.gpu_access(300, false), GpuAccess::Hit);
        assert_eq!(t.dump(TableId::Gpu), t.dump(TableId::System));
        assert!(t.mirror_holds());
    }

    #[test]
    fn propagate_unmapped_fails() {
        let mut t = DualTable::new();
        t.map(TableId::System, 0, 0, Flags::RW).unwrap();
        assert_eq!(t.propagate(0..2), Err(Error::Unmapped(1)));
        assert_eq!(t.len(TableId::Gpu), 0);
    }

    #[test]
    fn gpu_access_outcomes() {
        let mut t = DualTable::new();
        assert_eq!(t.gpu_access(5, false), GpuAccess::FatalFault);
        assert_eq!(t.gpu_access(5, true), GpuAccess::ReplayableFault);
        t.map(TableId::System, 5, 9, Flags::RW).unwrap();
        t.propagate(5..6).unwrap();
        assert_eq!(t.gpu_access(5, true), GpuAccess::Hit);
    }

    #[test]
    fn unmap_recomputes() {
        let mut t = DualTable::new();
        let frames: Vec<u64> = (0..8).collect();
        t.map_range(TableId::System, 0, &frames, Flags::RW).unwrap();
        t.propagate(0..8).unwrap();
        assert_eq!(t.unmap_range(4..5), 1);
        assert_eq!(sys_frags(&t, 0..4), vec![2; 4]);
        assert_eq!(t.compute_fragment(TableId::Gpu, 5).unwrap(), 0);
        assert_eq!(t.compute_fragment(TableId::Gpu, 6).unwrap(), 1);
        assert_eq!(t.compute_fragment(TableId::Gpu, 4), Err(Error::Unmapped(4)));
        assert!(t.mirror_holds());
    }

    #[test]
    fn dump_format() {
        let mut t = DualTable::new();
        t.map_range(TableId::System, 2, &[6, 7], Flags::RW).unwrap();
        assert_eq!(t.dump(TableId::System), "2 6 1\n3 7 1\n");
    }
}
