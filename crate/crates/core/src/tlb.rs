//! Fragment-aware, fully associative LRU GPU L1 TLB.

use std::collections::VecDeque;
use std::ops::Range;

use crate::pagetable::{DualTable, TableId};
use crate::{Error, Result};

/// Counter name used for GPU translation misses in reports.
pub const MISS_COUNTER: &str = "TCP_UTCL1_TRANSLATION_MISS_sum";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TlbOutcome {
    Hit,
    Miss,
}

#[derive(Clone, Debug)]
pub struct TlbState {
    /// `(run_base, fragment)`, most recently used first.
    entries: VecDeque<(u64, u8)>,
    capacity: usize,
    misses: u64,
    accesses: u64,
}

impl TlbState {
    pub fn new(capacity: usize) -> Self {
        TlbState {
            entries: VecDeque::with_capacity(capacity + 1),
            capacity: capacity.max(1),
            misses: 0,
            accesses: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn accesses(&self) -> u64 {
        self.accesses
    }

    /// Translates a virtual page through the GPU table.
    pub fn access(&mut self, table: &DualTable, va_page: u64) -> Result<TlbOutcome> {
        let f = table.compute_fragment(TableId::Gpu, va_page).map_err(|_| Error::Unmapped(va_page))?;
        Ok(self.access_run(va_page, f))
    }

    /// Same as [`access`](Self::access) with the page's fragment already known.
    pub fn access_run(&mut self, va_page: u64, fragment: u8) -> TlbOutcome {
        self.accesses += 1;
        let hit = self
            .entries
            .iter()
            .position(|&(base, f)| va_page >> f == base >> f);
        if let Some(i) = hit {
            if i != 0 {
                let e = self.entries.remove(i).expect("index in range");
                self.entries.push_front(e);
            }
            return TlbOutcome::Hit;
        }
        self.misses += 1;
        if self.entries.len() == self.capacity {
            self.entries.pop_back();
        }
        self.entries.push_front((va_page >> fragment << fragment, fragment));
        TlbOutcome::Miss
    }
}

/// Misses of `iterations` streaming TRIAD passes over three equally long
/// page ranges (`a[i] = b[i] + s * c[i]`, touching b, c, then a per page).
pub fn triad_misses(table: &DualTable, arrays: [Range<u64>; 3], iterations: u64, capacity: usize) -> Result<u64> {
    let len = arrays.iter().map(|r| r.end - r.start).min().unwrap_or(0);
    let frags: Vec<Vec<u8>> = arrays
        .iter()
        .map(|r| (r.start..r.start + len).map(|va| table.compute_fragment(TableId::Gpu, va)).collect())
        .collect::<Result<_>>()?;
    let mut tlb = TlbState::new(capacity);
    let order = [1usize, 2, 0];
    for _ in 0..iterations {
        for i in 0..len {
            for &a in &order {
                tlb.access_run(arrays[a].start + i, frags[a][i as usize]);
            }
        }
    }
    Ok(tlb.misses())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pagetable::Flags;

    fn contiguous_table(pages: u64, limit: u8) -> DualTable {
        let mut t = DualTable::with_fragment_limit(limit);
        let frames: Vec<u64> = (0..pages).collect();
        t.map_range(TableId::System, 0, &frames, Flags::RW).unwrap();
        t.propagate(0..pages).unwrap();
        t
    }

    #[test]
    fn repeat_hits() {
        let t = contiguous_table(4, 0);
        let mut tlb = TlbState::new(32);
        assert_eq!(tlb.access(&t, 2).unwrap(), TlbOutcome::Miss);
        assert_eq!(tlb.access(&t, 2).unwrap(), TlbOutcome::Hit);
    }

    #[test]
    fn unmapped_errors() {
        let t = contiguous_table(4, 0);
        let mut tlb = TlbState::new(32);
        assert_eq!(tlb.access(&t, 99), Err(Error::Unmapped(99)));
    }

    #[test]
    fn one_fragment_one_miss() {
        let t = contiguous_table(1 << 9, 31);
        let mut tlb = TlbState::new(1);
        for p in (0..512).rev() {
            tlb.access(&t, p).unwrap();
        }
        assert_eq!(tlb.misses(), 1);
    }

    #[test]
    fn sweep_64mib_with_2mib_runs() {
        // 64 MiB = 16384 pages, runs of 512 pages
        let mut t = DualTable::with_fragment_limit(9);
        let frames: Vec<u64> = (0..16384).collect();
        t.map_range(TableId::System, 0, &frames, Flags::RW).unwrap();
        t.propagate(0..16384).unwrap();
        let mut tlb = TlbState::new(32);
        for p in 0..16384 {
            tlb.access(&t, p).unwrap();
        }
        assert_eq!(tlb.misses(), 32);
    }

    #[test]
    fn triad_of_single_fragments() {
        let t = contiguous_table(48, 4);
        assert_eq!(triad_misses(&t, [0..16, 16..32, 32..48], 1, 32).unwrap(), 3);
    }

    #[test]
    fn lru_eviction_order() {
        let mut tlb = TlbState::new(2);
        tlb.access_run(0, 0);
        tlb.access_run(1, 0);
        tlb.access_run(0, 0);
        tlb.access_run(2, 0); // evicts 1
        assert_eq!(tlb.access_run(0, 0), TlbOutcome::Hit);
        assert_eq!(tlb.access_run(1, 0), TlbOutcome::Miss);
    }
}
