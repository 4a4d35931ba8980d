//! Buddy frame allocator and the two placement policies built on it.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FrameMode {
    ContiguousBestEffort,
    IncrementalScatter,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FramePolicy {
    pub mode: FrameMode,
    pub seed: u64,
    pub scatter_degree: f64,
}

impl FramePolicy {
    pub fn contiguous() -> Self {
        FramePolicy {
            mode: FrameMode::ContiguousBestEffort,
            seed: 0,
            scatter_degree: 0.0,
        }
    }

    pub fn scatter(seed: u64, scatter_degree: f64) -> Self {
        FramePolicy {
            mode: FrameMode::IncrementalScatter,
            seed,
            scatter_degree,
        }
    }
}

/// Power-of-two free lists over `[0, total)`, lowest address first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameAllocator {
    total: u64,
    free: Vec<BTreeSet<u64>>,
    free_count: u64,
}

const RANDOM_ATTEMPTS: usize = 64;

impl FrameAllocator {
    pub fn new(total: u64) -> Self {
        let max_order = 64 - total.max(1).leading_zeros() as usize;
        let mut a = FrameAllocator {
            total,
            free: vec![BTreeSet::new(); max_order],
            free_count: 0,
        };
        a.release_run(0, total);
        a
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn free_frames(&self) -> u64 {
        self.free_count
    }

    fn max_order(&self) -> usize {
        self.free.len() - 1
    }

    /// Free list contents as `(order, start)` pairs, for state comparisons.
    pub fn free_blocks(&self) -> Vec<(usize, u64)> {
        self.free
            .iter()
            .enumerate()
            .flat_map(|(o, s)| s.iter().map(move |&b| (o, b)))
            .collect()
    }

    fn containing(&self, frame: u64) -> Option<(u64, usize)> {
        (0..self.free.len()).find_map(|o| {
            let start = frame & !((1u64 << o) - 1);
            self.free[o].contains(&start).then_some((start, o))
        })
    }

    pub fn is_free(&self, frame: u64) -> bool {
        frame < self.total && self.containing(frame).is_some()
    }

    /// Lowest-address block of exactly `order`, splitting a larger one if needed.
    pub fn alloc_block(&mut self, order: usize) -> Option<u64> {
        let found = (order..self.free.len()).find(|&o| !self.free[o].is_empty())?;
        let start = self.free[found].pop_first()?;
        for o in (order..found).rev() {
            self.free[o].insert(start + (1u64 << o));
        }
        self.free_count -= 1u64 << order;
        Some(start)
    }

    /// Claims one specific frame if it is free.
    pub fn take_frame(&mut self, frame: u64) -> bool {
        let Some((mut start, mut order)) = self.containing(frame) else {
            return false;
        };
        self.free[order].remove(&start);
        while order > 0 {
            order -= 1;
            let half = 1u64 << order;
            if frame < start + half {
                self.free[order].insert(start + half);
            } else {
                self.free[order].insert(start);
                start += half;
            }
        }
        self.free_count -= 1;
        true
    }

    /// First free frame at or after `frame`, wrapping around once.
    pub fn next_free(&self, frame: u64) -> Option<u64> {
        let search = |from: u64| {
            let mut best: Option<u64> = None;
            for (o, set) in self.free.iter().enumerate() {
                if let Some(&s) = set.range(..=from).next_back() {
                    if s + (1u64 << o) > from {
                        return Some(from);
                    }
                }
                if let Some(&s) = set.range(from + 1..).next() {
                    best = Some(best.map_or(s, |b| b.min(s)));
                }
            }
            best
        };
        search(frame.min(self.total.saturating_sub(1))).or_else(|| search(0))
    }

    fn release_block(&mut self, mut start: u64, mut order: usize) {
        self.free_count += 1u64 << order;
        while order < self.max_order() {
            let buddy = start ^ (1u64 << order);
            if !self.free[order].remove(&buddy) {
                break;
            }
            start = start.min(buddy);
            order += 1;
        }
        self.free[order].insert(start);
    }

    /// Frees `[start, start + len)` as maximal aligned blocks.
    fn release_run(&mut self, mut start: u64, len: u64) {
        let end = start + len;
        while start < end {
            let align = if start == 0 { 63 } else { start.trailing_zeros() as usize };
            let fit = 63 - (end - start).leading_zeros() as usize;
            let order = align.min(fit).min(self.max_order());
            self.release_block(start, order);
            start += 1u64 << order;
        }
    }

    /// Frees an arbitrary frame list.
    pub fn release(&mut self, frames: &[u64]) {
        let mut sorted = frames.to_vec();
        sorted.sort_unstable();
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i + 1;
            while j < sorted.len() && sorted[j] == sorted[j - 1] + 1 {
                j += 1;
            }
            self.release_run(sorted[i], (j - i) as u64);
            i = j;
        }
    }

    /// Frames for `n` pages starting at virtual page `va_start`, as the
    /// largest aligned blocks compatible with the virtual alignment.
    /// Caller guarantees `n <= free_frames()`.
    pub fn contiguous(&mut self, va_start: u64, n: u64) -> Vec<u64> {
        let mut out = Vec::with_capacity(n as usize);
        let mut va = va_start;
        let mut left = n;
        while left > 0 {
            let align = if va == 0 { 63 } else { va.trailing_zeros() as usize };
            let fit = 63 - left.leading_zeros() as usize;
            let mut order = align.min(fit).min(self.max_order());
            let start = loop {
                if let Some(s) = self.alloc_block(order) {
                    break s;
                }
                order -= 1;
            };
            out.extend(start..start + (1u64 << order));
            va += 1u64 << order;
            left -= 1u64 << order;
        }
        out
    }

    /// One frame drawn by the incremental scatter policy.
    ///
    /// With probability `1 - degree` the frame is the next free one after
    /// `cursor`, which then advances; otherwise a frame is drawn at random
    /// from the residues in `lanes` (modulo `lane_stride`), or from the whole
    /// space when `lanes` is empty, leaving the cursor untouched.
    pub fn scatter_one(
        &mut self,
        rng: &mut ChaCha8Rng,
        cursor: &mut u64,
        degree: f64,
        lanes: &[u64],
        lane_stride: u64,
    ) -> Option<u64> {
        if self.free_count == 0 {
            return None;
        }
        if degree > 0.0 && rng.gen::<f64>() < degree {
            for _ in 0..RANDOM_ATTEMPTS {
                let f = if lanes.is_empty() {
                    rng.gen_range(0..self.total)
                } else {
                    let rows = self.total / lane_stride;
                    rng.gen_range(0..rows) * lane_stride + lanes[rng.gen_range(0..lanes.len())]
                };
                if self.take_frame(f) {
                    return Some(f);
                }
            }
            let f = self.next_free(rng.gen_range(0..self.total))?;
            self.take_frame(f);
            return Some(f);
        }
        let f = self.next_free(*cursor)?;
        self.take_frame(f);
        *cursor = f + 1;
        Some(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn fresh_allocator_is_one_block_when_power_of_two() {
        let a = FrameAllocator::new(1 << 10);
        assert_eq!(a.free_blocks(), vec![(10, 0)]);
        assert_eq!(a.free_frames(), 1024);
    }

    #[test]
    fn odd_total_decomposes() {
        let a = FrameAllocator::new(13);
        assert_eq!(a.free_blocks(), vec![(0, 12), (2, 8), (3, 0)]);
    }

    #[test]
    fn split_and_coalesce() {
        let mut a = FrameAllocator::new(16);
        let b = a.alloc_block(0).unwrap();
        assert_eq!(b, 0);
        assert_eq!(a.free_frames(), 15);
        a.release(&[0]);
        assert_eq!(a, FrameAllocator::new(16));
    }

    #[test]
    fn take_specific_frame() {
        let mut a = FrameAllocator::new(16);
        assert!(a.take_frame(9));
        assert!(!a.take_frame(9));
        assert!(!a.is_free(9));
        assert!(a.is_free(8));
        assert_eq!(a.next_free(9), Some(10));
        a.release(&[9]);
        assert_eq!(a, FrameAllocator::new(16));
    }

    #[test]
    fn next_free_wraps() {
        let mut a = FrameAllocator::new(8);
        for f in 4..8 {
            a.take_frame(f);
        }
        assert_eq!(a.next_free(5), Some(0));
        assert_eq!(a.next_free(2), Some(2));
    }

    #[test]
    fn contiguous_respects_virtual_alignment() {
        let mut a = FrameAllocator::new(1 << 12);
        let f = a.contiguous(0, 24);
        assert_eq!(f.len(), 24);
        assert_eq!(f[..16], (0..16).collect::<Vec<_>>()[..]);
        assert_eq!(f[16], 16);
        let g = a.contiguous(3, 5);
        // va 3 takes an order-0 block, va 4..8 an order-2 block
        assert_eq!(g.len(), 5);
        assert_eq!(g[1] % 4, 0);
        assert_eq!(g[1..], [g[1], g[1] + 1, g[1] + 2, g[1] + 3]);
    }

    #[test]
    fn scatter_zero_is_sequential() {
        let mut a = FrameAllocator::new(1 << 12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cursor = 0;
        let f: Vec<u64> = (0..100)
            .map(|_| a.scatter_one(&mut rng, &mut cursor, 0.0, &[], 8).unwrap())
            .collect();
        assert_eq!(f, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn scatter_with_lanes_stays_in_lanes() {
        let mut a = FrameAllocator::new(1 << 14);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cursor = 0;
        for _ in 0..500 {
            let before = cursor;
            let f = a.scatter_one(&mut rng, &mut cursor, 1.0, &[2, 3], 8).unwrap();
            assert!(f % 8 == 2 || f % 8 == 3);
            assert_eq!(cursor, before);
        }
    }

    #[test]
    fn exhaustion() {
        let mut a = FrameAllocator::new(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cursor = 0;
        for _ in 0..4 {
            assert!(a.scatter_one(&mut rng, &mut cursor, 0.5, &[], 1).is_some());
        }
        assert_eq!(a.scatter_one(&mut rng, &mut cursor, 0.5, &[], 1), None);
        assert_eq!(a.free_frames(), 0);
    }
}
