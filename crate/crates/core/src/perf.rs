//! Analytic latency and bandwidth models over the simulated frame placement.

use std::ops::Range;

use crate::machine::{MachineProfile, MIB};
use crate::memmgr::{classify, AllocId, AllocationDescriptor, AllocatorKind, MemoryManager, Physical};
use crate::pagetable::TableId;
use crate::tlb;
use crate::{Agent, Error, Result};

/// Bytes per STREAM array in the GPU bandwidth and TLB experiments.
pub const STREAM_ARRAY_BYTES: u64 = 256 * MIB;

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelLoad {
    pub lanes: Vec<u64>,
    /// mean / max lane load
    pub balance: f64,
}

impl ChannelLoad {
    pub fn from_frames<I: IntoIterator<Item = u64>>(profile: &MachineProfile, frames: I) -> Self {
        let channels = profile.channels();
        let mut lanes = vec![0u64; channels as usize];
        let per_frame = profile.page_size;
        let lanes_per_frame = (profile.page_size / profile.interleave_granularity).max(1);
        for f in frames {
            let first = f * lanes_per_frame;
            for k in 0..lanes_per_frame {
                lanes[((first + k) % channels) as usize] += per_frame / lanes_per_frame;
            }
        }
        let max = lanes.iter().copied().max().unwrap_or(0);
        let balance = if max == 0 {
            1.0
        } else {
            lanes.iter().sum::<u64>() as f64 / lanes.len() as f64 / max as f64
        };
        ChannelLoad { lanes, balance }
    }

    pub fn total(&self) -> u64 {
        self.lanes.iter().sum()
    }
}

pub fn channel_of(profile: &MachineProfile, physical_address: u64) -> Result<u64> {
    if physical_address >= profile.hbm_capacity {
        return Err(Error::OutOfRange(physical_address));
    }
    Ok(physical_address / profile.interleave_granularity % profile.channels())
}

pub fn channel_load(profile: &MachineProfile, alloc: &AllocationDescriptor) -> Result<ChannelLoad> {
    Ok(ChannelLoad::from_frames(profile, alloc.frames()?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Level {
    L1,
    L2,
    L3,
    Ic,
    Hbm,
}

impl Level {
    pub fn name(self) -> &'static str {
        match self {
            Level::L1 => "l1",
            Level::L2 => "l2",
            Level::L3 => "l3",
            Level::Ic => "ic",
            Level::Hbm => "hbm",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelShare {
    pub level: Level,
    pub fraction: f64,
    /// ns
    pub latency: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyBreakdown {
    pub levels: Vec<LevelShare>,
    /// ns
    pub latency: f64,
}

impl LatencyBreakdown {
    pub fn fraction(&self, level: Level) -> f64 {
        self.levels.iter().find(|l| l.level == level).map_or(0.0, |l| l.fraction)
    }
}

/// `(level, capacity, latency)` along an agent's hierarchy; the IC's capacity
/// is scaled by channel balance and never drops below the level above it.
fn hierarchy(profile: &MachineProfile, agent: Agent, balance: f64) -> Vec<(Level, f64, f64)> {
    let ic = profile.ic_capacity as f64 * balance.clamp(0.0, 1.0);
    let mut h = match agent {
        Agent::Gpu => {
            let g = &profile.gpu;
            vec![
                (Level::L1, g.l1_capacity as f64, g.l1_latency),
                (Level::L2, g.l2_capacity as f64, g.l2_latency),
                (Level::Ic, ic, g.ic_latency),
                (Level::Hbm, f64::INFINITY, g.hbm_latency),
            ]
        }
        Agent::Cpu => {
            let c = &profile.cpu;
            vec![
                (Level::L1, c.l1_capacity as f64, c.l1_latency),
                (Level::L2, c.l2_capacity as f64, c.l2_latency),
                (Level::L3, c.l3_reach() as f64, c.l3_latency),
                (Level::Ic, ic, c.ic_latency),
                (Level::Hbm, f64::INFINITY, c.hbm_latency),
            ]
        }
    };
    for i in 1..h.len() {
        h[i].1 = h[i].1.max(h[i - 1].1);
    }
    h
}

/// Uniform-random dependent-load latency over a working set of `working_set` bytes.
pub fn chase_latency(profile: &MachineProfile, agent: Agent, working_set: u64, balance: f64) -> LatencyBreakdown {
    let ws = working_set.max(1) as f64;
    let mut prev = 0.0;
    let mut levels = Vec::new();
    let mut latency = 0.0;
    for (level, cap, lat) in hierarchy(profile, agent, balance) {
        let reach = ws.min(cap);
        let fraction = (reach - prev) / ws;
        prev = reach;
        latency += fraction * lat;
        levels.push(LevelShare {
            level,
            fraction,
            latency: lat,
        });
    }
    LatencyBreakdown { levels, latency }
}

/// Chase over the first `working_set` bytes of a mapped allocation.
pub fn chase_latency_alloc(
    profile: &MachineProfile,
    agent: Agent,
    working_set: u64,
    alloc: &AllocationDescriptor,
) -> Result<LatencyBreakdown> {
    if working_set > alloc.length {
        return Err(Error::InvalidWorkload(format!(
            "working set {working_set} B exceeds allocation of {} B",
            alloc.length
        )));
    }
    let pages = profile.pages_for(working_set).max(1);
    let frames: Option<Vec<u64>> = (0..pages).map(|p| alloc.frame(p)).collect();
    let frames = frames.ok_or(Error::UnmappedPages(pages - alloc.mapped_pages().min(pages)))?;
    let load = ChannelLoad::from_frames(profile, frames);
    Ok(chase_latency(profile, agent, working_set, load.balance))
}

/// GPU STREAM bandwidth from the placement inputs: channel balance and TLB
/// misses per page touched.
pub fn gpu_triad_model(profile: &MachineProfile, balance: f64, miss_rate: f64) -> f64 {
    let b = &profile.bw_model;
    profile.hbm_peak_bw * b.gpu_peak_fraction * balance / (1.0 + miss_rate * b.walk_penalty)
}

/// CPU STREAM bandwidth: per-thread streams up to the placement-dependent cap.
pub fn cpu_triad_model(profile: &MachineProfile, well_placed: bool, threads: u64) -> f64 {
    let b = &profile.bw_model;
    let cap = if well_placed { b.cpu_bw_upfront } else { b.cpu_bw_ondemand };
    (threads as f64 * b.cpu_per_thread_bw).min(cap)
}

/// Three STREAM arrays allocated and first-touched in one simulated process.
#[derive(Clone, Debug)]
pub struct StreamSetup {
    pub mm: MemoryManager,
    /// Owning allocation and page range of a, b, c.
    pub arrays: [(AllocId, Range<u64>); 3],
    pub kind: AllocatorKind,
    pub init: Agent,
}

impl StreamSetup {
    /// Allocates and initializes the arrays; `threads` only matters for CPU init.
    pub fn build(
        profile: &MachineProfile,
        kind: AllocatorKind,
        init: Agent,
        threads: u64,
        array_bytes: u64,
        seed: u64,
    ) -> Result<Self> {
        let mut mm = MemoryManager::new(profile, seed);
        let pages = profile.pages_for(array_bytes);
        let arrays: [(AllocId, Range<u64>); 3] = if kind == AllocatorKind::StaticManaged {
            let id = mm.allocate(kind, 3 * pages * profile.page_size)?;
            [(id, 0..pages), (id, pages..2 * pages), (id, 2 * pages..3 * pages)]
        } else {
            let mut ids = [0; 3];
            for id in &mut ids {
                *id = mm.allocate(kind, array_bytes)?;
            }
            ids.map(|id| (id, 0..pages))
        };
        for (id, range) in &arrays {
            mm.touch_parallel(*id, range.clone(), init, threads)?;
        }
        Ok(StreamSetup { mm, arrays, kind, init })
    }

    pub fn pages_per_array(&self) -> u64 {
        self.arrays[0].1.end - self.arrays[0].1.start
    }

    /// Makes every array GPU-resident in the GPU table (minor faults as needed).
    pub fn gpu_warm(&mut self) -> Result<u64> {
        let mut n = 0;
        for (id, range) in self.arrays.clone() {
            n += self.mm.touch(id, range, Agent::Gpu)?.len() as u64;
        }
        Ok(n)
    }

    pub fn cpu_faults(&self) -> u64 {
        let mut ids: Vec<AllocId> = self.arrays.iter().map(|a| a.0).collect();
        ids.dedup();
        ids.iter().map(|&id| self.mm.descriptor(id).map_or(0, |d| d.cpu_faults)).sum()
    }

    /// Channel load over all pages of the three arrays.
    pub fn channel_load(&self) -> Result<ChannelLoad> {
        let mut frames = Vec::new();
        for (id, range) in &self.arrays {
            let d = self.mm.descriptor(*id)?;
            for p in range.clone() {
                frames.push(d.frame(p).ok_or(Error::UnmappedPages(1))?);
            }
        }
        Ok(ChannelLoad::from_frames(self.mm.profile(), frames))
    }

    fn va_ranges(&self) -> Result<[Range<u64>; 3]> {
        let ps = self.mm.profile().page_size;
        let mut out = [0..0, 0..0, 0..0];
        for (i, (id, r)) in self.arrays.iter().enumerate() {
            let base = self.mm.descriptor(*id)?.first_page(ps);
            out[i] = base + r.start..base + r.end;
        }
        Ok(out)
    }

    /// GPU TLB misses of `iterations` TRIAD passes; requires [`gpu_warm`](Self::gpu_warm).
    pub fn triad_misses(&self, iterations: u64) -> Result<u64> {
        let ranges = self.va_ranges()?;
        for r in &ranges {
            if let Some(va) = r.clone().find(|&va| !self.mm.tables().is_mapped(TableId::Gpu, va)) {
                return Err(Error::Unmapped(va));
            }
        }
        tlb::triad_misses(self.mm.tables(), ranges, iterations, self.mm.profile().gpu.tlb_entries as usize)
    }

    /// GPU TRIAD bandwidth over the warmed arrays.
    pub fn gpu_bandwidth(&self) -> Result<f64> {
        let profile = self.mm.profile();
        if self.kind == AllocatorKind::StaticManaged {
            return Ok(profile.bw_model.static_managed_bw);
        }
        let balance = self.channel_load()?.balance;
        Ok(gpu_triad_model(profile, balance, self.miss_rate()?))
    }

    /// TLB misses per page access in one pass.
    pub fn miss_rate(&self) -> Result<f64> {
        let misses = self.triad_misses(1)?;
        Ok(misses as f64 / (3 * self.pages_per_array()) as f64)
    }
}

/// STREAM TRIAD bandwidth in bytes/s.
///
/// For the GPU, `threads` is the number of CPU threads initializing the
/// arrays when `init_agent` is the CPU. For the CPU it is the STREAM thread
/// count.
pub fn triad_bandwidth(
    profile: &MachineProfile,
    agent: Agent,
    kind: AllocatorKind,
    init_agent: Agent,
    threads: u64,
    seed: u64,
) -> Result<f64> {
    let class = classify(kind, profile.xnack);
    let allowed = match agent {
        Agent::Cpu => class.cpu_access,
        Agent::Gpu => class.gpu_access,
    };
    if !allowed {
        return Err(Error::AccessViolation {
            kind,
            agent,
            xnack: profile.xnack,
        });
    }
    match agent {
        Agent::Cpu => {
            if threads == 0 {
                return Err(Error::InvalidWorkload("CPU STREAM needs at least one thread".into()));
            }
            let well_placed = class.physical == Physical::UpFront || init_agent == Agent::Gpu;
            Ok(cpu_triad_model(profile, well_placed, threads))
        }
        Agent::Gpu if kind == AllocatorKind::StaticManaged => Ok(profile.bw_model.static_managed_bw),
        Agent::Gpu => {
            let mut s = StreamSetup::build(profile, kind, init_agent, threads.max(1), STREAM_ARRAY_BYTES, seed)?;
            s.gpu_warm()?;
            s.gpu_bandwidth()
        }
    }
}

/// Legacy `hipMemcpy`-style copy bandwidth in bytes/s.
pub fn memcpy_bandwidth(profile: &MachineProfile, src: AllocatorKind, dst: AllocatorKind, sdma: bool) -> f64 {
    let b = &profile.bw_model;
    let device = |k| k == AllocatorKind::DeviceUpFront;
    match (device(src), device(dst)) {
        (true, true) => b.memcpy_d2d_bw,
        (true, false) | (false, true) if sdma => b.memcpy_sdma_bw,
        (true, false) | (false, true) => b.memcpy_nosdma_bw,
        (false, false) => b.cpu_bw_upfront,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{builtin_mi300a, GIB, KIB};

    #[test]
    fn channels() {
        let p = builtin_mi300a();
        assert_eq!(channel_of(&p, 0).unwrap(), 0);
        assert_eq!(channel_of(&p, 4096).unwrap(), 1);
        assert_eq!(channel_of(&p, 128 * 4096).unwrap(), 0);
        assert_eq!(channel_of(&p, p.hbm_capacity), Err(Error::OutOfRange(p.hbm_capacity)));
    }

    #[test]
    fn loads() {
        let p = builtin_mi300a();
        let l = ChannelLoad::from_frames(&p, 0..128);
        assert_eq!(l.balance, 1.0);
        assert_eq!(l.total(), 512 * KIB);
        let l = ChannelLoad::from_frames(&p, [77]);
        assert_eq!(l.lanes.iter().filter(|&&x| x > 0).count(), 1);
        assert!((l.balance - 1.0 / 128.0).abs() < 1e-12);
    }

    #[test]
    fn small_sets_hit_first_level() {
        let p = builtin_mi300a();
        assert_eq!(chase_latency(&p, Agent::Gpu, KIB, 0.3).latency, 57.0);
        assert_eq!(chase_latency(&p, Agent::Cpu, KIB, 1.0).latency, 1.0);
    }

    #[test]
    fn fractions_sum_to_one() {
        let p = builtin_mi300a();
        for ws in [KIB, MIB, 100 * MIB, 4 * GIB] {
            for agent in [Agent::Cpu, Agent::Gpu] {
                let b = chase_latency(&p, agent, ws, 0.5);
                let s: f64 = b.levels.iter().map(|l| l.fraction).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn memcpy_table() {
        let p = builtin_mi300a();
        use AllocatorKind::*;
        assert_eq!(memcpy_bandwidth(&p, LibcOnDemand, DeviceUpFront, true), 58e9);
        assert_eq!(memcpy_bandwidth(&p, LibcOnDemand, DeviceUpFront, false), 850e9);
        assert_eq!(memcpy_bandwidth(&p, DeviceUpFront, DeviceUpFront, true), 1900e9);
        assert_eq!(memcpy_bandwidth(&p, DeviceUpFront, PinnedHost, true), 58e9);
    }

    #[test]
    fn cpu_caps() {
        let p = builtin_mi300a();
        let up = triad_bandwidth(&p, Agent::Cpu, AllocatorKind::LibcOnDemand, Agent::Gpu, 24, 0).unwrap();
        let down = triad_bandwidth(&p, Agent::Cpu, AllocatorKind::LibcOnDemand, Agent::Cpu, 24, 0).unwrap();
        assert_eq!(up, 208e9);
        assert_eq!(down, 181e9);
        assert!(triad_bandwidth(&p, Agent::Cpu, AllocatorKind::LibcOnDemand, Agent::Cpu, 0, 0).is_err());
    }
}
