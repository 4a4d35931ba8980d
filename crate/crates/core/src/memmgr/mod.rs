//! Allocator kinds, virtual allocations, first-touch frame placement and
//! the memory-usage counters different tools observe.

mod cost;
mod frames;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::fault::{latency_sample, FaultEvent, FaultKind};
use crate::machine::MachineProfile;
use crate::pagetable::{DualTable, Flags, GpuAccess, TableId};
use crate::{Agent, Error, Result};

pub use cost::{alloc_time_model, free_time_model};
pub use frames::{FrameAllocator, FrameMode, FramePolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AllocatorKind {
    /// `malloc`
    LibcOnDemand,
    /// `malloc` + `hipHostRegister`
    RegisteredHost,
    /// `hipMalloc`
    DeviceUpFront,
    /// `hipHostMalloc`
    PinnedHost,
    /// `hipMallocManaged`
    ManagedUnified,
    /// `__managed__` variables
    StaticManaged,
}

impl AllocatorKind {
    pub const ALL: [AllocatorKind; 6] = [
        AllocatorKind::LibcOnDemand,
        AllocatorKind::RegisteredHost,
        AllocatorKind::DeviceUpFront,
        AllocatorKind::PinnedHost,
        AllocatorKind::ManagedUnified,
        AllocatorKind::StaticManaged,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AllocatorKind::LibcOnDemand => "LibcOnDemand",
            AllocatorKind::RegisteredHost => "RegisteredHost",
            AllocatorKind::DeviceUpFront => "DeviceUpFront",
            AllocatorKind::PinnedHost => "PinnedHost",
            AllocatorKind::ManagedUnified => "ManagedUnified",
            AllocatorKind::StaticManaged => "StaticManaged",
        }
    }

    /// Up-front HIP kinds whose CPU view is mapped in large chunks.
    fn cpu_chunked(self) -> bool {
        matches!(
            self,
            AllocatorKind::DeviceUpFront
                | AllocatorKind::PinnedHost
                | AllocatorKind::ManagedUnified
                | AllocatorKind::StaticManaged
        )
    }
}

impl fmt::Display for AllocatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AllocatorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let k = match s.to_ascii_lowercase().as_str() {
            "libcondemand" | "malloc" | "libc" => AllocatorKind::LibcOnDemand,
            "registeredhost" | "registered" | "hiphostregister" => AllocatorKind::RegisteredHost,
            "deviceupfront" | "device" | "hipmalloc" => AllocatorKind::DeviceUpFront,
            "pinnedhost" | "pinned" | "hiphostmalloc" => AllocatorKind::PinnedHost,
            "managedunified" | "managed" | "hipmallocmanaged" => AllocatorKind::ManagedUnified,
            "staticmanaged" | "static" | "__managed__" => AllocatorKind::StaticManaged,
            _ => return Err(format!("unknown allocator kind `{s}`")),
        };
        Ok(k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Physical {
    UpFront,
    OnDemand,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AccessClass {
    pub gpu_access: bool,
    pub cpu_access: bool,
    pub physical: Physical,
}

/// Access rights and physical allocation policy of an allocator.
pub fn classify(kind: AllocatorKind, xnack: bool) -> AccessClass {
    use AllocatorKind::*;
    let (gpu_access, physical) = match kind {
        LibcOnDemand => (xnack, Physical::OnDemand),
        ManagedUnified if xnack => (true, Physical::OnDemand),
        RegisteredHost | DeviceUpFront | PinnedHost | ManagedUnified | StaticManaged => (true, Physical::UpFront),
    };
    AccessClass {
        gpu_access,
        cpu_access: true,
        physical,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PageState {
    Unmapped,
    Mapped { frame: u64, first_touch: Agent },
}

pub type AllocId = u64;

#[derive(Clone, Debug)]
struct CpuView {
    granularity_pages: u64,
    chunks: HashSet<u64>,
}

#[derive(Clone, Debug)]
pub struct AllocationDescriptor {
    pub id: AllocId,
    /// Byte address, page aligned.
    pub va_base: u64,
    pub length: u64,
    pub kind: AllocatorKind,
    pub policy: Physical,
    pub page_states: Vec<PageState>,
    /// s
    pub creation_time_model: f64,
    pub cpu_faults: u64,
    pub gpu_faults: u64,
    placement: Option<(FramePolicy, ChaCha8Rng)>,
    cpu_view: Option<CpuView>,
    gpu_touched: bool,
}

impl AllocationDescriptor {
    pub fn pages(&self) -> u64 {
        self.page_states.len() as u64
    }

    pub fn first_page(&self, page_size: u64) -> u64 {
        self.va_base / page_size
    }

    pub fn mapped_pages(&self) -> u64 {
        self.page_states
            .iter()
            .filter(|s| matches!(s, PageState::Mapped { .. }))
            .count() as u64
    }

    pub fn frame(&self, page: u64) -> Option<u64> {
        match self.page_states.get(page as usize)? {
            PageState::Mapped { frame, .. } => Some(*frame),
            PageState::Unmapped => None,
        }
    }

    /// Every frame in page order; fails if any page is unmapped.
    pub fn frames(&self) -> Result<Vec<u64>> {
        let out: Vec<u64> = self.page_states.iter().filter_map(|s| match s {
            PageState::Mapped { frame, .. } => Some(*frame),
            PageState::Unmapped => None,
        }).collect();
        let missing = self.pages() - out.len() as u64;
        if missing > 0 {
            return Err(Error::UnmappedPages(missing));
        }
        Ok(out)
    }

    pub fn gpu_touched(&self) -> bool {
        self.gpu_touched
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UsageCounter {
    Libnuma,
    Meminfo,
    HipMemGetInfo,
    ProcessRss,
}

impl UsageCounter {
    pub const ALL: [UsageCounter; 4] = [
        UsageCounter::Libnuma,
        UsageCounter::Meminfo,
        UsageCounter::HipMemGetInfo,
        UsageCounter::ProcessRss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UsageCounter::Libnuma => "libnuma",
            UsageCounter::Meminfo => "meminfo",
            UsageCounter::HipMemGetInfo => "hipMemGetInfo",
            UsageCounter::ProcessRss => "rss",
        }
    }

    pub fn sees(self, kind: AllocatorKind) -> bool {
        match self {
            UsageCounter::Libnuma | UsageCounter::Meminfo => true,
            UsageCounter::HipMemGetInfo => kind == AllocatorKind::DeviceUpFront,
            UsageCounter::ProcessRss => kind != AllocatorKind::DeviceUpFront,
        }
    }
}

/// One simulated process's view of APU memory.
#[derive(Clone, Debug)]
pub struct MemoryManager {
    profile: MachineProfile,
    frames: FrameAllocator,
    tables: DualTable,
    allocs: BTreeMap<AllocId, AllocationDescriptor>,
    released: BTreeSet<AllocId>,
    next_id: AllocId,
    next_va_page: u64,
    rng: ChaCha8Rng,
    fault_rng: ChaCha8Rng,
    cursor: u64,
}

const FIRST_VA_PAGE: u64 = 1 << 20;

impl MemoryManager {
    pub fn new(profile: &MachineProfile, seed: u64) -> Self {
        let limit = profile.gpu.fragment_limit.min(u64::from(profile.max_fragment())) as u8;
        let mut fault_rng = ChaCha8Rng::seed_from_u64(seed);
        fault_rng.set_stream(1);
        MemoryManager {
            frames: FrameAllocator::new(profile.total_frames()),
            tables: DualTable::with_fragment_limit(limit),
            allocs: BTreeMap::new(),
            released: BTreeSet::new(),
            next_id: 1,
            next_va_page: FIRST_VA_PAGE,
            rng: ChaCha8Rng::seed_from_u64(seed),
            fault_rng,
            cursor: 0,
            profile: profile.clone(),
        }
    }

    pub fn profile(&self) -> &MachineProfile {
        &self.profile
    }

    pub fn xnack(&self) -> bool {
        self.profile.xnack
    }

    pub fn frame_allocator(&self) -> &FrameAllocator {
        &self.frames
    }

    pub fn tables(&self) -> &DualTable {
        &self.tables
    }

    pub fn free_frames(&self) -> u64 {
        self.frames.free_frames()
    }

    pub fn mapped_frames(&self) -> u64 {
        self.allocs.values().map(|a| a.mapped_pages()).sum()
    }

    pub fn live(&self) -> impl Iterator<Item = &AllocationDescriptor> {
        self.allocs.values()
    }

    pub fn descriptor(&self, id: AllocId) -> Result<&AllocationDescriptor> {
        self.allocs.get(&id).ok_or_else(|| self.missing(id))
    }

    fn missing(&self, id: AllocId) -> Error {
        if self.released.contains(&id) {
            Error::DoubleFree(id)
        } else {
            Error::UnknownAllocation(id)
        }
    }

    pub fn allocate(&mut self, kind: AllocatorKind, size: u64) -> Result<AllocId> {
        self.allocate_with(kind, size, None)
    }

    /// `policy` replaces the kind's default frame placement.
    pub fn allocate_with(&mut self, kind: AllocatorKind, size: u64, policy: Option<FramePolicy>) -> Result<AllocId> {
        if size == 0 {
            return Err(Error::ZeroSize);
        }
        if kind == AllocatorKind::StaticManaged && self.allocs.values().any(|a| a.kind == kind) {
            return Err(Error::StaticSingleton);
        }
        let xnack = self.xnack();
        let class = classify(kind, xnack);
        let pages = self.profile.pages_for(size);
        if class.physical == Physical::UpFront && pages > self.frames.free_frames() {
            return Err(Error::OutOfMemory {
                needed: pages,
                free: self.frames.free_frames(),
            });
        }
        let align = pages.next_power_of_two();
        let first = self.next_va_page.div_ceil(align) * align;
        self.next_va_page = first + pages;

        let id = self.next_id;
        self.next_id += 1;
        let mut desc = AllocationDescriptor {
            id,
            va_base: first * self.profile.page_size,
            length: size,
            kind,
            policy: class.physical,
            page_states: vec![PageState::Unmapped; pages as usize],
            creation_time_model: alloc_time_model(kind, size, xnack)?,
            cpu_faults: 0,
            gpu_faults: 0,
            placement: policy.map(|p| (p, ChaCha8Rng::seed_from_u64(p.seed))),
            cpu_view: None,
            gpu_touched: false,
        };
        if class.physical == Physical::UpFront {
            let frames = match kind {
                AllocatorKind::DeviceUpFront | AllocatorKind::StaticManaged if desc.placement.is_none() => {
                    self.frames.contiguous(first, pages)
                }
                _ => self.place_host(&mut desc, first, pages),
            };
            self.install(&mut desc, 0, &frames, Agent::Gpu, true)?;
            if kind == AllocatorKind::RegisteredHost {
                desc.cpu_faults = pages;
            }
        }
        self.allocs.insert(id, desc);
        Ok(id)
    }

    /// Bulk placement for host-side up-front memory: uniform over free frames
    /// unless the allocation carries its own policy.
    fn place_host(&mut self, desc: &mut AllocationDescriptor, first: u64, pages: u64) -> Vec<u64> {
        match &mut desc.placement {
            Some((p, _)) if p.mode == FrameMode::ContiguousBestEffort => self.frames.contiguous(first, pages),
            Some((p, rng)) => {
                let d = p.scatter_degree;
                (0..pages)
                    .map(|_| self.frames.scatter_one(rng, &mut self.cursor, d, &[], 1).expect("frames checked"))
                    .collect()
            }
            None => (0..pages)
                .map(|_| self.frames.scatter_one(&mut self.rng, &mut self.cursor, 1.0, &[], 1).expect("frames checked"))
                .collect(),
        }
    }

    /// Records `frames` for pages `start..` and maps them, consecutive VA runs at a time.
    fn install(&mut self, desc: &mut AllocationDescriptor, start: u64, frames: &[u64], agent: Agent, gpu: bool) -> Result<()> {
        let va0 = desc.first_page(self.profile.page_size) + start;
        self.tables.map_range(TableId::System, va0, frames, Flags::RW)?;
        if gpu {
            self.tables.map_range(TableId::Gpu, va0, frames, Flags::RW)?;
        }
        for (i, &frame) in frames.iter().enumerate() {
            desc.page_states[start as usize + i] = PageState::Mapped { frame, first_touch: agent };
        }
        Ok(())
    }

    /// Registers on-demand host memory: every page is pinned and mirrored into
    /// the GPU table. Returns how many pages had to be faulted in.
    pub fn register_host(&mut self, id: AllocId) -> Result<u64> {
        let mut desc = self.allocs.remove(&id).ok_or_else(|| self.missing(id))?;
        let r = self.register_inner(&mut desc);
        self.allocs.insert(id, desc);
        r
    }

    fn register_inner(&mut self, desc: &mut AllocationDescriptor) -> Result<u64> {
        if desc.kind != AllocatorKind::LibcOnDemand {
            return Err(Error::NotRegistrable(desc.kind));
        }
        let unmapped: Vec<u64> = (0..desc.pages()).filter(|&p| desc.frame(p).is_none()).collect();
        if unmapped.len() as u64 > self.frames.free_frames() {
            return Err(Error::OutOfMemory {
                needed: unmapped.len() as u64,
                free: self.frames.free_frames(),
            });
        }
        for &p in &unmapped {
            let f = self.frames.scatter_one(&mut self.rng, &mut self.cursor, 1.0, &[], 1).expect("frames checked");
            self.install(desc, p, &[f], Agent::Cpu, false)?;
        }
        let first = desc.first_page(self.profile.page_size);
        self.tables.propagate(first..first + desc.pages())?;
        desc.kind = AllocatorKind::RegisteredHost;
        desc.policy = Physical::UpFront;
        desc.cpu_faults += unmapped.len() as u64;
        Ok(unmapped.len() as u64)
    }

    pub fn touch(&mut self, id: AllocId, pages: Range<u64>, agent: Agent) -> Result<Vec<FaultEvent>> {
        self.touch_parallel(id, pages, agent, 1)
    }

    /// Touches every page of the allocation.
    pub fn touch_all(&mut self, id: AllocId, agent: Agent, threads: u64) -> Result<Vec<FaultEvent>> {
        let n = self.descriptor(id)?.pages();
        self.touch_parallel(id, 0..n, agent, threads)
    }

    /// First touch of `pages` by `threads` workers, each taking one
    /// contiguous slice of the range.
    pub fn touch_parallel(&mut self, id: AllocId, pages: Range<u64>, agent: Agent, threads: u64) -> Result<Vec<FaultEvent>> {
        let mut desc = self.allocs.remove(&id).ok_or_else(|| self.missing(id))?;
        let r = self.touch_inner(&mut desc, pages, agent, threads.max(1));
        self.allocs.insert(id, desc);
        r
    }

    fn touch_inner(&mut self, desc: &mut AllocationDescriptor, pages: Range<u64>, agent: Agent, threads: u64) -> Result<Vec<FaultEvent>> {
        if pages.start > pages.end || pages.end > desc.pages() {
            return Err(Error::RangeOutOfBounds {
                start: pages.start,
                end: pages.end,
                pages: desc.pages(),
            });
        }
        let xnack = self.xnack();
        let class = classify(desc.kind, xnack);
        let allowed = match agent {
            Agent::Cpu => class.cpu_access,
            Agent::Gpu => class.gpu_access,
        };
        if !allowed {
            return Err(Error::AccessViolation {
                kind: desc.kind,
                agent,
                xnack,
            });
        }
        match agent {
            Agent::Cpu => self.touch_cpu(desc, pages, threads),
            Agent::Gpu => self.touch_gpu(desc, pages, xnack),
        }
    }

    fn event(&mut self, kind: FaultKind, page: u64) -> FaultEvent {
        FaultEvent {
            kind,
            page,
            latency: latency_sample(&self.profile, kind, &mut self.fault_rng),
        }
    }

    fn touch_cpu(&mut self, desc: &mut AllocationDescriptor, pages: Range<u64>, threads: u64) -> Result<Vec<FaultEvent>> {
        let va0 = desc.first_page(self.profile.page_size);
        let mut events = Vec::new();
        if desc.policy == Physical::UpFront {
            if !desc.kind.cpu_chunked() {
                return Ok(events);
            }
            let bytes = if desc.gpu_touched {
                self.profile.hip_cpu_map_granularity_gpu_init
            } else {
                self.profile.hip_cpu_map_granularity
            };
            let view = desc.cpu_view.get_or_insert_with(|| CpuView {
                granularity_pages: (bytes / self.profile.page_size).max(1),
                chunks: HashSet::new(),
            });
            let g = view.granularity_pages;
            let mut new_chunks = Vec::new();
            for p in pages {
                if view.chunks.insert(p / g) {
                    new_chunks.push(p);
                }
            }
            for p in new_chunks {
                let e = self.event(FaultKind::Cpu, va0 + p);
                events.push(e);
            }
            desc.cpu_faults += events.len() as u64;
            return Ok(events);
        }

        let todo: Vec<u64> = pages.clone().filter(|&p| desc.frame(p).is_none()).collect();
        if todo.len() as u64 > self.frames.free_frames() {
            return Err(Error::OutOfMemory {
                needed: todo.len() as u64,
                free: self.frames.free_frames(),
            });
        }
        let len = pages.end - pages.start;
        let stacks = self.profile.stacks;
        let spc = self.profile.cpu.stacks_per_complex;
        let per_complex = self.profile.cpu.cores_per_complex();
        let complexes = self.profile.cpu.complexes;
        let default_degree = self.profile.scatter_degree;
        let lanes_of = |complex: u64| -> Vec<u64> { (0..spc).map(|j| (complex * spc + j) % stacks).collect() };

        let mut frames = Vec::with_capacity(todo.len());
        let mut lanes = Vec::new();
        let mut lanes_for = u64::MAX;
        let contiguous = matches!(&desc.placement, Some((p, _)) if p.mode == FrameMode::ContiguousBestEffort);
        if contiguous {
            for (s, n) in runs(&todo) {
                frames.extend(self.frames.contiguous(va0 + s, n));
            }
        } else {
            for &p in &todo {
                let thread = (p - pages.start) * threads / len;
                let complex = (thread / per_complex) % complexes;
                if complex != lanes_for {
                    lanes = lanes_of(complex);
                    lanes_for = complex;
                }
                let f = match &mut desc.placement {
                    Some((pol, rng)) => self.frames.scatter_one(rng, &mut self.cursor, pol.scatter_degree, &lanes, stacks),
                    None => self.frames.scatter_one(&mut self.rng, &mut self.cursor, default_degree, &lanes, stacks),
                };
                frames.push(f.expect("frames checked"));
            }
        }
        let mut k = 0;
        for (s, n) in runs(&todo) {
            let chunk = &frames[k..k + n as usize];
            self.install(desc, s, chunk, Agent::Cpu, false)?;
            k += n as usize;
        }
        for &p in &todo {
            let e = self.event(FaultKind::Cpu, va0 + p);
            events.push(e);
        }
        desc.cpu_faults += events.len() as u64;
        Ok(events)
    }

    fn touch_gpu(&mut self, desc: &mut AllocationDescriptor, pages: Range<u64>, xnack: bool) -> Result<Vec<FaultEvent>> {
        let va0 = desc.first_page(self.profile.page_size);
        let mut kinds = Vec::new();
        let mut major = Vec::new();
        for p in pages {
            match self.tables.gpu_access(va0 + p, xnack) {
                GpuAccess::Hit => {}
                GpuAccess::FatalFault => {
                    return Err(Error::AccessViolation {
                        kind: desc.kind,
                        agent: Agent::Gpu,
                        xnack,
                    })
                }
                GpuAccess::ReplayableFault => {
                    if self.tables.is_mapped(TableId::System, va0 + p) {
                        kinds.push((p, FaultKind::GpuMinor));
                    } else {
                        kinds.push((p, FaultKind::GpuMajor));
                        major.push(p);
                    }
                }
            }
        }
        if major.len() as u64 > self.frames.free_frames() {
            return Err(Error::OutOfMemory {
                needed: major.len() as u64,
                free: self.frames.free_frames(),
            });
        }
        for (s, n) in runs(&major) {
            let frames = match &mut desc.placement {
                Some((pol, rng)) if pol.mode == FrameMode::IncrementalScatter => {
                    let d = pol.scatter_degree;
                    (0..n)
                        .map(|_| self.frames.scatter_one(rng, &mut self.cursor, d, &[], 1).expect("frames checked"))
                        .collect()
                }
                _ => self.frames.contiguous(va0 + s, n),
            };
            self.install(desc, s, &frames, Agent::Gpu, true)?;
        }
        for (s, n) in runs(&kinds.iter().filter(|k| k.1 == FaultKind::GpuMinor).map(|k| k.0).collect::<Vec<_>>()) {
            self.tables.propagate(va0 + s..va0 + s + n)?;
        }
        let mut events = Vec::with_capacity(kinds.len());
        for (p, k) in kinds {
            let e = self.event(k, va0 + p);
            events.push(e);
        }
        desc.gpu_faults += events.len() as u64;
        desc.gpu_touched = true;
        Ok(events)
    }

    pub fn release(&mut self, id: AllocId) -> Result<()> {
        let desc = self.allocs.remove(&id).ok_or_else(|| self.missing(id))?;
        let first = desc.first_page(self.profile.page_size);
        self.tables.unmap_range(first..first + desc.pages());
        let frames: Vec<u64> = (0..desc.pages()).filter_map(|p| desc.frame(p)).collect();
        self.frames.release(&frames);
        self.released.insert(id);
        Ok(())
    }

    /// Bytes in use as reported by `counter`.
    pub fn usage_view(&self, counter: UsageCounter) -> u64 {
        self.allocs
            .values()
            .filter(|a| counter.sees(a.kind))
            .map(|a| a.mapped_pages() * self.profile.page_size)
            .sum()
    }
}

/// Splits a sorted page list into `(start, len)` runs of consecutive pages.
fn runs(pages: &[u64]) -> Vec<(u64, u64)> {
    let mut out: Vec<(u64, u64)> = Vec::new();
    for &p in pages {
        match out.last_mut() {
            Some((s, n)) if *s + *n == p => *n += 1,
            _ => out.push((p, 1)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{builtin_mi300a, GIB, MIB};

    fn mm() -> MemoryManager {
        MemoryManager::new(&builtin_mi300a(), 1)
    }

    #[test]
    fn table1() {
        use AllocatorKind::*;
        let c = classify(LibcOnDemand, false);
        assert_eq!((c.gpu_access, c.cpu_access, c.physical), (false, true, Physical::OnDemand));
        let c = classify(ManagedUnified, true);
        assert_eq!((c.gpu_access, c.cpu_access, c.physical), (true, true, Physical::OnDemand));
        let c = classify(DeviceUpFront, false);
        assert_eq!((c.gpu_access, c.cpu_access, c.physical), (true, true, Physical::UpFront));
        for x in [false, true] {
            let c = classify(StaticManaged, x);
            assert_eq!((c.gpu_access, c.cpu_access, c.physical), (true, true, Physical::UpFront));
        }
    }

    #[test]
    fn upfront_and_ondemand() {
        let mut m = mm();
        let d = m.allocate(AllocatorKind::DeviceUpFront, GIB).unwrap();
        assert_eq!(m.descriptor(d).unwrap().mapped_pages(), 262_144);
        let l = m.allocate(AllocatorKind::LibcOnDemand, GIB).unwrap();
        assert_eq!(m.descriptor(l).unwrap().mapped_pages(), 0);
        let e = m.allocate(AllocatorKind::DeviceUpFront, 128 * GIB + 4096).unwrap_err();
        assert!(matches!(e, Error::OutOfMemory { .. }));
        assert_eq!(m.allocate(AllocatorKind::LibcOnDemand, 0), Err(Error::ZeroSize));
    }

    #[test]
    fn cpu_touch_faults_once() {
        let mut m = mm();
        let l = m.allocate(AllocatorKind::LibcOnDemand, 400 * 4096).unwrap();
        let ev = m.touch(l, 0..100, Agent::Cpu).unwrap();
        assert_eq!(ev.len(), 100);
        assert!(ev.iter().all(|e| e.kind == FaultKind::Cpu && e.latency > 0.0));
        assert!(m.touch(l, 0..100, Agent::Cpu).unwrap().is_empty());
    }

    #[test]
    fn gpu_minor_then_hit() {
        let mut m = mm();
        let l = m.allocate(AllocatorKind::LibcOnDemand, 8 * 4096).unwrap();
        m.touch(l, 0..1, Agent::Cpu).unwrap();
        let ev = m.touch(l, 0..2, Agent::Gpu).unwrap();
        assert_eq!(ev.iter().map(|e| e.kind).collect::<Vec<_>>(), vec![FaultKind::GpuMinor, FaultKind::GpuMajor]);
        assert!(m.touch(l, 0..2, Agent::Gpu).unwrap().is_empty());
        assert!(m.tables().mirror_holds());
    }

    #[test]
    fn gpu_touch_without_xnack_violates() {
        let mut p = builtin_mi300a();
        p.xnack = false;
        let mut m = MemoryManager::new(&p, 0);
        let l = m.allocate(AllocatorKind::LibcOnDemand, 4096).unwrap();
        assert!(matches!(m.touch(l, 0..1, Agent::Gpu), Err(Error::AccessViolation { .. })));
    }

    #[test]
    fn usage_views() {
        let mut m = mm();
        m.allocate(AllocatorKind::DeviceUpFront, GIB).unwrap();
        assert_eq!(m.usage_view(UsageCounter::HipMemGetInfo), GIB);
        assert_eq!(m.usage_view(UsageCounter::ProcessRss), 0);
        let l = m.allocate(AllocatorKind::LibcOnDemand, GIB).unwrap();
        assert_eq!(m.usage_view(UsageCounter::Libnuma), GIB);
        m.touch(l, 0..131_072, Agent::Cpu).unwrap();
        assert_eq!(m.usage_view(UsageCounter::Libnuma), GIB + 512 * MIB);
    }

    #[test]
    fn release_restores_state() {
        let mut m = mm();
        let before = m.frame_allocator().clone();
        let a = m.allocate(AllocatorKind::PinnedHost, 3 * MIB + 5).unwrap();
        let b = m.allocate(AllocatorKind::LibcOnDemand, MIB).unwrap();
        m.touch(b, 0..200, Agent::Cpu).unwrap();
        m.release(a).unwrap();
        m.release(b).unwrap();
        assert_eq!(m.release(a), Err(Error::DoubleFree(a)));
        assert_eq!(m.frame_allocator(), &before);
        assert!(m.tables().is_empty());
    }

    #[test]
    fn hip_cpu_chunks() {
        let p = builtin_mi300a();
        let mut m = MemoryManager::new(&p, 2);
        let d = m.allocate(AllocatorKind::DeviceUpFront, 610 * MIB).unwrap();
        assert_eq!(m.touch_all(d, Agent::Cpu, 24).unwrap().len(), 1220);
        let g = m.allocate(AllocatorKind::DeviceUpFront, 610 * MIB).unwrap();
        m.touch_all(g, Agent::Gpu, 1).unwrap();
        assert_eq!(m.touch_all(g, Agent::Cpu, 24).unwrap().len(), 2440);
    }

    #[test]
    fn register_pins_everything() {
        let mut m = mm();
        let l = m.allocate(AllocatorKind::LibcOnDemand, 64 * 4096).unwrap();
        m.touch(l, 0..10, Agent::Cpu).unwrap();
        assert_eq!(m.register_host(l).unwrap(), 54);
        let d = m.descriptor(l).unwrap();
        assert_eq!(d.kind, AllocatorKind::RegisteredHost);
        assert_eq!(d.cpu_faults, 64);
        assert_eq!(m.tables().len(TableId::Gpu), 64);
    }

    #[test]
    fn static_is_singleton() {
        let mut m = mm();
        m.allocate(AllocatorKind::StaticManaged, MIB).unwrap();
        assert_eq!(m.allocate(AllocatorKind::StaticManaged, MIB), Err(Error::StaticSingleton));
    }

    #[test]
    fn runs_split() {
        assert_eq!(runs(&[1, 2, 3, 7, 9, 10]), vec![(1, 3), (7, 1), (9, 2)]);
    }
}
