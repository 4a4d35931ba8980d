//! Reference values the calibrated model must reproduce, and the check that
//! measures each one through the simulator.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{chase_point, fault_point, report, run, stream_point, usage_point, Benchmark, Format, WorkloadSpec};
use crate::atomics::{self, AtomicsWorkload, Dtype};
use crate::fault::{self, FaultKind};
use crate::machine::{FaultScenario, MachineProfile, GIB, KIB, MIB};
use crate::memmgr::{alloc_time_model, classify, free_time_model, AllocatorKind, MemoryManager, UsageCounter};
use crate::pagetable::{DualTable, Flags, TableId};
use crate::perf;
use crate::tlb::TlbState;
use crate::{Agent, Result};

/// Seed used by every anchor measurement.
pub const VERIFY_SEED: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    /// Failing makes `verify` fail.
    Hard,
    /// Failing only warns.
    Soft,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Expected {
    /// `|x - value| <= tolerance`
    Within { value: f64, tolerance: f64 },
    /// `|x / value - 1| <= tolerance`
    Relative { value: f64, tolerance: f64 },
    Range { lo: f64, hi: f64 },
    AtLeast(f64),
    AtMost(f64),
    Below(f64),
}

impl Expected {
    pub fn holds(&self, x: f64) -> bool {
        if !x.is_finite() {
            return false;
        }
        match *self {
            Expected::Within { value, tolerance } => (x - value).abs() <= tolerance,
            Expected::Relative { value, tolerance } => (x / value - 1.0).abs() <= tolerance,
            Expected::Range { lo, hi } => (lo..=hi).contains(&x),
            Expected::AtLeast(lo) => x >= lo,
            Expected::AtMost(hi) => x <= hi,
            Expected::Below(hi) => x < hi,
        }
    }

    /// Half-width of the accepted band; unbounded sides count as infinite.
    pub fn tolerance(&self) -> f64 {
        match *self {
            Expected::Within { tolerance, .. } => tolerance,
            Expected::Relative { value, tolerance } => (value * tolerance).abs(),
            Expected::Range { lo, hi } => (hi - lo) / 2.0,
            Expected::AtLeast(_) | Expected::AtMost(_) | Expected::Below(_) => f64::INFINITY,
        }
    }
}

impl fmt::Display for Expected {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Expected::Within { value, tolerance } => write!(f, "{value} ± {tolerance}"),
            Expected::Relative { value, tolerance } => write!(f, "{value} ± {}%", tolerance * 100.0),
            Expected::Range { lo, hi } => write!(f, "[{lo}, {hi}]"),
            Expected::AtLeast(lo) => write!(f, ">= {lo}"),
            Expected::AtMost(hi) => write!(f, "<= {hi}"),
            Expected::Below(hi) => write!(f, "< {hi}"),
        }
    }
}

pub struct Anchor {
    pub id: &'static str,
    /// Acceptance criterion this anchor belongs to (1-based).
    pub criterion: u8,
    pub expected: Expected,
    pub severity: Severity,
    pub unit: &'static str,
    /// The reference measurement, in words.
    pub source: &'static str,
    pub measure: fn(&MachineProfile) -> Result<f64>,
}

impl fmt::Debug for Anchor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Anchor")
            .field("id", &self.id)
            .field("criterion", &self.criterion)
            .field("expected", &self.expected)
            .field("severity", &self.severity)
            .finish()
    }
}

#[derive(Debug)]
pub struct AnchorTable {
    pub anchors: Vec<Anchor>,
}

impl AnchorTable {
    pub fn get(&self, id: &str) -> Option<&Anchor> {
        self.anchors.iter().find(|a| a.id == id)
    }

    pub fn criterion(&self, c: u8) -> impl Iterator<Item = &Anchor> {
        self.anchors.iter().filter(move |a| a.criterion == c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Warn,
}

#[derive(Clone, Debug)]
pub struct AnchorOutcome {
    pub id: &'static str,
    pub criterion: u8,
    pub severity: Severity,
    pub expected: Expected,
    pub unit: &'static str,
    pub measured: Result<f64>,
    pub status: Status,
}

#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub outcomes: Vec<AnchorOutcome>,
}

impl VerifyReport {
    pub fn hard_failures(&self) -> usize {
        self.outcomes.iter().filter(|o| o.status == Status::Fail).count()
    }

    pub fn warnings(&self) -> usize {
        self.outcomes.iter().filter(|o| o.status == Status::Warn).count()
    }

    pub fn passed(&self) -> bool {
        self.hard_failures() == 0
    }

    pub fn outcome(&self, id: &str) -> Option<&AnchorOutcome> {
        self.outcomes.iter().find(|o| o.id == id)
    }

    pub fn render(&self) -> String {
        let w = self.outcomes.iter().map(|o| o.id.len()).max().unwrap_or(0);
        let mut s = String::new();
        for o in &self.outcomes {
            let tag = match o.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Warn => "WARN",
            };
            let got = match &o.measured {
                Ok(x) => format!("{x:.4} {}", o.unit),
                Err(e) => format!("error: {e}"),
            };
            let got = got.trim_end();
            s.push_str(&format!("{tag} [{:>2}] {:<w$}  {got}  (expected {} {})\n", o.criterion, o.id, o.expected, o.unit));
        }
        s.push_str(&format!(
            "{} anchors: {} passed, {} failed, {} warnings\n",
            self.outcomes.len(),
            self.outcomes.iter().filter(|o| o.status == Status::Pass).count(),
            self.hard_failures(),
            self.warnings()
        ));
        s
    }
}

/// Measures every anchor against `profile`.
pub fn verify(profile: &MachineProfile) -> VerifyReport {
    let table = anchor_table();
    let outcomes = table
        .anchors
        .par_iter()
        .map(|a| {
            let measured = (a.measure)(profile);
            let ok = measured.as_ref().is_ok_and(|&x| a.expected.holds(x));
            let status = match (ok, a.severity) {
                (true, _) => Status::Pass,
                (false, Severity::Hard) => Status::Fail,
                (false, Severity::Soft) => Status::Warn,
            };
            AnchorOutcome {
                id: a.id,
                criterion: a.criterion,
                severity: a.severity,
                expected: a.expected,
                unit: a.unit,
                measured,
                status,
            }
        })
        .collect();
    VerifyReport { outcomes }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

const TRUE: Expected = Expected::Within {
    value: 1.0,
    tolerance: 0.5,
};

fn lat(p: &MachineProfile, agent: Agent, kind: AllocatorKind, bytes: u64) -> Result<f64> {
    Ok(chase_point(p, agent, kind, bytes, VERIFY_SEED)?.0.latency)
}

fn with_xnack(p: &MachineProfile, xnack: bool) -> MachineProfile {
    let mut q = p.clone();
    q.xnack = xnack;
    q
}

/// GPU TRIAD over CPU-initialized arrays, in TB/s.
fn gpu_bw(p: &MachineProfile, kind: AllocatorKind) -> Result<f64> {
    Ok(perf::triad_bandwidth(p, Agent::Gpu, kind, Agent::Cpu, p.cpu.cores, VERIFY_SEED)? / 1e12)
}

fn cpu_bw(p: &MachineProfile, kind: AllocatorKind, init: Agent) -> Result<f64> {
    Ok(perf::triad_bandwidth(p, Agent::Cpu, kind, init, p.cpu.cores, VERIFY_SEED)? / 1e9)
}

fn gpu_tiers_hold(p: &MachineProfile) -> Result<bool> {
    let t1 = gpu_bw(p, AllocatorKind::DeviceUpFront)?;
    let t2 = gpu_bw(p, AllocatorKind::PinnedHost)?;
    let t3 = gpu_bw(p, AllocatorKind::LibcOnDemand)?;
    Ok((3.5..=3.6).contains(&t1) && (2.1..=2.2).contains(&t2) && (1.8..=1.9).contains(&t3))
}

fn triad_misses(p: &MachineProfile, kind: AllocatorKind) -> Result<f64> {
    let s = stream_point(p, Agent::Gpu, kind, Agent::Cpu, p.cpu.cores, perf::STREAM_ARRAY_BYTES, VERIFY_SEED)?;
    Ok(s.tlb_misses.unwrap_or(0) as f64)
}

fn latency_stats(p: &MachineProfile, kind: FaultKind, n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| fault::latency_sample(p, kind, &mut rng)).collect();
    v.sort_by(f64::total_cmp);
    let mean = v.iter().sum::<f64>() / n as f64;
    let p95 = v[((n as f64 * 0.95).ceil() as usize).clamp(1, n) - 1];
    (mean, p95)
}

const LATENCY_SAMPLES: usize = 100_000;

fn pow2_sizes(lo: u32, hi: u32) -> impl Iterator<Item = u64> {
    (lo..=hi).map(|e| 1u64 << e)
}

/// Largest power-of-two size with `free < alloc`, if the sign flips exactly once.
fn last_faster_free(kind: AllocatorKind, xnack: bool) -> Result<f64> {
    let mut signs = Vec::new();
    for s in pow2_sizes(1, 30) {
        signs.push((s, free_time_model(kind, s, xnack)? < alloc_time_model(kind, s, xnack)?));
    }
    let flips = signs.windows(2).filter(|w| w[0].1 != w[1].1).count();
    let last = signs.iter().rev().find(|x| x.1).map_or(0, |x| x.0);
    Ok(if flips == 1 { last as f64 / MIB as f64 } else { f64::NAN })
}

fn stream_faults(p: &MachineProfile, kind: AllocatorKind, init: Agent) -> Result<f64> {
    Ok(stream_point(p, Agent::Cpu, kind, init, p.cpu.cores, 610 * MIB, VERIFY_SEED)?.cpu_faults as f64)
}

fn hybrid_ratios(p: &MachineProfile, array: u64, cpu: u64, gpu: u64, dtype: Dtype) -> Result<(f64, f64)> {
    let w = AtomicsWorkload {
        cpu_threads: cpu,
        gpu_threads: gpu,
        array_len: array,
        dtype,
    };
    let h = atomics::throughput(p, &w)?;
    let c = atomics::throughput(p, &AtomicsWorkload { gpu_threads: 0, ..w })?;
    let g = atomics::throughput(p, &AtomicsWorkload { cpu_threads: 0, ..w })?;
    Ok((h.cpu_rate / c.cpu_rate, h.gpu_rate / g.gpu_rate))
}

/// Co-running grid: the two hybrid array sizes, every dtype and thread pair.
fn hybrid_grid(p: &MachineProfile, arrays: &[u64], dtypes: &[Dtype]) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for &a in arrays {
        for &d in dtypes {
            for c in atomics::SWEEP_CPU_THREADS {
                for g in atomics::SWEEP_GPU_THREADS {
                    out.push(hybrid_ratios(p, a, c, g, d)?);
                }
            }
        }
    }
    Ok(out)
}

fn cpu_rate(p: &MachineProfile, threads: u64, n: u64, dtype: Dtype) -> Result<f64> {
    Ok(atomics::throughput(
        p,
        &AtomicsWorkload {
            cpu_threads: threads,
            gpu_threads: 0,
            array_len: n,
            dtype,
        },
    )?
    .cpu_rate)
}

fn gpu_rate(p: &MachineProfile, threads: u64, n: u64) -> Result<f64> {
    Ok(atomics::throughput(
        p,
        &AtomicsWorkload {
            cpu_threads: 0,
            gpu_threads: threads,
            array_len: n,
            dtype: Dtype::Uint64,
        },
    )?
    .gpu_rate)
}

/// Largest fragment order whose aligned block around `va` is fully mapped,
/// physically contiguous and uniformly flagged, by direct enumeration.
pub fn brute_force_fragment(map: &[(u64, u64, Flags)], va: u64, limit: u8) -> Option<u8> {
    let get = |v: u64| map.iter().find(|e| e.0 == v).map(|e| (e.1, e.2));
    get(va)?;
    let mut best = 0;
    for o in 1..=limit {
        let base = va >> o << o;
        let (f0, fl0) = match get(base) {
            Some(x) => x,
            None => break,
        };
        if f0 % (1 << o) != 0 {
            break;
        }
        let ok = (0..1u64 << o).all(|i| get(base + i).is_some_and(|(f, fl)| f == f0 + i && fl == fl0));
        if !ok {
            break;
        }
        best = o;
    }
    Some(best)
}

fn fragment_oracle(trials: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(VERIFY_SEED);
    let mut bad = 0;
    for _ in 0..trials {
        let limit = rng.gen_range(0..=5u8);
        let mut t = DualTable::with_fragment_limit(limit);
        let mut map = Vec::new();
        for va in 0..64u64 {
            if rng.gen_bool(0.85) {
                let frame = if rng.gen_bool(0.8) { va + 64 } else { rng.gen_range(0..256) };
                let flags = if rng.gen_bool(0.95) { Flags::RW } else { Flags::READ };
                t.map(TableId::System, va, frame, flags)?;
                map.push((va, frame, flags));
            }
        }
        for va in 0..64 {
            let got = t.compute_fragment(TableId::System, va).ok();
            if got != brute_force_fragment(&map, va, limit) {
                bad += 1;
            }
        }
    }
    Ok(bad as f64)
}

fn frame_conservation(ops: u64) -> Result<f64> {
    let mut p = crate::machine::builtin_mi300a();
    p.hbm_capacity = 64 * MIB;
    let mut mm = MemoryManager::new(&p, VERIFY_SEED);
    let total = p.total_frames();
    let mut rng = ChaCha8Rng::seed_from_u64(VERIFY_SEED);
    let mut live: Vec<u64> = Vec::new();
    let mut bad = 0;
    for _ in 0..ops {
        match rng.gen_range(0..4) {
            0 | 1 => {
                let kind = AllocatorKind::ALL[rng.gen_range(0..5)];
                if let Ok(id) = mm.allocate(kind, rng.gen_range(1..64 * KIB)) {
                    live.push(id);
                }
            }
            2 if !live.is_empty() => {
                let id = live[rng.gen_range(0..live.len())];
                let agent = if rng.gen_bool(0.5) { Agent::Cpu } else { Agent::Gpu };
                let _ = mm.touch_all(id, agent, rng.gen_range(1..4));
            }
            _ if !live.is_empty() => {
                let id = live.swap_remove(rng.gen_range(0..live.len()));
                mm.release(id)?;
                if mm.release(id).is_ok() {
                    bad += 1;
                }
            }
            _ => {}
        }
        if mm.free_frames() + mm.mapped_frames() != total || !mm.tables().mirror_holds() {
            bad += 1;
        }
    }
    Ok(bad as f64)
}

fn tlb_stack_property() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(VERIFY_SEED);
    let stream: Vec<(u64, u8)> = (0..4000)
        .map(|_| {
            let f = rng.gen_range(0..4u8);
            (rng.gen_range(0..2048u64), f)
        })
        .collect();
    let misses = |cap| {
        let mut t = TlbState::new(cap);
        for &(va, f) in &stream {
            // aligned runs so entries stay disjoint
            t.access_run(va >> 4 << 4, f.min(4));
        }
        t.misses()
    };
    let m: Vec<u64> = (1..=64).map(misses).collect();
    Ok(flag(m.windows(2).all(|w| w[1] <= w[0])))
}

fn chase_monotone(p: &MachineProfile) -> Result<f64> {
    let mut ok = true;
    for agent in [Agent::Cpu, Agent::Gpu] {
        for balance in [1.0, 0.8, 0.35] {
            let mut prev = 0.0;
            for e in 0..=70 {
                let ws = (1.5f64.powi(e) * 64.0) as u64;
                let l = perf::chase_latency(p, agent, ws, balance).latency;
                ok &= l + 1e-9 >= prev;
                prev = l;
            }
        }
    }
    Ok(flag(ok))
}

fn rerun_identical(p: &MachineProfile) -> Result<f64> {
    let mut same = true;
    for seed in 0..10u64 {
        let once = |s| -> Result<String> {
            let spec = WorkloadSpec::new(Benchmark::LatencySweep, p.clone(), s).with_grid(&[
                "agent=cpu",
                "kind=libc,pinned",
                "size=64KiB,1MiB",
            ])?;
            Ok(report(&run(&spec)?, Format::Csv))
        };
        same &= once(seed)? == once(seed)?;
    }
    Ok(flag(same))
}

fn classify_matrix() -> f64 {
    use AllocatorKind::*;
    // (kind, xnack) -> (up-front, cpu, gpu)
    let expected = [
        (LibcOnDemand, false, (false, true, false)),
        (LibcOnDemand, true, (false, true, true)),
        (RegisteredHost, false, (true, true, true)),
        (RegisteredHost, true, (true, true, true)),
        (DeviceUpFront, false, (true, true, true)),
        (DeviceUpFront, true, (true, true, true)),
        (PinnedHost, false, (true, true, true)),
        (PinnedHost, true, (true, true, true)),
        (ManagedUnified, false, (true, true, true)),
        (ManagedUnified, true, (false, true, true)),
        (StaticManaged, false, (true, true, true)),
        (StaticManaged, true, (true, true, true)),
    ];
    let mismatches = expected
        .iter()
        .filter(|&&(k, x, (up, cpu, gpu))| {
            let c = classify(k, x);
            (c.physical == crate::memmgr::Physical::UpFront, c.cpu_access, c.gpu_access) != (up, cpu, gpu)
        })
        .count();
    mismatches as f64
}

/// Which counters report memory of each kind once it is in use.
fn usage_visible(counter: UsageCounter, kind: AllocatorKind) -> bool {
    match counter {
        UsageCounter::Libnuma | UsageCounter::Meminfo => true,
        UsageCounter::HipMemGetInfo => kind == AllocatorKind::DeviceUpFront,
        UsageCounter::ProcessRss => kind != AllocatorKind::DeviceUpFront,
    }
}

fn usage_matrix(p: &MachineProfile) -> Result<f64> {
    let mut ok = 0;
    for kind in AllocatorKind::ALL {
        let views = usage_point(p, kind, Agent::Cpu, MIB, VERIFY_SEED)?;
        for (c, bytes) in views {
            let expect = if usage_visible(c, kind) { 3 * MIB } else { 0 };
            if bytes == expect {
                ok += 1;
            }
        }
    }
    Ok(ok as f64)
}

macro_rules! anchor {
    ($id:expr, $c:expr, $sev:ident, $exp:expr, $unit:expr, $src:expr, $f:expr) => {
        Anchor {
            id: $id,
            criterion: $c,
            expected: $exp,
            severity: Severity::$sev,
            unit: $unit,
            source: $src,
            measure: $f,
        }
    };
}

fn rel(value: f64, tolerance: f64) -> Expected {
    Expected::Relative { value, tolerance }
}

fn range(lo: f64, hi: f64) -> Expected {
    Expected::Range { lo, hi }
}

fn exact(value: f64) -> Expected {
    Expected::Within { value, tolerance: 1e-9 }
}

pub fn anchor_table() -> AnchorTable {
    use AllocatorKind::*;
    let anchors = vec![
        // 1: latency
        anchor!("gpu_latency_1KiB", 1, Hard, exact(57.0), "ns", "GPU pointer chase, 1 KiB buffer (L1)",
            |p| lat(p, Agent::Gpu, DeviceUpFront, KIB)),
        anchor!("gpu_latency_1MiB", 1, Hard, range(100.0, 108.0), "ns", "GPU pointer chase, 1 MiB buffer (L2)",
            |p| lat(p, Agent::Gpu, DeviceUpFront, MIB)),
        anchor!("gpu_latency_128MiB", 1, Hard, range(205.0, 218.0), "ns", "GPU pointer chase, 128 MiB buffer (Infinity Cache)",
            |p| lat(p, Agent::Gpu, DeviceUpFront, 128 * MIB)),
        anchor!("gpu_latency_4GiB", 1, Hard, range(333.0, 350.0), "ns", "GPU pointer chase, 4 GiB buffer (HBM)",
            |p| lat(p, Agent::Gpu, DeviceUpFront, 4 * GIB)),
        anchor!("cpu_latency_1KiB", 1, Hard, exact(1.0), "ns", "CPU pointer chase, 1 KiB buffer (L1)",
            |p| lat(p, Agent::Cpu, LibcOnDemand, KIB)),
        anchor!("cpu_latency_4GiB_malloc", 1, Hard, range(236.0, 241.0), "ns", "CPU pointer chase, 4 GiB malloc buffer",
            |p| lat(p, Agent::Cpu, LibcOnDemand, 4 * GIB)),
        anchor!("cpu_latency_4GiB_hipMalloc", 1, Hard, range(236.0, 241.0), "ns", "CPU pointer chase, 4 GiB hipMalloc buffer",
            |p| lat(p, Agent::Cpu, DeviceUpFront, 4 * GIB)),
        anchor!("cpu_latency_512MiB_malloc", 1, Hard, Expected::AtLeast(225.0), "ns", "CPU pointer chase, 512 MiB CPU-touched malloc buffer",
            |p| lat(p, Agent::Cpu, LibcOnDemand, 512 * MIB)),
        anchor!("cpu_latency_512MiB_upfront_gap", 1, Hard, Expected::AtLeast(15.0), "ns", "malloc minus slowest up-front HIP kind at 512 MiB, CPU chase",
            |p| {
                let m = lat(p, Agent::Cpu, LibcOnDemand, 512 * MIB)?;
                let d = lat(p, Agent::Cpu, DeviceUpFront, 512 * MIB)?;
                let h = lat(p, Agent::Cpu, PinnedHost, 512 * MIB)?;
                Ok(m - d.max(h))
            }),
        // 2: bandwidth
        anchor!("gpu_triad_hipMalloc", 2, Hard, range(3.5, 3.6), "TB/s", "GPU STREAM TRIAD, hipMalloc",
            |p| gpu_bw(p, DeviceUpFront)),
        anchor!("gpu_triad_registered", 2, Hard, range(2.1, 2.2), "TB/s", "GPU STREAM TRIAD, malloc+hipHostRegister",
            |p| gpu_bw(p, RegisteredHost)),
        anchor!("gpu_triad_hipHostMalloc", 2, Hard, range(2.1, 2.2), "TB/s", "GPU STREAM TRIAD, hipHostMalloc",
            |p| gpu_bw(p, PinnedHost)),
        anchor!("gpu_triad_managed_noxnack", 2, Hard, range(2.1, 2.2), "TB/s", "GPU STREAM TRIAD, hipMallocManaged without XNACK",
            |p| gpu_bw(&with_xnack(p, false), ManagedUnified)),
        anchor!("gpu_triad_malloc", 2, Hard, range(1.8, 1.9), "TB/s", "GPU STREAM TRIAD, CPU-initialized malloc",
            |p| gpu_bw(&with_xnack(p, true), LibcOnDemand)),
        anchor!("gpu_triad_managed_xnack", 2, Hard, range(1.8, 1.9), "TB/s", "GPU STREAM TRIAD, hipMallocManaged with XNACK",
            |p| gpu_bw(&with_xnack(p, true), ManagedUnified)),
        anchor!("gpu_triad_managed_static", 2, Hard, rel(103.0, 0.05), "GB/s", "GPU STREAM TRIAD, __managed__ arrays",
            |p| Ok(perf::triad_bandwidth(p, Agent::Gpu, StaticManaged, Agent::Cpu, p.cpu.cores, VERIFY_SEED)? / 1e9)),
        anchor!("gpu_triad_peak_fraction", 2, Hard, range(0.65, 0.69), "ratio", "best GPU TRIAD over theoretical HBM bandwidth",
            |p| Ok(gpu_bw(p, DeviceUpFront)? * 1e12 / p.hbm_peak_bw)),
        anchor!("cpu_triad_upfront", 2, Hard, rel(208.0, 0.03), "GB/s", "CPU STREAM TRIAD, 24 threads, hipMalloc",
            |p| cpu_bw(p, DeviceUpFront, Agent::Cpu)),
        anchor!("cpu_triad_malloc_gpu_init", 2, Hard, rel(208.0, 0.03), "GB/s", "CPU STREAM TRIAD, 24 threads, GPU-initialized malloc",
            |p| cpu_bw(p, LibcOnDemand, Agent::Gpu)),
        anchor!("cpu_triad_malloc_cpu_init", 2, Hard, range(179.0, 182.0), "GB/s", "CPU STREAM TRIAD, 24 threads, CPU-initialized malloc",
            |p| cpu_bw(p, LibcOnDemand, Agent::Cpu)),
        anchor!("cpu_triad_peak_fraction", 2, Hard, range(0.035, 0.045), "ratio", "best CPU TRIAD over theoretical HBM bandwidth",
            |p| Ok(cpu_bw(p, DeviceUpFront, Agent::Cpu)? * 1e9 / p.hbm_peak_bw)),
        anchor!("gpu_tiers_need_walk_penalty", 2, Hard, TRUE, "flag", "GPU bandwidth tiers collapse without the page-walk term",
            |p| {
                let mut q = p.clone();
                q.bw_model.walk_penalty = 0.0;
                Ok(flag(gpu_tiers_hold(p)? && !gpu_tiers_hold(&q)?))
            }),
        // 3: legacy copies
        anchor!("memcpy_sdma", 3, Hard, exact(58.0), "GB/s", "hipMemcpy malloc to hipMalloc, SDMA enabled",
            |p| Ok(perf::memcpy_bandwidth(p, LibcOnDemand, DeviceUpFront, true) / 1e9)),
        anchor!("memcpy_no_sdma", 3, Hard, exact(850.0), "GB/s", "hipMemcpy malloc to hipMalloc, SDMA disabled",
            |p| Ok(perf::memcpy_bandwidth(p, LibcOnDemand, DeviceUpFront, false) / 1e9)),
        anchor!("memcpy_device_to_device", 3, Hard, exact(1900.0), "GB/s", "hipMemcpy hipMalloc to hipMalloc",
            |p| Ok(perf::memcpy_bandwidth(p, DeviceUpFront, DeviceUpFront, true) / 1e9)),
        // 4: TLB
        anchor!("tlb_miss_ratio", 4, Hard, range(5.0, 10.0), "ratio", "GPU TRIAD TLB misses, malloc over hipMalloc",
            |p| Ok(triad_misses(p, LibcOnDemand)? / triad_misses(p, DeviceUpFront)?)),
        anchor!("tlb_misses_hipMalloc", 4, Soft, rel(158e3, 0.2), "count", "GPU TRIAD TLB misses, hipMalloc",
            |p| triad_misses(p, DeviceUpFront)),
        anchor!("tlb_misses_malloc", 4, Soft, range(1.0e6, 1.2e6), "count", "GPU TRIAD TLB misses, CPU-initialized malloc",
            |p| triad_misses(p, LibcOnDemand)),
        // 5: fault throughput
        anchor!("fault_throughput_gpu_major", 5, Hard, rel(1.1e6, 0.1), "pages/s", "GPU major fault plateau",
            |p| Ok(fault::throughput(p, FaultScenario::GpuMajor, FaultScenario::GpuMajor.saturation_pages()))),
        anchor!("fault_throughput_gpu_minor", 5, Hard, rel(9.0e6, 0.1), "pages/s", "GPU minor fault plateau",
            |p| Ok(fault::throughput(p, FaultScenario::GpuMinor, FaultScenario::GpuMinor.saturation_pages()))),
        anchor!("fault_throughput_1cpu", 5, Hard, rel(872e3, 0.1), "pages/s", "single-core CPU fault plateau",
            |p| Ok(fault::throughput(p, FaultScenario::Cpu1, FaultScenario::Cpu1.saturation_pages()))),
        anchor!("fault_throughput_12cpu", 5, Hard, rel(3.7e6, 0.1), "pages/s", "12-core CPU fault plateau",
            |p| Ok(fault::throughput(p, FaultScenario::Cpu12, FaultScenario::Cpu12.saturation_pages()))),
        anchor!("fault_throughput_simulated", 5, Hard, TRUE, "flag", "fault benchmark throughput agrees with the plateau model",
            |p| {
                let f = fault_point(p, FaultScenario::GpuMajor, LibcOnDemand, FaultScenario::GpuMajor.saturation_pages(), VERIFY_SEED)?;
                Ok(flag((f.throughput / 1.1e6 - 1.0).abs() <= 0.1))
            }),
        anchor!("prefault_speedup_1e7", 5, Hard, rel(2.2, 0.15), "x", "CPU prefault then GPU minor faults vs GPU major faults, 10^7 pages",
            |p| Ok(fault::prefault_pipeline(p, 10_000_000, false).speedup_vs_gpu_major)),
        anchor!("prefault_speedup_1page", 5, Hard, Expected::Below(1.0), "x", "same comparison for a single page",
            |p| Ok(fault::prefault_pipeline(p, 1, false).speedup_vs_gpu_major)),
        // 6: fault latency
        anchor!("fault_latency_mean_cpu", 6, Hard, rel(9.0, 0.02), "us", "CPU fault latency, mean of 10^5",
            |p| Ok(latency_stats(p, FaultKind::Cpu, LATENCY_SAMPLES, VERIFY_SEED).0)),
        anchor!("fault_latency_mean_gpu_minor", 6, Hard, rel(16.0, 0.02), "us", "GPU minor fault latency, mean of 10^5",
            |p| Ok(latency_stats(p, FaultKind::GpuMinor, LATENCY_SAMPLES, VERIFY_SEED).0)),
        anchor!("fault_latency_mean_gpu_major", 6, Hard, rel(18.0, 0.02), "us", "GPU major fault latency, mean of 10^5",
            |p| Ok(latency_stats(p, FaultKind::GpuMajor, LATENCY_SAMPLES, VERIFY_SEED).0)),
        anchor!("fault_latency_p95_cpu", 6, Hard, rel(11.0, 0.05), "us", "CPU fault latency, 95th percentile",
            |p| Ok(latency_stats(p, FaultKind::Cpu, LATENCY_SAMPLES, VERIFY_SEED).1)),
        anchor!("fault_latency_p95_gpu_minor", 6, Hard, rel(20.0, 0.05), "us", "GPU minor fault latency, 95th percentile",
            |p| Ok(latency_stats(p, FaultKind::GpuMinor, LATENCY_SAMPLES, VERIFY_SEED).1)),
        anchor!("fault_latency_p95_gpu_major", 6, Hard, rel(22.0, 0.05), "us", "GPU major fault latency, 95th percentile",
            |p| Ok(latency_stats(p, FaultKind::GpuMajor, LATENCY_SAMPLES, VERIFY_SEED).1)),
        anchor!("fault_latency_ordering", 6, Hard, TRUE, "flag", "CPU < GPU minor < GPU major for every seed",
            |p| {
                let ok = (0..10).all(|s| {
                    let c = latency_stats(p, FaultKind::Cpu, 10_000, s);
                    let mi = latency_stats(p, FaultKind::GpuMinor, 10_000, s);
                    let ma = latency_stats(p, FaultKind::GpuMajor, 10_000, s);
                    c.0 < mi.0 && mi.0 < ma.0 && c.1 < mi.1 && mi.1 < ma.1
                });
                Ok(flag(ok))
            }),
        // 7: allocation cost
        anchor!("alloc_malloc_32B", 7, Hard, rel(14.0, 0.1), "ns", "malloc, 32 B",
            |p| Ok(alloc_time_model(LibcOnDemand, 32, p.xnack)? * 1e9)),
        anchor!("alloc_malloc_1GiB", 7, Hard, rel(6.0, 0.1), "us", "malloc, 1 GiB",
            |p| Ok(alloc_time_model(LibcOnDemand, GIB, p.xnack)? * 1e6)),
        anchor!("alloc_hipMalloc_16KiB", 7, Hard, rel(10.0, 0.1), "us", "hipMalloc, up to 16 KiB",
            |p| Ok(alloc_time_model(DeviceUpFront, 16 * KIB, p.xnack)? * 1e6)),
        anchor!("alloc_hipMalloc_1GiB", 7, Hard, rel(37.0, 0.1), "ms", "hipMalloc, 1 GiB",
            |p| Ok(alloc_time_model(DeviceUpFront, GIB, p.xnack)? * 1e3)),
        anchor!("alloc_upfront_flat_small", 7, Hard, Expected::Below(0.01), "cv", "up-front allocators between 2 B and 16 KiB",
            |_| {
                let mut worst = 0.0f64;
                for (k, x) in [(DeviceUpFront, true), (PinnedHost, true), (ManagedUnified, false)] {
                    let v: Vec<f64> = pow2_sizes(1, 14).map(|s| alloc_time_model(k, s, x)).collect::<Result<_>>()?;
                    let mean = v.iter().sum::<f64>() / v.len() as f64;
                    let var = v.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / v.len() as f64;
                    worst = worst.max(var.sqrt() / mean);
                }
                Ok(worst)
            }),
        anchor!("free_malloc_crossover", 7, Hard, exact(16.0), "MiB", "largest size where free beats malloc",
            |p| last_faster_free(LibcOnDemand, p.xnack)),
        anchor!("free_hipMalloc_crossover", 7, Hard, exact(1.0), "MiB", "hipFree beats hipMalloc below 2 MiB only",
            |p| last_faster_free(DeviceUpFront, p.xnack)),
        // 8: CPU fault counts
        anchor!("cpu_faults_malloc", 8, Hard, rel(472e3, 0.02), "count", "CPU STREAM, 3 x 610 MiB, CPU-initialized malloc",
            |p| stream_faults(&with_xnack(p, true), LibcOnDemand, Agent::Cpu)),
        anchor!("cpu_faults_hipMalloc", 8, Hard, range(3700.0, 4600.0), "count", "CPU STREAM, 3 x 610 MiB, CPU-initialized hipMalloc",
            |p| stream_faults(p, DeviceUpFront, Agent::Cpu)),
        anchor!("cpu_faults_hipHostMalloc", 8, Hard, range(3700.0, 4600.0), "count", "CPU STREAM, 3 x 610 MiB, CPU-initialized hipHostMalloc",
            |p| stream_faults(p, PinnedHost, Agent::Cpu)),
        anchor!("cpu_faults_hipMalloc_gpu_init", 8, Hard, range(8000.0, 8900.0), "count", "CPU STREAM, 3 x 610 MiB, GPU-initialized hipMalloc",
            |p| stream_faults(p, DeviceUpFront, Agent::Gpu)),
        // 9: atomics
        anchor!("atomics_cpu_dtype_ratio", 9, Hard, rel(3.0, 0.15), "x", "CPU UINT64 over FP64 updates, 1M array, 1 thread",
            |p| Ok(cpu_rate(p, 1, 1 << 20, Dtype::Uint64)? / cpu_rate(p, 1, 1 << 20, Dtype::Fp64)?)),
        anchor!("atomics_gpu_dtype_equal", 9, Hard, exact(0.0), "count", "GPU configurations where UINT64 and FP64 rates differ",
            |p| {
                let mut diff = 0;
                for n in atomics::ARRAY_LENS {
                    for g in atomics::SWEEP_GPU_THREADS {
                        let w = |dtype| AtomicsWorkload { cpu_threads: 0, gpu_threads: g, array_len: n, dtype };
                        let a = atomics::throughput(p, &w(Dtype::Uint64))?.gpu_rate;
                        let b = atomics::throughput(p, &w(Dtype::Fp64))?.gpu_rate;
                        diff += usize::from(a != b);
                    }
                }
                Ok(diff as f64)
            }),
        anchor!("atomics_hybrid_cpu_min", 9, Hard, range(0.11, 0.25), "ratio", "co-running CPU over isolated CPU, 1K array, 3328 GPU threads, lowest",
            |p| {
                let mut v = f64::INFINITY;
                for c in 1..=24 {
                    for d in [Dtype::Uint64, Dtype::Fp64] {
                        v = v.min(hybrid_ratios(p, 1 << 10, c, 3328, d)?.0);
                    }
                }
                Ok(v)
            }),
        anchor!("atomics_hybrid_cpu_max", 9, Hard, range(0.11, 0.25), "ratio", "co-running CPU over isolated CPU, 1K array, 3328 GPU threads, highest",
            |p| {
                let mut v = 0.0f64;
                for c in 1..=24 {
                    for d in [Dtype::Uint64, Dtype::Fp64] {
                        v = v.max(hybrid_ratios(p, 1 << 10, c, 3328, d)?.0);
                    }
                }
                Ok(v)
            }),
        anchor!("atomics_hybrid_gpu_floor", 9, Hard, Expected::AtLeast(0.79), "ratio", "co-running GPU over isolated GPU, worst point of the sweep",
            |p| {
                let g = hybrid_grid(p, &[1 << 10, 1 << 20], &[Dtype::Uint64, Dtype::Fp64])?;
                Ok(g.iter().map(|r| r.1).fold(f64::INFINITY, f64::min))
            }),
        anchor!("atomics_hybrid_gpu_geomean_1M", 9, Hard, range(0.99, 1.03), "ratio", "co-running GPU over isolated GPU, 1M UINT64, geometric mean",
            |p| {
                let g = hybrid_grid(p, &[1 << 20], &[Dtype::Uint64])?;
                Ok((g.iter().map(|r| r.1.ln()).sum::<f64>() / g.len() as f64).exp())
            }),
        anchor!("atomics_hybrid_cpu_speedup_1M", 9, Soft, range(1.10, 1.18), "ratio", "best co-running CPU over isolated CPU, 1M UINT64",
            |p| {
                let g = hybrid_grid(p, &[1 << 20], &[Dtype::Uint64])?;
                Ok(g.iter().map(|r| r.0).fold(0.0, f64::max))
            }),
        anchor!("atomics_single_element_decreasing", 9, Hard, TRUE, "flag", "CPU rate on a 1-element array falls with every added thread",
            |p| {
                let mut ok = true;
                for d in [Dtype::Uint64, Dtype::Fp64] {
                    let r: Vec<f64> = (1..=24).map(|t| cpu_rate(p, t, 1, d)).collect::<Result<_>>()?;
                    ok &= r.windows(2).all(|w| w[1] < w[0]);
                }
                Ok(flag(ok))
            }),
        anchor!("atomics_1M_scaling", 9, Hard, TRUE, "flag", "1M rates grow with threads past the first and beat 1G",
            |p| {
                let mut ok = true;
                // one thread runs without coherence traffic; scaling starts at two
                for w in atomics::SWEEP_CPU_THREADS[1..].windows(2) {
                    ok &= cpu_rate(p, w[1], 1 << 20, Dtype::Uint64)? > cpu_rate(p, w[0], 1 << 20, Dtype::Uint64)?;
                }
                for w in atomics::SWEEP_GPU_THREADS.windows(2) {
                    ok &= gpu_rate(p, w[1], 1 << 20)? >= gpu_rate(p, w[0], 1 << 20)?;
                }
                for t in atomics::SWEEP_CPU_THREADS {
                    ok &= cpu_rate(p, t, 1 << 20, Dtype::Uint64)? > cpu_rate(p, t, 1 << 30, Dtype::Uint64)?;
                }
                for g in atomics::SWEEP_GPU_THREADS {
                    ok &= gpu_rate(p, g, 1 << 20)? > gpu_rate(p, g, 1 << 30)?;
                }
                Ok(flag(ok))
            }),
        anchor!("atomics_1M_overtake_threads", 9, Soft, exact(6.0), "threads", "fewest CPU threads beating one thread on the 1M array",
            |p| {
                let one = cpu_rate(p, 1, 1 << 20, Dtype::Uint64)?;
                for t in 2..=24 {
                    if cpu_rate(p, t, 1 << 20, Dtype::Uint64)? > one {
                        return Ok(t as f64);
                    }
                }
                Ok(f64::NAN)
            }),
        anchor!("atomics_collision_monte_carlo", 9, Hard, Expected::AtMost(0.01), "rel. error", "24 concurrent updates on 1024 elements, 10^6 trials",
            |_| {
                let mut rng = ChaCha8Rng::seed_from_u64(VERIFY_SEED);
                let mc = atomics::collision_rate_mc(24, 1024, 1_000_000, &mut rng);
                Ok((mc / atomics::collision_rate(24, 1024) - 1.0).abs())
            }),
        // 10: properties
        anchor!("prop_fragment_oracle", 10, Hard, exact(0.0), "mismatches", "fragment field vs brute-force enumeration",
            |_| fragment_oracle(200)),
        anchor!("prop_frame_conservation", 10, Hard, exact(0.0), "violations", "frames conserved and mirror intact over random operations",
            |_| frame_conservation(500)),
        anchor!("prop_tlb_stack", 10, Hard, TRUE, "flag", "TLB misses never grow with capacity",
            |_| tlb_stack_property()),
        anchor!("prop_chase_monotone", 10, Hard, TRUE, "flag", "chase latency never falls as the working set grows",
            chase_monotone),
        anchor!("prop_rerun_identical", 10, Hard, TRUE, "flag", "repeated runs with one seed render identical CSV",
            rerun_identical),
        anchor!("prop_classify_matrix", 10, Hard, exact(0.0), "mismatches", "allocator access matrix",
            |_| Ok(classify_matrix())),
        // 11: usage views
        anchor!("usage_view_matrix", 11, Hard, exact(24.0), "matches", "usage counters vs allocator kinds after first touch",
            usage_matrix),
    ];
    AnchorTable { anchors }
}
