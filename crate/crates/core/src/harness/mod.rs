//! Benchmark drivers over parameter grids, report rendering and the anchor
//! check behind `upm-sim verify`.

mod anchors;
mod report;

pub use anchors::{anchor_table, verify, Anchor, AnchorOutcome, AnchorTable, Expected, Severity, Status, VerifyReport};
pub use report::{report, Format};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::atomics::{self, AtomicsWorkload, Dtype};
use crate::fault::{self, FaultKind};
use crate::machine::{parse_bytes, validate, FaultScenario, MachineProfile, MIB};
use crate::memmgr::{alloc_time_model, classify, free_time_model, AllocatorKind, MemoryManager, UsageCounter};
use crate::perf::{self, LatencyBreakdown, StreamSetup};
use crate::tlb::MISS_COUNTER;
use crate::{Agent, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Benchmark {
    LatencySweep,
    Stream,
    AllocBench,
    FaultBench,
    AtomicsBench,
    MemcpyBench,
    UsageReport,
}

impl Benchmark {
    pub const ALL: [Benchmark; 7] = [
        Benchmark::LatencySweep,
        Benchmark::Stream,
        Benchmark::AllocBench,
        Benchmark::FaultBench,
        Benchmark::AtomicsBench,
        Benchmark::MemcpyBench,
        Benchmark::UsageReport,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::LatencySweep => "latency",
            Benchmark::Stream => "stream",
            Benchmark::AllocBench => "alloc",
            Benchmark::FaultBench => "fault",
            Benchmark::AtomicsBench => "atomics",
            Benchmark::MemcpyBench => "memcpy",
            Benchmark::UsageReport => "usage",
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let l = s.to_ascii_lowercase();
        Benchmark::ALL
            .into_iter()
            .find(|b| b.name() == l || format!("{b:?}").to_ascii_lowercase() == l)
            .ok_or_else(|| format!("unknown benchmark `{s}`"))
    }
}

/// Chunks per loop in the allocation benchmark.
pub const ALLOC_CHUNKS: u64 = 100;

/// Pages actually faulted per fault-benchmark point; throughput beyond this
/// comes from the saturation model.
pub const FAULT_SIM_PAGES: u64 = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Param {
    Agent,
    Kind,
    Bytes,
    Count,
    Scenario,
    Dtype,
    Flag,
}

fn parse_count(raw: &str) -> std::result::Result<u64, String> {
    let t = raw.trim().replace('_', "");
    if let Ok(v) = t.parse::<u64>() {
        return Ok(v);
    }
    match t.parse::<f64>() {
        Ok(x) if x >= 0.0 && x.fract() == 0.0 && x < u64::MAX as f64 => Ok(x as u64),
        _ => Err(format!("expected a count, got `{raw}`")),
    }
}

fn normalize(param: Param, raw: &str) -> std::result::Result<String, String> {
    let raw = raw.trim();
    Ok(match param {
        Param::Agent => raw.parse::<Agent>()?.name().to_string(),
        Param::Kind => raw.parse::<AllocatorKind>()?.name().to_string(),
        Param::Bytes => parse_bytes(raw)?.to_string(),
        Param::Count => parse_count(raw)?.to_string(),
        Param::Scenario => raw.parse::<FaultScenario>()?.name().to_string(),
        Param::Dtype => raw.parse::<Dtype>()?.name().to_string(),
        Param::Flag => match raw.to_ascii_lowercase().as_str() {
            "1" | "on" | "true" | "yes" => "on".to_string(),
            "0" | "off" | "false" | "no" => "off".to_string(),
            _ => return Err(format!("expected on/off, got `{raw}`")),
        },
    })
}

fn axes(b: Benchmark) -> Vec<(&'static str, Param, Vec<String>)> {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let n = |v: &[u64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let kinds = AllocatorKind::ALL.iter().map(|k| k.name().to_string()).collect::<Vec<_>>();
    let pow2 = |lo: u32, hi: u32| (lo..=hi).map(|e| (1u64 << e).to_string()).collect::<Vec<_>>();
    match b {
        Benchmark::LatencySweep => vec![
            ("agent", Param::Agent, s(&["gpu", "cpu"])),
            ("kind", Param::Kind, kinds),
            ("size", Param::Bytes, pow2(10, 32)),
        ],
        Benchmark::Stream => vec![
            ("agent", Param::Agent, s(&["gpu", "cpu"])),
            ("kind", Param::Kind, kinds),
            ("init", Param::Agent, s(&["cpu", "gpu"])),
            ("threads", Param::Count, n(&[24])),
            ("array", Param::Bytes, n(&[perf::STREAM_ARRAY_BYTES])),
        ],
        Benchmark::AllocBench => vec![("kind", Param::Kind, kinds), ("size", Param::Bytes, pow2(1, 30))],
        Benchmark::FaultBench => vec![
            ("scenario", Param::Scenario, FaultScenario::ALL.iter().map(|s| s.name().to_string()).collect()),
            ("kind", Param::Kind, s(&["LibcOnDemand", "ManagedUnified"])),
            ("pages", Param::Count, (0..=7).map(|e| 10u64.pow(e).to_string()).collect()),
        ],
        Benchmark::AtomicsBench => vec![
            ("array", Param::Count, n(&atomics::ARRAY_LENS)),
            ("dtype", Param::Dtype, s(&["UINT64", "FP64"])),
            ("cpu_threads", Param::Count, {
                let mut v = vec![0];
                v.extend(atomics::SWEEP_CPU_THREADS);
                n(&v)
            }),
            ("gpu_threads", Param::Count, {
                let mut v = vec![0];
                v.extend(atomics::SWEEP_GPU_THREADS);
                n(&v)
            }),
        ],
        Benchmark::MemcpyBench => vec![
            ("src", Param::Kind, s(&["LibcOnDemand", "PinnedHost", "DeviceUpFront"])),
            ("dst", Param::Kind, s(&["LibcOnDemand", "PinnedHost", "DeviceUpFront"])),
            ("sdma", Param::Flag, s(&["on", "off"])),
        ],
        Benchmark::UsageReport => vec![
            ("kind", Param::Kind, kinds),
            ("init", Param::Agent, s(&["cpu"])),
            ("array", Param::Bytes, n(&[perf::STREAM_ARRAY_BYTES])),
        ],
    }
}

/// Named axes with normalized values; points are their cartesian product,
/// first axis outermost.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid {
    benchmark: Benchmark,
    axes: Vec<(String, Vec<String>)>,
}

impl Grid {
    pub fn default_for(benchmark: Benchmark) -> Self {
        Grid {
            benchmark,
            axes: axes(benchmark).into_iter().map(|(k, _, v)| (k.to_string(), v)).collect(),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.axes.iter().map(|(k, _)| k.as_str())
    }

    pub fn values(&self, key: &str) -> Option<&[String]> {
        self.axes.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_slice())
    }

    /// Replaces one axis.
    pub fn set<S: AsRef<str>>(&mut self, key: &str, values: &[S]) -> Result<()> {
        let axes = axes(self.benchmark);
        let (_, param, _) = axes.iter().find(|(k, _, _)| *k == key).ok_or_else(|| {
            let known: Vec<&str> = axes.iter().map(|a| a.0).collect();
            Error::InvalidSpec(format!("{} has no grid key `{key}` (known: {})", self.benchmark, known.join(", ")))
        })?;
        let vals = values
            .iter()
            .map(|v| normalize(*param, v.as_ref()))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidSpec(format!("{key}: {e}")))?;
        if vals.is_empty() {
            return Err(Error::InvalidSpec(format!("{key}: empty value list")));
        }
        let slot = self.axes.iter_mut().find(|(k, _)| k == key).expect("axis present");
        slot.1 = vals;
        Ok(())
    }

    /// Applies a `KEY=V1,V2,...` override.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        let (key, vals) = text
            .split_once('=')
            .ok_or_else(|| Error::InvalidSpec(format!("grid override `{text}` is not KEY=V1,V2,...")))?;
        let vals: Vec<&str> = vals.split(',').filter(|v| !v.trim().is_empty()).collect();
        self.set(key.trim(), &vals)
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> Vec<Vec<(String, String)>> {
        let mut out = vec![Vec::new()];
        for (k, vals) in &self.axes {
            out = out
                .into_iter()
                .flat_map(|p| {
                    vals.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push((k.clone(), v.clone()));
                        q
                    })
                })
                .collect();
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct WorkloadSpec {
    pub benchmark: Benchmark,
    pub grid: Grid,
    pub seed: u64,
    pub profile: MachineProfile,
}

impl WorkloadSpec {
    pub fn new(benchmark: Benchmark, profile: MachineProfile, seed: u64) -> Self {
        WorkloadSpec {
            benchmark,
            grid: Grid::default_for(benchmark),
            seed,
            profile,
        }
    }

    pub fn with_grid(mut self, overrides: &[&str]) -> Result<Self> {
        for o in overrides {
            self.grid.apply(o)?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.benchmark != self.benchmark {
            return Err(Error::InvalidSpec("grid belongs to another benchmark".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidSpec("empty grid".into()));
        }
        let v = validate(&self.profile);
        if !v.is_empty() {
            let msg: Vec<String> = v.iter().map(|v| v.to_string()).collect();
            return Err(Error::InvalidSpec(msg.join("; ")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Num(f64),
    Error(Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub benchmark: Benchmark,
    pub point: Vec<(String, String)>,
    pub metric: &'static str,
    pub value: Value,
    pub unit: &'static str,
}

pub type SimReport = Vec<Row>;

type Metrics = Vec<(&'static str, f64, &'static str)>;

struct Point<'a>(&'a [(String, String)]);

impl Point<'_> {
    fn raw(&self, key: &str) -> Result<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::InvalidSpec(format!("missing grid key `{key}`")))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key)?;
        raw.parse().map_err(|_| Error::InvalidSpec(format!("{key}: bad value `{raw}`")))
    }
}

fn describe(point: &[(String, String)]) -> String {
    point.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
}

/// Per-point seed: depends on the base seed and the point's own values, not
/// on its position, so a point reproduces inside any grid.
pub fn point_seed(seed: u64, benchmark: Benchmark, point: &[(String, String)]) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
        }
    };
    feed(benchmark.name().as_bytes());
    for (k, v) in point {
        feed(k.as_bytes());
        feed(b"=");
        feed(v.as_bytes());
        feed(b";");
    }
    // splitmix64 finalizer
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Evaluates every grid point. Points that fail produce a single `error`
/// row carrying the module error; the run itself only fails on a bad spec.
pub fn run(spec: &WorkloadSpec) -> Result<SimReport> {
    spec.validate()?;
    let points = spec.grid.points();
    let rows: Vec<Vec<Row>> = points
        .par_iter()
        .enumerate()
        .map(|(index, point)| {
            let seed = point_seed(spec.seed, spec.benchmark, point);
            let row = |metric, value, unit| Row {
                benchmark: spec.benchmark,
                point: point.clone(),
                metric,
                value,
                unit,
            };
            match evaluate(spec.benchmark, &spec.profile, &Point(point), seed) {
                Ok(ms) => ms.into_iter().map(|(m, v, u)| row(m, Value::Num(v), u)).collect(),
                Err(e) => vec![row(
                    "error",
                    Value::Error(Error::AtGridPoint {
                        index,
                        point: describe(point),
                        source: Box::new(e),
                    }),
                    "",
                )],
            }
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

fn evaluate(b: Benchmark, profile: &MachineProfile, p: &Point<'_>, seed: u64) -> Result<Metrics> {
    match b {
        Benchmark::LatencySweep => {
            let agent: Agent = p.get("agent")?;
            let kind: AllocatorKind = p.get("kind")?;
            let size: u64 = p.get("size")?;
            let (lat, balance) = chase_point(profile, agent, kind, size, seed)?;
            Ok(vec![("latency", lat.latency, "ns"), ("balance", balance, "ratio")])
        }
        Benchmark::Stream => {
            let s = stream_point(
                profile,
                p.get("agent")?,
                p.get("kind")?,
                p.get("init")?,
                p.get("threads")?,
                p.get("array")?,
                seed,
            )?;
            let mut m = vec![("bandwidth", s.bandwidth / 1e9, "GB/s"), ("balance", s.balance, "ratio")];
            if let Some(misses) = s.tlb_misses {
                m.push((MISS_COUNTER, misses as f64, "count"));
            }
            m.push(("cpu_faults", s.cpu_faults as f64, "count"));
            Ok(m)
        }
        Benchmark::AllocBench => {
            let kind: AllocatorKind = p.get("kind")?;
            let size: u64 = p.get("size")?;
            let a = alloc_time_model(kind, size, profile.xnack)?;
            let f = free_time_model(kind, size, profile.xnack)?;
            let n = ALLOC_CHUNKS as f64;
            Ok(vec![
                ("alloc_time", a * 1e9, "ns"),
                ("free_time", f * 1e9, "ns"),
                ("alloc_loop_time", a * n * 1e3, "ms"),
                ("free_loop_time", f * n * 1e3, "ms"),
            ])
        }
        Benchmark::FaultBench => {
            let f = fault_point(profile, p.get("scenario")?, p.get("kind")?, p.get("pages")?, seed)?;
            Ok(vec![
                ("throughput", f.throughput, "pages/s"),
                ("time", f.time, "s"),
                ("latency_mean", f.latency_mean, "us"),
                ("latency_p95", f.latency_p95, "us"),
            ])
        }
        Benchmark::AtomicsBench => {
            let w = AtomicsWorkload {
                cpu_threads: p.get("cpu_threads")?,
                gpu_threads: p.get("gpu_threads")?,
                array_len: p.get("array")?,
                dtype: p.get("dtype")?,
            };
            let r = atomics::throughput(profile, &w)?;
            let mut m = vec![
                ("cpu_rate", r.cpu_rate / 1e6, "Mupdates/s"),
                ("gpu_rate", r.gpu_rate / 1e6, "Mupdates/s"),
                ("collision_probability", r.collision_probability, "ratio"),
            ];
            if w.cpu_threads > 0 && w.gpu_threads > 0 {
                let cpu_alone = atomics::throughput(profile, &AtomicsWorkload { gpu_threads: 0, ..w })?;
                let gpu_alone = atomics::throughput(profile, &AtomicsWorkload { cpu_threads: 0, ..w })?;
                m.push(("cpu_relative", r.cpu_rate / cpu_alone.cpu_rate, "ratio"));
                m.push(("gpu_relative", r.gpu_rate / gpu_alone.gpu_rate, "ratio"));
            }
            Ok(m)
        }
        Benchmark::MemcpyBench => {
            let sdma = p.raw("sdma")? == "on";
            let bw = perf::memcpy_bandwidth(profile, p.get("src")?, p.get("dst")?, sdma);
            Ok(vec![("bandwidth", bw / 1e9, "GB/s")])
        }
        Benchmark::UsageReport => {
            let views = usage_point(profile, p.get("kind")?, p.get("init")?, p.get("array")?, seed)?;
            Ok(views.into_iter().map(|(c, bytes)| (c.name(), bytes as f64 / MIB as f64, "MiB")).collect())
        }
    }
}

fn check_access(profile: &MachineProfile, kind: AllocatorKind, agent: Agent) -> Result<()> {
    let class = classify(kind, profile.xnack);
    let ok = match agent {
        Agent::Cpu => class.cpu_access,
        Agent::Gpu => class.gpu_access,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::AccessViolation {
            kind,
            agent,
            xnack: profile.xnack,
        })
    }
}

/// Pointer chase by `agent` over a fresh `bytes`-sized buffer of `kind`.
///
/// On-demand buffers are first touched by a single thread of the chasing
/// agent; registered buffers are CPU-touched before registration. Returns the
/// latency breakdown and the buffer's channel balance.
pub fn chase_point(
    profile: &MachineProfile,
    agent: Agent,
    kind: AllocatorKind,
    bytes: u64,
    seed: u64,
) -> Result<(LatencyBreakdown, f64)> {
    check_access(profile, kind, agent)?;
    let mut mm = MemoryManager::new(profile, seed);
    let id = if kind == AllocatorKind::RegisteredHost {
        let id = mm.allocate(AllocatorKind::LibcOnDemand, bytes)?;
        mm.touch_all(id, Agent::Cpu, 1)?;
        mm.register_host(id)?;
        id
    } else {
        let id = mm.allocate(kind, bytes)?;
        mm.touch_all(id, agent, 1)?;
        id
    };
    let desc = mm.descriptor(id)?;
    let balance = perf::channel_load(profile, desc)?.balance;
    Ok((perf::chase_latency_alloc(profile, agent, bytes, desc)?, balance))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StreamPoint {
    /// bytes/s
    pub bandwidth: f64,
    pub balance: f64,
    /// GPU runs only, over the profile's TRIAD iteration count.
    pub tlb_misses: Option<u64>,
    /// Setup plus kernel, including the process baseline.
    pub cpu_faults: u64,
}

/// STREAM TRIAD on `agent` with arrays of `kind`, first touched by `init`.
/// `threads` is the CPU thread count for CPU init and for the CPU kernel.
pub fn stream_point(
    profile: &MachineProfile,
    agent: Agent,
    kind: AllocatorKind,
    init: Agent,
    threads: u64,
    array_bytes: u64,
    seed: u64,
) -> Result<StreamPoint> {
    check_access(profile, kind, agent)?;
    check_access(profile, kind, init)?;
    if threads == 0 {
        return Err(Error::InvalidWorkload("STREAM needs at least one CPU thread".into()));
    }
    let mut s = StreamSetup::build(profile, kind, init, threads, array_bytes, seed)?;
    let (bandwidth, tlb_misses) = match agent {
        Agent::Gpu => {
            s.gpu_warm()?;
            (s.gpu_bandwidth()?, Some(s.triad_misses(profile.triad_iterations)?))
        }
        Agent::Cpu => {
            for (id, range) in s.arrays.clone() {
                s.mm.touch_parallel(id, range, Agent::Cpu, threads)?;
            }
            (perf::triad_bandwidth(profile, Agent::Cpu, kind, init, threads, seed)?, None)
        }
    };
    Ok(StreamPoint {
        bandwidth,
        balance: s.channel_load()?.balance,
        tlb_misses,
        cpu_faults: s.cpu_faults() + profile.cpu.baseline_faults,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaultPoint {
    /// pages/s
    pub throughput: f64,
    /// s
    pub time: f64,
    /// µs, over the simulated faults
    pub latency_mean: f64,
    pub latency_p95: f64,
}

/// Faults `pages` pages of fresh `kind` memory the way `scenario` does.
pub fn fault_point(
    profile: &MachineProfile,
    scenario: FaultScenario,
    kind: AllocatorKind,
    pages: u64,
    seed: u64,
) -> Result<FaultPoint> {
    if pages == 0 {
        return Err(Error::ZeroSize);
    }
    let sim = pages.min(FAULT_SIM_PAGES);
    let mut mm = MemoryManager::new(profile, seed);
    let id = mm.allocate(kind, sim * profile.page_size)?;
    let (events, want) = match scenario {
        FaultScenario::Cpu1 => (mm.touch_parallel(id, 0..sim, Agent::Cpu, 1)?, FaultKind::Cpu),
        FaultScenario::Cpu12 => (mm.touch_parallel(id, 0..sim, Agent::Cpu, 12)?, FaultKind::Cpu),
        FaultScenario::GpuMinor => {
            mm.touch_parallel(id, 0..sim, Agent::Cpu, 12)?;
            (mm.touch(id, 0..sim, Agent::Gpu)?, FaultKind::GpuMinor)
        }
        FaultScenario::GpuMajor => (mm.touch(id, 0..sim, Agent::Gpu)?, FaultKind::GpuMajor),
    };
    let mut lat: Vec<f64> = events.iter().filter(|e| e.kind == want).map(|e| e.latency).collect();
    if lat.len() as u64 != sim {
        return Err(Error::InvalidWorkload(format!(
            "{kind} memory does not take one {scenario} fault per page"
        )));
    }
    lat.sort_by(f64::total_cmp);
    let n = lat.len();
    let p95 = lat[((n as f64 * 0.95).ceil() as usize).clamp(1, n) - 1];
    let throughput = fault::throughput(profile, scenario, pages);
    Ok(FaultPoint {
        throughput,
        time: pages as f64 / throughput,
        latency_mean: lat.iter().sum::<f64>() / n as f64,
        latency_p95: p95,
    })
}

/// Usage counters after a STREAM setup of `kind` arrays in a fresh process.
pub fn usage_point(
    profile: &MachineProfile,
    kind: AllocatorKind,
    init: Agent,
    array_bytes: u64,
    seed: u64,
) -> Result<Vec<(UsageCounter, u64)>> {
    check_access(profile, kind, init)?;
    let s = StreamSetup::build(profile, kind, init, profile.cpu.cores, array_bytes, seed)?;
    Ok(UsageCounter::ALL.iter().map(|&c| (c, s.mm.usage_view(c))).collect())
}
