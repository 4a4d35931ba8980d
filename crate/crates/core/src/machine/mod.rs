//! Machine description for a unified-physical-memory APU.
//!
//! A [`MachineProfile`] carries every capacity, latency, bandwidth and fitted
//! model coefficient the simulator uses. [`builtin_mi300a`] returns the
//! calibrated profile; [`load_profile`] layers a text profile on top of it.

mod file;

use std::fmt;

pub use file::{load_profile, parse_bytes, serialize, ProfileError};

pub const KIB: u64 = 1 << 10;
pub const MIB: u64 = 1 << 20;
pub const GIB: u64 = 1 << 30;

/// GPU side of the APU.
#[derive(Clone, Debug, PartialEq)]
pub struct GpuParams {
    pub l1_capacity: u64,
    pub l2_capacity: u64,
    /// ns
    pub l1_latency: f64,
    pub l2_latency: f64,
    pub ic_latency: f64,
    pub hbm_latency: f64,
    pub cus: u64,
    /// Fully associative L1 TLB entries.
    pub tlb_entries: u64,
    /// Largest fragment the driver writes into a PTE.
    pub fragment_limit: u64,
    /// Number of concurrently serviced atomics, for collision purposes.
    pub atomic_width: u64,
}

/// CPU side of the APU.
#[derive(Clone, Debug, PartialEq)]
pub struct CpuParams {
    pub l1_capacity: u64,
    pub l2_capacity: u64,
    /// Total L3 over all core complexes.
    pub l3_capacity: u64,
    /// ns
    pub l1_latency: f64,
    pub l2_latency: f64,
    pub l3_latency: f64,
    pub ic_latency: f64,
    pub hbm_latency: f64,
    pub cores: u64,
    /// Core complexes; each owns `l3_capacity / complexes` of L3.
    pub complexes: u64,
    /// Memory stacks a complex draws scattered first-touch frames from.
    pub stacks_per_complex: u64,
    /// Faults every process takes before touching benchmark data.
    pub baseline_faults: u64,
}

impl CpuParams {
    pub fn cores_per_complex(&self) -> u64 {
        (self.cores / self.complexes).max(1)
    }

    /// L3 reachable from a single core.
    pub fn l3_reach(&self) -> u64 {
        self.l3_capacity / self.complexes
    }
}

/// Page-fault scenario, as measured by the fault microbenchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaultScenario {
    Cpu1,
    Cpu12,
    GpuMinor,
    GpuMajor,
}

impl FaultScenario {
    pub const ALL: [FaultScenario; 4] = [
        FaultScenario::Cpu1,
        FaultScenario::Cpu12,
        FaultScenario::GpuMinor,
        FaultScenario::GpuMajor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FaultScenario::Cpu1 => "cpu1",
            FaultScenario::Cpu12 => "cpu12",
            FaultScenario::GpuMinor => "gpu_minor",
            FaultScenario::GpuMajor => "gpu_major",
        }
    }

    /// Saturation page count quoted for each scenario.
    pub fn saturation_pages(self) -> u64 {
        match self {
            FaultScenario::Cpu1 => 1_000,
            FaultScenario::Cpu12 | FaultScenario::GpuMajor => 10_000,
            FaultScenario::GpuMinor => 10_000_000,
        }
    }
}

impl fmt::Display for FaultScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FaultScenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace(['-', '_'], "");
        Ok(match norm.as_str() {
            "cpu1" | "1cpu" => FaultScenario::Cpu1,
            "cpu12" | "12cpu" => FaultScenario::Cpu12,
            "gpuminor" => FaultScenario::GpuMinor,
            "gpumajor" => FaultScenario::GpuMajor,
            _ => return Err(format!("unknown fault scenario `{s}`")),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaultScenarioParams {
    /// µs
    pub mean_latency: f64,
    /// µs
    pub p95_latency: f64,
    /// pages/s
    pub plateau: f64,
    /// pages
    pub half_saturation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaultParams {
    pub cpu1: FaultScenarioParams,
    pub cpu12: FaultScenarioParams,
    pub gpu_minor: FaultScenarioParams,
    pub gpu_major: FaultScenarioParams,
    /// Fixed service time as a fraction of the mean latency.
    pub latency_shift: f64,
}

impl FaultParams {
    pub fn scenario(&self, s: FaultScenario) -> &FaultScenarioParams {
        match s {
            FaultScenario::Cpu1 => &self.cpu1,
            FaultScenario::Cpu12 => &self.cpu12,
            FaultScenario::GpuMinor => &self.gpu_minor,
            FaultScenario::GpuMajor => &self.gpu_major,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandwidthModel {
    /// Slowdown per TLB miss per page touched.
    pub walk_penalty: f64,
    /// Fraction of HBM peak a perfectly balanced, miss-free GPU stream reaches.
    pub gpu_peak_fraction: f64,
    pub cpu_bw_upfront: f64,
    pub cpu_bw_ondemand: f64,
    pub cpu_per_thread_bw: f64,
    pub static_managed_bw: f64,
    pub memcpy_sdma_bw: f64,
    pub memcpy_nosdma_bw: f64,
    pub memcpy_d2d_bw: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AtomicsParams {
    /// Uncontended per-thread updates/s with data in L1.
    pub cpu_native_rate: f64,
    pub cpu_cas_rate: f64,
    /// Uncontended per-thread updates/s with data in GPU L2.
    pub gpu_unit_rate: f64,
    pub contention_alpha: f64,
    pub gpu_contention_alpha: f64,
    pub cas_beta: f64,
    /// Extra cost of a CPU update whose line was last owned by the GPU.
    pub hybrid_gamma: f64,
    /// Extra cost of a GPU update whose line is owned by a CPU core.
    pub gpu_hybrid_gamma: f64,
    /// Line migration overhead between private caches once two or more
    /// CPU threads share an array.
    pub cpu_coherence_overhead: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MachineProfile {
    pub hbm_capacity: u64,
    pub hbm_peak_bw: f64,
    pub ic_capacity: u64,
    pub ic_peak_bw: f64,
    pub stacks: u64,
    pub channels_per_stack: u64,
    pub interleave_granularity: u64,
    pub page_size: u64,
    pub fragment_field_bits: u64,
    pub gpu: GpuParams,
    pub cpu: CpuParams,
    pub xnack: bool,
    pub fault: FaultParams,
    pub bw_model: BandwidthModel,
    pub atomics: AtomicsParams,
    /// CPU-side mapping chunk of HIP up-front memory first touched by the CPU.
    pub hip_cpu_map_granularity: u64,
    /// Same, for memory the GPU initialized.
    pub hip_cpu_map_granularity_gpu_init: u64,
    /// Scatter degree of CPU first-touch frame placement.
    pub scatter_degree: f64,
    /// TRIAD passes behind the absolute TLB miss count.
    pub triad_iterations: u64,
}

impl MachineProfile {
    pub fn channels(&self) -> u64 {
        self.stacks * self.channels_per_stack
    }

    pub fn total_frames(&self) -> u64 {
        self.hbm_capacity / self.page_size
    }

    pub fn max_fragment(&self) -> u8 {
        ((1u64 << self.fragment_field_bits.min(8)) - 1) as u8
    }

    pub fn pages_for(&self, bytes: u64) -> u64 {
        bytes.div_ceil(self.page_size)
    }
}

fn fault_scenario(mean: f64, p95: f64, plateau: f64) -> FaultScenarioParams {
    // T(1) = 1 / mean when half_saturation = plateau * mean - 1.
    let half = plateau * mean * 1e-6 - 1.0;
    FaultScenarioParams {
        mean_latency: mean,
        p95_latency: p95,
        plateau,
        half_saturation: (half * 100.0).round() / 100.0,
    }
}

/// The calibrated MI300A profile.
pub fn builtin_mi300a() -> MachineProfile {
    MachineProfile {
        hbm_capacity: 128 * GIB,
        hbm_peak_bw: 5.3e12,
        ic_capacity: 256 * MIB,
        ic_peak_bw: 17.2e12,
        stacks: 8,
        channels_per_stack: 16,
        interleave_granularity: 4 * KIB,
        page_size: 4 * KIB,
        fragment_field_bits: 5,
        gpu: GpuParams {
            l1_capacity: 16 * KIB,
            l2_capacity: 4 * MIB,
            l1_latency: 57.0,
            l2_latency: 104.0,
            ic_latency: 212.0,
            hbm_latency: 348.0,
            cus: 228,
            tlb_entries: 32,
            fragment_limit: 3,
            atomic_width: 2048,
        },
        cpu: CpuParams {
            l1_capacity: 32 * KIB,
            l2_capacity: MIB,
            l3_capacity: 96 * MIB,
            l1_latency: 1.0,
            l2_latency: 4.0,
            l3_latency: 55.0,
            ic_latency: 190.0,
            hbm_latency: 243.0,
            cores: 24,
            complexes: 3,
            stacks_per_complex: 2,
            baseline_faults: 800,
        },
        xnack: true,
        fault: FaultParams {
            cpu1: fault_scenario(9.0, 11.0, 872e3),
            cpu12: fault_scenario(9.0, 11.0, 3.7e6),
            gpu_minor: fault_scenario(16.0, 20.0, 9.0e6),
            gpu_major: fault_scenario(18.0, 22.0, 1.1e6),
            latency_shift: 0.5,
        },
        bw_model: BandwidthModel {
            walk_penalty: 0.685,
            gpu_peak_fraction: 0.735,
            cpu_bw_upfront: 208e9,
            cpu_bw_ondemand: 181e9,
            cpu_per_thread_bw: 8.7e9,
            static_managed_bw: 103e9,
            memcpy_sdma_bw: 58e9,
            memcpy_nosdma_bw: 850e9,
            memcpy_d2d_bw: 1900e9,
        },
        atomics: AtomicsParams {
            cpu_native_rate: 150e6,
            cpu_cas_rate: 50e6,
            gpu_unit_rate: 2e6,
            contention_alpha: 1.0,
            gpu_contention_alpha: 64.0,
            cas_beta: 2.0,
            hybrid_gamma: 5.0,
            gpu_hybrid_gamma: 10.8,
            cpu_coherence_overhead: 4.5,
        },
        hip_cpu_map_granularity: 512 * KIB,
        hip_cpu_map_granularity_gpu_init: 256 * KIB,
        scatter_degree: 0.62,
        triad_iterations: 6,
    }
}

/// One broken invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: &'static str,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

pub const RULE_POSITIVE: &str = "positive counts";
pub const RULE_LATENCY: &str = "latency ordering";
pub const RULE_CAPACITY: &str = "capacity ordering";
pub const RULE_GEOMETRY: &str = "interleave geometry";
pub const RULE_FRAGMENT: &str = "fragment field width";
pub const RULE_FRACTION: &str = "fraction range";

/// Checks every profile invariant; an empty list means the profile is valid.
// negated comparisons also reject NaN
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn validate(p: &MachineProfile) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field: &str, rule: &'static str| {
        out.push(Violation {
            field: field.to_string(),
            rule,
        })
    };

    let counts: [(&str, u64); 21] = [
        ("hbm_capacity", p.hbm_capacity),
        ("ic_capacity", p.ic_capacity),
        ("stacks", p.stacks),
        ("channels_per_stack", p.channels_per_stack),
        ("interleave_granularity", p.interleave_granularity),
        ("page_size", p.page_size),
        ("fragment_field_bits", p.fragment_field_bits),
        ("gpu.l1_capacity", p.gpu.l1_capacity),
        ("gpu.l2_capacity", p.gpu.l2_capacity),
        ("gpu.cus", p.gpu.cus),
        ("gpu.tlb_entries", p.gpu.tlb_entries),
        ("gpu.atomic_width", p.gpu.atomic_width),
        ("cpu.l1_capacity", p.cpu.l1_capacity),
        ("cpu.l2_capacity", p.cpu.l2_capacity),
        ("cpu.l3_capacity", p.cpu.l3_capacity),
        ("cpu.cores", p.cpu.cores),
        ("cpu.complexes", p.cpu.complexes),
        ("cpu.stacks_per_complex", p.cpu.stacks_per_complex),
        ("hip_cpu_map_granularity", p.hip_cpu_map_granularity),
        ("hip_cpu_map_granularity_gpu_init", p.hip_cpu_map_granularity_gpu_init),
        ("triad_iterations", p.triad_iterations),
    ];
    for (name, v) in counts {
        if v == 0 {
            push(name, RULE_POSITIVE);
        }
    }

    let rates: [(&str, f64); 28] = [
        ("hbm_peak_bw", p.hbm_peak_bw),
        ("ic_peak_bw", p.ic_peak_bw),
        ("gpu.l1_latency", p.gpu.l1_latency),
        ("cpu.l1_latency", p.cpu.l1_latency),
        ("fault.cpu1.mean_latency", p.fault.cpu1.mean_latency),
        ("fault.cpu12.mean_latency", p.fault.cpu12.mean_latency),
        ("fault.gpu_minor.mean_latency", p.fault.gpu_minor.mean_latency),
        ("fault.gpu_major.mean_latency", p.fault.gpu_major.mean_latency),
        ("fault.cpu1.plateau", p.fault.cpu1.plateau),
        ("fault.cpu12.plateau", p.fault.cpu12.plateau),
        ("fault.gpu_minor.plateau", p.fault.gpu_minor.plateau),
        ("fault.gpu_major.plateau", p.fault.gpu_major.plateau),
        ("fault.cpu1.half_saturation", p.fault.cpu1.half_saturation),
        ("fault.cpu12.half_saturation", p.fault.cpu12.half_saturation),
        ("fault.gpu_minor.half_saturation", p.fault.gpu_minor.half_saturation),
        ("fault.gpu_major.half_saturation", p.fault.gpu_major.half_saturation),
        ("bw_model.gpu_peak_fraction", p.bw_model.gpu_peak_fraction),
        ("bw_model.cpu_bw_upfront", p.bw_model.cpu_bw_upfront),
        ("bw_model.cpu_bw_ondemand", p.bw_model.cpu_bw_ondemand),
        ("bw_model.cpu_per_thread_bw", p.bw_model.cpu_per_thread_bw),
        ("bw_model.static_managed_bw", p.bw_model.static_managed_bw),
        ("bw_model.memcpy_sdma_bw", p.bw_model.memcpy_sdma_bw),
        ("bw_model.memcpy_nosdma_bw", p.bw_model.memcpy_nosdma_bw),
        ("bw_model.memcpy_d2d_bw", p.bw_model.memcpy_d2d_bw),
        ("atomics.cpu_native_rate", p.atomics.cpu_native_rate),
        ("atomics.cpu_cas_rate", p.atomics.cpu_cas_rate),
        ("atomics.gpu_unit_rate", p.atomics.gpu_unit_rate),
        ("atomics.contention_alpha", p.atomics.contention_alpha),
    ];
    for (name, v) in rates {
        if !(v > 0.0 && v.is_finite()) {
            push(name, RULE_POSITIVE);
        }
    }
    let non_negative: [(&str, f64); 7] = [
        ("bw_model.walk_penalty", p.bw_model.walk_penalty),
        ("atomics.gpu_contention_alpha", p.atomics.gpu_contention_alpha),
        ("atomics.cas_beta", p.atomics.cas_beta),
        ("atomics.hybrid_gamma", p.atomics.hybrid_gamma),
        ("atomics.gpu_hybrid_gamma", p.atomics.gpu_hybrid_gamma),
        ("atomics.cpu_coherence_overhead", p.atomics.cpu_coherence_overhead),
        ("fault.latency_shift", p.fault.latency_shift),
    ];
    for (name, v) in non_negative {
        if !(v >= 0.0 && v.is_finite()) {
            push(name, RULE_POSITIVE);
        }
    }

    let g = &p.gpu;
    if !(g.l1_latency < g.l2_latency && g.l2_latency < g.ic_latency && g.ic_latency < g.hbm_latency) {
        push("gpu.*_latency", RULE_LATENCY);
    }
    let c = &p.cpu;
    if !(c.l1_latency < c.l2_latency
        && c.l2_latency < c.l3_latency
        && c.l3_latency < c.ic_latency
        && c.ic_latency < c.hbm_latency)
    {
        push("cpu.*_latency", RULE_LATENCY);
    }
    if !(g.l1_capacity < g.l2_capacity && g.l2_capacity < p.ic_capacity) {
        push("gpu.*_capacity", RULE_CAPACITY);
    }
    if !(c.l1_capacity < c.l2_capacity && c.l2_capacity < c.l3_reach().max(1) && c.l3_capacity < p.ic_capacity)
    {
        push("cpu.*_capacity", RULE_CAPACITY);
    }
    if p.ic_capacity >= p.hbm_capacity {
        push("ic_capacity", RULE_CAPACITY);
    }

    if p.interleave_granularity != p.page_size {
        push("interleave_granularity", RULE_GEOMETRY);
    }
    if p.page_size > 0 && !p.hbm_capacity.is_multiple_of(p.page_size) {
        push("hbm_capacity", RULE_GEOMETRY);
    }
    if p.stacks > 0 && c.stacks_per_complex > p.stacks {
        push("cpu.stacks_per_complex", RULE_GEOMETRY);
    }
    if p.page_size > 0
        && (!p.hip_cpu_map_granularity.is_multiple_of(p.page_size)
            || !p.hip_cpu_map_granularity_gpu_init.is_multiple_of(p.page_size))
    {
        push("hip_cpu_map_granularity", RULE_GEOMETRY);
    }

    if p.fragment_field_bits > 8 || g.fragment_limit > u64::from(p.max_fragment()) {
        push("gpu.fragment_limit", RULE_FRAGMENT);
    }

    if !(0.0..=1.0).contains(&p.scatter_degree) {
        push("scatter_degree", RULE_FRACTION);
    }
    if !(p.bw_model.gpu_peak_fraction <= 1.0) {
        push("bw_model.gpu_peak_fraction", RULE_FRACTION);
    }
    if !(p.fault.latency_shift < 1.0) {
        push("fault.latency_shift", RULE_FRACTION);
    }
    for s in FaultScenario::ALL {
        let f = p.fault.scenario(s);
        if !(f.p95_latency > f.mean_latency) {
            push("fault.*.p95_latency", RULE_LATENCY);
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_anchor_values() {
        let p = builtin_mi300a();
        assert_eq!(p.hbm_capacity, 137_438_953_472);
        assert_eq!(p.fault.cpu1.plateau, 872e3);
        assert_eq!(p.channels(), 128);
        assert_eq!(p.interleave_granularity, p.page_size);
        assert_eq!(p.max_fragment(), 31);
        assert_eq!(p.gpu.l1_latency, 57.0);
        assert_eq!(p.hbm_peak_bw, 5.3e12);
        assert_eq!(p.ic_peak_bw, 17.2e12);
        assert_eq!(p.cpu.l3_capacity, 96 * MIB);
    }

    #[test]
    fn builtin_is_valid_and_stable() {
        assert!(validate(&builtin_mi300a()).is_empty());
        assert_eq!(builtin_mi300a(), builtin_mi300a());
    }

    #[test]
    fn latency_ordering_violation() {
        let mut p = builtin_mi300a();
        p.cpu.l1_latency = 500.0;
        let v = validate(&p);
        assert!(v.iter().any(|v| v.rule == RULE_LATENCY && v.field.starts_with("cpu")));
    }

    #[test]
    fn zero_channels_violation() {
        let mut p = builtin_mi300a();
        p.channels_per_stack = 0;
        let v = validate(&p);
        assert!(v.iter().any(|v| v.rule == RULE_POSITIVE && v.field == "channels_per_stack"));
    }

    #[test]
    fn half_saturation_gives_unit_throughput_of_inverse_latency() {
        let p = builtin_mi300a();
        for s in FaultScenario::ALL {
            let f = p.fault.scenario(s);
            let t1 = f.plateau / (1.0 + f.half_saturation);
            let inv = 1e6 / f.mean_latency;
            assert!((t1 / inv - 1.0).abs() < 0.01, "{s}: {t1} vs {inv}");
            // >= 90% of plateau at the quoted saturation count
            let n = s.saturation_pages() as f64;
            assert!(n / (n + f.half_saturation) >= 0.9);
        }
    }
}
