//! Page-fault latency distributions, saturating throughput and the CPU
//! prefault pipeline.

use rand::Rng;
use rand_distr::{Distribution, LogNormal};

use crate::machine::{FaultScenario, MachineProfile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaultKind {
    Cpu,
    GpuMinor,
    GpuMajor,
}

impl FaultKind {
    pub const ALL: [FaultKind; 3] = [FaultKind::Cpu, FaultKind::GpuMinor, FaultKind::GpuMajor];

    pub fn name(self) -> &'static str {
        match self {
            FaultKind::Cpu => "cpu",
            FaultKind::GpuMinor => "gpu_minor",
            FaultKind::GpuMajor => "gpu_major",
        }
    }

    /// Scenario whose latency parameters describe a single fault of this kind.
    pub fn scenario(self) -> FaultScenario {
        match self {
            FaultKind::Cpu => FaultScenario::Cpu1,
            FaultKind::GpuMinor => FaultScenario::GpuMinor,
            FaultKind::GpuMajor => FaultScenario::GpuMajor,
        }
    }
}

impl std::fmt::Display for FaultKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaultEvent {
    pub kind: FaultKind,
    /// Virtual page number.
    pub page: u64,
    /// µs
    pub latency: f64,
}

/// 95th percentile of the standard normal.
const Z95: f64 = 1.644_853_626_951_472_2;

/// `shift + LogNormal(mu, sigma)`, in µs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShiftedLogNormal {
    pub shift: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl ShiftedLogNormal {
    /// Solves `mu, sigma` so the distribution has the given mean and p95.
    pub fn fit(mean: f64, p95: f64, shift: f64) -> Self {
        let m = mean - shift;
        let q = p95 - shift;
        let gap = (q / m).ln().max(0.0);
        let disc = (Z95 * Z95 - 2.0 * gap).max(0.0);
        let sigma = Z95 - disc.sqrt();
        ShiftedLogNormal {
            shift,
            mu: m.ln() - sigma * sigma / 2.0,
            sigma,
        }
    }

    pub fn mean(&self) -> f64 {
        self.shift + (self.mu + self.sigma * self.sigma / 2.0).exp()
    }

    pub fn quantile(&self, z: f64) -> f64 {
        self.shift + (self.mu + z * self.sigma).exp()
    }

    pub fn p95(&self) -> f64 {
        self.quantile(Z95)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sigma == 0.0 {
            return self.shift + self.mu.exp();
        }
        let d = LogNormal::new(self.mu, self.sigma).expect("finite lognormal parameters");
        self.shift + d.sample(rng)
    }
}

pub fn latency_dist(profile: &MachineProfile, kind: FaultKind) -> ShiftedLogNormal {
    let s = profile.fault.scenario(kind.scenario());
    ShiftedLogNormal::fit(s.mean_latency, s.p95_latency, profile.fault.latency_shift * s.mean_latency)
}

/// One fault latency in µs.
pub fn latency_sample<R: Rng + ?Sized>(profile: &MachineProfile, kind: FaultKind, rng: &mut R) -> f64 {
    latency_dist(profile, kind).sample(rng)
}

/// Pages/s when `n_pages` faults are outstanding.
pub fn throughput(profile: &MachineProfile, scenario: FaultScenario, n_pages: u64) -> f64 {
    let s = profile.fault.scenario(scenario);
    let n = n_pages.max(1) as f64;
    s.plateau * n / (n + s.half_saturation)
}

/// Pages handed from the CPU prefault stage to the GPU in one step.
pub const PIPELINE_CHUNK: u64 = 512;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrefaultResult {
    /// s
    pub total_time: f64,
    /// s, the same pages faulted directly by the GPU
    pub gpu_major_time: f64,
    pub speedup_vs_gpu_major: f64,
}

/// 12-core CPU prefault followed by GPU minor faults, against direct GPU
/// major faults. With `overlap`, the two stages form a pipeline and the
/// slower stage dominates once the first chunk has passed.
pub fn prefault_pipeline(profile: &MachineProfile, n_pages: u64, overlap: bool) -> PrefaultResult {
    let n = n_pages.max(1);
    let nf = n as f64;
    let cpu = nf / throughput(profile, FaultScenario::Cpu12, n);
    let minor = nf / throughput(profile, FaultScenario::GpuMinor, n);
    let total_time = if overlap {
        let fill = cpu.min(minor) * (PIPELINE_CHUNK.min(n) as f64 / nf);
        cpu.max(minor) + fill
    } else {
        cpu + minor
    };
    let gpu_major_time = nf / throughput(profile, FaultScenario::GpuMajor, n);
    PrefaultResult {
        total_time,
        gpu_major_time,
        speedup_vs_gpu_major: gpu_major_time / total_time,
    }
}
