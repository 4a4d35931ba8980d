//! Throughput of a random-index atomic histogram on CPU, GPU, or both.
//!
//! Costs are per update and multiplicative: a base cost scaled by where the
//! array resides, a line-migration overhead once several CPU threads share
//! it, and a contention term driven by the collision probability of
//! concurrently outstanding updates.

use rand::Rng;

use crate::machine::MachineProfile;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dtype {
    Uint64,
    Fp64,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::Uint64 => "UINT64",
            Dtype::Fp64 => "FP64",
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uint64" | "u64" => Ok(Dtype::Uint64),
            "fp64" | "f64" | "double" => Ok(Dtype::Fp64),
            _ => Err(format!("unknown dtype `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AtomicsWorkload {
    pub cpu_threads: u64,
    pub gpu_threads: u64,
    pub array_len: u64,
    pub dtype: Dtype,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AtomicsResult {
    /// updates/s
    pub cpu_rate: f64,
    pub gpu_rate: f64,
    pub collision_probability: f64,
}

/// Wavefront size; GPU thread counts come in whole wavefronts.
pub const GPU_WAVE: u64 = 64;

/// Cap on expected CAS attempts under collision.
pub const MAX_CAS_RETRIES: f64 = 16.0;

/// Chance that one of `concurrent_ops` uniform updates shares its element
/// with at least one other.
pub fn collision_rate(concurrent_ops: u64, array_len: u64) -> f64 {
    if concurrent_ops <= 1 {
        return 0.0;
    }
    if array_len <= 1 {
        return 1.0;
    }
    let miss = (-1.0 / array_len as f64).ln_1p() * (concurrent_ops - 1) as f64;
    -miss.exp_m1()
}

/// Monte Carlo estimate of [`collision_rate`]: every op in every trial counts.
pub fn collision_rate_mc<R: Rng + ?Sized>(concurrent_ops: u64, array_len: u64, trials: u64, rng: &mut R) -> f64 {
    let k = concurrent_ops as usize;
    let mut draws = vec![0u64; k];
    let mut hits = 0u64;
    for _ in 0..trials {
        for d in draws.iter_mut() {
            *d = rng.gen_range(0..array_len);
        }
        draws.sort_unstable();
        for i in 0..k {
            let left = i > 0 && draws[i - 1] == draws[i];
            let right = i + 1 < k && draws[i + 1] == draws[i];
            if left || right {
                hits += 1;
            }
        }
    }
    hits as f64 / (trials * concurrent_ops) as f64
}

fn expected_retries(p: f64) -> f64 {
    if p >= 1.0 {
        MAX_CAS_RETRIES
    } else {
        (1.0 / (1.0 - p)).min(MAX_CAS_RETRIES)
    }
}

fn element_bytes(_: Dtype) -> u64 {
    8
}

/// CPU cost multiplier for the level the array lives in, relative to L1.
fn cpu_residency(profile: &MachineProfile, bytes: u64) -> f64 {
    let c = &profile.cpu;
    let lat = if bytes <= c.l1_capacity {
        c.l1_latency
    } else if bytes <= c.l2_capacity {
        c.l2_latency
    } else if bytes <= c.l3_reach() {
        c.l3_latency
    } else if bytes <= profile.ic_capacity {
        c.ic_latency
    } else {
        c.hbm_latency
    };
    lat / c.l1_latency
}

/// GPU atomics execute in L2; the multiplier is relative to an L2 hit.
fn gpu_residency(profile: &MachineProfile, bytes: u64) -> f64 {
    let g = &profile.gpu;
    let lat = if bytes <= g.l2_capacity {
        g.l2_latency
    } else if bytes <= profile.ic_capacity {
        g.ic_latency
    } else {
        g.hbm_latency
    };
    lat / g.l2_latency
}

fn gpu_concurrency(profile: &MachineProfile, gpu_threads: u64) -> u64 {
    gpu_threads.min(profile.gpu.atomic_width)
}

/// Aggregate updates/s of `threads` CPU threads alone.
fn cpu_isolated(profile: &MachineProfile, threads: u64, n: u64, dtype: Dtype) -> f64 {
    if threads == 0 {
        return 0.0;
    }
    let a = &profile.atomics;
    let residency = cpu_residency(profile, n * element_bytes(dtype));
    let p = collision_rate(threads, n);
    // expected number of peers contending for the same line
    let c = p * (threads - 1) as f64;
    let shared = if threads >= 2 { 1.0 + a.cpu_coherence_overhead } else { 1.0 };
    let cost = match dtype {
        Dtype::Uint64 => residency * shared * (1.0 + a.contention_alpha * c * (1.0 + c)) / a.cpu_native_rate,
        Dtype::Fp64 => {
            residency * shared * (1.0 + a.cas_beta * c * (1.0 + c) * expected_retries(p)) / a.cpu_cas_rate
        }
    };
    threads as f64 / cost
}

/// Aggregate updates/s of `threads` GPU threads alone; identical for both dtypes.
fn gpu_isolated(profile: &MachineProfile, threads: u64, n: u64) -> f64 {
    if threads == 0 {
        return 0.0;
    }
    let a = &profile.atomics;
    let g = gpu_concurrency(profile, threads);
    let residency = gpu_residency(profile, n * 8);
    let cost = residency * (1.0 + a.gpu_contention_alpha * collision_rate(g, n)) / a.gpu_unit_rate;
    g as f64 / cost
}

pub fn throughput(profile: &MachineProfile, w: &AtomicsWorkload) -> Result<AtomicsResult> {
    if w.cpu_threads + w.gpu_threads == 0 {
        return Err(Error::InvalidWorkload("no threads".into()));
    }
    if w.array_len == 0 {
        return Err(Error::InvalidWorkload("empty array".into()));
    }
    if !w.gpu_threads.is_multiple_of(GPU_WAVE) {
        return Err(Error::InvalidWorkload(format!(
            "gpu_threads {} is not a multiple of {GPU_WAVE}",
            w.gpu_threads
        )));
    }
    let a = &profile.atomics;
    let n = w.array_len;
    let mut cpu = cpu_isolated(profile, w.cpu_threads, n, w.dtype);
    let mut gpu = gpu_isolated(profile, w.gpu_threads, n);
    let g = gpu_concurrency(profile, w.gpu_threads);
    if w.cpu_threads > 0 && w.gpu_threads > 0 {
        // a CPU update whose line the GPU also targets must migrate it back
        let q = collision_rate(g + 1, n);
        cpu /= 1.0 + a.hybrid_gamma * q;
        // GPU updates stall on lines held by CPU cores
        let qc = collision_rate(w.cpu_threads + 1, n);
        gpu /= 1.0 + a.gpu_hybrid_gamma * qc * g as f64 / profile.gpu.atomic_width as f64;
    }
    Ok(AtomicsResult {
        cpu_rate: cpu,
        gpu_rate: gpu,
        collision_probability: collision_rate(w.cpu_threads + g, n),
    })
}

/// Thread counts of the co-running sweep.
pub const SWEEP_CPU_THREADS: [u64; 8] = [1, 2, 4, 6, 8, 12, 16, 24];
pub const SWEEP_GPU_THREADS: [u64; 8] = [64, 256, 1280, 2304, 3328, 6400, 10496, 16384];
pub const ARRAY_LENS: [u64; 4] = [1, 1 << 10, 1 << 20, 1 << 30];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::builtin_mi300a;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn w(cpu: u64, gpu: u64, n: u64, dtype: Dtype) -> AtomicsWorkload {
        AtomicsWorkload {
            cpu_threads: cpu,
            gpu_threads: gpu,
            array_len: n,
            dtype,
        }
    }

    #[test]
    fn collision_edges() {
        assert_eq!(collision_rate(1, 7), 0.0);
        assert_eq!(collision_rate(5, 1), 1.0);
        assert!((collision_rate(2, 4) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn monte_carlo_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mc = collision_rate_mc(3, 4, 200_000, &mut rng);
        let exact = collision_rate(3, 4);
        assert!((mc / exact - 1.0).abs() < 0.01, "{mc} vs {exact}");
    }

    #[test]
    fn invalid() {
        let p = builtin_mi300a();
        assert!(throughput(&p, &w(0, 0, 4, Dtype::Uint64)).is_err());
        assert!(throughput(&p, &w(1, 65, 4, Dtype::Uint64)).is_err());
        assert!(throughput(&p, &w(1, 0, 0, Dtype::Uint64)).is_err());
    }

    #[test]
    fn gpu_dtype_equality() {
        let p = builtin_mi300a();
        for n in ARRAY_LENS {
            for g in SWEEP_GPU_THREADS {
                let a = throughput(&p, &w(0, g, n, Dtype::Uint64)).unwrap().gpu_rate;
                let b = throughput(&p, &w(0, g, n, Dtype::Fp64)).unwrap().gpu_rate;
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn one_million_overtakes_single_thread_at_six() {
        let p = builtin_mi300a();
        let r = |t| throughput(&p, &w(t, 0, 1 << 20, Dtype::Uint64)).unwrap().cpu_rate;
        assert!(r(2) < r(1) && r(3) < r(1) && r(5) < r(1));
        assert!(r(6) > r(1));
    }
}
