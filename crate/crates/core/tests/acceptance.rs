//! One PASS/FAIL line per acceptance criterion. Each criterion combines the
//! hard anchors of `verify` with checks computed here from first principles.

use std::collections::HashMap;
use std::process::ExitCode;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use upm_sim::atomics;
use upm_sim::fault::{self, FaultKind};
use upm_sim::harness::{self, Benchmark, Format, Status, VerifyReport, WorkloadSpec};
use upm_sim::machine::{builtin_mi300a, FaultScenario, MachineProfile, GIB, KIB, MIB};
use upm_sim::memmgr::{alloc_time_model, classify, AllocatorKind, MemoryManager, Physical, UsageCounter};
use upm_sim::pagetable::{DualTable, Flags, TableId};
use upm_sim::perf::{self, StreamSetup};
use upm_sim::tlb::TlbState;
use upm_sim::{Agent, Error};

type Check = Result<(), String>;
type Criterion = fn(&MachineProfile) -> Check;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(got: f64, want: f64, rel: f64, what: &str) -> Check {
    ensure((got / want - 1.0).abs() <= rel, || format!("{what}: {got} vs {want}"))
}

fn anchors(report: &VerifyReport, criterion: u8) -> Check {
    let failed: Vec<String> = report
        .outcomes
        .iter()
        .filter(|o| o.criterion == criterion && o.status == Status::Fail)
        .map(|o| match &o.measured {
            Ok(x) => format!("{}={x:.4}", o.id),
            Err(e) => format!("{}: {e}", o.id),
        })
        .collect();
    ensure(failed.is_empty(), || failed.join(", "))
}

// 1 ---------------------------------------------------------------------

/// Steady-state random chase: a uniformly chosen line sits in the smallest
/// level whose (monotone) capacity covers its offset.
fn level_of(offset: f64, caps: &[(f64, f64)]) -> f64 {
    caps.iter().find(|(cap, _)| offset < *cap).map_or(caps[caps.len() - 1].1, |l| l.1)
}

fn gpu_levels(p: &MachineProfile) -> Vec<(f64, f64)> {
    let g = &p.gpu;
    vec![
        (g.l1_capacity as f64, g.l1_latency),
        (g.l2_capacity as f64, g.l2_latency),
        (p.ic_capacity as f64, g.ic_latency),
        (f64::INFINITY, g.hbm_latency),
    ]
}

fn criterion_1(p: &MachineProfile) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let levels = gpu_levels(p);
    for ws in [KIB, MIB, 128 * MIB, 4 * GIB] {
        let n = 100_000;
        let mc: f64 = (0..n).map(|_| level_of(rng.gen_range(0.0..ws as f64), &levels)).sum::<f64>() / n as f64;
        let (sim, _) = harness::chase_point(p, Agent::Gpu, AllocatorKind::DeviceUpFront, ws, 1).map_err(|e| e.to_string())?;
        close(sim.latency, mc, 0.01, &format!("GPU chase {ws} B vs sampled"))?;
    }
    Ok(())
}

// 2 ---------------------------------------------------------------------

fn criterion_2(p: &MachineProfile) -> Check {
    let err = |e: Error| e.to_string();
    for kind in [AllocatorKind::DeviceUpFront, AllocatorKind::PinnedHost, AllocatorKind::LibcOnDemand] {
        let mut s = StreamSetup::build(p, kind, Agent::Cpu, p.cpu.cores, perf::STREAM_ARRAY_BYTES, 1).map_err(err)?;
        s.gpu_warm().map_err(err)?;
        // channel balance counted directly from the frames
        let mut lanes: HashMap<u64, u64> = HashMap::new();
        for (id, range) in &s.arrays {
            let d = s.mm.descriptor(*id).map_err(err)?;
            for pg in range.clone() {
                *lanes.entry(d.frame(pg).unwrap() % p.channels()).or_default() += 1;
            }
        }
        let total: u64 = lanes.values().sum();
        let max = *lanes.values().max().unwrap();
        let balance = total as f64 / p.channels() as f64 / max as f64;
        let m = s.triad_misses(1).map_err(err)? as f64 / total as f64;
        let b = &p.bw_model;
        let want = p.hbm_peak_bw * b.gpu_peak_fraction * balance / (1.0 + m * b.walk_penalty);
        close(s.gpu_bandwidth().map_err(err)?, want, 1e-9, &format!("{} bandwidth", kind.name()))?;
    }
    Ok(())
}

// 3 ---------------------------------------------------------------------

fn criterion_3(p: &MachineProfile) -> Check {
    let spec = WorkloadSpec::new(Benchmark::MemcpyBench, p.clone(), 0)
        .with_grid(&["src=libc", "dst=device", "sdma=on,off"])
        .map_err(|e| e.to_string())?;
    let rows = harness::run(&spec).map_err(|e| e.to_string())?;
    let csv = harness::report(&rows, Format::Csv);
    ensure(csv.contains(",58.0000,GB/s") && csv.contains(",850.0000,GB/s"), || csv)
}

// 4 ---------------------------------------------------------------------

fn criterion_4(p: &MachineProfile) -> Check {
    // contiguous arrays stream through entries covering 2^limit pages each
    let mut s = StreamSetup::build(p, AllocatorKind::DeviceUpFront, Agent::Cpu, p.cpu.cores, perf::STREAM_ARRAY_BYTES, 1)
        .map_err(|e| e.to_string())?;
    s.gpu_warm().map_err(|e| e.to_string())?;
    let want = (p.triad_iterations * 3 * s.pages_per_array()) >> p.gpu.fragment_limit;
    let got = s.triad_misses(p.triad_iterations).map_err(|e| e.to_string())?;
    ensure(got == want, || format!("contiguous misses {got} vs {want}"))
}

// 5 ---------------------------------------------------------------------

fn criterion_5(p: &MachineProfile) -> Check {
    for sc in FaultScenario::ALL {
        let mut prev = 0.0;
        for e in 0..=7 {
            let t = fault::throughput(p, sc, 10u64.pow(e));
            ensure(t >= prev, || format!("{} throughput falls at 10^{e}", sc.name()))?;
            prev = t;
        }
        let plateau = p.fault.scenario(sc).plateau;
        close(prev, plateau, 0.1, &format!("{} at 10^7 pages", sc.name()))?;
    }
    Ok(())
}

// 6 ---------------------------------------------------------------------

fn criterion_6(p: &MachineProfile) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (kind, mean, p95) in [(FaultKind::Cpu, 9.0, 11.0), (FaultKind::GpuMinor, 16.0, 20.0), (FaultKind::GpuMajor, 18.0, 22.0)] {
        let mut v: Vec<f64> = (0..100_000).map(|_| fault::latency_sample(p, kind, &mut rng)).collect();
        v.sort_by(f64::total_cmp);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        close(m, mean, 0.02, &format!("{} mean", kind.name()))?;
        close(v[94_999], p95, 0.05, &format!("{} p95", kind.name()))?;
        ensure(v[0] >= p.fault.latency_shift * mean, || format!("{} sample below its floor", kind.name()))?;
    }
    Ok(())
}

// 7 ---------------------------------------------------------------------

fn criterion_7(p: &MachineProfile) -> Check {
    let spec = WorkloadSpec::new(Benchmark::AllocBench, p.clone(), 0)
        .with_grid(&["kind=libc,device", "size=32,1GiB"])
        .map_err(|e| e.to_string())?;
    let rows = harness::run(&spec).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for r in &rows {
        if r.metric != "alloc_loop_time" {
            continue;
        }
        let kind: AllocatorKind = r.point[0].1.parse().map_err(|e: String| e)?;
        let size: u64 = r.point[1].1.parse().map_err(|_| "size".to_string())?;
        let want = 100.0 * alloc_time_model(kind, size, p.xnack).unwrap() * 1e3;
        let harness::Value::Num(got) = r.value else {
            return Err(format!("error row at {:?}", r.point));
        };
        close(got, want, 1e-6, "alloc loop of 100 chunks")?;
        checked += 1;
    }
    ensure(checked == 4, || format!("{checked} loop rows"))
}

// 8 ---------------------------------------------------------------------

fn criterion_8(p: &MachineProfile) -> Check {
    let ws = 3 * 610 * MIB;
    let on_demand = ws / p.page_size + p.cpu.baseline_faults;
    let up_front = ws / p.hip_cpu_map_granularity + p.cpu.baseline_faults;
    let got = |kind, init| -> Result<u64, String> {
        harness::stream_point(p, Agent::Cpu, kind, init, p.cpu.cores, 610 * MIB, 1)
            .map(|s| s.cpu_faults)
            .map_err(|e| e.to_string())
    };
    let a = got(AllocatorKind::LibcOnDemand, Agent::Cpu)?;
    let b = got(AllocatorKind::DeviceUpFront, Agent::Cpu)?;
    ensure(a == on_demand && b == up_front, || format!("faults {a}/{b} vs {on_demand}/{up_front}"))
}

// 9 ---------------------------------------------------------------------

fn criterion_9(_: &MachineProfile) -> Check {
    let (k, n, trials) = (24u64, 1024u64, 1_000_000u64);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut hits = 0u64;
    let mut counts: HashMap<u64, u32> = HashMap::with_capacity(k as usize);
    let mut draws = Vec::with_capacity(k as usize);
    for _ in 0..trials {
        counts.clear();
        draws.clear();
        for _ in 0..k {
            let i = rng.gen_range(0..n);
            draws.push(i);
            *counts.entry(i).or_default() += 1;
        }
        hits += draws.iter().filter(|i| counts[i] > 1).count() as u64;
    }
    let mc = hits as f64 / (k * trials) as f64;
    let exact = 1.0 - (1.0 - 1.0 / n as f64).powi(k as i32 - 1);
    close(mc, exact, 0.01, "Monte Carlo collision rate")?;
    close(atomics::collision_rate(k, n), exact, 1e-12, "closed form")
}

// 10 --------------------------------------------------------------------

fn brute_fragment(map: &HashMap<u64, (u64, Flags)>, va: u64, limit: u8) -> Option<u8> {
    map.get(&va)?;
    let mut best = 0;
    for o in 1..=limit {
        let base = va & !((1u64 << o) - 1);
        let Some(&(f0, fl0)) = map.get(&base) else { break };
        let contiguous = f0 % (1 << o) == 0
            && (0..1u64 << o).all(|i| map.get(&(base + i)).is_some_and(|&(f, fl)| f == f0 + i && fl == fl0));
        if !contiguous {
            break;
        }
        best = o;
    }
    Some(best)
}

fn fragments(rng: &mut ChaCha8Rng) -> Check {
    for trial in 0..1000 {
        let limit = rng.gen_range(0..=6u8);
        let mut t = DualTable::with_fragment_limit(limit);
        let mut map = HashMap::new();
        let base = rng.gen_range(0..4u64) * 128;
        for va in base..base + 128 {
            if rng.gen_bool(0.9) {
                let frame = if rng.gen_bool(0.85) { va + 1024 } else { rng.gen_range(0..4096) };
                let flags = if rng.gen_bool(0.97) { Flags::RW } else { Flags::READ };
                t.map(TableId::System, va, frame, flags).map_err(|e| e.to_string())?;
                map.insert(va, (frame, flags));
            }
        }
        for va in base..base + 128 {
            let got = t.compute_fragment(TableId::System, va).ok();
            let want = brute_fragment(&map, va, limit);
            ensure(got == want, || format!("trial {trial} page {va}: {got:?} vs {want:?}"))?;
        }
    }
    Ok(())
}

fn conservation(rng: &mut ChaCha8Rng) -> Check {
    let mut p = builtin_mi300a();
    p.hbm_capacity = 16 * MIB;
    let total = p.total_frames();
    for seq in 0..10_000u64 {
        let mut mm = MemoryManager::new(&p, seq);
        let mut live = Vec::new();
        for _ in 0..rng.gen_range(1..12) {
            match rng.gen_range(0..3) {
                0 => {
                    let kind = AllocatorKind::ALL[rng.gen_range(0..AllocatorKind::ALL.len())];
                    if let Ok(id) = mm.allocate(kind, rng.gen_range(1..256 * KIB)) {
                        live.push(id);
                    }
                }
                1 if !live.is_empty() => {
                    let id = live[rng.gen_range(0..live.len())];
                    let agent = if rng.gen_bool(0.5) { Agent::Cpu } else { Agent::Gpu };
                    let _ = mm.touch_all(id, agent, rng.gen_range(1..5));
                }
                _ if !live.is_empty() => {
                    let id = live.swap_remove(rng.gen_range(0..live.len()));
                    mm.release(id).map_err(|e| e.to_string())?;
                    let free = mm.free_frames();
                    ensure(mm.release(id) == Err(Error::DoubleFree(id)) && mm.free_frames() == free, || {
                        format!("sequence {seq}: second release of {id} was not a no-op error")
                    })?;
                }
                _ => {}
            }
            ensure(mm.free_frames() + mm.mapped_frames() == total, || format!("sequence {seq}: frames leaked"))?;
            ensure(mm.tables().mirror_holds(), || format!("sequence {seq}: GPU table outgrew the system table"))?;
        }
    }
    Ok(())
}

fn lru_stack(rng: &mut ChaCha8Rng) -> Check {
    for _ in 0..20 {
        let stream: Vec<u64> = (0..3000).map(|_| rng.gen_range(0..512)).collect();
        let mut prev = u64::MAX;
        for cap in 1..=80 {
            let mut t = TlbState::new(cap);
            for &va in &stream {
                t.access_run(va, 0);
            }
            ensure(t.misses() <= prev, || format!("misses grew at capacity {cap}"))?;
            prev = t.misses();
        }
    }
    Ok(())
}

fn ladders(p: &MachineProfile, rng: &mut ChaCha8Rng) -> Check {
    for _ in 0..200 {
        let mut sizes: Vec<u64> = (0..20).map(|_| rng.gen_range(1..8 * GIB)).collect();
        sizes.sort_unstable();
        let agent = if rng.gen_bool(0.5) { Agent::Cpu } else { Agent::Gpu };
        let balance = rng.gen_range(0.05..=1.0);
        let lat: Vec<f64> = sizes.iter().map(|&s| perf::chase_latency(p, agent, s, balance).latency).collect();
        ensure(lat.windows(2).all(|w| w[1] + 1e-9 >= w[0]), || format!("non-monotone ladder {sizes:?}"))?;
    }
    Ok(())
}

fn reruns(p: &MachineProfile, rng: &mut ChaCha8Rng) -> Check {
    for _ in 0..10 {
        let seed = rng.gen();
        let once = |b, grid: &[&str]| -> Result<String, String> {
            let spec = WorkloadSpec::new(b, p.clone(), seed).with_grid(grid).map_err(|e| e.to_string())?;
            Ok(harness::report(&harness::run(&spec).map_err(|e| e.to_string())?, Format::Csv))
        };
        for (b, grid) in [
            (Benchmark::LatencySweep, &["kind=libc,managed", "size=4KiB,8MiB"][..]),
            (Benchmark::FaultBench, &["pages=1,1000"][..]),
            (Benchmark::AtomicsBench, &["array=1024", "cpu_threads=0,4", "gpu_threads=0,256"][..]),
        ] {
            ensure(once(b, grid)? == once(b, grid)?, || format!("{b} differs across reruns with seed {seed}"))?;
        }
    }
    Ok(())
}

fn classify_table() -> Check {
    use AllocatorKind::*;
    // up-front, CPU access, GPU access; XNACK off then on
    let table = [
        (LibcOnDemand, [(false, true, false), (false, true, true)]),
        (RegisteredHost, [(true, true, true), (true, true, true)]),
        (DeviceUpFront, [(true, true, true), (true, true, true)]),
        (PinnedHost, [(true, true, true), (true, true, true)]),
        (ManagedUnified, [(true, true, true), (false, true, true)]),
        (StaticManaged, [(true, true, true), (true, true, true)]),
    ];
    for (kind, rows) in table {
        for (xnack, want) in [false, true].into_iter().zip(rows) {
            let c = classify(kind, xnack);
            let got = (c.physical == Physical::UpFront, c.cpu_access, c.gpu_access);
            ensure(got == want, || format!("{} xnack={xnack}: {got:?}", kind.name()))?;
        }
    }
    Ok(())
}

fn criterion_10(p: &MachineProfile) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    fragments(&mut rng)?;
    conservation(&mut rng)?;
    lru_stack(&mut rng)?;
    ladders(p, &mut rng)?;
    reruns(p, &mut rng)?;
    classify_table()
}

// 11 --------------------------------------------------------------------

fn criterion_11(p: &MachineProfile) -> Check {
    use AllocatorKind::*;
    use UsageCounter::*;
    // kinds each counter reports
    let sees: [(UsageCounter, &[AllocatorKind]); 4] = [
        (Libnuma, &[LibcOnDemand, RegisteredHost, DeviceUpFront, PinnedHost, ManagedUnified, StaticManaged]),
        (Meminfo, &[LibcOnDemand, RegisteredHost, DeviceUpFront, PinnedHost, ManagedUnified, StaticManaged]),
        (HipMemGetInfo, &[DeviceUpFront]),
        (ProcessRss, &[LibcOnDemand, RegisteredHost, PinnedHost, ManagedUnified, StaticManaged]),
    ];
    let mut combos = 0;
    for kind in AllocatorKind::ALL {
        let views = harness::usage_point(p, kind, Agent::Cpu, 2 * MIB, 3).map_err(|e| e.to_string())?;
        for (counter, listed) in sees {
            let got = views.iter().find(|v| v.0 == counter).map(|v| v.1).unwrap_or(u64::MAX);
            let want = if listed.contains(&kind) { 6 * MIB } else { 0 };
            ensure(got == want, || format!("{} under {}: {got} vs {want}", kind.name(), counter.name()))?;
            combos += 1;
        }
    }
    ensure(combos == 24, || format!("{combos} combinations"))
}

fn main() -> ExitCode {
    let p = builtin_mi300a();
    let report = harness::verify(&p);
    let criteria: [(&str, Criterion); 11] = [
        ("pointer-chase latency", criterion_1),
        ("STREAM bandwidth tiers", criterion_2),
        ("legacy copy bandwidth", criterion_3),
        ("GPU TLB misses", criterion_4),
        ("page-fault throughput", criterion_5),
        ("page-fault latency", criterion_6),
        ("allocation cost", criterion_7),
        ("CPU fault counts", criterion_8),
        ("atomics trends", criterion_9),
        ("property suites", criterion_10),
        ("memory usage views", criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let c = i as u8 + 1;
        let result = anchors(&report, c).and_then(|_| check(&p));
        match result {
            Ok(()) => println!("[PASS] criterion {c:>2}: {name}"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] criterion {c:>2}: {name}: {why}");
            }
        }
    }
    for o in report.outcomes.iter().filter(|o| o.status == Status::Warn) {
        match &o.measured {
            Ok(v) => println!("[WARN] {} (soft): {v:.4} {} outside {}", o.id, o.unit, o.expected),
            Err(e) => println!("[WARN] {} (soft): {e}", o.id),
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
