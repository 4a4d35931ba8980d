//! Text profile format: `dotted.key = value` lines with `#` comments.

use std::collections::HashSet;
use std::fmt::Write as _;

use super::{builtin_mi300a, validate, FaultScenarioParams, MachineProfile, Violation};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProfileError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid profile: {}", join(.0))]
    Invalid(Vec<Violation>),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unit {
    Bytes,
    Count,
    /// stored in ns
    Nanos,
    /// stored in µs
    Micros,
    /// stored in bytes/s
    Rate,
    /// pages/s or pages, dimensionless numbers
    Real,
    Flag,
}

enum Slot<'a> {
    Int(&'a mut u64),
    Float(&'a mut f64),
    Bool(&'a mut bool),
}

type Field<'a> = (String, Unit, Slot<'a>);

fn scenario_fields<'a>(out: &mut Vec<Field<'a>>, name: &str, s: &'a mut FaultScenarioParams) {
    let p = format!("fault.{name}.");
    out.push((format!("{p}mean_latency"), Unit::Micros, Slot::Float(&mut s.mean_latency)));
    out.push((format!("{p}p95_latency"), Unit::Micros, Slot::Float(&mut s.p95_latency)));
    out.push((format!("{p}plateau"), Unit::Real, Slot::Float(&mut s.plateau)));
    out.push((format!("{p}half_saturation"), Unit::Real, Slot::Float(&mut s.half_saturation)));
}

/// Every settable key, in serialization order.
fn fields(p: &mut MachineProfile) -> Vec<Field<'_>> {
    use Slot::*;
    use Unit::*;
    let mut v: Vec<Field<'_>> = Vec::with_capacity(80);
    macro_rules! f {
        ($key:expr, $unit:expr, $slot:expr) => {
            v.push(($key.to_string(), $unit, $slot))
        };
    }
    f!("hbm_capacity", Bytes, Int(&mut p.hbm_capacity));
    f!("hbm_peak_bw", Rate, Float(&mut p.hbm_peak_bw));
    f!("ic_capacity", Bytes, Int(&mut p.ic_capacity));
    f!("ic_peak_bw", Rate, Float(&mut p.ic_peak_bw));
    f!("stacks", Count, Int(&mut p.stacks));
    f!("channels_per_stack", Count, Int(&mut p.channels_per_stack));
    f!("interleave_granularity", Bytes, Int(&mut p.interleave_granularity));
    f!("page_size", Bytes, Int(&mut p.page_size));
    f!("fragment_field_bits", Count, Int(&mut p.fragment_field_bits));

    let g = &mut p.gpu;
    f!("gpu.l1_capacity", Bytes, Int(&mut g.l1_capacity));
    f!("gpu.l2_capacity", Bytes, Int(&mut g.l2_capacity));
    f!("gpu.l1_latency", Nanos, Float(&mut g.l1_latency));
    f!("gpu.l2_latency", Nanos, Float(&mut g.l2_latency));
    f!("gpu.ic_latency", Nanos, Float(&mut g.ic_latency));
    f!("gpu.hbm_latency", Nanos, Float(&mut g.hbm_latency));
    f!("gpu.cus", Count, Int(&mut g.cus));
    f!("gpu.tlb_entries", Count, Int(&mut g.tlb_entries));
    f!("gpu.fragment_limit", Count, Int(&mut g.fragment_limit));
    f!("gpu.atomic_width", Count, Int(&mut g.atomic_width));

    let c = &mut p.cpu;
    f!("cpu.l1_capacity", Bytes, Int(&mut c.l1_capacity));
    f!("cpu.l2_capacity", Bytes, Int(&mut c.l2_capacity));
    f!("cpu.l3_capacity", Bytes, Int(&mut c.l3_capacity));
    f!("cpu.l1_latency", Nanos, Float(&mut c.l1_latency));
    f!("cpu.l2_latency", Nanos, Float(&mut c.l2_latency));
    f!("cpu.l3_latency", Nanos, Float(&mut c.l3_latency));
    f!("cpu.ic_latency", Nanos, Float(&mut c.ic_latency));
    f!("cpu.hbm_latency", Nanos, Float(&mut c.hbm_latency));
    f!("cpu.cores", Count, Int(&mut c.cores));
    f!("cpu.complexes", Count, Int(&mut c.complexes));
    f!("cpu.stacks_per_complex", Count, Int(&mut c.stacks_per_complex));
    f!("cpu.baseline_faults", Count, Int(&mut c.baseline_faults));

    f!("xnack", Flag, Bool(&mut p.xnack));

    let fault = &mut p.fault;
    scenario_fields(&mut v, "cpu1", &mut fault.cpu1);
    scenario_fields(&mut v, "cpu12", &mut fault.cpu12);
    scenario_fields(&mut v, "gpu_minor", &mut fault.gpu_minor);
    scenario_fields(&mut v, "gpu_major", &mut fault.gpu_major);
    f!("fault.latency_shift", Real, Float(&mut fault.latency_shift));

    let b = &mut p.bw_model;
    f!("bw_model.walk_penalty", Real, Float(&mut b.walk_penalty));
    f!("bw_model.gpu_peak_fraction", Real, Float(&mut b.gpu_peak_fraction));
    f!("bw_model.cpu_bw_upfront", Rate, Float(&mut b.cpu_bw_upfront));
    f!("bw_model.cpu_bw_ondemand", Rate, Float(&mut b.cpu_bw_ondemand));
    f!("bw_model.cpu_per_thread_bw", Rate, Float(&mut b.cpu_per_thread_bw));
    f!("bw_model.static_managed_bw", Rate, Float(&mut b.static_managed_bw));
    f!("bw_model.memcpy_sdma_bw", Rate, Float(&mut b.memcpy_sdma_bw));
    f!("bw_model.memcpy_nosdma_bw", Rate, Float(&mut b.memcpy_nosdma_bw));
    f!("bw_model.memcpy_d2d_bw", Rate, Float(&mut b.memcpy_d2d_bw));

    let a = &mut p.atomics;
    f!("atomics.cpu_native_rate", Real, Float(&mut a.cpu_native_rate));
    f!("atomics.cpu_cas_rate", Real, Float(&mut a.cpu_cas_rate));
    f!("atomics.gpu_unit_rate", Real, Float(&mut a.gpu_unit_rate));
    f!("atomics.contention_alpha", Real, Float(&mut a.contention_alpha));
    f!("atomics.gpu_contention_alpha", Real, Float(&mut a.gpu_contention_alpha));
    f!("atomics.cas_beta", Real, Float(&mut a.cas_beta));
    f!("atomics.hybrid_gamma", Real, Float(&mut a.hybrid_gamma));
    f!("atomics.gpu_hybrid_gamma", Real, Float(&mut a.gpu_hybrid_gamma));
    f!("atomics.cpu_coherence_overhead", Real, Float(&mut a.cpu_coherence_overhead));

    f!("hip_cpu_map_granularity", Bytes, Int(&mut p.hip_cpu_map_granularity));
    f!("hip_cpu_map_granularity_gpu_init", Bytes, Int(&mut p.hip_cpu_map_granularity_gpu_init));
    f!("scatter_degree", Real, Float(&mut p.scatter_degree));
    f!("triad_iterations", Count, Int(&mut p.triad_iterations));
    v
}

/// Splits `1.5GiB` into (1.5, "GiB").
fn split_number(s: &str) -> (&str, &str) {
    let end = s
        .char_indices()
        .find(|&(i, ch)| {
            !(ch.is_ascii_digit()
                || ch == '.'
                || ch == '_'
                || ((ch == '+' || ch == '-') && (i == 0 || s[..i].ends_with(['e', 'E'])))
                || ((ch == 'e' || ch == 'E') && i > 0 && s[i + 1..].starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+')))
        })
        .map_or(s.len(), |(i, _)| i);
    (&s[..end], s[end..].trim())
}

fn scale(unit: Unit, suffix: &str) -> Result<f64, String> {
    let k = match (unit, suffix) {
        (_, "") => 1.0,
        (Unit::Bytes, "B") => 1.0,
        (Unit::Bytes, "KiB") => 1024.0,
        (Unit::Bytes, "MiB") => 1024.0 * 1024.0,
        (Unit::Bytes, "GiB") => 1024.0 * 1024.0 * 1024.0,
        (Unit::Bytes, "TiB") => 1024.0f64.powi(4),
        (Unit::Nanos, "ns") => 1.0,
        (Unit::Nanos, "us") => 1e3,
        (Unit::Nanos, "ms") => 1e6,
        (Unit::Micros, "ns") => 1e-3,
        (Unit::Micros, "us") => 1.0,
        (Unit::Micros, "ms") => 1e3,
        (Unit::Rate, "Bps") => 1.0,
        (Unit::Rate, "MBps") => 1e6,
        (Unit::Rate, "GBps") => 1e9,
        (Unit::Rate, "TBps") => 1e12,
        _ => return Err(format!("suffix `{suffix}` not allowed here")),
    };
    Ok(k)
}

fn parse_value(unit: Unit, raw: &str, slot: &mut Slot<'_>) -> Result<(), String> {
    if let Slot::Bool(b) = slot {
        **b = match raw {
            "1" | "true" | "on" | "yes" => true,
            "0" | "false" | "off" | "no" => false,
            _ => return Err(format!("expected a flag, got `{raw}`")),
        };
        return Ok(());
    }
    let (num, suffix) = split_number(raw);
    let num = num.replace('_', "");
    let x: f64 = num.parse().map_err(|_| format!("expected a number, got `{raw}`"))?;
    let x = x * scale(unit, suffix)?;
    if !x.is_finite() {
        return Err(format!("value `{raw}` is not finite"));
    }
    match slot {
        Slot::Int(i) => {
            if x < 0.0 || x.fract() != 0.0 || x > u64::MAX as f64 {
                return Err(format!("expected a non-negative integer, got `{raw}`"));
            }
            **i = x as u64;
        }
        Slot::Float(f) => **f = x,
        Slot::Bool(_) => unreachable!(),
    }
    Ok(())
}

/// Parses a byte count such as `4096`, `64KiB` or `1.5GiB`.
pub fn parse_bytes(raw: &str) -> Result<u64, String> {
    let mut v = 0u64;
    parse_value(Unit::Bytes, raw.trim(), &mut Slot::Int(&mut v))?;
    Ok(v)
}

/// Parses a profile document on top of the built-in profile and validates it.
pub fn load_profile(text: &str) -> Result<MachineProfile, ProfileError> {
    let mut p = builtin_mi300a();
    {
        let mut table = fields(&mut p);
        let mut seen = HashSet::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let err = |msg: String| ProfileError::Parse { line: lineno, msg };
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let field = table
                .iter_mut()
                .find(|f| f.0 == key)
                .ok_or_else(|| err(format!("unknown key `{key}`")))?;
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            parse_value(field.1, value, &mut field.2).map_err(err)?;
        }
    }
    let violations = validate(&p);
    if violations.is_empty() {
        Ok(p)
    } else {
        Err(ProfileError::Invalid(violations))
    }
}

/// Writes every key in base units; `load_profile(&serialize(p)) == p`.
pub fn serialize(p: &MachineProfile) -> String {
    let mut copy = p.clone();
    let mut out = String::new();
    for (key, _, slot) in fields(&mut copy) {
        let _ = match slot {
            Slot::Int(i) => writeln!(out, "{key} = {i}"),
            // `{:?}` is the shortest representation that round-trips.
            Slot::Float(f) => writeln!(out, "{key} = {f:?}"),
            Slot::Bool(b) => writeln!(out, "{key} = {}", u8::from(*b)),
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{KIB, MIB, RULE_CAPACITY};

    #[test]
    fn empty_document_is_builtin() {
        assert_eq!(load_profile("").unwrap(), builtin_mi300a());
        assert_eq!(load_profile("# nothing\n\n   \n").unwrap(), builtin_mi300a());
    }

    #[test]
    fn single_override() {
        let p = load_profile("gpu.l1_latency = 60").unwrap();
        let mut want = builtin_mi300a();
        want.gpu.l1_latency = 60.0;
        assert_eq!(p, want);
    }

    #[test]
    fn suffixes() {
        let p = load_profile(
            "gpu.l1_capacity = 8KiB # small\ncpu.l3_capacity = 0.09375 GiB\ngpu.l2_latency = 0.1us\n\
             bw_model.cpu_bw_upfront = 0.2TBps\nfault.cpu1.mean_latency = 9000ns\nxnack = off",
        )
        .unwrap();
        assert_eq!(p.gpu.l1_capacity, 8 * KIB);
        assert_eq!(p.cpu.l3_capacity, 96 * MIB);
        assert!((p.gpu.l2_latency - 100.0).abs() < 1e-9);
        assert!((p.bw_model.cpu_bw_upfront - 200e9).abs() < 1e-3);
        assert!((p.fault.cpu1.mean_latency - 9.0).abs() < 1e-9);
        assert!(!p.xnack);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = load_profile("stacks = 8\nbogus.key = 3\n").unwrap_err();
        assert!(matches!(e, ProfileError::Parse { line: 2, .. }), "{e}");
        let e = load_profile("\n\nstacks 8").unwrap_err();
        assert!(matches!(e, ProfileError::Parse { line: 3, .. }));
        let e = load_profile("stacks = 8 MiB").unwrap_err();
        assert!(matches!(e, ProfileError::Parse { line: 1, .. }));
        let e = load_profile("page_size = 4.5").unwrap_err();
        assert!(matches!(e, ProfileError::Parse { line: 1, .. }));
        let e = load_profile("stacks = 8\nstacks = 4").unwrap_err();
        assert!(matches!(e, ProfileError::Parse { line: 2, .. }));
    }

    #[test]
    fn invariant_violation_is_reported() {
        let e = load_profile("ic_capacity = 256GiB").unwrap_err();
        match e {
            ProfileError::Invalid(v) => assert!(v.iter().any(|v| v.rule == RULE_CAPACITY)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn builtin_round_trips() {
        let p = builtin_mi300a();
        let text = serialize(&p);
        assert_eq!(load_profile(&text).unwrap(), p);
        assert!(text.contains("fault.gpu_minor.plateau = 9000000.0"));
    }

    #[test]
    fn exponent_numbers() {
        let p = load_profile("hbm_peak_bw = 5.3e12\nfault.cpu1.plateau = 8.72E+5").unwrap();
        assert_eq!(p.hbm_peak_bw, 5.3e12);
        assert_eq!(p.fault.cpu1.plateau, 872e3);
    }
}
