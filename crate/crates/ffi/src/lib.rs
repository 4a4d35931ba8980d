//! C interface to the simulator.
//!
//! Every function returns a [`UpmStatus`]; results go through out-pointers.
//! On failure the message is kept per thread and read with
//! [`upm_last_error`]. Strings handed out must be freed with
//! [`upm_string_free`], handles with their matching `*_free`.
//!
//! Enumerated arguments are plain integers so that out-of-range values from C
//! are reported as `UPM_STATUS_INVALID_ARGUMENT` rather than being undefined.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use upm_sim::atomics::{self, AtomicsWorkload, Dtype};
use upm_sim::fault;
use upm_sim::harness::{self, Benchmark, Format, WorkloadSpec};
use upm_sim::machine::{self, FaultScenario, MachineProfile};
use upm_sim::memmgr::{AllocatorKind, MemoryManager, UsageCounter};
use upm_sim::{perf, Agent, Error};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidProfile = 3,
    OutOfMemory = 4,
    AccessViolation = 5,
    InvalidAllocation = 6,
    InvalidWorkload = 7,
    InvalidSpec = 8,
    VerifyFailed = 9,
    Internal = 10,
}

#[repr(C)]
pub enum UpmAgent {
    Cpu = 0,
    Gpu = 1,
}

/// Same order as the simulator's allocator kinds.
#[repr(C)]
pub enum UpmAllocator {
    Malloc = 0,
    MallocRegistered = 1,
    HipMalloc = 2,
    HipHostMalloc = 3,
    HipMallocManaged = 4,
    StaticManaged = 5,
}

#[repr(C)]
pub enum UpmCounter {
    Libnuma = 0,
    Meminfo = 1,
    HipMemGetInfo = 2,
    Rss = 3,
}

#[repr(C)]
pub enum UpmFaultScenario {
    Cpu1 = 0,
    Cpu12 = 1,
    GpuMinor = 2,
    GpuMajor = 3,
}

#[repr(C)]
pub enum UpmDtype {
    Uint64 = 0,
    Fp64 = 1,
}

#[repr(C)]
pub enum UpmFormat {
    Csv = 0,
    Table = 1,
}

/// Opaque machine profile.
pub struct UpmProfile(MachineProfile);

/// Opaque simulated process.
pub struct UpmMemory(MemoryManager);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(UpmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::AtGridPoint { source, .. } => return Fail::from((**source).clone()),
            Error::OutOfMemory { .. } => UpmStatus::OutOfMemory,
            Error::AccessViolation { .. } => UpmStatus::AccessViolation,
            Error::DoubleFree(_) | Error::UnknownAllocation(_) | Error::StaticSingleton | Error::NotRegistrable(_) => {
                UpmStatus::InvalidAllocation
            }
            Error::InvalidSpec(_) => UpmStatus::InvalidSpec,
            Error::ZeroSize | Error::RangeOutOfBounds { .. } => UpmStatus::InvalidArgument,
            _ => UpmStatus::InvalidWorkload,
        };
        Fail(status, e.to_string())
    }
}

fn bad(msg: impl Into<String>) -> Fail {
    Fail(UpmStatus::InvalidArgument, msg.into())
}

fn null(what: &str) -> Fail {
    Fail(UpmStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> UpmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            UpmStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            UpmStatus::Internal
        }
    }
}

unsafe fn reference<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| bad(format!("{what} is not UTF-8")))
}

fn give(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

fn agent(v: u32) -> Result<Agent, Fail> {
    match v {
        0 => Ok(Agent::Cpu),
        1 => Ok(Agent::Gpu),
        _ => Err(bad(format!("agent {v}"))),
    }
}

fn allocator(v: u32) -> Result<AllocatorKind, Fail> {
    AllocatorKind::ALL.get(v as usize).copied().ok_or_else(|| bad(format!("allocator {v}")))
}

fn counter(v: u32) -> Result<UsageCounter, Fail> {
    UsageCounter::ALL.get(v as usize).copied().ok_or_else(|| bad(format!("counter {v}")))
}

fn scenario(v: u32) -> Result<FaultScenario, Fail> {
    FaultScenario::ALL.get(v as usize).copied().ok_or_else(|| bad(format!("fault scenario {v}")))
}

fn dtype(v: u32) -> Result<Dtype, Fail> {
    match v {
        0 => Ok(Dtype::Uint64),
        1 => Ok(Dtype::Fp64),
        _ => Err(bad(format!("dtype {v}"))),
    }
}

fn format(v: u32) -> Result<Format, Fail> {
    match v {
        0 => Ok(Format::Csv),
        1 => Ok(Format::Table),
        _ => Err(bad(format!("format {v}"))),
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn upm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn upm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn upm_profile_builtin(out: *mut *mut UpmProfile) -> UpmStatus {
    guard(|| {
        *self::out(out, "out")? = Box::into_raw(Box::new(UpmProfile(machine::builtin_mi300a())));
        Ok(())
    })
}

/// Parses a profile file's contents.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn upm_profile_load(text: *const c_char, out: *mut *mut UpmProfile) -> UpmStatus {
    guard(|| {
        let t = self::text(text, "text")?;
        let out = self::out(out, "out")?;
        let p = machine::load_profile(t).map_err(|e| Fail(UpmStatus::InvalidProfile, e.to_string()))?;
        *out = Box::into_raw(Box::new(UpmProfile(p)));
        Ok(())
    })
}

/// # Safety
/// `profile` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn upm_profile_serialize(profile: *const UpmProfile, out: *mut *mut c_char) -> UpmStatus {
    guard(|| {
        let p = reference(profile, "profile")?;
        *self::out(out, "out")? = give(machine::serialize(&p.0));
        Ok(())
    })
}

/// # Safety
/// `profile` must come from this library and not be used afterwards, or be null.
#[no_mangle]
pub unsafe extern "C" fn upm_profile_free(profile: *mut UpmProfile) {
    if !profile.is_null() {
        drop(Box::from_raw(profile));
    }
}

/// A fresh simulated process on `profile`'s machine.
///
/// # Safety
/// `profile` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn upm_memory_new(profile: *const UpmProfile, seed: u64, out: *mut *mut UpmMemory) -> UpmStatus {
    guard(|| {
        let p = reference(profile, "profile")?;
        *self::out(out, "out")? = Box::into_raw(Box::new(UpmMemory(MemoryManager::new(&p.0, seed))));
        Ok(())
    })
}

/// # Safety
/// `mem` must come from this library and not be used afterwards, or be null.
#[no_mangle]
pub unsafe extern "C" fn upm_memory_free(mem: *mut UpmMemory) {
    if !mem.is_null() {
        drop(Box::from_raw(mem));
    }
}

/// # Safety
/// `mem` must be a live handle; `out_id` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn upm_allocate(mem: *mut UpmMemory, kind: u32, bytes: u64, out_id: *mut u64) -> UpmStatus {
    guard(|| {
        let m = out(mem, "mem")?;
        let out_id = out(out_id, "out_id")?;
        *out_id = m.0.allocate(allocator(kind)?, bytes)?;
        Ok(())
    })
}

/// First touch of the whole allocation by `threads` workers of `agent`.
///
/// # Safety
/// `mem` must be a live handle; `out_faults` valid for writes or null.
#[no_mangle]
pub unsafe extern "C" fn upm_touch(mem: *mut UpmMemory, id: u64, agent: u32, threads: u64, out_faults: *mut u64) -> UpmStatus {
    guard(|| {
        let m = out(mem, "mem")?;
        let n = m.0.touch_all(id, self::agent(agent)?, threads)?.len() as u64;
        if let Some(f) = out_faults.as_mut() {
            *f = n;
        }
        Ok(())
    })
}

/// # Safety
/// `mem` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn upm_release(mem: *mut UpmMemory, id: u64) -> UpmStatus {
    guard(|| {
        out(mem, "mem")?.0.release(id)?;
        Ok(())
    })
}

/// Bytes in use as one counter reports them.
///
/// # Safety
/// `mem` must be a live handle; `out_bytes` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn upm_usage(mem: *const UpmMemory, counter: u32, out_bytes: *mut u64) -> UpmStatus {
    guard(|| {
        let m = reference(mem, "mem")?;
        *out(out_bytes, "out_bytes")? = m.0.usage_view(self::counter(counter)?);
        Ok(())
    })
}

/// Chase latency in ns over `working_set` bytes at the given channel balance.
///
/// # Safety
/// `profile` must be a live handle; `out_ns` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn upm_chase_latency(
    profile: *const UpmProfile,
    agent: u32,
    working_set: u64,
    balance: f64,
    out_ns: *mut f64,
) -> UpmStatus {
    guard(|| {
        let p = reference(profile, "profile")?;
        if !(balance > 0.0 && balance <= 1.0) {
            return Err(bad(format!("balance {balance} outside (0, 1]")));
        }
        *out(out_ns, "out_ns")? = perf::chase_latency(&p.0, self::agent(agent)?, working_set, balance).latency;
        Ok(())
    })
}

/// STREAM TRIAD bandwidth in bytes/s.
///
/// # Safety
/// `profile` must be a live handle; `out_bw` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn upm_triad_bandwidth(
    profile: *const UpmProfile,
    agent: u32,
    kind: u32,
    init_agent: u32,
    threads: u64,
    seed: u64,
    out_bw: *mut f64,
) -> UpmStatus {
    guard(|| {
        let p = reference(profile, "profile")?;
        let out_bw = out(out_bw, "out_bw")?;
        *out_bw = perf::triad_bandwidth(&p.0, self::agent(agent)?, allocator(kind)?, self::agent(init_agent)?, threads, seed)?;
        Ok(())
    })
}

/// Pages/s with `pages` outstanding faults.
///
/// # Safety
/// `profile` must be a live handle; `out_rate` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn upm_fault_throughput(profile: *const UpmProfile, scenario: u32, pages: u64, out_rate: *mut f64) -> UpmStatus {
    guard(|| {
        let p = reference(profile, "profile")?;
        *out(out_rate, "out_rate")? = fault::throughput(&p.0, self::scenario(scenario)?, pages);
        Ok(())
    })
}

/// Atomic histogram update rates in updates/s.
///
/// # Safety
/// `profile` must be a live handle; both out-pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn upm_atomics_throughput(
    profile: *const UpmProfile,
    cpu_threads: u64,
    gpu_threads: u64,
    array_len: u64,
    dtype: u32,
    out_cpu_rate: *mut f64,
    out_gpu_rate: *mut f64,
) -> UpmStatus {
    guard(|| {
        let p = reference(profile, "profile")?;
        let (c, g) = (out(out_cpu_rate, "out_cpu_rate")?, out(out_gpu_rate, "out_gpu_rate")?);
        let w = AtomicsWorkload {
            cpu_threads,
            gpu_threads,
            array_len,
            dtype: self::dtype(dtype)?,
        };
        let r = atomics::throughput(&p.0, &w)?;
        *c = r.cpu_rate;
        *g = r.gpu_rate;
        Ok(())
    })
}

/// Runs a benchmark by name with `KEY=V1,V2` grid overrides and renders
/// the report.
///
/// # Safety
/// `profile` must be a live handle, `benchmark` a NUL-terminated string,
/// `grid` an array of `grid_len` NUL-terminated strings (or null when
/// `grid_len` is 0), and `out_report` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn upm_run(
    profile: *const UpmProfile,
    benchmark: *const c_char,
    grid: *const *const c_char,
    grid_len: usize,
    seed: u64,
    format: u32,
    out_report: *mut *mut c_char,
) -> UpmStatus {
    guard(|| {
        let p = reference(profile, "profile")?;
        let b: Benchmark = text(benchmark, "benchmark")?.parse().map_err(|e: String| Fail(UpmStatus::InvalidSpec, e))?;
        let fmt = self::format(format)?;
        let out_report = out(out_report, "out_report")?;
        let mut overrides = Vec::with_capacity(grid_len);
        if grid_len > 0 {
            if grid.is_null() {
                return Err(null("grid"));
            }
            for i in 0..grid_len {
                overrides.push(text(*grid.add(i), "grid entry")?);
            }
        }
        let spec = WorkloadSpec::new(b, p.0.clone(), seed).with_grid(&overrides)?;
        let rows = harness::run(&spec)?;
        *out_report = give(harness::report(&rows, fmt));
        Ok(())
    })
}

/// Checks the profile against every calibration anchor. The rendered table
/// is written to `out_report` (if non-null) in both outcomes; hard failures
/// return `UPM_STATUS_VERIFY_FAILED`.
///
/// # Safety
/// `profile` must be a live handle; `out_report` valid for writes or null.
#[no_mangle]
pub unsafe extern "C" fn upm_verify(profile: *const UpmProfile, out_report: *mut *mut c_char) -> UpmStatus {
    guard(|| {
        let p = reference(profile, "profile")?;
        let r = harness::verify(&p.0);
        if let Some(o) = out_report.as_mut() {
            *o = give(r.render());
        }
        if r.passed() {
            Ok(())
        } else {
            Err(Fail(UpmStatus::VerifyFailed, format!("{} anchors failed", r.hard_failures())))
        }
    })
}
