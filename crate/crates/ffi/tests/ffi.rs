use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use upm_sim_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(upm_last_error()) }.to_string_lossy().into_owned()
}

fn take(s: *mut std::ffi::c_char) -> String {
    assert!(!s.is_null());
    let out = unsafe { CStr::from_ptr(s) }.to_string_lossy().into_owned();
    unsafe { upm_string_free(s) };
    out
}

fn builtin() -> *mut UpmProfile {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { upm_profile_builtin(&mut p) }, UpmStatus::Ok);
    p
}

#[test]
fn memory_lifecycle() {
    let p = builtin();
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(upm_memory_new(p, 4, &mut m), UpmStatus::Ok);
        let mut id = 0;
        assert_eq!(upm_allocate(m, UpmAllocator::HipMalloc as u32, 1 << 20, &mut id), UpmStatus::Ok);
        let mut bytes = 0;
        assert_eq!(upm_usage(m, UpmCounter::HipMemGetInfo as u32, &mut bytes), UpmStatus::Ok);
        assert_eq!(bytes, 1 << 20);
        assert_eq!(upm_usage(m, UpmCounter::Rss as u32, &mut bytes), UpmStatus::Ok);
        assert_eq!(bytes, 0);

        assert_eq!(upm_allocate(m, UpmAllocator::Malloc as u32, 8192, &mut id), UpmStatus::Ok);
        let mut faults = 0;
        assert_eq!(upm_touch(m, id, UpmAgent::Cpu as u32, 1, &mut faults), UpmStatus::Ok);
        assert_eq!(faults, 2);
        assert_eq!(upm_release(m, id), UpmStatus::Ok);
        assert_eq!(upm_release(m, id), UpmStatus::InvalidAllocation);
        assert!(last_error().contains("not live"));
        assert_eq!(upm_allocate(m, 99, 10, &mut id), UpmStatus::InvalidArgument);
        assert_eq!(upm_allocate(m, 0, 0, &mut id), UpmStatus::InvalidArgument);
        upm_memory_free(m);
        upm_profile_free(p);
    }
}

#[test]
fn null_handles_are_rejected() {
    let mut x = 0.0;
    unsafe {
        assert_eq!(upm_chase_latency(ptr::null(), 0, 1, 1.0, &mut x), UpmStatus::NullPointer);
        assert_eq!(upm_profile_builtin(ptr::null_mut()), UpmStatus::NullPointer);
        assert_eq!(upm_release(ptr::null_mut(), 0), UpmStatus::NullPointer);
        upm_profile_free(ptr::null_mut());
        upm_memory_free(ptr::null_mut());
        upm_string_free(ptr::null_mut());
    }
    assert_eq!(last_error(), "mem is null");
}

#[test]
fn models() {
    let p = builtin();
    let (mut a, mut b) = (0.0, 0.0);
    unsafe {
        assert_eq!(upm_chase_latency(p, UpmAgent::Gpu as u32, 1024, 1.0, &mut a), UpmStatus::Ok);
        assert_eq!(a, 57.0);
        assert_eq!(upm_chase_latency(p, 0, 1024, 0.0, &mut a), UpmStatus::InvalidArgument);
        assert_eq!(upm_fault_throughput(p, UpmFaultScenario::GpuMinor as u32, 1, &mut a), UpmStatus::Ok);
        assert!(a > 0.0);
        assert_eq!(upm_atomics_throughput(p, 1, 0, 1 << 20, UpmDtype::Uint64 as u32, &mut a, &mut b), UpmStatus::Ok);
        assert!(a > 0.0 && b == 0.0);
        assert_eq!(upm_atomics_throughput(p, 0, 65, 4, 0, &mut a, &mut b), UpmStatus::InvalidWorkload);
        assert_eq!(upm_triad_bandwidth(p, 0, UpmAllocator::HipMalloc as u32, 0, 24, 0, &mut a), UpmStatus::Ok);
        assert_eq!(a, 208e9);
        upm_profile_free(p);
    }
}

#[test]
fn profile_text_round_trip() {
    let p = builtin();
    let mut s = ptr::null_mut();
    unsafe {
        assert_eq!(upm_profile_serialize(p, &mut s), UpmStatus::Ok);
        let text = take(s);
        let c = CString::new(text.clone()).unwrap();
        let mut q = ptr::null_mut();
        assert_eq!(upm_profile_load(c.as_ptr(), &mut q), UpmStatus::Ok);
        assert_eq!(upm_profile_serialize(q, &mut s), UpmStatus::Ok);
        assert_eq!(take(s), text);
        let junk = CString::new("gpu.l1_latency = fast").unwrap();
        assert_eq!(upm_profile_load(junk.as_ptr(), &mut q), UpmStatus::InvalidProfile);
        upm_profile_free(q);
        upm_profile_free(p);
    }
}

#[test]
fn run_renders_reports() {
    let p = builtin();
    let name = CString::new("memcpy").unwrap();
    let grid: Vec<CString> = ["src=libc", "dst=device"].iter().map(|g| CString::new(*g).unwrap()).collect();
    let ptrs: Vec<_> = grid.iter().map(|g| g.as_ptr()).collect();
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(upm_run(p, name.as_ptr(), ptrs.as_ptr(), ptrs.len(), 0, UpmFormat::Csv as u32, &mut out), UpmStatus::Ok);
        let csv = take(out);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.contains("58.0000"));
        let bogus = CString::new("nosuch").unwrap();
        assert_eq!(upm_run(p, bogus.as_ptr(), ptr::null(), 0, 0, 0, &mut out), UpmStatus::InvalidSpec);
        assert_eq!(upm_run(p, name.as_ptr(), ptr::null(), 1, 0, 0, &mut out), UpmStatus::NullPointer);
        upm_profile_free(p);
    }
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/upm_sim.h")).unwrap();
    for f in ["upm_last_error", "upm_profile_builtin", "upm_memory_new", "upm_allocate", "upm_run", "upm_verify", "upm_string_free"] {
        assert!(h.contains(&format!("{f}(")), "{f}");
    }
    assert!(h.contains("typedef struct UpmProfile UpmProfile;"));
    assert!(h.contains("UPM_STATUS_OK = 0"));
}

fn staticlib() -> Option<PathBuf> {
    let deps = std::env::current_exe().ok()?.parent()?.to_path_buf();
    let lib = deps.parent()?.join("libupm_sim_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_and_runs() {
    let Some(lib) = staticlib() else {
        eprintln!("static library not built; skipping");
        return;
    };
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let exe = Path::new(env!("CARGO_TARGET_TMPDIR")).join("upm_smoke");
    let cc = Command::new("cc")
        .arg(dir.join("c/smoke.c"))
        .arg("-I")
        .arg(dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status();
    match cc {
        Ok(s) => assert!(s.success(), "cc failed"),
        Err(_) => {
            eprintln!("no C compiler; skipping");
            return;
        }
    }
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("57.0 256 1048576\n"), "{text}");
    assert!(text.contains("LibcOnDemand,DeviceUpFront,on,bandwidth,58.0000,GB/s"));
}
