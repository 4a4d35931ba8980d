//! Allocation and deallocation time as a function of size.
//!
//! On-demand curves are log-log interpolations through a few knots; up-front
//! curves are flat up to the 16 KiB minimum physical granularity and affine in
//! pages beyond it.

use super::AllocatorKind;
use crate::{Error, Result};

const KIB: f64 = 1024.0;
const MIB: f64 = KIB * KIB;
const GIB: f64 = MIB * KIB;
const PAGE: f64 = 4096.0;
const MIN_GRANULE_PAGES: f64 = 4.0;

const LIBC_ALLOC: &[(f64, f64)] = &[
    (32.0, 14e-9),
    (64.0 * KIB, 40e-9),
    (128.0 * KIB, 60e-9),
    // mmap threshold
    (256.0 * KIB, 1.5e-6),
    (GIB, 6e-6),
];

const LIBC_FREE: &[(f64, f64)] = &[
    (32.0, 8e-9),
    (64.0 * KIB, 12e-9),
    (128.0 * KIB, 30e-9),
    (256.0 * KIB, 1.0e-6),
    (16.0 * MIB, 2.5e-6),
    (32.0 * MIB, 14e-6),
    (GIB, 40e-6),
];

const DEVICE_FREE: &[(f64, f64)] = &[
    (16.0 * KIB, 5e-6),
    (MIB, 30e-6),
    (2.0 * MIB, 100e-6),
    (256.0 * MIB, 203.7e-3),
    (GIB, 600e-3),
];

const MANAGED_XNACK_FREE: &[(f64, f64)] = &[(16.0 * KIB, 3e-6), (GIB, 21e-6)];

const MANAGED_XNACK_ALLOC: f64 = 20e-6;

/// Log-log interpolation, flat below the first knot, extrapolated past the last.
fn loglog(knots: &[(f64, f64)], x: f64) -> f64 {
    let (x0, y0) = knots[0];
    if x <= x0 {
        return y0;
    }
    let seg = knots
        .windows(2)
        .find(|w| x <= w[1].0)
        .unwrap_or(&knots[knots.len() - 2..]);
    let (a, b) = (seg[0], seg[1]);
    let slope = (b.1 / a.1).ln() / (b.0 / a.0).ln();
    a.1 * (x / a.0).powf(slope)
}

/// `base` up to 16 KiB, reaching `at_gib` at 1 GiB, linear in pages between.
fn granular(size: f64, base: f64, at_gib: f64) -> f64 {
    let pages = (size / PAGE).ceil();
    let per_page = (at_gib - base) / (GIB / PAGE - MIN_GRANULE_PAGES);
    base + (pages - MIN_GRANULE_PAGES).max(0.0) * per_page
}

pub fn alloc_time_model(kind: AllocatorKind, size: u64, xnack: bool) -> Result<f64> {
    if size == 0 {
        return Err(Error::ZeroSize);
    }
    let s = size as f64;
    Ok(match kind {
        AllocatorKind::LibcOnDemand => loglog(LIBC_ALLOC, s),
        AllocatorKind::DeviceUpFront => granular(s, 10e-6, 37e-3),
        AllocatorKind::PinnedHost => granular(s, 15e-6, 200e-3),
        AllocatorKind::ManagedUnified if xnack => MANAGED_XNACK_ALLOC,
        AllocatorKind::ManagedUnified => granular(s, 34e-6, 400e-3),
        // Registration pins every page through a single-core fault.
        AllocatorKind::RegisteredHost => loglog(LIBC_ALLOC, s) + granular(s, 15e-6, 15e-6 + GIB / PAGE / 872e3),
        AllocatorKind::StaticManaged => 0.0,
    })
}

pub fn free_time_model(kind: AllocatorKind, size: u64, xnack: bool) -> Result<f64> {
    if size == 0 {
        return Err(Error::ZeroSize);
    }
    let s = size as f64;
    Ok(match kind {
        AllocatorKind::LibcOnDemand => loglog(LIBC_FREE, s),
        AllocatorKind::DeviceUpFront => loglog(DEVICE_FREE, s),
        AllocatorKind::PinnedHost => granular(s, 220e-6, 67e-3),
        AllocatorKind::ManagedUnified if xnack => loglog(MANAGED_XNACK_FREE, s),
        AllocatorKind::ManagedUnified => granular(s, 220e-6, 67e-3),
        AllocatorKind::RegisteredHost => loglog(LIBC_FREE, s) + granular(s, 10e-6, 30e-3),
        AllocatorKind::StaticManaged => 0.0,
    })
}
