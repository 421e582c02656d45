//! Rounding helpers for fraction-of-count arithmetic.
//!
//! `0.1 * 30.0` is `3.0000000000000004` in binary floating point, so a bare
//! `ceil` would turn an exact product into the next integer. Products within
//! a relative `1e-9` of an integer snap to it first.

const SNAP: f64 = 1e-9;

fn snapped(x: f64) -> Option<f64> {
    let r = x.round();
    ((x - r).abs() <= SNAP * x.abs().max(1.0)).then_some(r)
}

pub(crate) fn ceil_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    snapped(x).unwrap_or_else(|| x.ceil()) as usize
}

pub(crate) fn floor_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    snapped(x).unwrap_or_else(|| x.floor()) as usize
}
