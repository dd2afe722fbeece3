//! Naive 1D sieve used as an independent reference.
//!
//! Works directly on runs of equal samples and rescans the whole signal after
//! every change. No flat-zone graph is involved.

use crate::error::{Error, Result};
use crate::grid::Volume;

use super::FilterKind;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Remove {
    Maxima,
    Minima,
}

fn runs(signal: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=signal.len() {
        if i == signal.len() || signal[i] != signal[start] {
            out.push((start, i));
            start = i;
        }
    }
    out
}

fn single_pass(signal: &mut [u8], scale: usize, what: Remove) {
    loop {
        let rs = runs(signal);
        let mut best: Option<(usize, usize, u8)> = None; // (len, start, target)
        for (k, &(start, end)) in rs.iter().enumerate() {
            let v = signal[start];
            let mut neighbours = Vec::new();
            if k > 0 {
                neighbours.push(signal[rs[k - 1].0]);
            }
            if k + 1 < rs.len() {
                neighbours.push(signal[rs[k + 1].0]);
            }
            if neighbours.is_empty() {
                continue;
            }
            let (is_ext, target) = match what {
                Remove::Maxima => (neighbours.iter().all(|&n| n < v), *neighbours.iter().max().unwrap()),
                Remove::Minima => (neighbours.iter().all(|&n| n > v), *neighbours.iter().min().unwrap()),
            };
            let len = end - start;
            if is_ext && len <= scale && best.is_none_or(|(bl, _, _)| len < bl) {
                best = Some((len, start, target));
            }
        }
        match best {
            Some((len, start, target)) => signal[start..start + len].fill(target),
            None => return,
        }
    }
}

/// Reference implementation of [`super::apply_filter`] for 1D signals.
pub fn brute_force_sieve_1d(signal: &Volume, scale: usize, kind: FilterKind) -> Result<Volume> {
    if signal.ndim() != 1 {
        return Err(Error::invalid("brute-force sieve accepts 1D signals only"));
    }
    if scale < 1 {
        return Err(Error::invalid("scale must be at least 1"));
    }
    let mut data = signal.data().to_vec();
    let order: &[Remove] = match kind {
        FilterKind::Opening => &[Remove::Maxima],
        FilterKind::Closing => &[Remove::Minima],
        FilterKind::MFilter => &[Remove::Maxima, Remove::Minima],
        FilterKind::NFilter => &[Remove::Minima, Remove::Maxima],
    };
    for &what in order {
        single_pass(&mut data, scale, what);
    }
    Volume::new(signal.dims(), data)
}
