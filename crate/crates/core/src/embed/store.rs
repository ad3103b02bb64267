//! Row-addressed parameter storage used by the training loop.
//!
//! `PlainRows` is exclusive and deterministic. `SharedRows` lets several
//! workers update one matrix without locks: each element is an `AtomicU64`
//! holding f64 bits, read and written with relaxed ordering, so concurrent
//! read-modify-write sequences may lose updates (hogwild semantics).

use std::sync::atomic::{AtomicU64, Ordering};

pub(crate) trait RowStore {
    fn read(&self, row: usize, out: &mut [f64]);
    /// `row += a * x`
    fn axpy(&mut self, row: usize, a: f64, x: &[f64]);
}

pub(crate) struct PlainRows<'a> {
    data: &'a mut [f64],
    dim: usize,
}

impl<'a> PlainRows<'a> {
    pub fn new(data: &'a mut [f64], dim: usize) -> Self {
        PlainRows { data, dim }
    }
}

impl RowStore for PlainRows<'_> {
    #[inline]
    fn read(&self, row: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.data[row * self.dim..(row + 1) * self.dim]);
    }

    #[inline]
    fn axpy(&mut self, row: usize, a: f64, x: &[f64]) {
        let r = &mut self.data[row * self.dim..(row + 1) * self.dim];
        for (v, xi) in r.iter_mut().zip(x) {
            *v += a * xi;
        }
    }
}

/// Read-only view; updates are dropped.
pub(crate) struct Frozen<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> Frozen<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Self {
        Frozen { data, dim }
    }
}

impl RowStore for Frozen<'_> {
    #[inline]
    fn read(&self, row: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.data[row * self.dim..(row + 1) * self.dim]);
    }

    #[inline]
    fn axpy(&mut self, _row: usize, _a: f64, _x: &[f64]) {}
}

pub(crate) fn to_atomic(data: &[f64]) -> Vec<AtomicU64> {
    data.iter().map(|v| AtomicU64::new(v.to_bits())).collect()
}

pub(crate) fn from_atomic(data: Vec<AtomicU64>) -> Vec<f64> {
    data.into_iter()
        .map(|a| f64::from_bits(a.into_inner()))
        .collect()
}

#[derive(Clone, Copy)]
pub(crate) struct SharedRows<'a> {
    data: &'a [AtomicU64],
    dim: usize,
}

impl<'a> SharedRows<'a> {
    pub fn new(data: &'a [AtomicU64], dim: usize) -> Self {
        SharedRows { data, dim }
    }
}

impl RowStore for SharedRows<'_> {
    #[inline]
    fn read(&self, row: usize, out: &mut [f64]) {
        let r = &self.data[row * self.dim..(row + 1) * self.dim];
        for (o, a) in out.iter_mut().zip(r) {
            *o = f64::from_bits(a.load(Ordering::Relaxed));
        }
    }

    #[inline]
    fn axpy(&mut self, row: usize, a: f64, x: &[f64]) {
        let r = &self.data[row * self.dim..(row + 1) * self.dim];
        for (v, xi) in r.iter().zip(x) {
            let cur = f64::from_bits(v.load(Ordering::Relaxed));
            v.store((cur + a * xi).to_bits(), Ordering::Relaxed);
        }
    }
}
