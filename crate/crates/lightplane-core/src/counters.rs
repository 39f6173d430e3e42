//! Deterministic FLOP and scratch-memory instrumentation.
//!
//! "Memory" here means bytes of kernel-managed scratch requested through
//! [`KernelStats`], not process RSS: it is portable, exactly reproducible,
//! and measures precisely the buffers the kernels control. Fused kernels
//! allocate a bounded per-chunk workspace, so their peak is independent of
//! the number of samples per ray; the naive paths allocate their stored
//! intermediates through the same tracker and grow linearly with it.

use core::sync::atomic::{AtomicU64, Ordering};

/// Multiply-add counts, split by where they happen.
///
/// `multiply_adds` is the monotone total; the per-category fields let the
/// backward pass's *recompute* cost (MLP evaluations re-run in the forward
/// direction) be compared against the forward pass's own MLP cost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlopCounter {
    pub multiply_adds: u64,
    /// Forward-direction MLP matvec MACs (includes recomputation during
    /// backward passes).
    pub mlp_forward_macs: u64,
    /// MACs specific to MLP reverse-mode math (grad-input and grad-weight
    /// matvecs), excluding recomputation.
    pub mlp_vjp_macs: u64,
    /// Grid / plane interpolation and scatter MACs.
    pub interp_macs: u64,
}

impl FlopCounter {
    pub fn add_mlp_forward(&mut self, macs: u64) {
        self.mlp_forward_macs += macs;
        self.multiply_adds += macs;
    }

    pub fn add_mlp_vjp(&mut self, macs: u64) {
        self.mlp_vjp_macs += macs;
        self.multiply_adds += macs;
    }

    pub fn add_interp(&mut self, macs: u64) {
        self.interp_macs += macs;
        self.multiply_adds += macs;
    }

    pub fn merge(&mut self, other: &FlopCounter) {
        self.multiply_adds += other.multiply_adds;
        self.mlp_forward_macs += other.mlp_forward_macs;
        self.mlp_vjp_macs += other.mlp_vjp_macs;
        self.interp_macs += other.interp_macs;
    }
}

/// Shared, thread-safe instrumentation sink for one kernel invocation.
///
/// Chunk workers tally into private [`FlopCounter`]s and flush them here;
/// integer adds commute, so totals are identical for any worker schedule.
#[derive(Debug, Default)]
pub struct KernelStats {
    multiply_adds: AtomicU64,
    mlp_forward_macs: AtomicU64,
    mlp_vjp_macs: AtomicU64,
    interp_macs: AtomicU64,
    scratch_current: AtomicU64,
    scratch_peak: AtomicU64,
}

impl KernelStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn flush(&self, local: &FlopCounter) {
        self.multiply_adds
            .fetch_add(local.multiply_adds, Ordering::Relaxed);
        self.mlp_forward_macs
            .fetch_add(local.mlp_forward_macs, Ordering::Relaxed);
        self.mlp_vjp_macs
            .fetch_add(local.mlp_vjp_macs, Ordering::Relaxed);
        self.interp_macs
            .fetch_add(local.interp_macs, Ordering::Relaxed);
    }

    pub fn flops(&self) -> FlopCounter {
        FlopCounter {
            multiply_adds: self.multiply_adds.load(Ordering::Relaxed),
            mlp_forward_macs: self.mlp_forward_macs.load(Ordering::Relaxed),
            mlp_vjp_macs: self.mlp_vjp_macs.load(Ordering::Relaxed),
            interp_macs: self.interp_macs.load(Ordering::Relaxed),
        }
    }

    /// Registers `bytes` of live scratch; call [`KernelStats::release_scratch`]
    /// when the buffers are dropped.
    pub fn track_scratch(&self, bytes: u64) {
        let cur = self.scratch_current.fetch_add(bytes, Ordering::Relaxed) + bytes;
        self.scratch_peak.fetch_max(cur, Ordering::Relaxed);
    }

    pub fn release_scratch(&self, bytes: u64) {
        self.scratch_current.fetch_sub(bytes, Ordering::Relaxed);
    }

    pub fn peak_scratch_bytes(&self) -> u64 {
        self.scratch_peak.load(Ordering::Relaxed)
    }

    pub fn report(&self) -> ScratchReport {
        ScratchReport {
            peak_scratch_bytes: self.peak_scratch_bytes(),
            flops: self.flops(),
        }
    }
}

/// Summary of one instrumented run.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScratchReport {
    pub peak_scratch_bytes: u64,
    pub flops: FlopCounter,
}

/// A `Vec` whose length is charged against a [`KernelStats`] scratch tracker
/// for as long as it lives.
pub struct TrackedBuf<'a, S> {
    data: alloc::vec::Vec<S>,
    bytes: u64,
    stats: &'a KernelStats,
}

impl<'a, S: crate::math::Real> TrackedBuf<'a, S> {
    pub fn zeroed(stats: &'a KernelStats, len: usize) -> Self {
        let bytes = (len * core::mem::size_of::<S>()) as u64;
        stats.track_scratch(bytes);
        TrackedBuf {
            data: alloc::vec![S::ZERO; len],
            bytes,
            stats,
        }
    }
}

impl<S> core::ops::Deref for TrackedBuf<'_, S> {
    type Target = [S];
    fn deref(&self) -> &[S] {
        &self.data
    }
}

impl<S> core::ops::DerefMut for TrackedBuf<'_, S> {
    fn deref_mut(&mut self) -> &mut [S] {
        &mut self.data
    }
}

impl<S> Drop for TrackedBuf<'_, S> {
    fn drop(&mut self) {
        self.stats.release_scratch(self.bytes);
    }
}
