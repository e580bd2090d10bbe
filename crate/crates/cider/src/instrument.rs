//! Lightweight call counters used by tests to prove that disabled code paths
//! are never entered (e.g. background removal when microscopy mode is off).

use std::sync::atomic::{AtomicU64, Ordering};

pub static BACKGROUND_REMOVAL_CALLS: AtomicU64 = AtomicU64::new(0);
pub static SPARSITY_TERM_CALLS: AtomicU64 = AtomicU64::new(0);

pub fn count_background_removal() {
    BACKGROUND_REMOVAL_CALLS.fetch_add(1, Ordering::Relaxed);
}

pub fn count_sparsity_term() {
    SPARSITY_TERM_CALLS.fetch_add(1, Ordering::Relaxed);
}

pub fn background_removal_calls() -> u64 {
    BACKGROUND_REMOVAL_CALLS.load(Ordering::Relaxed)
}

pub fn sparsity_term_calls() -> u64 {
    SPARSITY_TERM_CALLS.load(Ordering::Relaxed)
}
