pub mod error;
pub mod estimator;
mod fastmath;
pub mod cli;
pub mod features;
pub mod geometry;
pub mod network;
pub mod oracle;
pub mod trainer;

pub use error::{Error, Result};
pub use fastmath::{exp_in_place, tanh_in_place};

/// Keeps large freed blocks in the process heap instead of returning them to
/// the OS. Training allocates multi-megabyte buffers every epoch; with the
/// default glibc thresholds each one is a fresh mapping that must be
/// page-faulted in, which costs about a third of the run time. Call once at
/// program start; a no-op off glibc.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator parameters.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}
