//! Process-level tuning for the training workloads.

/// Keep freed memory inside the process heap instead of returning large
/// blocks to the kernel.
///
/// Training allocates and frees tens of megabytes per layer and step. With
/// the default glibc policy each of those blocks is a fresh `mmap`, so every
/// step pays for page faults again; on virtual machines that dominates the
/// arithmetic. Call once at startup. Has no effect off glibc.
pub fn retain_heap_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator thresholds; it is called before
    // any other thread touches the heap in our binaries and is safe to call
    // at any time per glibc documentation.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}
