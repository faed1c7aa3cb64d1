#pragma once

namespace fdlab {

/// Keeps large tensor buffers on the heap instead of fresh mmap pages.
/// Training allocates and frees multi-megabyte buffers every step; with the
/// default glibc thresholds each one is a new mapping whose page faults cost
/// about a third of the step time. No-op outside glibc.
void tune_allocator();

}  // namespace fdlab
