#pragma once

namespace dif {

/// Raises glibc's mmap and trim thresholds so that the large, short-lived
/// buffers of a training step are recycled from the heap instead of being
/// mapped and unmapped every iteration. Safe to call more than once.
void configure_allocator();

}  // namespace dif
