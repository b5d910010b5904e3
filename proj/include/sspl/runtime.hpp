#pragma once

#include <malloc.h>

namespace sspl {

/// Keeps glibc from returning the training loop's large transient buffers to
/// the kernel on every free; otherwise each step refaults hundreds of MB of
/// freshly mmapped pages. Call once at process start.
inline void tune_allocator() {
#ifdef M_MMAP_MAX
    mallopt(M_MMAP_MAX, 0);
    mallopt(M_TRIM_THRESHOLD, -1);
#endif
}

} // namespace sspl
