#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace wlm {

// Training allocates and frees many large activation buffers per step. With
// glibc defaults each one is a fresh mmap, and the page faults dominate
// system time; keeping them on the heap avoids that.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace wlm
