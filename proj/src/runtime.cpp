// SPDX-License-Identifier: Apache-2.0
#include "raterbayes/runtime.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace raterbayes {

void configure_allocator() {
#if defined(__GLIBC__)
  // 32 MiB is the largest mmap threshold glibc accepts through mallopt.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

} // namespace raterbayes
