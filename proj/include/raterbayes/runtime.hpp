// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace raterbayes {

/// Keep large activation buffers on the heap between operations instead of
/// returning them to the kernel. Without this every op pays page faults on
/// multi-megabyte tensors. No-op outside glibc. Call once from main().
void configure_allocator();

} // namespace raterbayes
