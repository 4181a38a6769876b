#pragma once

#include <cstddef>
#include <memory>

namespace dgf::detail {

/// Thread-local scratch buffers for kernel internals (im2col columns and the
/// like). Buffers grow monotonically and are reused across calls, so steady
/// state training performs no allocation in the hot path. Each pool thread
/// sees its own set; a kernel may hold several live slots at once.
template <typename S>
S* scratch_buffer(int slot, size_t count) {
  constexpr int kSlots = 4;
  thread_local std::unique_ptr<S[]> bufs[kSlots];
  thread_local size_t sizes[kSlots] = {0, 0, 0, 0};
  if (sizes[slot] < count) {
    bufs[slot] = std::make_unique_for_overwrite<S[]>(count);
    sizes[slot] = count;
  }
  return bufs[slot].get();
}

}  // namespace dgf::detail
