#pragma once

#include <cstddef>
#include <cstdint>
#include <mutex>
#include <new>
#include <utility>
#include <vector>

namespace dgf {

namespace detail {

// Size-class recycling pool for tensor value buffers. Graph buffers are
// allocated and released in bulk every training step; recycling keeps the
// pages faulted-in and warm. Leaked intentionally to stay alive for
// statically-stored tensors.
class BufferPool {
 public:
  static BufferPool& instance() {
    static BufferPool* pool = new BufferPool();
    return *pool;
  }

  void* allocate(size_t bytes) {
    const int cls = size_class(bytes);
    if (cls < 0) return ::operator new(bytes);
    const size_t rounded = size_t{1} << cls;
    {
      std::lock_guard<std::mutex> lk(mu_);
      auto& bucket = buckets_[cls - kMinClass];
      if (!bucket.empty()) {
        void* p = bucket.back();
        bucket.pop_back();
        pooled_bytes_ -= rounded;
        return p;
      }
    }
    return ::operator new(rounded);
  }

  void deallocate(void* p, size_t bytes) {
    const int cls = size_class(bytes);
    if (cls < 0) {
      ::operator delete(p);
      return;
    }
    const size_t rounded = size_t{1} << cls;
    {
      std::lock_guard<std::mutex> lk(mu_);
      if (pooled_bytes_ + rounded <= kMaxPooledBytes) {
        buckets_[cls - kMinClass].push_back(p);
        pooled_bytes_ += rounded;
        return;
      }
    }
    ::operator delete(p);
  }

  void release_all() {
    std::lock_guard<std::mutex> lk(mu_);
    for (auto& b : buckets_) {
      for (void* p : b) ::operator delete(p);
      b.clear();
    }
    pooled_bytes_ = 0;
  }

 private:
  static constexpr int kMinClass = 12;  // 4 KiB
  static constexpr int kMaxClass = 31;  // 2 GiB
  static constexpr size_t kMaxPooledBytes = size_t{6} << 30;

  static int size_class(size_t bytes) {
    if (bytes < (size_t{1} << kMinClass)) return -1;
    int cls = kMinClass;
    while ((size_t{1} << cls) < bytes) ++cls;
    return cls <= kMaxClass ? cls : -1;
  }

  std::mutex mu_;
  std::vector<void*> buckets_[kMaxClass - kMinClass + 1];
  size_t pooled_bytes_ = 0;
};

}  // namespace detail

/// Allocator for tensor value buffers: recycles large blocks through a
/// process-wide pool and default-initializes trivially-constructible
/// elements (buffers are either explicitly filled or fully overwritten).
template <typename T>
struct PoolAllocator {
  using value_type = T;

  PoolAllocator() = default;
  template <typename U>
  PoolAllocator(const PoolAllocator<U>&) {}

  T* allocate(size_t n) {
    return static_cast<T*>(detail::BufferPool::instance().allocate(n * sizeof(T)));
  }

  void deallocate(T* p, size_t n) { detail::BufferPool::instance().deallocate(p, n * sizeof(T)); }

  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    if constexpr (sizeof...(Args) == 0 && std::is_trivially_default_constructible_v<U>)
      ::new (static_cast<void*>(p)) U;  // default-init: no zero fill
    else
      ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }

  bool operator==(const PoolAllocator&) const { return true; }
  bool operator!=(const PoolAllocator&) const { return false; }
};

/// Value-buffer vector type used throughout the tensor core.
template <typename S>
using Vec = std::vector<S, PoolAllocator<S>>;

}  // namespace dgf
