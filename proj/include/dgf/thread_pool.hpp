#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace dgf {

/// Fixed-size worker pool for data-parallel kernels. Work items write to
/// disjoint output slices and are indexed deterministically, so results do
/// not depend on the worker count or on scheduling order.
class ThreadPool {
 public:
  explicit ThreadPool(int workers) {
    if (workers <= 0) {
      workers = static_cast<int>(std::thread::hardware_concurrency());
      if (workers <= 0) workers = 1;
    }
    workers_ = workers;
    for (int i = 1; i < workers_; ++i) {
      threads_.emplace_back([this] { worker_loop(); });
    }
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  int workers() const { return workers_; }

  /// Runs fn(i) for i in [0, n). Blocks until all items finish. The calling
  /// thread participates, so the pool is usable with a single worker. Items
  /// are handed out in fixed-size blocks; results never depend on the worker
  /// count because every item is computed independently exactly once.
  void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
    if (n <= 0) return;
    if (workers_ == 1 || n == 1) {
      for (int64_t i = 0; i < n; ++i) fn(i);
      return;
    }
    const int64_t block = std::max<int64_t>(1, n / (static_cast<int64_t>(workers_) * 8));
    const int64_t blocks = (n + block - 1) / block;
    {
      std::lock_guard<std::mutex> lk(mu_);
      job_ = &fn;
      job_n_ = n;
      job_block_ = block;
      job_total_ = blocks;
      job_next_ = 0;
      job_done_ = 0;
      ++job_epoch_;
    }
    cv_.notify_all();
    run_items();
    std::unique_lock<std::mutex> lk(mu_);
    done_cv_.wait(lk, [this] { return job_done_ == job_total_; });
    job_ = nullptr;
  }

  /// Process-wide pool sized from `dgf::set_default_workers` (or hardware
  /// concurrency when unset).
  static ThreadPool& global();

  static void set_default_workers(int workers);

 private:
  void run_items() {
    for (;;) {
      int64_t blk;
      const std::function<void(int64_t)>* job;
      int64_t n, block;
      {
        std::lock_guard<std::mutex> lk(mu_);
        if (!job_ || job_next_ >= job_total_) return;
        blk = job_next_++;
        job = job_;
        n = job_n_;
        block = job_block_;
      }
      const int64_t lo = blk * block;
      const int64_t hi = std::min(n, lo + block);
      for (int64_t i = lo; i < hi; ++i) (*job)(i);
      std::lock_guard<std::mutex> lk(mu_);
      if (++job_done_ == job_total_) done_cv_.notify_all();
    }
  }

  void worker_loop() {
    uint64_t seen_epoch = 0;
    for (;;) {
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return stop_ || job_epoch_ != seen_epoch; });
        if (stop_) return;
        seen_epoch = job_epoch_;
      }
      run_items();
    }
  }

  int workers_;
  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  bool stop_ = false;
  const std::function<void(int64_t)>* job_ = nullptr;
  int64_t job_n_ = 0;
  int64_t job_block_ = 1;
  int64_t job_total_ = 0;
  int64_t job_next_ = 0;
  int64_t job_done_ = 0;
  uint64_t job_epoch_ = 0;
};

namespace detail {
inline int& default_workers_slot() {
  static int v = 0;
  return v;
}
}  // namespace detail

inline void ThreadPool::set_default_workers(int workers) { detail::default_workers_slot() = workers; }

inline ThreadPool& ThreadPool::global() {
  static ThreadPool pool(detail::default_workers_slot());
  return pool;
}

}  // namespace dgf
