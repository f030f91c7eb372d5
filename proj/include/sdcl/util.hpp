#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace sdcl {

/// Invalid configuration (bad flag combination, malformed config file).
/// CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad or missing input data (unreadable file, empty mask, broken archive).
/// CLI exit code 3.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Numerical failure (non-finite gradient, degenerate statistics).
/// CLI exit code 4.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor shape/dimension mismatch.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

/// Minimal persistent pool: workers claim chunk indices from a shared
/// counter, the caller runs chunk 0 and then helps drain the rest. Chunk
/// boundaries are a pure function of (n, thread count), so chunk-ordered
/// reductions stay deterministic no matter which thread ran which chunk.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  int max_parallelism() const { return static_cast<int>(workers_.size()) + 1; }

  /// Runs fn(chunk) for chunk in [0, n_chunks), blocking until all are done.
  /// The first exception thrown by any chunk is rethrown on the caller.
  /// Nested calls (from inside a chunk) run serially.
  void run_chunks(int n_chunks, const std::function<void(int)>& fn) {
    if (n_chunks <= 0) return;
    if (n_chunks == 1 || workers_.empty() || inside_job()) {
      for (int c = 0; c < n_chunks; ++c) fn(c);
      return;
    }
    std::exception_ptr error;
    {
      std::lock_guard lock(mu_);
      job_fn_ = &fn;
      job_error_ = &error;
      n_chunks_ = n_chunks;
      next_chunk_ = 1;  // chunk 0 belongs to the caller
      unfinished_ = n_chunks;
      generation_++;
    }
    cv_work_.notify_all();
    run_one(0, error);
    // Help drain remaining chunks, then wait for stragglers.
    for (;;) {
      int chunk;
      {
        std::lock_guard lock(mu_);
        if (next_chunk_ >= n_chunks_) break;
        chunk = next_chunk_++;
      }
      run_one(chunk, error);
    }
    {
      std::unique_lock lock(mu_);
      cv_done_.wait(lock, [&] { return unfinished_ == 0; });
      job_fn_ = nullptr;
      job_error_ = nullptr;
    }
    if (error) std::rethrow_exception(error);
  }

 private:
  ThreadPool() {
    unsigned hw = std::thread::hardware_concurrency();
    int n_workers = hw > 1 ? static_cast<int>(hw) - 1 : 0;
    for (int i = 0; i < n_workers; ++i)
      workers_.emplace_back([this] { worker_loop(); });
  }

  ~ThreadPool() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_work_.notify_all();
    for (auto& w : workers_) w.join();
  }

  static bool& inside_job() {
    thread_local bool flag = false;
    return flag;
  }

  void run_one(int chunk, std::exception_ptr& error) {
    inside_job() = true;
    try {
      (*job_fn_)(chunk);
    } catch (...) {
      std::lock_guard lock(mu_);
      if (!error) error = std::current_exception();
    }
    inside_job() = false;
    std::lock_guard lock(mu_);
    if (--unfinished_ == 0) cv_done_.notify_all();
  }

  void worker_loop() {
    uint64_t seen = 0;
    for (;;) {
      int chunk = -1;
      std::exception_ptr* error = nullptr;
      {
        std::unique_lock lock(mu_);
        cv_work_.wait(lock, [&] {
          return stop_ || (generation_ != seen && job_fn_ != nullptr &&
                           next_chunk_ < n_chunks_);
        });
        if (stop_) return;
        if (job_fn_ == nullptr || next_chunk_ >= n_chunks_) {
          seen = generation_;
          continue;
        }
        chunk = next_chunk_++;
        if (next_chunk_ >= n_chunks_) seen = generation_;
        error = job_error_;
      }
      run_one(chunk, *error);
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_work_, cv_done_;
  const std::function<void(int)>* job_fn_ = nullptr;
  std::exception_ptr* job_error_ = nullptr;
  int n_chunks_ = 0;
  int next_chunk_ = 0;
  int unfinished_ = 0;
  uint64_t generation_ = 0;
  bool stop_ = false;
};

}  // namespace detail

/// Number of chunks parallel work over n items is split into; callers sizing
/// per-chunk accumulators must use this to match the partition.
inline int parallel_chunks(int64_t n, int64_t min_per_chunk = 1) {
  if (n <= 0) return 0;
  int64_t max_chunks = (n + min_per_chunk - 1) / min_per_chunk;
  return static_cast<int>(std::min<int64_t>(
      detail::ThreadPool::instance().max_parallelism(), max_chunks));
}

/// Splits [0, n) into contiguous chunks and runs body(chunk, begin, end) on
/// each, possibly concurrently. Chunk boundaries depend only on n and the
/// machine's thread count, never on scheduling.
inline void parallel_for_chunked(
    int64_t n, const std::function<void(int, int64_t, int64_t)>& body,
    int64_t min_per_chunk = 1) {
  if (n <= 0) return;
  int n_chunks = parallel_chunks(n, min_per_chunk);
  int64_t base = n / n_chunks, rem = n % n_chunks;
  detail::ThreadPool::instance().run_chunks(n_chunks, [&](int c) {
    int64_t begin = c * base + std::min<int64_t>(c, rem);
    int64_t end = begin + base + (c < rem ? 1 : 0);
    body(c, begin, end);
  });
}

/// parallel_for_chunked without the chunk index.
inline void parallel_for(int64_t n,
                         const std::function<void(int64_t, int64_t)>& body,
                         int64_t min_per_chunk = 1) {
  parallel_for_chunked(
      n, [&](int, int64_t b, int64_t e) { body(b, e); }, min_per_chunk);
}

}  // namespace sdcl
