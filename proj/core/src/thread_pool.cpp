#include "lear/thread_pool.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace lear {
namespace {

thread_local bool g_inside_worker = false;

class Pool {
 public:
  static Pool& instance() {
    static Pool pool;
    return pool;
  }

  int size() const { return static_cast<int>(workers_.size()) + 1; }

  void run(std::int64_t n,
           const std::function<void(std::int64_t, std::int64_t)>& fn) {
    if (n <= 0) return;
    const int parts = size();
    if (parts == 1 || g_inside_worker || n < 2) {
      fn(0, n);
      return;
    }
    {
      std::unique_lock<std::mutex> lock(mutex_);
      job_fn_ = &fn;
      job_n_ = n;
      job_parts_ = parts;
      next_chunk_.store(0, std::memory_order_relaxed);
      pending_ = static_cast<int>(workers_.size());
      ++generation_;
    }
    cv_.notify_all();
    work_chunks(fn, n, parts);  // main thread takes part
    std::unique_lock<std::mutex> lock(mutex_);
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    job_fn_ = nullptr;
  }

 private:
  Pool() {
    int threads = static_cast<int>(std::thread::hardware_concurrency());
    if (const char* env = std::getenv("LEAR_THREADS")) {
      const int v = std::atoi(env);
      if (v >= 1) threads = v;
    }
    if (threads < 1) threads = 1;
    for (int i = 0; i + 1 < threads; ++i) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  ~Pool() {
    {
      std::unique_lock<std::mutex> lock(mutex_);
      stop_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  void work_chunks(const std::function<void(std::int64_t, std::int64_t)>& fn,
                   std::int64_t n, int parts) {
    const std::int64_t chunk = (n + parts - 1) / parts;
    for (;;) {
      const std::int64_t begin = next_chunk_.fetch_add(chunk);
      if (begin >= n) break;
      fn(begin, std::min(begin + chunk, n));
    }
  }

  void worker_loop() {
    g_inside_worker = true;
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(std::int64_t, std::int64_t)>* fn = nullptr;
      std::int64_t n = 0;
      int parts = 0;
      {
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        seen = generation_;
        if (stop_) return;
        fn = job_fn_;
        n = job_n_;
        parts = job_parts_;
      }
      if (fn != nullptr) work_chunks(*fn, n, parts);
      {
        std::unique_lock<std::mutex> lock(mutex_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(std::int64_t, std::int64_t)>* job_fn_ = nullptr;
  std::int64_t job_n_ = 0;
  int job_parts_ = 0;
  int pending_ = 0;
  std::uint64_t generation_ = 0;
  std::atomic<std::int64_t> next_chunk_{0};
  bool stop_ = false;
};

}  // namespace

int worker_count() { return Pool::instance().size(); }

void parallel_for(std::int64_t n,
                  const std::function<void(std::int64_t, std::int64_t)>& fn) {
  Pool::instance().run(n, fn);
}

}  // namespace lear
