#include "tubemesh/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace tubemesh {

namespace {
thread_local bool in_parallel_region = false;

int default_thread_count() {
  if (const char* env = std::getenv("TUBEMESH_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}
}  // namespace

struct ThreadPool::Impl {
  std::mutex mu;
  std::condition_variable cv_work;
  std::condition_variable cv_done;
  std::vector<std::thread> workers;
  std::function<void(std::size_t)> job;
  std::atomic<std::size_t> next{0};
  std::size_t total = 0;
  std::size_t done = 0;
  std::uint64_t generation = 0;
  bool stopping = false;
  int threads = 1;

  // run() does not return until every worker has finished the generation,
  // so `job` is never read after the caller's callable is gone.
  void worker_loop() {
    in_parallel_region = true;
    std::uint64_t seen = 0;
    std::unique_lock<std::mutex> lk(mu);
    for (;;) {
      cv_work.wait(lk, [&] { return stopping || generation != seen; });
      if (stopping) return;
      seen = generation;
      lk.unlock();
      for (;;) {
        std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
        if (i >= total) break;
        job(i);
      }
      lk.lock();
      if (++done == workers.size()) cv_done.notify_one();
    }
  }

  void start(int n) {
    threads = n;
    stopping = false;
    for (int i = 1; i < n; ++i) workers.emplace_back([this] { worker_loop(); });
  }

  void stop() {
    {
      std::lock_guard<std::mutex> lk(mu);
      stopping = true;
    }
    cv_work.notify_all();
    for (auto& t : workers) t.join();
    workers.clear();
  }
};

ThreadPool::ThreadPool() : impl_(new Impl) {
  impl_->start(default_thread_count());
}

ThreadPool::~ThreadPool() {
  impl_->stop();
  delete impl_;
}

ThreadPool& ThreadPool::global() {
  static ThreadPool pool;
  return pool;
}

void ThreadPool::set_thread_count(int n) {
  if (n <= 0) n = default_thread_count();
  impl_->stop();
  impl_->start(n);
}

int ThreadPool::thread_count() const { return impl_->threads; }

void ThreadPool::run(std::size_t n,
                     const std::function<void(std::size_t)>& body) {
  if (n == 0) return;
  if (in_parallel_region || impl_->threads == 1 || n == 1 ||
      impl_->workers.empty()) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  {
    std::lock_guard<std::mutex> lk(impl_->mu);
    impl_->job = body;
    impl_->total = n;
    impl_->done = 0;
    impl_->next.store(0, std::memory_order_relaxed);
    ++impl_->generation;
  }
  impl_->cv_work.notify_all();
  in_parallel_region = true;
  for (;;) {
    std::size_t i = impl_->next.fetch_add(1, std::memory_order_relaxed);
    if (i >= impl_->total) break;
    body(i);
  }
  in_parallel_region = false;
  std::unique_lock<std::mutex> lk(impl_->mu);
  impl_->cv_done.wait(lk, [&] { return impl_->done == impl_->workers.size(); });
}

}  // namespace tubemesh
