#pragma once

#include <cstddef>
#include <functional>

namespace tubemesh {

// Persistent worker pool. Work is partitioned by task index; every task is
// computed wholly by one thread with its internal loops in a fixed order, so
// results are bit-identical regardless of the thread count.
class ThreadPool {
 public:
  static ThreadPool& global();

  // n <= 0 resets to the hardware default (capped by TUBEMESH_THREADS).
  void set_thread_count(int n);
  int thread_count() const;

  // Runs body(i) for i in [0, n). Blocks until all tasks finish. The calling
  // thread participates. Nested calls run inline on the caller.
  void run(std::size_t n, const std::function<void(std::size_t)>& body);

  ~ThreadPool();

 private:
  ThreadPool();
  struct Impl;
  Impl* impl_;
};

inline void parallel_for(std::size_t n,
                         const std::function<void(std::size_t)>& body) {
  ThreadPool::global().run(n, body);
}

}  // namespace tubemesh
