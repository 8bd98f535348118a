// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace gstrack {

/// Number of workers used by parallel_for. 1 means fully sequential.
int worker_count();
void set_worker_count(int n);

/// RAII override of the worker count, used for deterministic runs.
class ScopedWorkers {
  public:
    explicit ScopedWorkers(int n) : saved_(worker_count()) { set_worker_count(n); }
    ~ScopedWorkers() { set_worker_count(saved_); }
    ScopedWorkers(const ScopedWorkers &) = delete;
    ScopedWorkers &operator=(const ScopedWorkers &) = delete;

  private:
    int saved_;
};

/// Calls body(worker, i) for i in [0, n). Item i always goes to worker
/// i % worker_count(), so per-worker reductions are reproducible.
void parallel_for(std::size_t n, const std::function<void(int worker, std::size_t i)> &body);

} // namespace gstrack
