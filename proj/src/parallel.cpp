// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#include "gstrack/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace gstrack {

namespace {

std::atomic<int> &workers() {
    static std::atomic<int> n{std::max(1, static_cast<int>(std::thread::hardware_concurrency()))};
    return n;
}

} // namespace

int worker_count() { return workers().load(); }

void set_worker_count(int n) { workers().store(std::max(1, n)); }

void parallel_for(std::size_t n, const std::function<void(int, std::size_t)> &body) {
    const int w = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(worker_count()), n));
    if (w <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            body(0, i);
        }
        return;
    }
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(w));
    for (int t = 0; t < w; ++t) {
        threads.emplace_back([&, t] {
            try {
                for (std::size_t i = static_cast<std::size_t>(t); i < n; i += static_cast<std::size_t>(w)) {
                    body(t, i);
                }
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) {
                    error = std::current_exception();
                }
            }
        });
    }
    for (auto &th : threads) {
        th.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

} // namespace gstrack
