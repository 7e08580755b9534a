// Copyright 2026 The idconf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "idconf/errors.hpp"

namespace idconf {

/// Execution knobs shared by every parallel loop.
struct RunControl {
  /// Worker count; 0 picks std::thread::hardware_concurrency().
  std::size_t threads = 0;
  /// Called with (completed, total) after each iteration, serialized.
  std::function<void(std::size_t, std::size_t)> progress;
  /// Checked between iterations; when set, the loop throws Cancelled.
  const std::atomic<bool>* cancel = nullptr;

  std::size_t resolved_threads() const noexcept {
    if (threads > 0) return threads;
    return std::max(1u, std::thread::hardware_concurrency());
  }
};

/// Runs body(i) for i in [0, n). Iterations are claimed dynamically, so the
/// body must depend on i only, never on which worker runs it. The first
/// exception thrown by any iteration is rethrown after all workers stop.
template <typename Body>
void parallel_for(std::size_t n, const RunControl& control, Body&& body) {
  if (n == 0) return;
  const std::size_t workers = std::min(control.resolved_threads(), n);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex mutex;

  auto work = [&] {
    for (;;) {
      if (failed.load(std::memory_order_relaxed)) return;
      if (control.cancel && control.cancel->load(std::memory_order_relaxed)) {
        std::lock_guard lock(mutex);
        if (!error) error = std::make_exception_ptr(Cancelled());
        failed = true;
        return;
      }
      const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!error) error = std::current_exception();
        failed = true;
        return;
      }
      const std::size_t completed = done.fetch_add(1, std::memory_order_relaxed) + 1;
      if (control.progress) {
        std::lock_guard lock(mutex);
        control.progress(completed, n);
      }
    }
  };

  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 0; w + 1 < workers; ++w) pool.emplace_back(work);
    work();
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace idconf
