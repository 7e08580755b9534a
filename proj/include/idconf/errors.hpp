// Copyright 2026 The idconf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace idconf {

/// Bad input data: malformed files, schema mismatches, invariant violations.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation could not proceed (degenerate null, non-PD covariance,
/// retries exhausted, cancellation).
class ComputeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown between permutation iterations when a cancellation token fires.
class Cancelled : public ComputeError {
 public:
  Cancelled() : ComputeError("run cancelled") {}
};

}  // namespace idconf
