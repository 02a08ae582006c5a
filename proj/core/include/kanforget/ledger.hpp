#pragma once

#include <cmath>
#include <cstddef>
#include <limits>

#include "kanforget/matrix.hpp"

namespace kanforget {

/// Loss (and accuracy) of checkpoint f^(t) on task D_i, both 0-based here.
/// Unrecorded cells hold NaN.
struct ForgettingLedger {
  ForgettingLedger() = default;
  explicit ForgettingLedger(std::size_t task_count)
      : loss(task_count, task_count, std::numeric_limits<double>::quiet_NaN()),
        accuracy(task_count, task_count, std::numeric_limits<double>::quiet_NaN()) {}

  Matrix loss;      // loss(t, i) = L(f^(t), D_i)
  Matrix accuracy;  // same indexing

  [[nodiscard]] std::size_t task_count() const noexcept { return loss.rows(); }

  [[nodiscard]] bool complete() const noexcept {
    for (double v : loss.values()) {
      if (!std::isfinite(v)) return false;
    }
    return task_count() > 0;
  }

  friend bool operator==(const ForgettingLedger&, const ForgettingLedger&) = default;
};

}  // namespace kanforget
