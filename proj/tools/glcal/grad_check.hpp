#pragma once

#include <cstdint>

namespace glcal::cli {

struct GradCheckSummary {
  int trials = 0;
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
};

/// Random small networks (m <= 5, up to 3 layers, batch <= 8) checked against
/// central differences.
GradCheckSummary run_grad_check(std::uint64_t seed, int trials, double eps);

}  // namespace glcal::cli
