#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "qotr/gradcheck.hpp"

namespace qotr {

inline constexpr double kPrimitiveGradTol = 1e-4;
inline constexpr double kCompositeGradTol = 1e-3;

struct GradSuiteEntry {
  std::string name;
  double tolerance = 0;
  GradCheckResult result;
  double seconds = 0;

  bool passed() const { return result.max_rel_error <= tolerance; }
};

// Finite-difference checks of every differentiable op and the full
// generator at toy size, all in double precision.
std::vector<GradSuiteEntry> run_grad_suite(std::uint64_t seed = 1,
                                           const std::function<void(const GradSuiteEntry&)>& on_result = {});

}  // namespace qotr
