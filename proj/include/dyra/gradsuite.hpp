#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dyra/core.hpp"

namespace dyra {

/// Aggregated gradcheck outcome for one loss family.
struct GradSuiteResult {
  std::string name;
  int trials = 0;
  int failures = 0;
  double max_rel_error = 0.0;
  bool passed() const { return failures == 0; }
};

/// Central-difference verification of every differentiable surface: the
/// scale/Pareto losses, both balance variants (in gamma), the stage
/// compositions, the total losses and the predictor forward pass. Random
/// instances are drawn away from clamp boundaries and the L1 kink.
std::vector<GradSuiteResult> run_gradient_suite(std::uint64_t seed, int trials_per_loss,
                                                const ScalerConfig& cfg, double tol = 1e-4);

std::string format_gradient_suite(const std::vector<GradSuiteResult>& results);

}  // namespace dyra
