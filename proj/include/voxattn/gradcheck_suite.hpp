#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxattn/grad_check.hpp"
#include "voxattn/tensor.hpp"

namespace voxattn {

// One finite-difference check: a named scalar graph plus the leaf tensors it
// perturbs. Shapes are fixed per case; seeds only vary the sampled values.
struct GradCase {
  std::string name;
  std::vector<Tensor<double>> inputs;
  GradCheckGraph graph;
  // Composed graphs accumulate roundoff; a slightly larger step keeps the
  // difference quotient above the cancellation floor.
  double epsilon = 1e-6;
};

// Catalogue covering every differentiable kernel plus the composed residual
// block, sized to keep exhaustive perturbation cheap.
std::vector<GradCase> gradcheck_cases(std::uint64_t seed);

struct GradSuiteEntry {
  std::string name;
  std::uint64_t seed = 0;
  GradCheckReport report;
};

struct GradSuiteResult {
  std::vector<GradSuiteEntry> entries;
  double worst_rel_error = 0.0;

  bool passes(double tolerance) const { return worst_rel_error < tolerance; }
};

// Runs the full catalogue for seeds [0, seeds), collecting one report per
// (case, seed) pair.
GradSuiteResult run_gradcheck_suite(std::uint64_t seeds = 5);

}  // namespace voxattn
