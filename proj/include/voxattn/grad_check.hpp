#pragma once

#include <functional>
#include <string>
#include <vector>

#include "voxattn/tape.hpp"

namespace voxattn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  // Where the worst disagreement sits: input tensor index and flat element.
  int worst_input = -1;
  std::int64_t worst_element = -1;
  double analytic = 0.0;
  double numeric = 0.0;

  bool passes(double tolerance) const { return max_rel_error < tolerance; }
};

// Builds a graph over the given leaf ids and returns the scalar root id.
// Called once per perturbation, so it must be a pure function of the leaves.
using GradCheckGraph = std::function<int(Tape<double>&, const std::vector<int>&)>;

// Central-difference check of every element of every input against the
// analytic gradient from backward(). Relative errors use a denominator of
// max(|analytic|, |numeric|, denom_floor). Runs the whole graph in 64-bit.
GradCheckReport grad_check(const GradCheckGraph& graph, std::vector<Tensor<double>> inputs,
                           double epsilon = 1e-6, double denom_floor = 1e-8);

}  // namespace voxattn
