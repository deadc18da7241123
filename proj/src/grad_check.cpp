#include "voxattn/grad_check.hpp"

#include <cmath>

namespace voxattn {

namespace {

double run_forward(const GradCheckGraph& graph, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (const auto& in : inputs) ids.push_back(tape.add_leaf(in));
  int root = graph(tape, ids);
  const Tensor<double>& v = tape.value(root);
  if (v.numel() != 1) {
    throw DimensionError("grad_check graph must produce a scalar, got " + v.shape_string());
  }
  return v[0];
}

}  // namespace

GradCheckReport grad_check(const GradCheckGraph& graph, std::vector<Tensor<double>> inputs,
                           double epsilon, double denom_floor) {
  std::int64_t total = 0;
  for (const auto& in : inputs) total += in.numel();
  if (total > 20000) {
    throw ConfigError("grad_check inputs have " + std::to_string(total) +
                      " elements; exhaustive perturbation is limited to small tensors");
  }

  // Analytic pass.
  Tape<double> tape;
  std::vector<int> ids;
  for (const auto& in : inputs) ids.push_back(tape.add_leaf(in));
  int root = graph(tape, ids);
  tape.backward(root);

  GradCheckReport report;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    if (!inputs[t].requires_grad()) continue;
    const Tensor<double>& analytic = tape.gradient(ids[t]);
    for (std::int64_t e = 0; e < inputs[t].numel(); ++e) {
      const double saved = inputs[t][e];
      inputs[t][e] = saved + epsilon;
      const double f_plus = run_forward(graph, inputs);
      inputs[t][e] = saved - epsilon;
      const double f_minus = run_forward(graph, inputs);
      inputs[t][e] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * epsilon);
      const double a = analytic[e];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), denom_floor});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_input = static_cast<int>(t);
        report.worst_element = e;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace voxattn
