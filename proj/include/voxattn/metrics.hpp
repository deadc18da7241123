#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace voxattn {

// Confusion counts binarize label 2 as positive against the other two
// classes; accuracy stays three-class. Ratios with an empty denominator are
// left unset rather than forced to 0.
struct MetricsReport {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::int64_t n = 0;
  std::optional<double> accuracy;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> f1;
  std::optional<double> auc;
};

// Rank-based (Mann-Whitney) AUC: the fraction of (positive, negative) pairs
// ranked correctly, ties counted half. Win and tie counts are accumulated as
// integers, so the result equals the all-pairs computation exactly. Empty if
// either class is absent.
std::optional<double> roc_auc(const std::vector<double>& scores,
                              const std::vector<int>& labels);

// predictions and labels are 3-class indices; scores are the positive-class
// probabilities used for AUC. Length mismatch raises DimensionError, values
// out of range ConfigError.
MetricsReport compute_metrics(const std::vector<std::int64_t>& predictions,
                              const std::vector<double>& scores,
                              const std::vector<std::int64_t>& labels);

// Human-readable block, one `name = value` line per metric, 4 decimals,
// undefined metrics spelled out.
std::string format_metrics_report(const MetricsReport& report);

// Machine-readable pair: header line and value line, undefined fields empty.
std::string metrics_csv_header();
std::string metrics_csv_line(const MetricsReport& report);

}  // namespace voxattn
