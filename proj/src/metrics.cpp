#include "voxattn/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "voxattn/errors.hpp"

namespace voxattn {

std::optional<double> roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("roc_auc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  std::int64_t positives = 0, negatives = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw ConfigError("roc_auc: labels must be 0 or 1");
    (l ? positives : negatives)++;
  }
  if (positives == 0 || negatives == 0) return std::nullopt;

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Exact pair counts: each positive beats every negative strictly below its
  // tie group and halves against negatives inside it.
  std::int64_t wins = 0, ties = 0;
  std::int64_t negatives_below = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::int64_t group_pos = 0, group_neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? group_pos : group_neg)++;
      ++j;
    }
    wins += group_pos * negatives_below;
    ties += group_pos * group_neg;
    negatives_below += group_neg;
    i = j;
  }
  return (static_cast<double>(wins) + 0.5 * static_cast<double>(ties)) /
         (static_cast<double>(positives) * static_cast<double>(negatives));
}

MetricsReport compute_metrics(const std::vector<std::int64_t>& predictions,
                              const std::vector<double>& scores,
                              const std::vector<std::int64_t>& labels) {
  if (predictions.size() != labels.size() || scores.size() != labels.size()) {
    throw DimensionError("compute_metrics: predictions, scores, and labels differ in length");
  }
  if (labels.empty()) throw DimensionError("compute_metrics: empty input");

  MetricsReport report;
  report.n = static_cast<std::int64_t>(labels.size());
  std::int64_t correct = 0;
  std::vector<int> binary_labels(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 2 || predictions[i] < 0 || predictions[i] > 2) {
      throw ConfigError("compute_metrics: class indices must lie in {0,1,2}");
    }
    if (scores[i] < 0.0 || scores[i] > 1.0) {
      throw ConfigError("compute_metrics: scores must lie in [0,1]");
    }
    const bool actual_pos = labels[i] == 2;
    const bool predicted_pos = predictions[i] == 2;
    binary_labels[i] = actual_pos ? 1 : 0;
    if (predictions[i] == labels[i]) ++correct;
    if (actual_pos && predicted_pos) ++report.tp;
    if (actual_pos && !predicted_pos) ++report.fn;
    if (!actual_pos && predicted_pos) ++report.fp;
    if (!actual_pos && !predicted_pos) ++report.tn;
  }
  report.accuracy = static_cast<double>(correct) / static_cast<double>(report.n);
  if (report.tp + report.fn > 0) {
    report.sensitivity =
        static_cast<double>(report.tp) / static_cast<double>(report.tp + report.fn);
  }
  if (report.tn + report.fp > 0) {
    report.specificity =
        static_cast<double>(report.tn) / static_cast<double>(report.tn + report.fp);
  }
  if (2 * report.tp + report.fp + report.fn > 0) {
    report.f1 = 2.0 * static_cast<double>(report.tp) /
                static_cast<double>(2 * report.tp + report.fp + report.fn);
  }
  report.auc = roc_auc(scores, binary_labels);
  return report;
}

namespace {

std::string ratio_text(const std::optional<double>& v) {
  if (!v) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

std::string ratio_csv(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", *v);
  return buf;
}

}  // namespace

std::string format_metrics_report(const MetricsReport& report) {
  std::string out;
  out += "n           = " + std::to_string(report.n) + "\n";
  out += "tp          = " + std::to_string(report.tp) + "\n";
  out += "fp          = " + std::to_string(report.fp) + "\n";
  out += "tn          = " + std::to_string(report.tn) + "\n";
  out += "fn          = " + std::to_string(report.fn) + "\n";
  out += "accuracy    = " + ratio_text(report.accuracy) + "\n";
  out += "sensitivity = " + ratio_text(report.sensitivity) + "\n";
  out += "specificity = " + ratio_text(report.specificity) + "\n";
  out += "f1          = " + ratio_text(report.f1) + "\n";
  out += "auc         = " + ratio_text(report.auc) + "\n";
  return out;
}

std::string metrics_csv_header() {
  return "n,tp,fp,tn,fn,accuracy,sensitivity,specificity,f1,auc";
}

std::string metrics_csv_line(const MetricsReport& report) {
  std::string out = std::to_string(report.n) + "," + std::to_string(report.tp) + "," +
                    std::to_string(report.fp) + "," + std::to_string(report.tn) + "," +
                    std::to_string(report.fn);
  out += "," + ratio_csv(report.accuracy);
  out += "," + ratio_csv(report.sensitivity);
  out += "," + ratio_csv(report.specificity);
  out += "," + ratio_csv(report.f1);
  out += "," + ratio_csv(report.auc);
  return out;
}

}  // namespace voxattn
