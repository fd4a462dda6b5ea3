#pragma once

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "octcoda/numerics.hpp"

namespace octcoda {

/// One-vs-rest table for a single class.
struct BinaryCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
  std::int64_t fn = 0;

  std::int64_t total() const noexcept { return tp + fp + tn + fn; }
  bool operator==(const BinaryCounts&) const = default;
};

struct ConfusionCounts {
  std::vector<BinaryCounts> per_class;
  std::int64_t samples = 0;
};

ConfusionCounts confusion_counts(std::span<const int> predicted, std::span<const int> actual,
                                 int num_classes);

/// The eight evaluation metrics for one class. Conventions for empty
/// denominators: precision, recall, both F1 scores, accuracy and kappa fall
/// back to 0; specificity falls back to 1.
struct ClassMetrics {
  double precision = 0;
  double recall = 0;
  double specificity = 0;
  double pr_f1 = 0;
  double ss_f1 = 0;
  double accuracy = 0;
  double kappa = 0;
  std::optional<double> average_precision;  // absent when the class has no positives
};

ClassMetrics binary_metrics(const BinaryCounts& c);
std::vector<ClassMetrics> per_class_metrics(const ConfusionCounts& counts);

/// Non-interpolated AP: ranks by descending score (ties to the lower sample
/// index) and averages precision@rank over the positive ranks.
double average_precision(std::span<const double> scores, std::span<const bool> positives);

struct MapResult {
  double map = 0;
  std::vector<std::optional<double>> per_class;
  std::vector<int> skipped_classes;  // classes with no actual positives
};

MapResult mean_average_precision(const Matrix& probabilities, std::span<const int> actual);

struct MetricsReport {
  std::vector<std::string> class_names;
  ConfusionCounts counts;
  std::vector<ClassMetrics> per_class;
  ClassMetrics macro;  // unweighted class means; average_precision holds mAP
  std::vector<int> skipped_classes;

  nlohmann::ordered_json to_json() const;
  /// Metrics as rows, classes as columns, plus an "Average" column; values in %.
  std::string render_table() const;
};

MetricsReport macro_report(const Matrix& probabilities, std::span<const int> predicted,
                           std::span<const int> actual, int num_classes,
                           std::vector<std::string> class_names = {});

}  // namespace octcoda
