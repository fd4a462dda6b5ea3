#include "octcoda/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <memory>
#include <numeric>

namespace octcoda {

namespace {

struct Ratio {
  std::int64_t num;
  std::int64_t den;
};

// Rate with a fallback for an empty denominator.
Ratio rate(std::int64_t num, std::int64_t den, std::int64_t fallback) {
  return den == 0 ? Ratio{fallback, 1} : Ratio{num, den};
}

// Harmonic mean 2xy/(x+y) of two ratios, kept exact until the final division.
double harmonic(Ratio x, Ratio y) {
  const std::int64_t num = 2 * x.num * y.num;
  const std::int64_t den = x.num * y.den + y.num * x.den;
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double value(Ratio r) { return static_cast<double>(r.num) / static_cast<double>(r.den); }

}  // namespace

ConfusionCounts confusion_counts(std::span<const int> predicted, std::span<const int> actual,
                                 int num_classes) {
  if (predicted.size() != actual.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "confusion_counts: " + std::to_string(predicted.size()) + " predictions vs " +
                    std::to_string(actual.size()) + " labels");
  }
  if (predicted.empty()) throw Error(ErrorCode::InvalidArgument, "confusion_counts: empty input");
  if (num_classes < 1) throw Error(ErrorCode::InvalidArgument, "confusion_counts: num_classes < 1");
  ConfusionCounts out;
  out.per_class.resize(static_cast<std::size_t>(num_classes));
  out.samples = static_cast<std::int64_t>(actual.size());
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const int p = predicted[i];
    const int a = actual[i];
    if (p < 0 || p >= num_classes || a < 0 || a >= num_classes) {
      throw Error(ErrorCode::LabelOutOfRange,
                  "confusion_counts: class index out of range at sample " + std::to_string(i));
    }
    for (int c = 0; c < num_classes; ++c) {
      BinaryCounts& bc = out.per_class[static_cast<std::size_t>(c)];
      const bool pp = p == c;
      const bool ap = a == c;
      if (pp && ap) ++bc.tp;
      else if (pp) ++bc.fp;
      else if (ap) ++bc.fn;
      else ++bc.tn;
    }
  }
  return out;
}

ClassMetrics binary_metrics(const BinaryCounts& c) {
  const Ratio precision = rate(c.tp, c.tp + c.fp, 0);
  const Ratio recall = rate(c.tp, c.tp + c.fn, 0);
  const Ratio specificity = rate(c.tn, c.tn + c.fp, 1);
  const Ratio accuracy = rate(c.tp + c.tn, c.total(), 0);
  const std::int64_t kappa_den = (c.tp + c.fp) * (c.fp + c.tn) + (c.tp + c.fn) * (c.fn + c.tn);

  ClassMetrics m;
  m.precision = value(precision);
  m.recall = value(recall);
  m.specificity = value(specificity);
  m.pr_f1 = harmonic(precision, recall);
  m.ss_f1 = harmonic(recall, specificity);
  m.accuracy = value(accuracy);
  m.kappa = kappa_den == 0 ? 0.0
                           : static_cast<double>(2 * (c.tp * c.tn - c.fp * c.fn)) /
                                 static_cast<double>(kappa_den);
  return m;
}

std::vector<ClassMetrics> per_class_metrics(const ConfusionCounts& counts) {
  std::vector<ClassMetrics> out;
  out.reserve(counts.per_class.size());
  for (const auto& c : counts.per_class) out.push_back(binary_metrics(c));
  return out;
}

double average_precision(std::span<const double> scores, std::span<const bool> positives) {
  if (scores.size() != positives.size()) {
    throw Error(ErrorCode::DimensionMismatch, "average_precision: length mismatch");
  }
  const auto npos = std::count(positives.begin(), positives.end(), true);
  if (npos == 0) throw Error(ErrorCode::NoPositives, "average_precision: no positive samples");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::int64_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (!positives[order[rank]]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
  }
  return sum / static_cast<double>(npos);
}

MapResult mean_average_precision(const Matrix& probabilities, std::span<const int> actual) {
  if (static_cast<Eigen::Index>(actual.size()) != probabilities.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "mean_average_precision: label count mismatch");
  }
  MapResult out;
  const auto classes = probabilities.cols();
  std::vector<double> scores(actual.size());
  std::unique_ptr<bool[]> pos(new bool[actual.size()]);
  double sum = 0.0;
  int used = 0;
  for (Eigen::Index c = 0; c < classes; ++c) {
    bool any = false;
    for (std::size_t i = 0; i < actual.size(); ++i) {
      scores[i] = probabilities(static_cast<Eigen::Index>(i), c);
      pos[i] = actual[i] == c;
      any = any || pos[i];
    }
    if (!any) {
      out.per_class.push_back(std::nullopt);
      out.skipped_classes.push_back(static_cast<int>(c));
      continue;
    }
    const double ap = average_precision(scores, std::span<const bool>(pos.get(), actual.size()));
    out.per_class.push_back(ap);
    sum += ap;
    ++used;
  }
  out.map = used > 0 ? sum / used : 0.0;
  return out;
}

MetricsReport macro_report(const Matrix& probabilities, std::span<const int> predicted,
                           std::span<const int> actual, int num_classes,
                           std::vector<std::string> class_names) {
  if (probabilities.cols() != num_classes || probabilities.rows() != static_cast<Eigen::Index>(actual.size())) {
    throw Error(ErrorCode::DimensionMismatch,
                "macro_report: probabilities " + shape_of(probabilities) + " for " +
                    std::to_string(actual.size()) + " samples and " + std::to_string(num_classes) +
                    " classes");
  }
  if (class_names.empty()) {
    for (int c = 0; c < num_classes; ++c) class_names.push_back("class" + std::to_string(c));
  }
  if (static_cast<int>(class_names.size()) != num_classes) {
    throw Error(ErrorCode::DimensionMismatch, "macro_report: class_names length != num_classes");
  }
  MetricsReport r;
  r.class_names = std::move(class_names);
  r.counts = confusion_counts(predicted, actual, num_classes);
  r.per_class = per_class_metrics(r.counts);
  const MapResult map = mean_average_precision(probabilities, actual);
  r.skipped_classes = map.skipped_classes;
  for (int c = 0; c < num_classes; ++c) {
    r.per_class[static_cast<std::size_t>(c)].average_precision = map.per_class[static_cast<std::size_t>(c)];
  }
  const double n = static_cast<double>(num_classes);
  for (const auto& m : r.per_class) {
    r.macro.precision += m.precision;
    r.macro.recall += m.recall;
    r.macro.specificity += m.specificity;
    r.macro.pr_f1 += m.pr_f1;
    r.macro.ss_f1 += m.ss_f1;
    r.macro.accuracy += m.accuracy;
    r.macro.kappa += m.kappa;
  }
  r.macro.precision /= n;
  r.macro.recall /= n;
  r.macro.specificity /= n;
  r.macro.pr_f1 /= n;
  r.macro.ss_f1 /= n;
  r.macro.accuracy /= n;
  r.macro.kappa /= n;
  r.macro.average_precision = map.map;
  return r;
}

nlohmann::ordered_json MetricsReport::to_json() const {
  auto metric_fields = [](const ClassMetrics& m, const char* ap_key) {
    nlohmann::ordered_json j;
    j["precision"] = m.precision;
    j["recall"] = m.recall;
    j["specificity"] = m.specificity;
    j["pr_f1"] = m.pr_f1;
    j["ss_f1"] = m.ss_f1;
    j[ap_key] = m.average_precision ? nlohmann::ordered_json(*m.average_precision)
                                    : nlohmann::ordered_json(nullptr);
    j["accuracy"] = m.accuracy;
    j["kappa"] = m.kappa;
    return j;
  };
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    auto j = metric_fields(per_class[c], "average_precision");
    const auto& bc = counts.per_class[c];
    j["counts"] = {{"tp", bc.tp}, {"fp", bc.fp}, {"tn", bc.tn}, {"fn", bc.fn}};
    per[class_names[c]] = std::move(j);
  }
  nlohmann::ordered_json out;
  out["per_class"] = std::move(per);
  out["macro"] = metric_fields(macro, "map");
  std::vector<std::string> skipped;
  for (int c : skipped_classes) skipped.push_back(class_names[static_cast<std::size_t>(c)]);
  out["skipped_classes"] = skipped;
  out["samples"] = counts.samples;
  out["conventions"] = {
      {"zero_denominator", "precision, recall, F1 scores, accuracy and kappa -> 0; specificity -> 1"},
      {"average_precision", "non-interpolated; classes without positives are skipped"}};
  return out;
}

std::string MetricsReport::render_table() const {
  struct Row {
    const char* label;
    double ClassMetrics::*field;
  };
  static const Row rows[] = {{"Precision", &ClassMetrics::precision},
                             {"Recall", &ClassMetrics::recall},
                             {"Specificity", &ClassMetrics::specificity},
                             {"P-R F1", &ClassMetrics::pr_f1},
                             {"S-S F1", &ClassMetrics::ss_f1},
                             {"Accuracy", &ClassMetrics::accuracy},
                             {"Kappa", &ClassMetrics::kappa}};
  std::string out;
  char buf[64];
  auto cell = [&](const std::string& s, int width) {
    std::snprintf(buf, sizeof(buf), "%*s", width, s.c_str());
    out += buf;
  };
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%9.2f", 100.0 * v);
    out += buf;
  };
  cell("Metric", 12);
  for (const auto& name : class_names) cell(name, 9);
  cell("Average", 9);
  out += "\n";
  for (const Row& row : rows) {
    cell(row.label, 12);
    for (const auto& m : per_class) num(m.*row.field);
    num(macro.*row.field);
    out += "\n";
  }
  cell("AP", 12);
  for (const auto& m : per_class) {
    if (m.average_precision) num(*m.average_precision);
    else cell("-", 9);
  }
  num(macro.average_precision.value_or(0.0));
  out += "\n";
  return out;
}

}  // namespace octcoda
