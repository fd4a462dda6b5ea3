#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>

#include "octcoda/metrics.hpp"
#include "oracles.hpp"

using namespace octcoda;

namespace {

std::vector<double> as_vector(const ClassMetrics& m) {
  return {m.precision, m.recall, m.specificity, m.pr_f1, m.ss_f1, m.accuracy, m.kappa};
}

std::vector<double> as_vector(const oracle::CountMetrics& m) {
  return {m.precision, m.recall, m.specificity, m.pr_f1, m.ss_f1, m.accuracy, m.kappa};
}

// The library takes std::span<const bool>, which std::vector<bool> cannot back.
double ap_of(const std::vector<double>& scores, const std::vector<bool>& positives) {
  std::unique_ptr<bool[]> buf(new bool[positives.size()]);
  for (std::size_t i = 0; i < positives.size(); ++i) buf[i] = positives[i];
  return average_precision(scores, std::span<const bool>(buf.get(), positives.size()));
}

}  // namespace

TEST_CASE("confusion_counts") {
  std::vector<int> y{0, 1, 2, 1};
  const ConfusionCounts perfect = confusion_counts(y, y, 3);
  for (const auto& c : perfect.per_class) {
    CHECK(c.fp == 0);
    CHECK(c.fn == 0);
    CHECK(c.total() == 4);
  }

  std::vector<int> all0(10, 0), balanced{0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
  const ConfusionCounts c = confusion_counts(all0, balanced, 2);
  CHECK(c.per_class[0] == BinaryCounts{5, 5, 0, 0});
  CHECK(c.per_class[1] == BinaryCounts{0, 0, 5, 5});

  std::vector<int> empty;
  CHECK_THROWS_AS(confusion_counts(empty, empty, 2), Error);
  std::vector<int> shorter{0};
  CHECK_THROWS_AS(confusion_counts(shorter, y, 3), Error);
  std::vector<int> out_of_range{0, 1, 3, 1};
  CHECK_THROWS_AS(confusion_counts(out_of_range, y, 3), Error);
}

TEST_CASE("binary_metrics examples") {
  const ClassMetrics m = binary_metrics({40, 10, 40, 10});
  CHECK(m.precision == 0.8);
  CHECK(m.recall == 0.8);
  CHECK(m.specificity == 0.8);
  CHECK(m.pr_f1 == 0.8);
  CHECK(m.ss_f1 == 0.8);
  CHECK(m.accuracy == 0.8);
  CHECK(m.kappa == 0.6);

  const ClassMetrics empty = binary_metrics({0, 0, 7, 0});
  CHECK(empty.precision == 0);
  CHECK(empty.recall == 0);
  CHECK(empty.pr_f1 == 0);
  CHECK(empty.specificity == 1);
  CHECK(empty.accuracy == 1);

  CHECK(binary_metrics({3, 0, 3, 0}).kappa == 1.0);
}

TEST_CASE("exhaustive count sweep matches the rational oracle exactly") {
  int cases = 0;
  for (int tp = 0; tp <= 5; ++tp)
    for (int fp = 0; fp <= 5; ++fp)
      for (int tn = 0; tn <= 5; ++tn)
        for (int fn = 0; fn <= 5; ++fn) {
          const auto got = as_vector(binary_metrics({tp, fp, tn, fn}));
          const auto want = as_vector(oracle::count_metrics(tp, fp, tn, fn));
          CHECK(got == want);
          for (double v : got) CHECK(std::isfinite(v));
          const ClassMetrics m = binary_metrics({tp, fp, tn, fn});
          for (double v : {m.precision, m.recall, m.specificity, m.pr_f1, m.ss_f1, m.accuracy}) {
            CHECK(v >= 0);
            CHECK(v <= 1);
          }
          CHECK(m.kappa >= -1);
          CHECK(m.kappa <= 1);
          ++cases;
        }
  CHECK(cases == 1296);
}

TEST_CASE("kappa changes sign when predicted positives and negatives swap") {
  for (int tp = 0; tp <= 5; ++tp)
    for (int fp = 0; fp <= 5; ++fp)
      for (int tn = 0; tn <= 5; ++tn)
        for (int fn = 0; fn <= 5; ++fn) {
          const BinaryCounts c{tp, fp, tn, fn};
          const BinaryCounts swapped{fn, tn, fp, tp};
          const double k = binary_metrics(c).kappa, ks = binary_metrics(swapped).kappa;
          CHECK((k > 0) == (ks < 0));
          CHECK((k == 0) == (ks == 0));
          const auto den = [](const BinaryCounts& b) {
            return (b.tp + b.fp) * (b.fp + b.tn) + (b.tp + b.fn) * (b.fn + b.tn);
          };
          if (den(c) == den(swapped)) CHECK(ks == -k);
        }
}

TEST_CASE("average_precision examples") {
  std::vector<double> s{0.9, 0.8, 0.7, 0.6};
  std::vector<bool> top{1, 1, 0, 0}, mixed{1, 0, 1, 0};
  CHECK(ap_of(s, top) == 1.0);
  CHECK(ap_of(s, mixed) == doctest::Approx((1.0 + 2.0 / 3.0) / 2).epsilon(1e-15));
  for (int n = 1; n <= 12; ++n) {
    std::vector<double> scores(static_cast<std::size_t>(n));
    std::vector<bool> last(static_cast<std::size_t>(n), false);
    for (int i = 0; i < n; ++i) scores[static_cast<std::size_t>(i)] = n - i;
    last.back() = true;
    CHECK(ap_of(scores, last) == doctest::Approx(1.0 / n).epsilon(1e-15));
  }
  std::vector<bool> none(4, false);
  try {
    ap_of(s, none);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoPositives);
  }
  // ties resolve to the lower sample index
  std::vector<double> tied{0.5, 0.5};
  CHECK(ap_of(tied, {true, false}) == 1.0);
  CHECK(ap_of(tied, {false, true}) == 0.5);
}

TEST_CASE("average_precision agrees with PR-point enumeration and ignores monotone rescaling") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 30;
    std::vector<double> scores(n);
    std::unique_ptr<bool[]> pos(new bool[n]);
    std::vector<bool> posv(n);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = std::round(u(rng) * 10) / 10;  // coarse grid to exercise ties
      posv[i] = pos[i] = u(rng) < 0.4;
      any = any || pos[i];
    }
    if (!any) posv[0] = pos[0] = true;
    const std::span<const bool> ps(pos.get(), n);
    const double ap = average_precision(scores, ps);
    CHECK(std::abs(ap - oracle::ap_by_pr_points(scores, posv)) < 1e-12);
    std::vector<double> warped(n);
    for (std::size_t i = 0; i < n; ++i) warped[i] = std::exp(3 * scores[i]) - 7;
    CHECK(average_precision(warped, ps) == ap);
  }
}

TEST_CASE("mean_average_precision") {
  Matrix perfect(4, 2);
  perfect << 0.9, 0.1, 0.2, 0.8, 0.7, 0.3, 0.4, 0.6;
  std::vector<int> y{0, 1, 0, 1};
  CHECK(mean_average_precision(perfect, y).map == 1.0);

  // class 0 ranked perfectly, class 1 positive ranked second of two
  Matrix half(2, 2);
  half << 0.9, 0.6, 0.1, 0.4;
  std::vector<int> y2{0, 1};
  const MapResult r = mean_average_precision(half, y2);
  CHECK(r.per_class[0] == 1.0);
  CHECK(r.per_class[1] == 0.5);
  CHECK(r.map == 0.75);

  Matrix three(2, 3);
  three << 0.5, 0.3, 0.2, 0.1, 0.6, 0.3;
  const MapResult skip = mean_average_precision(three, y2);
  CHECK(skip.skipped_classes == std::vector<int>{2});
  CHECK(!skip.per_class[2].has_value());

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  Matrix p(20, 3);
  std::vector<int> labels(20);
  for (int i = 0; i < 20; ++i) {
    for (int c = 0; c < 3; ++c) p(i, c) = u(rng);
    labels[static_cast<std::size_t>(i)] = i % 3;
  }
  double want = 0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> sc(20);
    std::vector<bool> pos(20);
    for (int i = 0; i < 20; ++i) {
      sc[static_cast<std::size_t>(i)] = p(i, c);
      pos[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(i)] == c;
    }
    want += oracle::ap_by_pr_points(sc, pos) / 3;
  }
  CHECK(std::abs(mean_average_precision(p, labels).map - want) < 1e-12);
}

TEST_CASE("macro_report") {
  Matrix p(3, 3);
  p << 0.8, 0.1, 0.1, 0.1, 0.8, 0.1, 0.1, 0.1, 0.8;
  std::vector<int> y{0, 1, 2};
  const MetricsReport perfect = macro_report(p, y, y, 3);
  for (double v : as_vector(perfect.macro)) CHECK(v == 1.0);
  CHECK(perfect.macro.average_precision == 1.0);

  // near-zero kappa for coin-flip predictions on balanced data
  std::mt19937_64 rng(3);
  const int n = 1000;
  Matrix probs(n, 2);
  std::vector<int> pred(n), actual(n);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < n; ++i) {
    const double s = u(rng);
    probs(i, 0) = s;
    probs(i, 1) = 1 - s;
    pred[static_cast<std::size_t>(i)] = s >= 0.5 ? 0 : 1;
    actual[static_cast<std::size_t>(i)] = i % 2;
  }
  const MetricsReport coin = macro_report(probs, pred, actual, 2);
  CHECK(std::abs(coin.macro.kappa) < 0.1);

  // macro is the arithmetic mean of the per-class values
  const std::vector<std::string> names = {"Normal", "dAMD", "CSC", "DR", "GLC", "MEM", "MYO", "RVO", "wAMD"};
  Matrix nine(90, 9);
  std::vector<int> p9(90), a9(90);
  for (int i = 0; i < 90; ++i) {
    for (int c = 0; c < 9; ++c) nine(i, c) = u(rng);
    a9[static_cast<std::size_t>(i)] = i % 9;
    p9[static_cast<std::size_t>(i)] = static_cast<int>(argmax_row(nine.row(i)));
  }
  const MetricsReport r = macro_report(nine, p9, a9, 9, names);
  double mean_f1 = 0, mean_kappa = 0;
  for (const auto& m : r.per_class) {
    mean_f1 += m.pr_f1 / 9;
    mean_kappa += m.kappa / 9;
  }
  CHECK(std::abs(r.macro.pr_f1 - mean_f1) < 1e-12);
  CHECK(std::abs(r.macro.kappa - mean_kappa) < 1e-12);

  const auto j = r.to_json();
  CHECK(j.at("per_class").size() == 9);
  CHECK(j.at("per_class").contains("wAMD"));
  for (const char* key : {"precision", "recall", "specificity", "pr_f1", "ss_f1", "map", "accuracy", "kappa"}) {
    CHECK(j.at("macro").contains(key));
  }
  CHECK(j.at("skipped_classes").empty());
  const std::string table = r.render_table();
  CHECK(table.find("Average") != std::string::npos);
  CHECK(table.find("P-R F1") != std::string::npos);
  CHECK(table.find("wAMD") != std::string::npos);

  CHECK_THROWS_AS(macro_report(nine, p9, a9, 9, {"too", "few"}), Error);
}
