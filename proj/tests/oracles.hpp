#pragma once

// Independent reference implementations used by the unit and acceptance tests.
// None of this calls into the library.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace oracle {

struct Fraction {
  std::int64_t num = 0;
  std::int64_t den = 1;

  Fraction(std::int64_t n = 0, std::int64_t d = 1) : num(n), den(d) {
    const std::int64_t g = std::gcd(num, den);
    if (g != 0) {
      num /= g;
      den /= g;
    }
    if (den < 0) {
      num = -num;
      den = -den;
    }
  }
  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool is_zero() const { return num == 0; }
};

inline Fraction operator+(Fraction a, Fraction b) { return {a.num * b.den + b.num * a.den, a.den * b.den}; }
inline Fraction operator*(Fraction a, Fraction b) { return {a.num * b.num, a.den * b.den}; }
inline Fraction operator/(Fraction a, Fraction b) { return {a.num * b.den, a.den * b.num}; }

// The seven count-based metrics, written out from their textbook definitions
// with exact rational arithmetic. Empty denominators follow the library's
// documented conventions.
struct CountMetrics {
  double precision, recall, specificity, pr_f1, ss_f1, accuracy, kappa;
};

inline CountMetrics count_metrics(std::int64_t tp, std::int64_t fp, std::int64_t tn, std::int64_t fn) {
  auto ratio = [](std::int64_t n, std::int64_t d, std::int64_t fallback) {
    return d == 0 ? Fraction(fallback) : Fraction(n, d);
  };
  auto f1 = [](Fraction a, Fraction b) {
    const Fraction s = a + b;
    return s.is_zero() ? Fraction(0) : Fraction(2) * a * b / s;
  };
  const Fraction p = ratio(tp, tp + fp, 0);
  const Fraction r = ratio(tp, tp + fn, 0);
  const Fraction sp = ratio(tn, tn + fp, 1);
  const Fraction acc = ratio(tp + tn, tp + fp + tn + fn, 0);
  const std::int64_t kd = (tp + fp) * (fp + tn) + (tp + fn) * (fn + tn);
  const Fraction kappa = kd == 0 ? Fraction(0) : Fraction(2 * (tp * tn - fp * fn), kd);
  return {p.to_double(),     r.to_double(),       sp.to_double(),   f1(p, r).to_double(),
          f1(r, sp).to_double(), acc.to_double(), kappa.to_double()};
}

// Area under the step PR curve: builds every PR point (one per cut of the
// ranked list, ties ordered by sample index) and sums precision times recall
// increments.
inline double ap_by_pr_points(const std::vector<double>& scores, const std::vector<bool>& positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t j = i; j > 0; --j) {
      const std::size_t a = order[j - 1], b = order[j];
      if (scores[b] > scores[a] || (scores[b] == scores[a] && b < a)) std::swap(order[j - 1], order[j]);
      else break;
    }
  }
  std::int64_t total_pos = 0;
  for (bool p : positive) total_pos += p ? 1 : 0;
  double area = 0, prev_recall = 0;
  for (std::size_t cut = 1; cut <= n; ++cut) {
    std::int64_t tp = 0;
    for (std::size_t k = 0; k < cut; ++k) tp += positive[order[k]] ? 1 : 0;
    const double precision = static_cast<double>(tp) / static_cast<double>(cut);
    const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return area;
}

// Contrastive distillation objective evaluated term by term: loops over
// anchors, candidates and positives explicitly.
template <typename M>
double lcd_brute_force(const M& s, const std::vector<int>& ys, const M& t, const std::vector<int>& yt, double tau,
                       int* skipped = nullptr) {
  struct Cand {
    std::vector<double> v;
    int label;
    long student_row;
  };
  auto row = [](const M& m, Eigen::Index r) {
    std::vector<double> v(static_cast<std::size_t>(m.cols()));
    double norm = 0;
    for (Eigen::Index c = 0; c < m.cols(); ++c) norm += m(r, c) * m(r, c);
    norm = std::max(std::sqrt(norm), 1e-12);
    for (Eigen::Index c = 0; c < m.cols(); ++c) v[static_cast<std::size_t>(c)] = m(r, c) / norm;
    return v;
  };
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += a[i] * b[i];
    return d;
  };
  std::vector<Cand> all;
  for (Eigen::Index r = 0; r < s.rows(); ++r) all.push_back({row(s, r), ys[static_cast<std::size_t>(r)], r});
  for (Eigen::Index r = 0; r < t.rows(); ++r) all.push_back({row(t, r), yt[static_cast<std::size_t>(r)], -1});

  double total = 0;
  int anchors = 0, skip = 0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const auto a = row(s, i);
    std::vector<std::size_t> q, p;
    for (std::size_t j = 0; j < all.size(); ++j) {
      if (all[j].student_row == i) continue;
      q.push_back(j);
      if (all[j].label == ys[static_cast<std::size_t>(i)]) p.push_back(j);
    }
    if (p.empty()) {
      ++skip;
      continue;
    }
    double term = 0;
    for (std::size_t pj : p) {
      double denom = 0;
      for (std::size_t qj : q) {
        if (qj != pj) denom += std::exp(dot(a, all[qj].v) / tau);
      }
      term -= std::log(std::exp(dot(a, all[pj].v) / tau) / denom);
    }
    total += term / static_cast<double>(p.size());
    ++anchors;
  }
  if (skipped) *skipped = skip;
  return anchors == 0 ? 0.0 : total / anchors;
}

}  // namespace oracle
