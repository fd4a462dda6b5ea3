#include <doctest.h>

#include <cmath>
#include <random>

#include "octcoda/finite_diff.hpp"
#include "octcoda/tape.hpp"

using namespace octcoda;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

Matrix uniform(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo = -2, double hi = 2) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Builds a fresh tape, applies `op` to `x` as a variable, and compares the
// gradient of sum(w .* op(x)) against central differences.
template <typename Op>
double check_unary(const Matrix& x, const Matrix& weights, Op op) {
  auto f = [&](const Matrix& in) {
    Tape<double> t;
    auto y = op(t.constant(in));
    return y.value().cwiseProduct(weights).sum();
  };
  Tape<double> t;
  auto v = t.variable(x);
  auto loss = sum(hadamard(op(v), t.constant(weights)));
  t.backward(loss);
  return relative_error(t.grad(v), finite_diff_grad<double>(f, x, 1e-6));
}

}  // namespace

TEST_CASE("matmul examples and shape errors") {
  CHECK(identical(matmul(Matrix(Matrix::Identity(2, 2)), mat({{1, 2}, {3, 4}})), mat({{1, 2}, {3, 4}})));
  CHECK(identical(matmul(mat({{1, 0}}), mat({{0}, {5}})), mat({{0}})));
  CHECK(identical(matmul(mat({{1, 2}, {3, 4}}), mat({{5}, {6}})), mat({{17}, {39}})));
  try {
    matmul(mat({{1, 2}}), mat({{1, 2}}));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimensionMismatch);
    CHECK(std::string(e.what()).find("1x2") != std::string::npos);
  }
}

TEST_CASE("matmul is associative on random triples") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 20; ++i) {
    const Matrix a = uniform(3, 4, rng), b = uniform(4, 5, rng), c = uniform(5, 2, rng);
    const Matrix l = matmul(Matrix(matmul(a, b)), c);
    const Matrix r = matmul(a, Matrix(matmul(b, c)));
    CHECK((l - r).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, l.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("l2_normalize_rows") {
  CHECK(l2_normalize_rows(mat({{3, 4}})).isApprox(mat({{0.6, 0.8}}), 1e-15));
  CHECK(identical(Matrix(l2_normalize_rows(mat({{0, 0}}))), mat({{0, 0}})));
  const Matrix m = l2_normalize_rows(mat({{1, 1}, {2, 0}}));
  CHECK(m(0, 0) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
  CHECK(m(0, 1) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
  CHECK(m(1, 0) == 1.0);
  CHECK(m(1, 1) == 0.0);

  std::mt19937_64 rng(3);
  const Matrix once = l2_normalize_rows(uniform(6, 5, rng));
  const Matrix twice = l2_normalize_rows(once);
  CHECK((once - twice).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("softmax_rows") {
  CHECK(identical(Matrix(softmax_rows(mat({{0, 0}}))), mat({{0.5, 0.5}})));
  const Matrix big = softmax_rows(mat({{1000, 0}}));
  CHECK(all_finite(big));
  CHECK(big(0, 0) == doctest::Approx(1.0));
  CHECK(big(0, 1) < 1e-300);
  const Matrix p = softmax_rows(mat({{1, 2, 3}}));
  CHECK(p(0, 0) == doctest::Approx(0.09003057317038046).epsilon(1e-14));
  CHECK(p(0, 1) == doctest::Approx(0.24472847105479767).epsilon(1e-14));
  CHECK(p(0, 2) == doctest::Approx(0.6652409557748219).epsilon(1e-14));

  std::mt19937_64 rng(11);
  const Matrix q = softmax_rows(uniform(8, 6, rng, -30, 30));
  for (Eigen::Index r = 0; r < q.rows(); ++r) {
    CHECK(std::abs(q.row(r).sum() - 1.0) <= 1e-12);
    CHECK(q.row(r).minCoeff() > 0.0);
  }
}

TEST_CASE("argmax ties go to the lower index") {
  CHECK(argmax_row(mat({{0.5, 0.5}})) == 0);
  CHECK(argmax_row(mat({{0.1, 0.7, 0.7}})) == 1);
}

TEST_CASE("backward basics") {
  Tape<double> t;
  auto x = t.variable(mat({{3}}));
  t.backward(matmul(x, x));
  CHECK(t.grad(x)(0, 0) == 6.0);

  Tape<double> t2;
  auto a = t2.variable(mat({{1, 2}, {3, 4}}));
  t2.backward(sum(a));
  CHECK(identical(t2.grad(a), Matrix(Matrix::Ones(2, 2))));

  Tape<double> t3;
  auto b = t3.variable(mat({{1, 2}}));
  CHECK_THROWS_AS(t3.backward(b), Error);
}

TEST_CASE("backward can be repeated; adjoints reset") {
  Tape<double> t;
  auto x = t.variable(mat({{2}}));
  auto y = matmul(x, x);
  t.backward(y);
  t.backward(y);
  CHECK(t.grad(x)(0, 0) == 4.0);
}

TEST_CASE("finite_diff_grad") {
  auto sq = [](const Matrix& m) { return m.squaredNorm(); };
  const Matrix g = finite_diff_grad<double>(sq, mat({{1, 2}}), 1e-5);
  CHECK(std::abs(g(0, 0) - 2) < 1e-6);
  CHECK(std::abs(g(0, 1) - 4) < 1e-6);
  auto constant = [](const Matrix&) { return 3.0; };
  CHECK(finite_diff_grad<double>(constant, mat({{1, 2}}), 1e-5).isZero(0));
  CHECK_THROWS_AS(finite_diff_grad<double>(constant, mat({{1}}), 0.0), Error);
}

TEST_CASE("every primitive matches finite differences on random instances") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(1, 8);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index r = dim(rng), c = dim(rng), k = dim(rng);
    const Matrix x = uniform(r, c, rng);
    const Matrix other = uniform(c, k, rng);
    const Matrix same = uniform(r, c, rng);
    const Matrix row = uniform(1, c, rng);
    const Matrix below = uniform(2, c, rng);

    worst = std::max(worst, check_unary(x, uniform(r, k, rng), [&](Var<double> v) {
      return matmul(v, v.tape->constant(other));
    }));
    worst = std::max(worst, check_unary(x, uniform(c, r, rng), [](Var<double> v) { return transpose(v); }));
    worst = std::max(worst, check_unary(x, uniform(r, c, rng), [&](Var<double> v) {
      return add(v, v.tape->constant(same));
    }));
    worst = std::max(worst, check_unary(x, uniform(r, c, rng), [&](Var<double> v) {
      return sub(v.tape->constant(same), v);
    }));
    worst = std::max(worst, check_unary(x, uniform(r, c, rng), [&](Var<double> v) {
      return add_row(v, v.tape->constant(row));
    }));
    worst = std::max(worst, check_unary(row, uniform(r, c, rng), [&](Var<double> v) {
      return add_row(v.tape->constant(x), v);
    }));
    worst = std::max(worst, check_unary(x, uniform(r, c, rng), [](Var<double> v) { return scale(v, -1.7); }));
    worst = std::max(worst, check_unary(x, uniform(r, c, rng), [&](Var<double> v) {
      return hadamard(v, v.tape->constant(same));
    }));
    worst = std::max(worst, check_unary(x, uniform(r, c, rng), [](Var<double> v) { return tanh(v); }));
    worst = std::max(worst, check_unary(x, uniform(r + 2, c, rng), [&](Var<double> v) {
      return vstack(v, v.tape->constant(below));
    }));
    worst = std::max(worst, check_unary(x, uniform(r, c, rng), [](Var<double> v) {
      return l2_normalize_rows(v);
    }));
    worst = std::max(worst, check_unary(x, uniform(r, c, rng), [](Var<double> v) { return softmax_rows(v); }));

    std::vector<int> labels(static_cast<std::size_t>(r));
    std::uniform_int_distribution<int> lab(0, static_cast<int>(c) - 1);
    for (auto& l : labels) l = lab(rng);
    worst = std::max(worst, check_unary(x, Matrix::Ones(1, 1), [&](Var<double> v) {
      return cross_entropy(softmax_rows(v), std::span<const int>(labels));
    }));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("cross_entropy rejects out-of-range labels") {
  Tape<double> t;
  auto p = t.constant(mat({{0.5, 0.5}}));
  std::vector<int> bad{2};
  CHECK_THROWS_AS(cross_entropy(p, std::span<const int>(bad)), Error);
}
