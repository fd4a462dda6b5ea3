#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "octcoda/finite_diff.hpp"
#include "octcoda/model.hpp"

using namespace octcoda;
namespace fs = std::filesystem;

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

Matrix uniform(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2, 2);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

ConceptPool pool_from(const Matrix& e, int classes) {
  std::vector<Concept> cs;
  for (Eigen::Index i = 0; i < e.rows(); ++i) {
    cs.push_back({"c" + std::to_string(i), "class" + std::to_string(i % classes), "", e.row(i)});
  }
  return ConceptPool(cs);
}

ModelParams linear_params(const Matrix& w, const Matrix& b, Eigen::Index concepts, Eigen::Index classes) {
  ModelParams p;
  p.encoder.push_back({w, b});
  p.classifier_weight = Matrix::Zero(concepts, classes);
  p.classifier_bias = Matrix::Zero(1, classes);
  return p;
}

}  // namespace

TEST_CASE("encode") {
  const Matrix x = mat({{0.5, -1.2, 2.0}, {1.5, 0.3, -0.7}});
  CHECK(identical(encode(linear_params(Matrix::Zero(3, 2), Matrix::Zero(1, 2), 1, 2), x), Matrix(Matrix::Zero(2, 2))));

  const Matrix unit = mat({{0.6, 0.8}, {1, 0}});
  CHECK(encode(linear_params(Matrix::Identity(2, 2), Matrix::Zero(1, 2), 1, 2), unit).isApprox(unit, 1e-15));

  // regression fixture, computed independently
  const ModelParams p = linear_params(mat({{0.2, -0.4}, {1.1, 0.6}, {-0.3, 0.9}}), mat({{0.1, -0.2}}), 1, 2);
  const Matrix v = encode(p, x);
  const Matrix expected = mat({{-0.9299607201739314, 0.3676588893710893}, {0.6010225264893276, -0.7992320830975101}});
  CHECK((v - expected).cwiseAbs().maxCoeff() < 1e-14);

  CHECK_THROWS_AS(encode(p, Matrix::Ones(2, 4)), Error);
}

TEST_CASE("concept_similarity") {
  const ConceptPool pool = pool_from(mat({{1, 0}, {0, 1}, {1, 1}}), 1);
  const Matrix s = concept_similarity(mat({{1, 0}}), pool);
  CHECK(s(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s(0, 1) == 0.0);
  CHECK(s(0, 2) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
  CHECK_THROWS_AS(concept_similarity(Matrix::Ones(1, 3), pool), Error);

  std::mt19937_64 rng(5);
  const ConceptPool rp = pool_from(uniform(12, 4, rng), 3);
  const Matrix emb = l2_normalize_rows(uniform(8, 4, rng));
  const Matrix rs = concept_similarity(emb, rp);
  CHECK(rs.maxCoeff() <= 1 + 1e-12);
  CHECK(rs.minCoeff() >= -1 - 1e-12);
}

TEST_CASE("predict") {
  ModelParams p = linear_params(Matrix::Identity(2, 2), Matrix::Zero(1, 2), 3, 4);
  const Prediction uniform_pred = predict(mat({{0.3, -0.2, 0.9}}), p);
  for (Eigen::Index c = 0; c < 4; ++c) CHECK(uniform_pred.probabilities(0, c) == doctest::Approx(0.25));
  CHECK(uniform_pred.predicted_class[0] == 0);

  p.classifier_weight(1, 2) = 20;
  const Prediction peaked = predict(mat({{0, 1, 0}}), p);
  CHECK(peaked.probabilities(0, 2) > 0.99);
  CHECK(peaked.predicted_class[0] == 2);

  CHECK_THROWS_AS(predict(Matrix::Ones(1, 4), p), Error);

  // joint permutation of concepts and classifier rows
  std::mt19937_64 rng(6);
  ModelParams q = linear_params(Matrix::Identity(2, 2), Matrix::Zero(1, 3), 5, 3);
  q.classifier_weight = uniform(5, 3, rng);
  q.classifier_bias = uniform(1, 3, rng);
  const Matrix s = uniform(4, 5, rng);
  std::vector<Eigen::Index> perm = {3, 0, 4, 1, 2};
  Matrix s_perm(4, 5);
  ModelParams q_perm = q;
  for (Eigen::Index j = 0; j < 5; ++j) {
    s_perm.col(j) = s.col(perm[static_cast<std::size_t>(j)]);
    q_perm.classifier_weight.row(j) = q.classifier_weight.row(perm[static_cast<std::size_t>(j)]);
  }
  const Prediction a = predict(s, q), b = predict(s_perm, q_perm);
  CHECK((a.probabilities - b.probabilities).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(a.predicted_class == b.predicted_class);
  for (Eigen::Index r = 0; r < 4; ++r) {
    CHECK(std::abs(a.probabilities.row(r).sum() - 1) < 1e-9);
    CHECK(a.probabilities.row(r).minCoeff() > 0);
    CHECK(a.probabilities.row(r).maxCoeff() < 1);
  }
}

TEST_CASE("cross_entropy on predictions") {
  std::vector<int> l0{0};
  CHECK(cross_entropy(make_prediction(mat({{1, 0}})), l0) == 0.0);
  CHECK(cross_entropy(make_prediction(mat({{0.5, 0.5}})), l0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  std::vector<int> l01{0, 1};
  CHECK(cross_entropy(make_prediction(mat({{0.7, 0.3}, {0.4, 0.6}})), l01) ==
        doctest::Approx(0.4337502838523616).epsilon(1e-14));
  std::vector<int> bad{3};
  try {
    cross_entropy(make_prediction(mat({{0.5, 0.5}})), bad);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LabelOutOfRange);
  }
  CHECK(cross_entropy(make_prediction(mat({{0.9, 0.1}})), l0) > 0);
}

TEST_CASE("fused_predict") {
  const Prediction a = make_prediction(mat({{0.6, 0.4}}));
  const Prediction same = fused_predict(a, a);
  CHECK(identical(same.probabilities, a.probabilities));
  CHECK(same.predicted_class == a.predicted_class);

  const Prediction tie = fused_predict(make_prediction(mat({{1, 0}})), make_prediction(mat({{0, 1}})));
  CHECK(identical(tie.probabilities, mat({{0.5, 0.5}})));
  CHECK(tie.predicted_class[0] == 0);

  const Prediction mean = fused_predict(a, make_prediction(mat({{0.2, 0.8}})));
  CHECK(mean.probabilities(0, 0) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(mean.probabilities(0, 1) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(mean.predicted_class[0] == 1);

  CHECK_THROWS_AS(fused_predict(a, make_prediction(mat({{0.2, 0.3, 0.5}}))), Error);
}

TEST_CASE("tape forward matches the plain forward") {
  std::mt19937_64 rng(7);
  const ConceptPool pool = pool_from(uniform(6, 4, rng), 3);
  for (int hidden = 0; hidden <= 2; ++hidden) {
    ModelShape shape{5, 4, 6, 3, hidden, 7};
    ModelParams p = init_params(shape, Modality::Student, 11, pool.fingerprint());
    p.classifier_weight = uniform(6, 3, rng);
    const Matrix x = uniform(4, 5, rng);
    Tape<double> t;
    const BoundParams b = bind(t, p, true);
    const Var<double> probs = predict(concept_similarity(encode(b, t.constant(x)), pool), b);
    CHECK((probs.value() - infer(p, x, pool).probabilities).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("gradient of the full classifier path matches finite differences") {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> dim(2, 6);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index f = dim(rng), d = dim(rng), n = dim(rng) + 2, c = dim(rng) - 1, b = dim(rng);
    const ConceptPool pool = pool_from(uniform(n, d, rng), static_cast<int>(c));
    ModelShape shape{f, d, n, c, trial % 3, 4};
    ModelParams p = init_params(shape, Modality::Student, static_cast<std::uint64_t>(trial));
    for (Matrix* m : p.tensors()) *m = uniform(m->rows(), m->cols(), rng);
    const Matrix x = uniform(b, f, rng);
    std::vector<int> labels(static_cast<std::size_t>(b));
    for (auto& l : labels) l = std::uniform_int_distribution<int>(0, static_cast<int>(c) - 1)(rng);

    Tape<double> t;
    const BoundParams bound = bind(t, p, true);
    const auto loss = cross_entropy(predict(concept_similarity(encode(bound, t.constant(x)), pool), bound),
                                    std::span<const int>(labels));
    t.backward(loss);
    const auto vars = bound.all();
    const auto tensors = p.tensors();
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      auto f_of = [&](const Matrix& m) {
        ModelParams probe = p;
        *probe.tensors()[k] = m;
        return cross_entropy(infer(probe, x, pool), labels);
      };
      worst = std::max(worst, relative_error(t.grad(vars[k]), finite_diff_grad<double>(f_of, *tensors[k], 1e-6)));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("init, class prior and hashing") {
  ModelShape shape{6, 4, 5, 3, 1, 8};
  const ModelParams a = init_params(shape, Modality::Teacher, 3);
  const ModelParams b = init_params(shape, Modality::Teacher, 3);
  const ModelParams c = init_params(shape, Modality::Teacher, 4);
  CHECK(a.hash() == b.hash());
  CHECK(a.hash() != c.hash());
  CHECK(a.encoder.size() == 2);
  CHECK(a.feature_dim() == 6);
  CHECK(a.embed_dim() == 4);
  CHECK(a.classifier_weight.isZero(0));

  std::mt19937_64 rng(9);
  std::vector<Concept> cs;
  const std::vector<std::string> hints = {"A", "B", "A", "other", "C"};
  for (std::size_t i = 0; i < hints.size(); ++i) cs.push_back({"c" + std::to_string(i), hints[i], "", uniform(1, 4, rng)});
  const ConceptPool pool(cs);
  ModelParams prior = a;
  apply_class_prior(prior, pool, {"A", "B", "C"}, 4.0);
  CHECK(identical(prior.classifier_weight, mat({{4, 0, 0}, {0, 4, 0}, {4, 0, 0}, {0, 0, 0}, {0, 0, 4}})));
  ModelParams untouched = a;
  apply_class_prior(untouched, pool, {"A", "B", "C"}, 0.0);
  CHECK(untouched.hash() == a.hash());
  CHECK_THROWS_AS(apply_class_prior(untouched, pool, {"A", "B"}, 1.0), Error);
}

TEST_CASE("checkpoint round trip and pool fingerprint guard") {
  std::mt19937_64 rng(10);
  const ConceptPool pool = pool_from(uniform(4, 3, rng), 2);
  ModelParams p = init_params({5, 3, 4, 2, 1, 6}, Modality::Teacher, 1, pool.fingerprint());
  p.classifier_weight = uniform(4, 2, rng);
  p.frozen = true;
  const fs::path dir = fs::temp_directory_path() / "octcoda_model_tests";
  fs::create_directories(dir);
  save_checkpoint(p, dir / "ckpt.json");
  const ModelParams q = load_checkpoint(dir / "ckpt.json");
  CHECK(q.hash() == p.hash());
  CHECK(q.frozen);
  CHECK(q.modality == Modality::Teacher);
  CHECK_NOTHROW(require_pool_match(q, pool));

  const ConceptPool other = pool.subset({0, 1, 2});
  try {
    require_pool_match(q, other);
    FAIL("expected a fingerprint mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::FingerprintMismatch);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.json"), Error);
}

TEST_CASE("modality names") {
  CHECK(parse_modality("fundus") == Modality::Student);
  CHECK(parse_modality("oct") == Modality::Teacher);
  CHECK(parse_modality("student") == Modality::Student);
  CHECK(display_name(Modality::Teacher) == "oct");
  CHECK(to_string(Modality::Student) == "student");
  CHECK_THROWS_AS(parse_modality("mri"), Error);
}
