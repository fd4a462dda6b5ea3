#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>

#include "octcoda/hash.hpp"
#include "octcoda/synthdata.hpp"

using namespace octcoda;
namespace fs = std::filesystem;

namespace {

GeneratorConfig small_config(double rho, double sigma, std::uint64_t seed = 1) {
  GeneratorConfig c = GeneratorConfig::defaults();
  c.num_classes = 3;
  c.class_names = {"a", "b", "c"};
  c.concepts_per_class = 4;
  c.pool_concepts_per_class = 6;
  c.embed_dim = 5;
  c.student_feature_dim = 7;
  c.teacher_feature_dim = 9;
  c.student_counts = {{10, 6, 4}, {2, 2, 2}, {3, 3, 3}};
  c.teacher_counts = {{5, 8, 7}, {2, 1, 2}, {2, 2, 4}};
  c.teacher_dominance = rho;
  c.noise_sigma = sigma;
  c.seed = seed;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "octcoda_synth_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("defaults describe nine imbalanced classes") {
  const GeneratorConfig c = GeneratorConfig::defaults();
  CHECK(c.num_classes == 9);
  CHECK(c.class_names.front() == "Normal");
  CHECK(c.class_names.back() == "wAMD");
  CHECK(c.teacher_dominance == 0.6);
  int total = 0;
  for (int n : c.student_counts.train) total += n;
  CHECK(total >= 1500);
  CHECK(total <= 2500);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("zero dominance, zero noise: records sit exactly on the class means") {
  const auto [ds, pool] = generate(small_config(0.0, 0.0));
  const GroundTruth& gt = *ds.ground_truth;
  for (bool d : gt.teacher_dominant) CHECK_FALSE(d);
  const Matrix s_means = gt.profiles * gt.student_mixing;
  const Matrix t_means = gt.profiles * gt.teacher_mixing;
  for (const auto& r : ds.records) {
    const Matrix& means = r.modality == Modality::Student ? s_means : t_means;
    CHECK(identical(r.features, means.row(r.label)));
  }
  // nearest class mean recovers every label in both modalities
  for (Modality m : {Modality::Student, Modality::Teacher}) {
    const Matrix& means = m == Modality::Student ? s_means : t_means;
    const LabeledSet set = ds.select(m, Split::Train);
    for (std::size_t i = 0; i < set.size(); ++i) {
      Eigen::Index best = 0;
      double best_d = 1e300;
      for (Eigen::Index d = 0; d < means.rows(); ++d) {
        const double dist = (set.features.row(static_cast<Eigen::Index>(i)) - means.row(d)).squaredNorm();
        if (dist < best_d) {
          best_d = dist;
          best = d;
        }
      }
      CHECK(best == set.labels[i]);
    }
  }
  CHECK(pool.size() == 18);
  CHECK(pool.dim() == 5);
}

TEST_CASE("full dominance attenuates every student concept") {
  const auto [full, p1] = generate(small_config(1.0, 0.0));
  const auto [none, p0] = generate(small_config(0.0, 0.0));
  for (bool d : full.ground_truth->teacher_dominant) CHECK(d);
  CHECK(identical(full.ground_truth->student_mixing, Matrix(none.ground_truth->student_mixing * 0.1)));
  CHECK(identical(full.ground_truth->teacher_mixing, none.ground_truth->teacher_mixing));
}

TEST_CASE("partial dominance marks round(rho*k) concepts per class") {
  const auto [ds, pool] = generate(small_config(0.5, 1.0));
  const auto& dom = ds.ground_truth->teacher_dominant;
  for (int d = 0; d < 3; ++d) {
    int count = 0;
    for (int j = 0; j < 4; ++j) count += dom[static_cast<std::size_t>(d * 4 + j)] ? 1 : 0;
    CHECK(count == 2);
  }
}

TEST_CASE("label marginals, split disjointness and determinism") {
  const GeneratorConfig cfg = small_config(0.6, 2.0, 9);
  const auto [ds, pool] = generate(cfg);
  std::map<std::tuple<Modality, Split, int>, int> counts;
  std::set<std::string> ids;
  for (const auto& r : ds.records) {
    ++counts[{r.modality, r.split, r.label}];
    CHECK(ids.insert(r.id).second);
  }
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    for (int d = 0; d < 3; ++d) {
      CHECK(counts[{Modality::Student, s, d}] == cfg.student_counts.of(s)[static_cast<std::size_t>(d)]);
      CHECK(counts[{Modality::Teacher, s, d}] == cfg.teacher_counts.of(s)[static_cast<std::size_t>(d)]);
    }
  }

  const auto [again, pool2] = generate(cfg);
  CHECK(again == ds);
  CHECK(again.fingerprint() == ds.fingerprint());
  CHECK(pool2.fingerprint() == pool.fingerprint());
  CHECK(identical(pool2.embeddings(), pool.embeddings()));

  const auto [other, pool3] = generate(small_config(0.6, 2.0, 10));
  CHECK(other.fingerprint() != ds.fingerprint());
}

TEST_CASE("write/read round trip is bit exact") {
  GeneratorConfig cfg = small_config(0.6, 3.0, 4);
  cfg.student_counts = {{10, 10, 10}, {5, 5, 5}, {5, 5, 5}};
  cfg.teacher_counts = {{8, 8, 8}, {3, 3, 3}, {3, 2, 2}};
  const auto [ds, pool] = generate(cfg);
  CHECK(ds.records.size() == 100);
  const fs::path dir = scratch("roundtrip");
  write_dataset(ds, dir);
  const SyntheticDataset back = read_dataset(dir);
  CHECK(back == ds);
  CHECK(back.fingerprint() == ds.fingerprint());

  const fs::path dir2 = scratch("roundtrip2");
  write_dataset(back, dir2);
  for (const char* f : {"meta.json", "train.jsonl", "val.jsonl", "test.jsonl"}) {
    CHECK(sha256_file(dir / f) == sha256_file(dir2 / f));
  }
}

TEST_CASE("reader errors") {
  const auto [ds, pool] = generate(small_config(0.6, 1.0));
  const fs::path dir = scratch("errors");
  write_dataset(ds, dir);

  // truncated line
  std::string text = read_text_file(dir / "val.jsonl");
  const auto second = text.find('\n') + 1;
  const auto third = text.find('\n', second);
  text = text.substr(0, second) + text.substr(second, (third - second) / 2) + text.substr(third);
  write_text_file(dir / "val.jsonl", text);
  try {
    read_dataset(dir);
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseError);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  write_dataset(ds, dir);
  fs::remove(dir / "test.jsonl");
  try {
    read_dataset(dir);
    FAIL("expected a missing file");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingFile);
  }

  write_dataset(ds, dir);
  const std::string first_train = read_text_file(dir / "train.jsonl").substr(0, read_text_file(dir / "train.jsonl").find('\n') + 1);
  write_text_file(dir / "test.jsonl", read_text_file(dir / "test.jsonl") + first_train);
  try {
    read_dataset(dir);
    FAIL("expected a split overlap");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SplitOverlap);
  }

  write_dataset(ds, dir);
  write_text_file(dir / "test.jsonl", R"({"modality": "student", "features": [1, 2], "label": 7})" "\n");
  try {
    read_dataset(dir);
    FAIL("expected a schema violation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SchemaViolation);
  }
}

TEST_CASE("external feature dataset in the same schema") {
  const fs::path fixture = fs::path(OCTCODA_FIXTURES) / "external_features";
  const SyntheticDataset ext = read_dataset(fixture);
  CHECK(ext.num_classes == 3);
  CHECK(ext.class_names == std::vector<std::string>{"Normal", "DR", "GLC"});
  CHECK_FALSE(ext.config.has_value());
  CHECK_FALSE(ext.ground_truth.has_value());
  CHECK(ext.feature_dim(Modality::Student) == 4);
  CHECK(ext.feature_dim(Modality::Teacher) == 5);
  const LabeledSet train = ext.select(Modality::Student, Split::Train);
  CHECK(train.size() == 6);
  CHECK(train.features(0, 0) == -0.3523);
  CHECK(train.labels == std::vector<int>{0, 1, 2, 0, 1, 2});

  const fs::path dir = scratch("external");
  write_dataset(ext, dir);
  CHECK(read_dataset(dir) == ext);
}

TEST_CASE("generator config validation and JSON") {
  GeneratorConfig c = small_config(0.6, 1.0);
  CHECK(generator_config_from_json(to_json(c)) == c);

  c.teacher_dominance = 1.5;
  try {
    c.validate();
    FAIL("expected an invalid config");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("generator.teacher_dominance") != std::string::npos);
  }
  try {
    generator_config_from_json({{"noise_sigma", "loud"}});
    FAIL("expected an invalid config");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("generator.noise_sigma") != std::string::npos);
  }
  try {
    generator_config_from_json({{"colour", 3}});
    FAIL("expected an invalid config");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("generator.colour") != std::string::npos);
  }
  GeneratorConfig one_class = small_config(0.6, 1.0);
  one_class.num_classes = 1;
  CHECK_THROWS_AS(generate(one_class), Error);
}
