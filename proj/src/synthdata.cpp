#include "octcoda/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "octcoda/hash.hpp"
#include "octcoda/json_fields.hpp"

namespace octcoda {

namespace {

constexpr Split kSplits[] = {Split::Train, Split::Val, Split::Test};
constexpr Modality kModalities[] = {Modality::Student, Modality::Teacher};

std::mt19937_64 seeded(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    stream};
  return std::mt19937_64(seq);
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * normal(rng);
  return m;
}

std::vector<int> third_of(const std::vector<int>& train) {
  std::vector<int> out;
  for (int n : train) out.push_back(std::max(3, n / 3));
  return out;
}

nlohmann::json matrix_json(const Matrix& m) {
  return {{"rows", m.rows()},
          {"cols", m.cols()},
          {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Matrix matrix_from_json(const nlohmann::json& j, const std::string& what) {
  try {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
      throw Error(ErrorCode::SchemaViolation, what + ": data length does not match shape");
    }
    return Eigen::Map<const Matrix>(data.data(), rows, cols);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::SchemaViolation, what + ": " + ex.what());
  }
}

nlohmann::json counts_json(const ModalityCounts& c) {
  return {{"train", c.train}, {"val", c.val}, {"test", c.test}};
}

void read_counts(FieldReader& parent, const std::string& key, ModalityCounts& out) {
  if (!parent.has(key)) return;
  FieldReader r(parent.raw(key), parent.name(key));
  r.read("train", out.train);
  r.read("val", out.val);
  r.read("test", out.test);
  r.reject_unknown();
}

nlohmann::json ground_truth_json(const GroundTruth& gt) {
  return {{"profiles", matrix_json(gt.profiles)},
          {"concept_embeddings", matrix_json(gt.concept_embeddings)},
          {"student_mixing", matrix_json(gt.student_mixing)},
          {"teacher_mixing", matrix_json(gt.teacher_mixing)},
          {"teacher_dominant", gt.teacher_dominant}};
}

GroundTruth ground_truth_from_json(const nlohmann::json& j) {
  GroundTruth gt;
  gt.profiles = matrix_from_json(j.at("profiles"), "ground_truth.profiles");
  gt.concept_embeddings = matrix_from_json(j.at("concept_embeddings"), "ground_truth.concept_embeddings");
  gt.student_mixing = matrix_from_json(j.at("student_mixing"), "ground_truth.student_mixing");
  gt.teacher_mixing = matrix_from_json(j.at("teacher_mixing"), "ground_truth.teacher_mixing");
  gt.teacher_dominant = j.at("teacher_dominant").get<std::vector<bool>>();
  return gt;
}

std::string meta_text(const SyntheticDataset& ds) {
  nlohmann::json meta = {{"format", "octcoda-dataset"},
                         {"version", 1},
                         {"num_classes", ds.num_classes},
                         {"class_names", ds.class_names}};
  if (ds.config) meta["generator"] = to_json(*ds.config);
  if (ds.ground_truth) meta["ground_truth"] = ground_truth_json(*ds.ground_truth);
  return meta.dump() + "\n";
}

std::string split_text(const SyntheticDataset& ds, Split split) {
  std::string out;
  for (const auto& r : ds.records) {
    if (r.split != split) continue;
    nlohmann::json line = {
        {"id", r.id},
        {"modality", to_string(r.modality)},
        {"features", std::vector<double>(r.features.data(), r.features.data() + r.features.size())},
        {"label", r.label}};
    out += line.dump();
    out.push_back('\n');
  }
  return out;
}

}  // namespace

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  for (Split s : kSplits) {
    if (to_string(s) == name) return s;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown split '" + name + "'");
}

bool SampleRecord::operator==(const SampleRecord& other) const {
  return id == other.id && modality == other.modality && label == other.label &&
         split == other.split && identical(features, other.features);
}

bool GroundTruth::operator==(const GroundTruth& other) const {
  return identical(profiles, other.profiles) &&
         identical(concept_embeddings, other.concept_embeddings) &&
         identical(student_mixing, other.student_mixing) &&
         identical(teacher_mixing, other.teacher_mixing) &&
         teacher_dominant == other.teacher_dominant;
}

const std::vector<int>& ModalityCounts::of(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Val: return val;
    case Split::Test: return test;
  }
  return train;
}

GeneratorConfig GeneratorConfig::defaults() {
  GeneratorConfig c;
  c.class_names = {"Normal", "dAMD", "CSC", "DR", "GLC", "MEM", "MYO", "RVO", "wAMD"};
  // Imbalance shaped after the unpaired fundus/OCT corpora: the two modalities
  // are skewed toward different minority classes.
  c.student_counts.train = {700, 150, 40, 450, 120, 50, 90, 100, 110};
  c.teacher_counts.train = {650, 80, 200, 450, 30, 220, 80, 170, 150};
  c.student_counts.val = third_of(c.student_counts.train);
  c.student_counts.test = c.student_counts.train;
  c.teacher_counts.val = third_of(c.teacher_counts.train);
  c.teacher_counts.test = c.teacher_counts.train;
  return c;
}

void GeneratorConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error(ErrorCode::InvalidConfig, "field 'generator." + field + "': " + why);
  };
  if (num_classes < 2) fail("num_classes", "must be >= 2");
  if (concepts_per_class < 1) fail("concepts_per_class", "must be >= 1");
  if (pool_concepts_per_class < 1) fail("pool_concepts_per_class", "must be >= 1");
  if (embed_dim < 1) fail("embed_dim", "must be >= 1");
  if (student_feature_dim < 1) fail("student_feature_dim", "must be >= 1");
  if (teacher_feature_dim < 1) fail("teacher_feature_dim", "must be >= 1");
  if (!(teacher_dominance >= 0.0 && teacher_dominance <= 1.0)) {
    fail("teacher_dominance", "must lie in [0, 1]");
  }
  if (!(attenuation >= 0.0)) fail("attenuation", "must be >= 0");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma", "must be >= 0");
  if (static_cast<int>(class_names.size()) != num_classes) {
    fail("class_names", "needs exactly num_classes entries");
  }
  for (const auto& [mod, counts] : {std::pair{"student_counts", &student_counts},
                                    std::pair{"teacher_counts", &teacher_counts}}) {
    for (Split s : kSplits) {
      const auto& v = counts->of(s);
      const std::string field = std::string(mod) + "." + to_string(s);
      if (static_cast<int>(v.size()) != num_classes) fail(field, "needs num_classes entries");
      if (std::any_of(v.begin(), v.end(), [](int n) { return n < 0; })) {
        fail(field, "counts must be >= 0");
      }
    }
    if (std::accumulate(counts->train.begin(), counts->train.end(), 0) == 0) {
      fail(std::string(mod) + ".train", "needs at least one sample");
    }
  }
}

nlohmann::json to_json(const GeneratorConfig& cfg) {
  return {{"num_classes", cfg.num_classes},
          {"concepts_per_class", cfg.concepts_per_class},
          {"pool_concepts_per_class", cfg.pool_concepts_per_class},
          {"embed_dim", cfg.embed_dim},
          {"student_feature_dim", cfg.student_feature_dim},
          {"teacher_feature_dim", cfg.teacher_feature_dim},
          {"student_counts", counts_json(cfg.student_counts)},
          {"teacher_counts", counts_json(cfg.teacher_counts)},
          {"teacher_dominance", cfg.teacher_dominance},
          {"attenuation", cfg.attenuation},
          {"noise_sigma", cfg.noise_sigma},
          {"seed", cfg.seed},
          {"class_names", cfg.class_names}};
}

GeneratorConfig generator_config_from_json(const nlohmann::json& j, GeneratorConfig base) {
  FieldReader r(j, "generator");
  r.read("num_classes", base.num_classes);
  r.read("concepts_per_class", base.concepts_per_class);
  r.read("pool_concepts_per_class", base.pool_concepts_per_class);
  r.read("embed_dim", base.embed_dim);
  r.read("student_feature_dim", base.student_feature_dim);
  r.read("teacher_feature_dim", base.teacher_feature_dim);
  read_counts(r, "student_counts", base.student_counts);
  read_counts(r, "teacher_counts", base.teacher_counts);
  r.read("teacher_dominance", base.teacher_dominance);
  r.read("attenuation", base.attenuation);
  r.read("noise_sigma", base.noise_sigma);
  r.read("seed", base.seed);
  r.read("class_names", base.class_names);
  r.reject_unknown();
  return base;
}

std::pair<SyntheticDataset, ConceptPool> generate(const GeneratorConfig& cfg) {
  cfg.validate();
  const int classes = cfg.num_classes;
  const int k = cfg.concepts_per_class;
  const Eigen::Index n_true = static_cast<Eigen::Index>(classes) * k;

  GroundTruth gt;
  auto structure_rng = seeded(cfg.seed, 1);
  gt.concept_embeddings = l2_normalize_rows(gaussian(n_true, cfg.embed_dim, 1.0, structure_rng));
  gt.profiles = Matrix::Zero(classes, n_true);
  for (int d = 0; d < classes; ++d) {
    gt.profiles.block(d, static_cast<Eigen::Index>(d) * k, 1, k).setOnes();
  }
  const double mix_sd = 1.0 / std::sqrt(static_cast<double>(k));
  gt.teacher_mixing = gaussian(n_true, cfg.teacher_feature_dim, mix_sd, structure_rng);
  gt.student_mixing = gaussian(n_true, cfg.student_feature_dim, mix_sd, structure_rng);

  gt.teacher_dominant.assign(static_cast<std::size_t>(n_true), false);
  const int dominant = static_cast<int>(std::lround(cfg.teacher_dominance * k));
  for (int d = 0; d < classes; ++d) {
    std::vector<int> members(static_cast<std::size_t>(k));
    std::iota(members.begin(), members.end(), d * k);
    std::shuffle(members.begin(), members.end(), structure_rng);
    for (int m = 0; m < dominant; ++m) {
      const int c = members[static_cast<std::size_t>(m)];
      gt.teacher_dominant[static_cast<std::size_t>(c)] = true;
      gt.student_mixing.row(c) *= cfg.attenuation;
    }
  }

  SyntheticDataset ds;
  ds.num_classes = classes;
  ds.class_names = cfg.class_names;
  ds.config = cfg;

  auto sample_rng = seeded(cfg.seed, 2);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Modality mod : kModalities) {
    const Matrix& mixing = mod == Modality::Student ? gt.student_mixing : gt.teacher_mixing;
    const Matrix means = gt.profiles * mixing;  // C × F
    const ModalityCounts& counts =
        mod == Modality::Student ? cfg.student_counts : cfg.teacher_counts;
    for (Split split : kSplits) {
      std::vector<SampleRecord> block;
      for (int d = 0; d < classes; ++d) {
        for (int n = 0; n < counts.of(split)[static_cast<std::size_t>(d)]; ++n) {
          SampleRecord rec;
          rec.modality = mod;
          rec.split = split;
          rec.label = d;
          rec.features = means.row(d);
          for (Eigen::Index f = 0; f < rec.features.size(); ++f) {
            rec.features(f) += cfg.noise_sigma * normal(sample_rng);
          }
          block.push_back(std::move(rec));
        }
      }
      std::shuffle(block.begin(), block.end(), sample_rng);
      for (std::size_t i = 0; i < block.size(); ++i) {
        block[i].id = to_string(mod) + "-" + to_string(split) + "-" + std::to_string(i);
        ds.records.push_back(std::move(block[i]));
      }
    }
  }

  // Pool: the first concepts of each class are the ground-truth ones; extra
  // slots are perturbed near-duplicates of them.
  auto pool_rng = seeded(cfg.seed, 3);
  std::vector<Concept> concepts;
  for (int d = 0; d < classes; ++d) {
    for (int j = 0; j < cfg.pool_concepts_per_class; ++j) {
      Concept c;
      c.id = "c" + std::to_string(d) + "_" + std::to_string(j);
      c.class_hint = cfg.class_names[static_cast<std::size_t>(d)];
      const Eigen::Index source = static_cast<Eigen::Index>(d) * k + (j % k);
      if (j < k) {
        c.text = "synthetic finding " + std::to_string(j) + " of " + c.class_hint;
        c.embedding = gt.concept_embeddings.row(source);
      } else {
        c.text = "rephrased synthetic finding " + std::to_string(j % k) + " of " + c.class_hint;
        c.embedding = gt.concept_embeddings.row(source) +
                      gaussian(1, cfg.embed_dim, 0.5 / std::sqrt(static_cast<double>(cfg.embed_dim)), pool_rng);
      }
      concepts.push_back(std::move(c));
    }
  }
  ds.ground_truth = std::move(gt);
  return {std::move(ds), ConceptPool(std::move(concepts))};
}

LabeledSet SyntheticDataset::select(Modality modality, Split split) const {
  std::vector<const SampleRecord*> rows;
  for (const auto& r : records) {
    if (r.modality == modality && r.split == split) rows.push_back(&r);
  }
  LabeledSet out;
  if (rows.empty()) return out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), rows.front()->features.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = rows[i]->features;
    out.labels.push_back(rows[i]->label);
  }
  return out;
}

Eigen::Index SyntheticDataset::feature_dim(Modality modality) const {
  for (const auto& r : records) {
    if (r.modality == modality) return r.features.size();
  }
  return 0;
}

std::string SyntheticDataset::fingerprint() const {
  std::string all = meta_text(*this);
  for (Split s : kSplits) all += split_text(*this, s);
  return sha256_hex(all);
}

void write_dataset(const SyntheticDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "meta.json", meta_text(ds));
  for (Split s : kSplits) write_text_file(dir / (to_string(s) + ".jsonl"), split_text(ds, s));
}

SyntheticDataset read_dataset(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  if (!std::filesystem::exists(meta_path)) {
    throw Error(ErrorCode::MissingFile, "dataset: missing " + meta_path.string());
  }
  SyntheticDataset ds;
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_text_file(meta_path));
  } catch (const nlohmann::json::parse_error& ex) {
    throw Error(ErrorCode::ParseError, meta_path.string() + ": " + ex.what());
  }
  try {
    ds.num_classes = meta.at("num_classes").get<int>();
    if (meta.contains("class_names")) {
      ds.class_names = meta.at("class_names").get<std::vector<std::string>>();
    }
    if (meta.contains("generator")) ds.config = generator_config_from_json(meta.at("generator"));
    if (meta.contains("ground_truth")) ds.ground_truth = ground_truth_from_json(meta.at("ground_truth"));
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::SchemaViolation, meta_path.string() + ": " + ex.what());
  }
  if (ds.num_classes < 1) throw Error(ErrorCode::SchemaViolation, "dataset: num_classes < 1");
  if (ds.class_names.empty()) {
    for (int d = 0; d < ds.num_classes; ++d) ds.class_names.push_back("class" + std::to_string(d));
  }
  if (static_cast<int>(ds.class_names.size()) != ds.num_classes) {
    throw Error(ErrorCode::SchemaViolation, "dataset: class_names length != num_classes");
  }

  std::set<std::string> seen_ids;
  Eigen::Index dims[2] = {-1, -1};
  for (Split split : kSplits) {
    const auto path = dir / (to_string(split) + ".jsonl");
    if (!std::filesystem::exists(path)) {
      throw Error(ErrorCode::MissingFile, "dataset: missing " + path.string());
    }
    std::istringstream in(read_text_file(path));
    std::string line;
    std::size_t line_no = 0;
    std::size_t auto_id = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const std::string where = path.filename().string() + ":" + std::to_string(line_no);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& ex) {
        throw Error(ErrorCode::ParseError, "parse error at line " + std::to_string(line_no) +
                                               " of " + path.string() + ": " + ex.what());
      }
      SampleRecord rec;
      rec.split = split;
      try {
        rec.modality = parse_modality(j.at("modality").get<std::string>());
        const auto f = j.at("features").get<std::vector<double>>();
        rec.features = Eigen::Map<const RowVector>(f.data(), static_cast<Eigen::Index>(f.size()));
        rec.label = j.at("label").get<int>();
        rec.id = j.contains("id") ? j.at("id").get<std::string>()
                                  : to_string(split) + "-line-" + std::to_string(auto_id);
        ++auto_id;
      } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::SchemaViolation, where + ": " + ex.what());
      } catch (const Error& ex) {
        throw Error(ErrorCode::SchemaViolation, where + ": " + ex.what());
      }
      if (rec.label < 0 || rec.label >= ds.num_classes) {
        throw Error(ErrorCode::SchemaViolation, where + ": label " + std::to_string(rec.label) +
                                                    " outside [0, " + std::to_string(ds.num_classes) + ")");
      }
      if (rec.features.size() == 0 || !rec.features.allFinite()) {
        throw Error(ErrorCode::SchemaViolation, where + ": features must be non-empty and finite");
      }
      Eigen::Index& dim = dims[rec.modality == Modality::Student ? 0 : 1];
      if (dim < 0) dim = rec.features.size();
      if (rec.features.size() != dim) {
        throw Error(ErrorCode::SchemaViolation,
                    where + ": feature length " + std::to_string(rec.features.size()) +
                        " differs from earlier records (" + std::to_string(dim) + ")");
      }
      if (!seen_ids.insert(rec.id).second) {
        throw Error(ErrorCode::SplitOverlap, where + ": record id '" + rec.id +
                                                 "' appears more than once across splits");
      }
      ds.records.push_back(std::move(rec));
    }
  }
  // Same order as generate(): modality, then split, then file order.
  std::stable_sort(ds.records.begin(), ds.records.end(), [](const SampleRecord& a, const SampleRecord& b) {
    return a.modality < b.modality;
  });
  return ds;
}

}  // namespace octcoda
