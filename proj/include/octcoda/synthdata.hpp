#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "octcoda/concept_pool.hpp"
#include "octcoda/model.hpp"
#include "octcoda/numerics.hpp"

namespace octcoda {

enum class Split { Train, Val, Test };

std::string to_string(Split s);
Split parse_split(const std::string& name);

struct SampleRecord {
  std::string id;
  Modality modality = Modality::Student;
  RowVector features;
  int label = 0;
  Split split = Split::Train;

  bool operator==(const SampleRecord& other) const;
};

/// Per-class sample counts for one modality.
struct ModalityCounts {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;

  const std::vector<int>& of(Split s) const;
  bool operator==(const ModalityCounts&) const = default;
};

struct GeneratorConfig {
  int num_classes = 9;
  int concepts_per_class = 10;       // active ground-truth concepts per class
  int pool_concepts_per_class = 10;  // concepts per class written to the pool
  Eigen::Index embed_dim = 16;
  Eigen::Index student_feature_dim = 256;
  Eigen::Index teacher_feature_dim = 256;
  ModalityCounts student_counts;
  ModalityCounts teacher_counts;
  double teacher_dominance = 0.6;
  double attenuation = 0.1;
  double noise_sigma = 4.0;
  std::uint64_t seed = 0;
  std::vector<std::string> class_names;

  /// Nine imbalanced classes named after the retinal disease labels.
  static GeneratorConfig defaults();
  void validate() const;
  bool operator==(const GeneratorConfig&) const = default;
};

nlohmann::json to_json(const GeneratorConfig& cfg);
/// Starts from `base` and overrides every field present in `j`; unknown
/// fields are rejected with an error naming them.
GeneratorConfig generator_config_from_json(const nlohmann::json& j,
                                           GeneratorConfig base = GeneratorConfig::defaults());

/// Everything needed to regenerate a dataset bit-identically.
struct GroundTruth {
  Matrix profiles;             // C × N_true, 0/1 activations
  Matrix concept_embeddings;   // N_true × D, unit rows
  Matrix student_mixing;       // N_true × F_student
  Matrix teacher_mixing;       // N_true × F_teacher
  std::vector<bool> teacher_dominant;  // per ground-truth concept

  bool operator==(const GroundTruth& other) const;
};

struct LabeledSet {
  Matrix features;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

struct SyntheticDataset {
  int num_classes = 0;
  std::vector<std::string> class_names;
  std::optional<GeneratorConfig> config;       // absent for external features
  std::optional<GroundTruth> ground_truth;
  std::vector<SampleRecord> records;

  LabeledSet select(Modality modality, Split split) const;
  Eigen::Index feature_dim(Modality modality) const;
  /// SHA-256 of the serialized form; equal datasets hash equally.
  std::string fingerprint() const;

  bool operator==(const SyntheticDataset&) const = default;
};

std::pair<SyntheticDataset, ConceptPool> generate(const GeneratorConfig& cfg);

void write_dataset(const SyntheticDataset& ds, const std::filesystem::path& dir);
SyntheticDataset read_dataset(const std::filesystem::path& dir);

}  // namespace octcoda
