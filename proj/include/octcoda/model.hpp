#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "octcoda/concept_pool.hpp"
#include "octcoda/numerics.hpp"
#include "octcoda/tape.hpp"

namespace octcoda {

enum class Modality { Student, Teacher };

/// Accepts "student"/"teacher" and the display aliases "fundus"/"oct".
Modality parse_modality(const std::string& name);
std::string to_string(Modality m);
std::string display_name(Modality m);

/// Affine map x*weight + bias; weight is in×out, bias is 1×out.
struct Layer {
  Matrix weight;
  Matrix bias;
};

struct ModelParams {
  /// Hidden tanh layers followed by the final projection into the concept
  /// embedding space; the output is always row-normalized.
  std::vector<Layer> encoder;
  Matrix classifier_weight;  // N concepts × C classes
  Matrix classifier_bias;    // 1 × C
  Modality modality = Modality::Student;
  bool frozen = false;
  std::string pool_fingerprint;

  Eigen::Index feature_dim() const { return encoder.front().weight.rows(); }
  Eigen::Index embed_dim() const { return encoder.back().weight.cols(); }
  Eigen::Index num_concepts() const { return classifier_weight.rows(); }
  Eigen::Index num_classes() const { return classifier_weight.cols(); }

  /// Every trainable tensor in a fixed order (encoder layers, then Φ).
  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;

  /// SHA-256 over shapes and the exact bytes of every tensor.
  std::string hash() const;
};

struct ModelShape {
  Eigen::Index feature_dim = 0;
  Eigen::Index embed_dim = 0;
  Eigen::Index num_concepts = 0;
  Eigen::Index num_classes = 0;
  int hidden_layers = 0;  // 0..2
  Eigen::Index hidden_width = 32;
};

/// Gaussian encoder weights with variance 1/fan_in, zero biases, zero Φ.
ModelParams init_params(const ModelShape& shape, Modality modality, std::uint64_t seed,
                        const std::string& pool_fingerprint = {});

/// Sets Φ(j, d) = scale for every concept j whose class_hint is class_names[d].
/// Concepts hinting at no listed class keep their weights.
void apply_class_prior(ModelParams& params, const ConceptPool& pool,
                       const std::vector<std::string>& class_names, double scale);

struct Prediction {
  Matrix probabilities;  // B × C, rows on the simplex
  std::vector<int> predicted_class;
};

Prediction make_prediction(Matrix probabilities);

Matrix encode(const ModelParams& params, const Matrix& features);
SimilarityMatrix concept_similarity(const Matrix& embeddings, const ConceptPool& pool);
Prediction predict(const SimilarityMatrix& similarity, const ModelParams& params);
double cross_entropy(const Prediction& pred, std::span<const int> labels);
/// Averages the probability rows and re-derives the argmax.
Prediction fused_predict(const Prediction& student, const Prediction& teacher);

/// Convenience: encode → similarity → predict.
Prediction infer(const ModelParams& params, const Matrix& features, const ConceptPool& pool);

// ---------------------------------------------------------------------------
// Differentiable forward pass.

struct BoundParams {
  std::vector<Var<double>> weights;
  std::vector<Var<double>> biases;
  Var<double> classifier_weight;
  Var<double> classifier_bias;

  /// Vars in the same order as ModelParams::tensors().
  std::vector<Var<double>> all() const;
};

/// Places `params` on `tape`, as tracked leaves when `trainable`.
BoundParams bind(Tape<double>& tape, const ModelParams& params, bool trainable);

Var<double> encode(const BoundParams& p, Var<double> features);
Var<double> concept_similarity(Var<double> embeddings, const ConceptPool& pool);
Var<double> predict(Var<double> similarity, const BoundParams& p);

// ---------------------------------------------------------------------------
// Checkpoints: JSON with shape headers, row-major arrays, and the pool fingerprint.

nlohmann::json to_json(const ModelParams& params);
ModelParams params_from_json(const nlohmann::json& doc);
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

/// Throws FingerprintMismatch unless the checkpoint was built against `pool`.
void require_pool_match(const ModelParams& params, const ConceptPool& pool);

}  // namespace octcoda
