#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "octcoda/numerics.hpp"

namespace octcoda {

struct Concept {
  std::string id;
  std::string class_hint;
  std::string text;
  RowVector embedding;
};

/// Ordered, validated concept set. Load order is the canonical concept axis
/// for every similarity matrix built against the pool.
class ConceptPool {
 public:
  ConceptPool() = default;
  /// Validates ids, dimensions and finiteness; L2-normalizes every embedding.
  explicit ConceptPool(std::vector<Concept> concepts);

  std::size_t size() const noexcept { return concepts_.size(); }
  Eigen::Index dim() const noexcept { return dim_; }
  const std::vector<Concept>& concepts() const noexcept { return concepts_; }
  const Concept& operator[](std::size_t i) const { return concepts_.at(i); }

  /// N×D matrix of embeddings, one row per concept in canonical order.
  const Matrix& embeddings() const noexcept { return embeddings_; }

  /// Class hints in order of first appearance.
  std::vector<std::string> classes() const;
  std::map<std::string, std::size_t> per_class_counts() const;
  /// Canonical indices of concepts whose class_hint is `cls`, ascending.
  std::vector<std::size_t> indices_of(const std::string& cls) const;

  /// New pool with the given canonical indices, kept in canonical order.
  ConceptPool subset(std::vector<std::size_t> indices) const;

  /// SHA-256 over the ordered concept ids.
  std::string fingerprint() const;

  nlohmann::json to_json() const;

 private:
  std::vector<Concept> concepts_;
  Matrix embeddings_;
  Eigen::Index dim_ = 0;
};

ConceptPool parse_pool(const nlohmann::json& doc);
ConceptPool load_pool(const std::filesystem::path& path);
void save_pool(const ConceptPool& pool, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Per-class selectors. Each returns exactly k concepts per class_hint, in
// canonical order, and leaves the input pool untouched. Ties break toward the
// lower canonical index.

ConceptPool select_random(const ConceptPool& pool, std::size_t k_per_class, std::uint64_t seed);

ConceptPool select_svd(const ConceptPool& pool, std::size_t k_per_class);

ConceptPool select_kmeans(const ConceptPool& pool, std::size_t k_per_class, std::uint64_t seed,
                          int max_iters = 100);

/// Ranks each class's concepts by mean cosine similarity to `image_embeddings`.
ConceptPool select_by_similarity(const ConceptPool& pool, std::size_t k_per_class,
                                 const Matrix& image_embeddings);

struct SubmodularWeights {
  double lambda_disc = 1.0;
  double lambda_div = 1.0;
};

/// Greedy path through one class for the discriminability + coverage objective.
struct GreedyTrace {
  std::vector<std::size_t> picks;   // canonical indices, in pick order
  std::vector<double> objective;    // F after each pick
  std::vector<double> gains;        // marginal gain of each pick
};

/// Greedy maximization of
///   F(S) = lambda_disc * sum_{s in S} (1 + meanSim(s)) / 2
///        + lambda_div  * sum_{c in class} max_{s in S} (1 + cos(c, s)) / 2,
/// with an empty-set coverage of 0. Shifting cosines into [0, 1] keeps F
/// monotone and submodular.
GreedyTrace submodular_trace(const ConceptPool& pool, const std::string& cls, std::size_t k,
                             const Matrix& image_embeddings, SubmodularWeights weights = {});

ConceptPool select_submodular(const ConceptPool& pool, std::size_t k_per_class,
                              const Matrix& image_embeddings, SubmodularWeights weights = {});

enum class SelectionMethod { None, Random, Svd, Kmeans, Similarity, Submodular };

SelectionMethod parse_selection_method(const std::string& name);
std::string to_string(SelectionMethod m);
const std::vector<std::string>& selection_method_names();

struct SelectionOptions {
  SelectionMethod method = SelectionMethod::None;
  std::size_t k_per_class = 10;
  std::uint64_t seed = 0;
  int kmeans_max_iters = 100;
  SubmodularWeights weights{};
};

/// Dispatches on `opts.method`; `image_embeddings` is required for the
/// similarity and submodular methods only.
ConceptPool select_concepts(const ConceptPool& pool, const SelectionOptions& opts,
                            const Matrix* image_embeddings = nullptr);

}  // namespace octcoda
