#include "octcoda/concept_pool.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "octcoda/hash.hpp"

namespace octcoda {

namespace {

constexpr double kTieTolerance = 1e-9;

std::mt19937_64 class_rng(std::uint64_t seed, std::size_t class_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(class_index), 0x5e1ec7u};
  return std::mt19937_64(seq);
}

// Checks the per-class precondition and returns class -> canonical indices.
std::vector<std::vector<std::size_t>> class_groups(const ConceptPool& pool, std::size_t k,
                                                   const char* who) {
  if (k == 0) {
    throw Error(ErrorCode::InvalidArgument, std::string(who) + ": k_per_class must be >= 1");
  }
  std::vector<std::vector<std::size_t>> groups;
  for (const auto& cls : pool.classes()) {
    auto idx = pool.indices_of(cls);
    if (idx.size() < k) {
      throw Error(ErrorCode::InsufficientConcepts,
                  std::string(who) + ": class '" + cls + "' has " + std::to_string(idx.size()) +
                      " concepts, need " + std::to_string(k));
    }
    groups.push_back(std::move(idx));
  }
  return groups;
}

Matrix rows_of(const Matrix& m, const std::vector<std::size_t>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  }
  return out;
}

// Position of the best unselected score; near-ties resolve to the lower position.
std::size_t best_unselected(const std::vector<double>& score, const std::vector<bool>& taken) {
  std::size_t best = score.size();
  for (std::size_t i = 0; i < score.size(); ++i) {
    if (taken[i]) continue;
    if (best == score.size() || score[i] > score[best] + kTieTolerance) best = i;
  }
  return best;
}

// Mean cosine between each concept and the normalized image rows.
Vector mean_similarity(const ConceptPool& pool, const Matrix& image_embeddings, const char* who) {
  if (image_embeddings.rows() == 0) {
    throw Error(ErrorCode::EmptyReferenceSet, std::string(who) + ": no image embeddings given");
  }
  if (image_embeddings.cols() != pool.dim()) {
    throw Error(ErrorCode::DimensionMismatch,
                std::string(who) + ": image embedding dim " +
                    std::to_string(image_embeddings.cols()) + " != pool dim " +
                    std::to_string(pool.dim()));
  }
  const Matrix sims = l2_normalize_rows(image_embeddings) * pool.embeddings().transpose();
  return sims.colwise().mean().transpose();
}

}  // namespace

ConceptPool::ConceptPool(std::vector<Concept> concepts) : concepts_(std::move(concepts)) {
  if (concepts_.empty()) throw Error(ErrorCode::EmptyPool, "concept pool is empty");
  dim_ = concepts_.front().embedding.size();
  if (dim_ == 0) throw Error(ErrorCode::DimensionMismatch, "concept embeddings have dimension 0");
  std::set<std::string> seen;
  embeddings_.resize(static_cast<Eigen::Index>(concepts_.size()), dim_);
  for (std::size_t i = 0; i < concepts_.size(); ++i) {
    Concept& c = concepts_[i];
    if (c.embedding.size() != dim_) {
      throw Error(ErrorCode::DimensionMismatch,
                  "concept '" + c.id + "' has dimension " + std::to_string(c.embedding.size()) +
                      ", pool dimension is " + std::to_string(dim_));
    }
    if (!seen.insert(c.id).second) {
      throw Error(ErrorCode::DuplicateId, "duplicate concept id '" + c.id + "'");
    }
    if (!c.embedding.allFinite()) {
      throw Error(ErrorCode::SchemaViolation, "concept '" + c.id + "' has a non-finite embedding");
    }
    c.embedding = l2_normalize_rows(c.embedding);
    embeddings_.row(static_cast<Eigen::Index>(i)) = c.embedding;
  }
}

std::vector<std::string> ConceptPool::classes() const {
  std::vector<std::string> out;
  for (const auto& c : concepts_) {
    if (std::find(out.begin(), out.end(), c.class_hint) == out.end()) out.push_back(c.class_hint);
  }
  return out;
}

std::map<std::string, std::size_t> ConceptPool::per_class_counts() const {
  std::map<std::string, std::size_t> out;
  for (const auto& c : concepts_) ++out[c.class_hint];
  return out;
}

std::vector<std::size_t> ConceptPool::indices_of(const std::string& cls) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < concepts_.size(); ++i) {
    if (concepts_[i].class_hint == cls) out.push_back(i);
  }
  return out;
}

ConceptPool ConceptPool::subset(std::vector<std::size_t> indices) const {
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  std::vector<Concept> picked;
  picked.reserve(indices.size());
  for (std::size_t i : indices) picked.push_back(concepts_.at(i));
  return ConceptPool(std::move(picked));
}

std::string ConceptPool::fingerprint() const {
  std::string joined;
  for (const auto& c : concepts_) {
    joined += c.id;
    joined.push_back('\n');
  }
  return sha256_hex(joined);
}

nlohmann::json ConceptPool::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : concepts_) {
    std::vector<double> e(c.embedding.data(), c.embedding.data() + c.embedding.size());
    arr.push_back({{"id", c.id}, {"class_hint", c.class_hint}, {"text", c.text}, {"embedding", e}});
  }
  return {{"dim", dim_}, {"concepts", arr}};
}

ConceptPool parse_pool(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("concepts") || !doc["concepts"].is_array()) {
    throw Error(ErrorCode::SchemaViolation, "concept pool: expected object with 'concepts' array");
  }
  std::vector<Concept> concepts;
  for (const auto& item : doc["concepts"]) {
    try {
      Concept c;
      c.id = item.at("id").get<std::string>();
      c.class_hint = item.at("class_hint").get<std::string>();
      c.text = item.value("text", std::string());
      const auto e = item.at("embedding").get<std::vector<double>>();
      c.embedding = Eigen::Map<const RowVector>(e.data(), static_cast<Eigen::Index>(e.size()));
      concepts.push_back(std::move(c));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::SchemaViolation, std::string("concept pool entry: ") + ex.what());
    }
  }
  ConceptPool pool(std::move(concepts));
  if (doc.contains("dim")) {
    if (!doc["dim"].is_number_integer() || doc["dim"].get<Eigen::Index>() != pool.dim()) {
      throw Error(ErrorCode::DimensionMismatch,
                  "concept pool: declared dim " + doc["dim"].dump() + " but embeddings have " +
                      std::to_string(pool.dim()));
    }
  }
  return pool;
}

ConceptPool load_pool(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& ex) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + ex.what());
  }
  return parse_pool(doc);
}

void save_pool(const ConceptPool& pool, const std::filesystem::path& path) {
  write_text_file(path, pool.to_json().dump(1) + "\n");
}

ConceptPool select_random(const ConceptPool& pool, std::size_t k_per_class, std::uint64_t seed) {
  const auto groups = class_groups(pool, k_per_class, "select_random");
  std::vector<std::size_t> keep;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto idx = groups[g];
    auto rng = class_rng(seed, g);
    std::shuffle(idx.begin(), idx.end(), rng);
    keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k_per_class));
  }
  return pool.subset(std::move(keep));
}

ConceptPool select_svd(const ConceptPool& pool, std::size_t k_per_class) {
  const auto groups = class_groups(pool, k_per_class, "select_svd");
  std::vector<std::size_t> keep;
  for (const auto& idx : groups) {
    const Matrix e = rows_of(pool.embeddings(), idx);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(e, Eigen::ComputeFullV);
    const Eigen::MatrixXd& v = svd.matrixV();
    std::vector<bool> taken(idx.size(), false);
    for (std::size_t j = 0; j < k_per_class; ++j) {
      std::vector<double> score(idx.size(), 0.0);
      if (static_cast<Eigen::Index>(j) < v.cols()) {
        // Singular directions carry an arbitrary sign, so rank by |cos|.
        const Vector proj = e * v.col(static_cast<Eigen::Index>(j));
        for (std::size_t i = 0; i < idx.size(); ++i) {
          score[i] = std::abs(proj(static_cast<Eigen::Index>(i)));
        }
      }
      const std::size_t pick = best_unselected(score, taken);
      taken[pick] = true;
      keep.push_back(idx[pick]);
    }
  }
  return pool.subset(std::move(keep));
}

ConceptPool select_kmeans(const ConceptPool& pool, std::size_t k_per_class, std::uint64_t seed,
                          int max_iters) {
  const auto groups = class_groups(pool, k_per_class, "select_kmeans");
  const auto k = static_cast<Eigen::Index>(k_per_class);
  std::vector<std::size_t> keep;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& idx = groups[g];
    const Matrix pts = rows_of(pool.embeddings(), idx);
    const auto n = pts.rows();

    std::vector<std::size_t> order(idx.size());
    std::iota(order.begin(), order.end(), 0);
    auto rng = class_rng(seed, g);
    std::shuffle(order.begin(), order.end(), rng);
    Matrix centers(k, pts.cols());
    for (Eigen::Index c = 0; c < k; ++c) {
      centers.row(c) = pts.row(static_cast<Eigen::Index>(order[static_cast<std::size_t>(c)]));
    }

    std::vector<Eigen::Index> assign(static_cast<std::size_t>(n), -1);
    for (int it = 0; it < max_iters; ++it) {
      bool changed = false;
      for (Eigen::Index p = 0; p < n; ++p) {
        Eigen::Index best = 0;
        double best_d = (pts.row(p) - centers.row(0)).squaredNorm();
        for (Eigen::Index c = 1; c < k; ++c) {
          const double d = (pts.row(p) - centers.row(c)).squaredNorm();
          if (d < best_d) {
            best_d = d;
            best = c;
          }
        }
        if (assign[static_cast<std::size_t>(p)] != best) {
          assign[static_cast<std::size_t>(p)] = best;
          changed = true;
        }
      }
      if (!changed) break;
      Matrix sums = Matrix::Zero(k, pts.cols());
      std::vector<int> counts(static_cast<std::size_t>(k), 0);
      for (Eigen::Index p = 0; p < n; ++p) {
        sums.row(assign[static_cast<std::size_t>(p)]) += pts.row(p);
        ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(p)])];
      }
      for (Eigen::Index c = 0; c < k; ++c) {
        // An emptied cluster keeps its previous center.
        if (counts[static_cast<std::size_t>(c)] > 0) {
          centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
        }
      }
    }

    std::vector<bool> taken(idx.size(), false);
    for (Eigen::Index c = 0; c < k; ++c) {
      std::vector<double> score(idx.size());
      for (Eigen::Index p = 0; p < n; ++p) {
        score[static_cast<std::size_t>(p)] = -(pts.row(p) - centers.row(c)).squaredNorm();
      }
      const std::size_t pick = best_unselected(score, taken);
      taken[pick] = true;
      keep.push_back(idx[pick]);
    }
  }
  return pool.subset(std::move(keep));
}

ConceptPool select_by_similarity(const ConceptPool& pool, std::size_t k_per_class,
                                 const Matrix& image_embeddings) {
  const Vector mean = mean_similarity(pool, image_embeddings, "select_by_similarity");
  const auto groups = class_groups(pool, k_per_class, "select_by_similarity");
  std::vector<std::size_t> keep;
  for (auto idx : groups) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return mean(static_cast<Eigen::Index>(a)) > mean(static_cast<Eigen::Index>(b));
    });
    keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k_per_class));
  }
  return pool.subset(std::move(keep));
}

GreedyTrace submodular_trace(const ConceptPool& pool, const std::string& cls, std::size_t k,
                             const Matrix& image_embeddings, SubmodularWeights weights) {
  const Vector mean = mean_similarity(pool, image_embeddings, "select_submodular");
  const auto idx = pool.indices_of(cls);
  if (idx.size() < k) {
    throw Error(ErrorCode::InsufficientConcepts,
                "select_submodular: class '" + cls + "' has " + std::to_string(idx.size()) +
                    " concepts, need " + std::to_string(k));
  }
  const Matrix e = rows_of(pool.embeddings(), idx);
  const Matrix affinity = ((e * e.transpose()).array() + 1.0).matrix() * 0.5;
  const auto n = static_cast<Eigen::Index>(idx.size());

  Vector cover = Vector::Zero(n);
  std::vector<bool> taken(idx.size(), false);
  GreedyTrace trace;
  double objective = 0.0;
  for (std::size_t step = 0; step < k; ++step) {
    std::vector<double> gain(idx.size(), 0.0);
    for (Eigen::Index s = 0; s < n; ++s) {
      const double disc = 0.5 * (1.0 + mean(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(s)])));
      const double cov = (affinity.col(s) - cover).cwiseMax(0.0).sum();
      gain[static_cast<std::size_t>(s)] = weights.lambda_disc * disc + weights.lambda_div * cov;
    }
    std::size_t best = idx.size();
    for (std::size_t s = 0; s < idx.size(); ++s) {
      if (!taken[s] && (best == idx.size() || gain[s] > gain[best])) best = s;
    }
    taken[best] = true;
    cover = cover.cwiseMax(affinity.col(static_cast<Eigen::Index>(best)));
    objective += gain[best];
    trace.picks.push_back(idx[best]);
    trace.gains.push_back(gain[best]);
    trace.objective.push_back(objective);
  }
  return trace;
}

ConceptPool select_submodular(const ConceptPool& pool, std::size_t k_per_class,
                              const Matrix& image_embeddings, SubmodularWeights weights) {
  mean_similarity(pool, image_embeddings, "select_submodular");
  class_groups(pool, k_per_class, "select_submodular");
  std::vector<std::size_t> keep;
  for (const auto& cls : pool.classes()) {
    const auto trace = submodular_trace(pool, cls, k_per_class, image_embeddings, weights);
    keep.insert(keep.end(), trace.picks.begin(), trace.picks.end());
  }
  return pool.subset(std::move(keep));
}

const std::vector<std::string>& selection_method_names() {
  static const std::vector<std::string> names = {"none",       "random",    "svd",
                                                 "kmeans",     "similarity", "submodular"};
  return names;
}

SelectionMethod parse_selection_method(const std::string& name) {
  static const SelectionMethod methods[] = {SelectionMethod::None,       SelectionMethod::Random,
                                            SelectionMethod::Svd,        SelectionMethod::Kmeans,
                                            SelectionMethod::Similarity, SelectionMethod::Submodular};
  const auto& names = selection_method_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return methods[i];
  }
  std::string valid;
  for (const auto& n : names) valid += (valid.empty() ? "" : ",") + n;
  throw Error(ErrorCode::InvalidArgument,
              "unknown selection method '" + name + "'; valid methods: {" + valid + "}");
}

std::string to_string(SelectionMethod m) {
  return selection_method_names().at(static_cast<std::size_t>(m));
}

ConceptPool select_concepts(const ConceptPool& pool, const SelectionOptions& opts,
                            const Matrix* image_embeddings) {
  auto need_images = [&]() -> const Matrix& {
    if (image_embeddings == nullptr) {
      throw Error(ErrorCode::EmptyReferenceSet,
                  "selection method '" + to_string(opts.method) + "' needs image embeddings");
    }
    return *image_embeddings;
  };
  switch (opts.method) {
    case SelectionMethod::None: return pool;
    case SelectionMethod::Random: return select_random(pool, opts.k_per_class, opts.seed);
    case SelectionMethod::Svd: return select_svd(pool, opts.k_per_class);
    case SelectionMethod::Kmeans:
      return select_kmeans(pool, opts.k_per_class, opts.seed, opts.kmeans_max_iters);
    case SelectionMethod::Similarity:
      return select_by_similarity(pool, opts.k_per_class, need_images());
    case SelectionMethod::Submodular:
      return select_submodular(pool, opts.k_per_class, need_images(), opts.weights);
  }
  return pool;
}

}  // namespace octcoda
