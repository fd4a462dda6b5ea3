#include "octcoda/model.hpp"

#include <random>

#include "octcoda/hash.hpp"

namespace octcoda {

namespace {

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
    if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols) {
      throw Error(ErrorCode::SchemaViolation,
                  what + ": data length " + std::to_string(data.size()) + " != " +
                      std::to_string(rows) + "x" + std::to_string(cols));
    }
    return Eigen::Map<const Matrix>(data.data(), rows, cols);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::SchemaViolation, what + ": " + ex.what());
  }
}

}  // namespace

Modality parse_modality(const std::string& name) {
  if (name == "student" || name == "fundus") return Modality::Student;
  if (name == "teacher" || name == "oct") return Modality::Teacher;
  throw Error(ErrorCode::InvalidArgument,
              "unknown modality '" + name + "' (expected student|teacher|fundus|oct)");
}

std::string to_string(Modality m) { return m == Modality::Student ? "student" : "teacher"; }
std::string display_name(Modality m) { return m == Modality::Student ? "fundus" : "oct"; }

std::vector<Matrix*> ModelParams::tensors() {
  std::vector<Matrix*> out;
  for (auto& l : encoder) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&classifier_weight);
  out.push_back(&classifier_bias);
  return out;
}

std::vector<const Matrix*> ModelParams::tensors() const {
  std::vector<const Matrix*> out;
  for (const auto& l : encoder) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&classifier_weight);
  out.push_back(&classifier_bias);
  return out;
}

std::string ModelParams::hash() const {
  std::string bytes;
  for (const Matrix* m : tensors()) {
    const Eigen::Index shape[2] = {m->rows(), m->cols()};
    bytes.append(reinterpret_cast<const char*>(shape), sizeof(shape));
    bytes.append(reinterpret_cast<const char*>(m->data()),
                 static_cast<std::size_t>(m->size()) * sizeof(double));
  }
  return sha256_hex(bytes);
}

ModelParams init_params(const ModelShape& shape, Modality modality, std::uint64_t seed,
                        const std::string& pool_fingerprint) {
  if (shape.feature_dim <= 0 || shape.embed_dim <= 0 || shape.num_concepts <= 0 ||
      shape.num_classes <= 0 || shape.hidden_layers < 0 || shape.hidden_layers > 2 ||
      (shape.hidden_layers > 0 && shape.hidden_width <= 0)) {
    throw Error(ErrorCode::InvalidArgument, "init_params: invalid model shape");
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(modality == Modality::Student ? 1 : 2)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);

  ModelParams p;
  p.modality = modality;
  p.pool_fingerprint = pool_fingerprint;
  Eigen::Index in = shape.feature_dim;
  for (int l = 0; l <= shape.hidden_layers; ++l) {
    const Eigen::Index out = l == shape.hidden_layers ? shape.embed_dim : shape.hidden_width;
    Layer layer{Matrix(in, out), Matrix::Zero(1, out)};
    const double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = sd * normal(rng);
    p.encoder.push_back(std::move(layer));
    in = out;
  }
  p.classifier_weight = Matrix::Zero(shape.num_concepts, shape.num_classes);
  p.classifier_bias = Matrix::Zero(1, shape.num_classes);
  return p;
}

void apply_class_prior(ModelParams& params, const ConceptPool& pool,
                       const std::vector<std::string>& class_names, double scale) {
  if (static_cast<Eigen::Index>(pool.size()) != params.num_concepts() ||
      static_cast<Eigen::Index>(class_names.size()) != params.num_classes()) {
    throw Error(ErrorCode::DimensionMismatch, "apply_class_prior: pool or class list does not match Φ " +
                                                  shape_of(params.classifier_weight));
  }
  if (scale == 0.0) return;
  for (std::size_t d = 0; d < class_names.size(); ++d) {
    for (std::size_t j : pool.indices_of(class_names[d])) {
      params.classifier_weight(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(d)) = scale;
    }
  }
}

Prediction make_prediction(Matrix probabilities) {
  Prediction out;
  out.predicted_class.resize(static_cast<std::size_t>(probabilities.rows()));
  for (Eigen::Index r = 0; r < probabilities.rows(); ++r) {
    out.predicted_class[static_cast<std::size_t>(r)] =
        static_cast<int>(argmax_row(probabilities.row(r)));
  }
  out.probabilities = std::move(probabilities);
  return out;
}

Matrix encode(const ModelParams& params, const Matrix& features) {
  if (features.cols() != params.feature_dim()) {
    throw Error(ErrorCode::DimensionMismatch,
                "encode: features have " + std::to_string(features.cols()) +
                    " columns, encoder expects " + std::to_string(params.feature_dim()));
  }
  Matrix h = features;
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    const Layer& layer = params.encoder[l];
    Matrix z = matmul(h, layer.weight);
    z.rowwise() += layer.bias.row(0);
    if (l + 1 < params.encoder.size()) z = z.array().tanh().matrix();
    h = std::move(z);
  }
  return l2_normalize_rows(h);
}

SimilarityMatrix concept_similarity(const Matrix& embeddings, const ConceptPool& pool) {
  if (embeddings.cols() != pool.dim()) {
    throw Error(ErrorCode::DimensionMismatch,
                "concept_similarity: embedding dim " + std::to_string(embeddings.cols()) +
                    " != pool dim " + std::to_string(pool.dim()));
  }
  return matmul(embeddings, pool.embeddings().transpose());
}

Prediction predict(const SimilarityMatrix& similarity, const ModelParams& params) {
  if (similarity.cols() != params.num_concepts()) {
    throw Error(ErrorCode::DimensionMismatch,
                "predict: similarity has " + std::to_string(similarity.cols()) +
                    " concepts, classifier expects " + std::to_string(params.num_concepts()));
  }
  Matrix logits = matmul(similarity, params.classifier_weight);
  logits.rowwise() += params.classifier_bias.row(0);
  return make_prediction(softmax_rows(logits));
}

double cross_entropy(const Prediction& pred, std::span<const int> labels) {
  Tape<double> tape;
  const auto p = tape.constant(pred.probabilities);
  return cross_entropy(p, labels).value()(0, 0);
}

Prediction fused_predict(const Prediction& student, const Prediction& teacher) {
  require_same_shape(student.probabilities, teacher.probabilities, "fused_predict");
  return make_prediction((student.probabilities + teacher.probabilities) * 0.5);
}

Prediction infer(const ModelParams& params, const Matrix& features, const ConceptPool& pool) {
  return predict(concept_similarity(encode(params, features), pool), params);
}

std::vector<Var<double>> BoundParams::all() const {
  std::vector<Var<double>> out;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(weights[l]);
    out.push_back(biases[l]);
  }
  out.push_back(classifier_weight);
  out.push_back(classifier_bias);
  return out;
}

BoundParams bind(Tape<double>& tape, const ModelParams& params, bool trainable) {
  auto leaf = [&](const Matrix& m) { return trainable ? tape.variable(m) : tape.constant(m); };
  BoundParams b;
  for (const auto& l : params.encoder) {
    b.weights.push_back(leaf(l.weight));
    b.biases.push_back(leaf(l.bias));
  }
  b.classifier_weight = leaf(params.classifier_weight);
  b.classifier_bias = leaf(params.classifier_bias);
  return b;
}

Var<double> encode(const BoundParams& p, Var<double> features) {
  if (features.cols() != p.weights.front().rows()) {
    throw Error(ErrorCode::DimensionMismatch,
                "encode: features have " + std::to_string(features.cols()) +
                    " columns, encoder expects " + std::to_string(p.weights.front().rows()));
  }
  Var<double> h = features;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    h = add_row(matmul(h, p.weights[l]), p.biases[l]);
    if (l + 1 < p.weights.size()) h = tanh(h);
  }
  return l2_normalize_rows(h);
}

Var<double> concept_similarity(Var<double> embeddings, const ConceptPool& pool) {
  if (embeddings.cols() != pool.dim()) {
    throw Error(ErrorCode::DimensionMismatch,
                "concept_similarity: embedding dim " + std::to_string(embeddings.cols()) +
                    " != pool dim " + std::to_string(pool.dim()));
  }
  const Var<double> concepts_t = embeddings.tape->constant(pool.embeddings().transpose());
  return matmul(embeddings, concepts_t);
}

Var<double> predict(Var<double> similarity, const BoundParams& p) {
  if (similarity.cols() != p.classifier_weight.rows()) {
    throw Error(ErrorCode::DimensionMismatch,
                "predict: similarity has " + std::to_string(similarity.cols()) +
                    " concepts, classifier expects " + std::to_string(p.classifier_weight.rows()));
  }
  return softmax_rows(add_row(matmul(similarity, p.classifier_weight), p.classifier_bias));
}

nlohmann::json to_json(const ModelParams& params) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : params.encoder) {
    layers.push_back({{"weight", matrix_json(l.weight)}, {"bias", matrix_json(l.bias)}});
  }
  return {{"format", "octcoda-checkpoint"},
          {"version", 1},
          {"modality", to_string(params.modality)},
          {"frozen", params.frozen},
          {"pool_fingerprint", params.pool_fingerprint},
          {"feature_dim", params.feature_dim()},
          {"embed_dim", params.embed_dim()},
          {"num_concepts", params.num_concepts()},
          {"num_classes", params.num_classes()},
          {"encoder", layers},
          {"classifier", {{"weight", matrix_json(params.classifier_weight)},
                          {"bias", matrix_json(params.classifier_bias)}}}};
}

ModelParams params_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "octcoda-checkpoint") {
      throw Error(ErrorCode::SchemaViolation, "checkpoint: unexpected format tag");
    }
    ModelParams p;
    p.modality = parse_modality(doc.at("modality").get<std::string>());
    p.frozen = doc.at("frozen").get<bool>();
    p.pool_fingerprint = doc.at("pool_fingerprint").get<std::string>();
    for (const auto& l : doc.at("encoder")) {
      p.encoder.push_back(
          {matrix_from_json(l.at("weight"), "encoder weight"), matrix_from_json(l.at("bias"), "encoder bias")});
    }
    const auto& cls = doc.at("classifier");
    p.classifier_weight = matrix_from_json(cls.at("weight"), "classifier weight");
    p.classifier_bias = matrix_from_json(cls.at("bias"), "classifier bias");
    if (p.encoder.empty()) throw Error(ErrorCode::SchemaViolation, "checkpoint: empty encoder");
    for (std::size_t l = 0; l < p.encoder.size(); ++l) {
      const auto& layer = p.encoder[l];
      if (layer.bias.rows() != 1 || layer.bias.cols() != layer.weight.cols() ||
          (l > 0 && layer.weight.rows() != p.encoder[l - 1].weight.cols())) {
        throw Error(ErrorCode::SchemaViolation, "checkpoint: inconsistent encoder shapes");
      }
    }
    if (p.classifier_bias.rows() != 1 || p.classifier_bias.cols() != p.classifier_weight.cols() ||
        doc.at("embed_dim").get<Eigen::Index>() != p.embed_dim() ||
        doc.at("feature_dim").get<Eigen::Index>() != p.feature_dim() ||
        doc.at("num_concepts").get<Eigen::Index>() != p.num_concepts() ||
        doc.at("num_classes").get<Eigen::Index>() != p.num_classes()) {
      throw Error(ErrorCode::SchemaViolation, "checkpoint: shape headers disagree with arrays");
    }
    return p;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::SchemaViolation, std::string("checkpoint: ") + ex.what());
  }
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  write_text_file(path, to_json(params).dump() + "\n");
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return params_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& ex) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + ex.what());
  }
}

void require_pool_match(const ModelParams& params, const ConceptPool& pool) {
  if (params.pool_fingerprint != pool.fingerprint() || params.num_concepts() !=
      static_cast<Eigen::Index>(pool.size()) || params.embed_dim() != pool.dim()) {
    throw Error(ErrorCode::FingerprintMismatch,
                "checkpoint was built for pool " + params.pool_fingerprint.substr(0, 12) +
                    ", given pool " + pool.fingerprint().substr(0, 12));
  }
}

}  // namespace octcoda
