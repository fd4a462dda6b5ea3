#pragma once

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "octcoda/concept_pool.hpp"
#include "octcoda/distillation.hpp"
#include "octcoda/metrics.hpp"
#include "octcoda/model.hpp"
#include "octcoda/synthdata.hpp"

namespace octcoda {

struct TrainConfig {
  double learning_rate = 1e-4;
  double lr_min = 0.0;         // cosine-annealing floor
  int schedule_period = 0;     // steps per cosine cycle; 0 means the whole run
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 64;         // per modality
  int epochs = 50;
  std::uint64_t seed = 0;
  int hidden_layers = 0;
  Eigen::Index hidden_width = 32;
  double classifier_prior = 0.0;  // initial Φ weight from each concept to its hinted class
  bool select_on_val = true;   // keep the epoch with the best validation macro P-R F1
  DistillConfig distill{};

  /// `section` prefixes field names in error messages.
  void validate(const std::string& section = "train") const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {},
                                   const std::string& section = "train");

struct OptimizerState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::int64_t step = 0;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerState for_params(const ModelParams& params, const TrainConfig& cfg);
};

/// Decoupled-weight-decay Adam update with bias correction. `grads` follows
/// ModelParams::tensors() order.
void adamw_step(ModelParams& params, const std::vector<Matrix>& grads, OptimizerState& state,
                double lr);

/// lr_min + (lr_max - lr_min)(1 + cos(pi * step / total)) / 2.
double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_max, double lr_min);

/// Independent per-modality epoch streams. Each modality reshuffles its own
/// training split every epoch (seeded by seed, modality and epoch) and cycles
/// at its own length; there is no pairing between the two streams.
class UnpairedSampler {
 public:
  UnpairedSampler(std::size_t student_size, std::size_t teacher_size, int batch_size,
                  std::uint64_t seed);

  /// Row indices (ascending) into each modality's training split for `step`.
  std::vector<std::size_t> indices(Modality modality, std::int64_t step) const;
  std::int64_t steps_per_epoch(Modality modality) const;
  std::size_t batch_size(Modality modality) const;

 private:
  struct Stream {
    std::size_t size = 0;
    std::size_t batch = 0;
    std::int64_t steps = 0;
  };
  const Stream& stream(Modality m) const { return m == Modality::Student ? student_ : teacher_; }

  Stream student_;
  Stream teacher_;
  std::uint64_t seed_;
};

LabeledSet take_rows(const LabeledSet& set, const std::vector<std::size_t>& rows);

std::pair<LabeledSet, LabeledSet> sample_unpaired_batch(const SyntheticDataset& dataset,
                                                        int batch_size, std::uint64_t seed,
                                                        std::int64_t step);

struct TrainOptions {
  bool record_trajectory = false;  // hash the parameters after every step
  std::function<void(const nlohmann::json&)> on_log;
};

struct TrainResult {
  ModelParams params;
  std::vector<nlohmann::json> log;         // step and epoch records, in order
  std::vector<std::string> trajectory;     // parameter hashes, one per step
  int best_epoch = -1;
  double best_val_macro_prf1 = 0.0;
};

/// Trains the teacher-modality model with cross-entropy only; returns it frozen.
TrainResult pretrain_teacher(const TrainConfig& cfg, const SyntheticDataset& dataset,
                             const ConceptPool& pool, const TrainOptions& opts = {});

/// Trains the student with cls + alpha*gpd + beta*lcd against a frozen teacher.
TrainResult distill_student(const TrainConfig& cfg, const ModelParams& teacher,
                            const SyntheticDataset& dataset, const ConceptPool& pool,
                            const TrainOptions& opts = {});

/// Student trained on cross-entropy alone, without any teacher.
TrainResult train_student_baseline(const TrainConfig& cfg, const SyntheticDataset& dataset,
                                   const ConceptPool& pool, const TrainOptions& opts = {});

MetricsReport evaluate(const ModelParams& params, const SyntheticDataset& dataset,
                       const ConceptPool& pool, Split split);

/// Pairs every student record of `split` with a teacher record of the same
/// class, cycling through that class's teacher records in file order. Under
/// the generator, instances are class signal plus independent per-modality
/// noise, so same-class pairing is an exact stand-in for paired acquisition.
std::pair<LabeledSet, LabeledSet> paired_sets(const SyntheticDataset& dataset, Split split);

/// Averages student and teacher probabilities row by row; the two sets must
/// be row-aligned with identical labels.
MetricsReport evaluate_fused(const ModelParams& student, const ModelParams& teacher,
                             const LabeledSet& student_set, const LabeledSet& teacher_set,
                             const ConceptPool& pool, const std::vector<std::string>& class_names);

}  // namespace octcoda
