#include "octcoda/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "octcoda/json_fields.hpp"

namespace octcoda {

namespace {

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, Modality m,
                                           std::int64_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(m == Modality::Student ? 11 : 17),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

void require_finite(double value, const char* term, std::int64_t step) {
  if (!std::isfinite(value)) {
    throw Error(ErrorCode::NonFiniteLoss, "non-finite " + std::string(term) + " loss at step " +
                                              std::to_string(step) + " (value " +
                                              std::to_string(value) + ")");
  }
}

ModelShape shape_for(const TrainConfig& cfg, const SyntheticDataset& ds, const ConceptPool& pool,
                     Modality m) {
  ModelShape s;
  s.feature_dim = ds.feature_dim(m);
  s.embed_dim = pool.dim();
  s.num_concepts = static_cast<Eigen::Index>(pool.size());
  s.num_classes = ds.num_classes;
  s.hidden_layers = cfg.hidden_layers;
  s.hidden_width = cfg.hidden_width;
  return s;
}

std::int64_t total_steps(const TrainConfig& cfg, std::int64_t steps_per_epoch) {
  return static_cast<std::int64_t>(cfg.epochs) * steps_per_epoch;
}

double scheduled_lr(const TrainConfig& cfg, std::int64_t step, std::int64_t total) {
  const std::int64_t period = cfg.schedule_period > 0 ? cfg.schedule_period : total;
  if (period <= 0) return cfg.learning_rate;
  return cosine_lr(step % period, period, cfg.learning_rate, cfg.lr_min);
}

double val_macro_prf1(const ModelParams& params, const LabeledSet& val, const ConceptPool& pool,
                      int num_classes) {
  if (val.size() == 0) return 0.0;
  const Prediction pred = infer(params, val.features, pool);
  const auto counts = confusion_counts(pred.predicted_class, val.labels, num_classes);
  double sum = 0.0;
  for (const auto& m : per_class_metrics(counts)) sum += m.pr_f1;
  return sum / num_classes;
}

// Shared loop for the three trainers. `teacher` is null for single-model
// training; `distill` adds the prototype and contrastive terms.
TrainResult run_training(const TrainConfig& cfg, Modality modality, const ModelParams* teacher,
                         const SyntheticDataset& ds, const ConceptPool& pool,
                         const TrainOptions& opts) {
  cfg.validate();
  const LabeledSet train = ds.select(modality, Split::Train);
  const LabeledSet val = ds.select(modality, Split::Val);
  if (train.size() == 0) {
    throw Error(ErrorCode::EmptySplit, "no " + to_string(modality) + " training records");
  }
  LabeledSet teacher_train;
  std::string teacher_hash;
  if (teacher != nullptr) {
    if (!teacher->frozen) {
      throw Error(ErrorCode::UnfrozenTeacher, "distill_student: teacher parameters are not frozen");
    }
    require_pool_match(*teacher, pool);
    teacher_train = ds.select(Modality::Teacher, Split::Train);
    if (teacher_train.size() == 0) {
      throw Error(ErrorCode::EmptySplit, "no teacher training records");
    }
    teacher_hash = teacher->hash();
  }

  TrainResult result;
  ModelParams params = init_params(shape_for(cfg, ds, pool, modality), modality, cfg.seed,
                                   pool.fingerprint());
  apply_class_prior(params, pool, ds.class_names, cfg.classifier_prior);
  OptimizerState state = OptimizerState::for_params(params, cfg);

  // Single-model runs draw from their own modality's stream only.
  const std::size_t student_n = modality == Modality::Student ? train.size() : 0;
  const std::size_t teacher_n =
      modality == Modality::Teacher ? train.size() : teacher_train.size();
  const UnpairedSampler sampler(std::max<std::size_t>(student_n, 1),
                                std::max<std::size_t>(teacher_n, 1), cfg.batch_size, cfg.seed);
  const std::int64_t epoch_steps = sampler.steps_per_epoch(modality);
  const std::int64_t total = total_steps(cfg, epoch_steps);

  auto emit = [&](nlohmann::json rec) {
    if (opts.on_log) opts.on_log(rec);
    result.log.push_back(std::move(rec));
  };

  ModelParams best = params;
  double best_f1 = -1.0;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::int64_t s = 0; s < epoch_steps; ++s, ++step) {
      const LabeledSet batch = take_rows(train, sampler.indices(modality, step));
      Tape<double> tape;
      const BoundParams bound = bind(tape, params, true);
      const auto sims = concept_similarity(encode(bound, tape.constant(batch.features)), pool);
      const auto probs = predict(sims, bound);
      const auto cls = cross_entropy(probs, std::span<const int>(batch.labels));

      double gpd_value = 0.0;
      double lcd_value = 0.0;
      Var<double> loss = cls;
      if (teacher != nullptr) {
        const LabeledSet tbatch = take_rows(teacher_train, sampler.indices(Modality::Teacher, step));
        const SimilarityMatrix tsims = concept_similarity(encode(*teacher, tbatch.features), pool);
        const ClassPrototypes tprotos = class_prototypes(tsims, tbatch.labels, ds.num_classes);
        const auto gpd = gpd_loss(sims, batch.labels, tprotos, cfg.distill.gpd_reduction);
        const auto lcd = lcd_loss(sims, batch.labels, tsims, tbatch.labels, cfg.distill.tau);
        gpd_value = gpd.value()(0, 0);
        lcd_value = lcd.value()(0, 0);
        loss = total_loss(cls, gpd, lcd, cfg.distill);
      }
      const double cls_value = cls.value()(0, 0);
      require_finite(cls_value, "cls", step);
      require_finite(gpd_value, "gpd", step);
      require_finite(lcd_value, "lcd", step);
      require_finite(loss.value()(0, 0), "total", step);

      tape.backward(loss);
      std::vector<Matrix> grads;
      for (const auto& v : bound.all()) grads.push_back(tape.grad(v));
      const double lr = scheduled_lr(cfg, step, total);
      adamw_step(params, grads, state, lr);
      if (opts.record_trajectory) result.trajectory.push_back(params.hash());

      emit({{"step", step},
            {"lr", lr},
            {"loss_cls", cls_value},
            {"loss_gpd", gpd_value},
            {"loss_lcd", lcd_value},
            {"loss_total", loss.value()(0, 0)}});
    }

    if (teacher != nullptr && teacher->hash() != teacher_hash) {
      throw Error(ErrorCode::FrozenParams, "teacher parameters changed during distillation");
    }
    const double f1 = val_macro_prf1(params, val, pool, ds.num_classes);
    const bool selected = !cfg.select_on_val || f1 > best_f1;
    if (selected) {
      best_f1 = f1;
      best = params;
      result.best_epoch = epoch;
    }
    emit({{"epoch", epoch}, {"val_macro_prf1", f1}, {"selected", selected}});
  }
  result.params = cfg.epochs > 0 ? std::move(best) : std::move(params);
  result.best_val_macro_prf1 = std::max(best_f1, 0.0);
  return result;
}

}  // namespace

void TrainConfig::validate(const std::string& section) const {
  auto fail = [&](const std::string& field, const std::string& why) {
    throw Error(ErrorCode::InvalidConfig, "field '" + section + "." + field + "': " + why);
  };
  if (!(learning_rate > 0.0)) fail("learning_rate", "must be > 0");
  if (!(lr_min >= 0.0) || lr_min > learning_rate) fail("lr_min", "must lie in [0, learning_rate]");
  if (schedule_period < 0) fail("schedule_period", "must be >= 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay", "must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2", "must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps", "must be > 0");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (epochs < 0) fail("epochs", "must be >= 0");
  if (hidden_layers < 0 || hidden_layers > 2) fail("hidden_layers", "must be 0, 1 or 2");
  if (hidden_width < 1) fail("hidden_width", "must be >= 1");
  if (!(classifier_prior >= 0.0)) fail("classifier_prior", "must be >= 0");
  distill.validate();
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"learning_rate", cfg.learning_rate},
          {"lr_min", cfg.lr_min},
          {"schedule_period", cfg.schedule_period},
          {"weight_decay", cfg.weight_decay},
          {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},
          {"adam_eps", cfg.adam_eps},
          {"batch_size", cfg.batch_size},
          {"epochs", cfg.epochs},
          {"seed", cfg.seed},
          {"hidden_layers", cfg.hidden_layers},
          {"hidden_width", cfg.hidden_width},
          {"classifier_prior", cfg.classifier_prior},
          {"select_on_val", cfg.select_on_val},
          {"distill",
           {{"alpha", cfg.distill.alpha},
            {"beta", cfg.distill.beta},
            {"tau", cfg.distill.tau},
            {"gpd_reduction", cfg.distill.gpd_reduction == GpdReduction::Mean ? "mean" : "sum"}}}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base,
                                   const std::string& section) {
  FieldReader r(j, section);
  r.read("learning_rate", base.learning_rate);
  r.read("lr_min", base.lr_min);
  r.read("schedule_period", base.schedule_period);
  r.read("weight_decay", base.weight_decay);
  r.read("beta1", base.beta1);
  r.read("beta2", base.beta2);
  r.read("adam_eps", base.adam_eps);
  r.read("batch_size", base.batch_size);
  r.read("epochs", base.epochs);
  r.read("seed", base.seed);
  r.read("hidden_layers", base.hidden_layers);
  r.read("hidden_width", base.hidden_width);
  r.read("classifier_prior", base.classifier_prior);
  r.read("select_on_val", base.select_on_val);
  if (r.has("distill")) {
    FieldReader d(r.raw("distill"), r.name("distill"));
    d.read("alpha", base.distill.alpha);
    d.read("beta", base.distill.beta);
    d.read("tau", base.distill.tau);
    std::string reduction = base.distill.gpd_reduction == GpdReduction::Mean ? "mean" : "sum";
    d.read("gpd_reduction", reduction);
    if (reduction == "mean") base.distill.gpd_reduction = GpdReduction::Mean;
    else if (reduction == "sum") base.distill.gpd_reduction = GpdReduction::Sum;
    else d.fail("gpd_reduction", "expected \"mean\" or \"sum\"");
    d.reject_unknown();
  }
  r.reject_unknown();
  base.validate(section);
  return base;
}

OptimizerState OptimizerState::for_params(const ModelParams& params, const TrainConfig& cfg) {
  OptimizerState s;
  for (const Matrix* m : params.tensors()) {
    s.first_moment.push_back(Matrix::Zero(m->rows(), m->cols()));
    s.second_moment.push_back(Matrix::Zero(m->rows(), m->cols()));
  }
  s.weight_decay = cfg.weight_decay;
  s.beta1 = cfg.beta1;
  s.beta2 = cfg.beta2;
  s.eps = cfg.adam_eps;
  return s;
}

void adamw_step(ModelParams& params, const std::vector<Matrix>& grads, OptimizerState& state,
                double lr) {
  if (params.frozen) {
    throw Error(ErrorCode::FrozenParams, "adamw_step: parameters are frozen");
  }
  const auto tensors = params.tensors();
  if (grads.size() != tensors.size() || state.first_moment.size() != tensors.size()) {
    throw Error(ErrorCode::DimensionMismatch, "adamw_step: gradient/parameter count mismatch");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const double shrink = 1.0 - lr * state.weight_decay;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    Matrix& p = *tensors[i];
    require_same_shape(p, grads[i], "adamw_step");
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * grads[i];
    v = state.beta2 * v + (1.0 - state.beta2) * grads[i].cwiseProduct(grads[i]);
    p *= shrink;
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
  }
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_max, double lr_min) {
  if (total_steps <= 0) return lr_max;
  const double frac = static_cast<double>(std::clamp<std::int64_t>(step, 0, total_steps)) /
                      static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

UnpairedSampler::UnpairedSampler(std::size_t student_size, std::size_t teacher_size,
                                 int batch_size, std::uint64_t seed)
    : seed_(seed) {
  if (student_size == 0 || teacher_size == 0) {
    throw Error(ErrorCode::EmptySplit, "UnpairedSampler: empty training split");
  }
  if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "UnpairedSampler: batch_size < 1");
  for (auto [stream, n] : {std::pair{&student_, student_size}, std::pair{&teacher_, teacher_size}}) {
    stream->size = n;
    stream->batch = std::min<std::size_t>(n, static_cast<std::size_t>(batch_size));
    stream->steps = static_cast<std::int64_t>(n / stream->batch);
  }
}

std::vector<std::size_t> UnpairedSampler::indices(Modality modality, std::int64_t step) const {
  const Stream& s = stream(modality);
  const std::int64_t epoch = step / s.steps;
  const auto pos = static_cast<std::size_t>(step % s.steps);
  const auto perm = epoch_permutation(s.size, seed_, modality, epoch);
  std::vector<std::size_t> out(perm.begin() + static_cast<std::ptrdiff_t>(pos * s.batch),
                               perm.begin() + static_cast<std::ptrdiff_t>((pos + 1) * s.batch));
  std::sort(out.begin(), out.end());
  return out;
}

std::int64_t UnpairedSampler::steps_per_epoch(Modality modality) const {
  return stream(modality).steps;
}

std::size_t UnpairedSampler::batch_size(Modality modality) const { return stream(modality).batch; }

LabeledSet take_rows(const LabeledSet& set, const std::vector<std::size_t>& rows) {
  LabeledSet out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), set.features.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) =
        set.features.row(static_cast<Eigen::Index>(rows[i]));
    out.labels.push_back(set.labels[rows[i]]);
  }
  return out;
}

std::pair<LabeledSet, LabeledSet> sample_unpaired_batch(const SyntheticDataset& dataset,
                                                        int batch_size, std::uint64_t seed,
                                                        std::int64_t step) {
  const LabeledSet student = dataset.select(Modality::Student, Split::Train);
  const LabeledSet teacher = dataset.select(Modality::Teacher, Split::Train);
  if (student.size() == 0 || teacher.size() == 0) {
    throw Error(ErrorCode::EmptySplit, "sample_unpaired_batch: empty training split");
  }
  const UnpairedSampler sampler(student.size(), teacher.size(), batch_size, seed);
  return {take_rows(student, sampler.indices(Modality::Student, step)),
          take_rows(teacher, sampler.indices(Modality::Teacher, step))};
}

TrainResult pretrain_teacher(const TrainConfig& cfg, const SyntheticDataset& dataset,
                             const ConceptPool& pool, const TrainOptions& opts) {
  TrainResult r = run_training(cfg, Modality::Teacher, nullptr, dataset, pool, opts);
  r.params.frozen = true;
  return r;
}

TrainResult distill_student(const TrainConfig& cfg, const ModelParams& teacher,
                            const SyntheticDataset& dataset, const ConceptPool& pool,
                            const TrainOptions& opts) {
  return run_training(cfg, Modality::Student, &teacher, dataset, pool, opts);
}

TrainResult train_student_baseline(const TrainConfig& cfg, const SyntheticDataset& dataset,
                                   const ConceptPool& pool, const TrainOptions& opts) {
  return run_training(cfg, Modality::Student, nullptr, dataset, pool, opts);
}

MetricsReport evaluate(const ModelParams& params, const SyntheticDataset& dataset,
                       const ConceptPool& pool, Split split) {
  require_pool_match(params, pool);
  const LabeledSet set = dataset.select(params.modality, split);
  if (set.size() == 0) {
    throw Error(ErrorCode::EmptySplit,
                "evaluate: no " + to_string(params.modality) + " records in " + to_string(split));
  }
  const Prediction pred = infer(params, set.features, pool);
  return macro_report(pred.probabilities, pred.predicted_class, set.labels, dataset.num_classes,
                      dataset.class_names);
}

std::pair<LabeledSet, LabeledSet> paired_sets(const SyntheticDataset& dataset, Split split) {
  const LabeledSet student = dataset.select(Modality::Student, split);
  const LabeledSet teacher = dataset.select(Modality::Teacher, split);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(dataset.num_classes));
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    by_class[static_cast<std::size_t>(teacher.labels[i])].push_back(i);
  }
  std::vector<std::size_t> keep_student;
  std::vector<std::size_t> partner;
  std::vector<std::size_t> cursor(by_class.size(), 0);
  for (std::size_t i = 0; i < student.size(); ++i) {
    const auto y = static_cast<std::size_t>(student.labels[i]);
    if (by_class[y].empty()) continue;  // no same-class teacher record to pair with
    keep_student.push_back(i);
    partner.push_back(by_class[y][cursor[y]++ % by_class[y].size()]);
  }
  return {take_rows(student, keep_student), take_rows(teacher, partner)};
}

MetricsReport evaluate_fused(const ModelParams& student, const ModelParams& teacher,
                             const LabeledSet& student_set, const LabeledSet& teacher_set,
                             const ConceptPool& pool, const std::vector<std::string>& class_names) {
  require_pool_match(student, pool);
  require_pool_match(teacher, pool);
  if (student_set.labels != teacher_set.labels) {
    throw Error(ErrorCode::DimensionMismatch, "evaluate_fused: sets are not row-aligned");
  }
  const Prediction fused = fused_predict(infer(student, student_set.features, pool),
                                         infer(teacher, teacher_set.features, pool));
  return macro_report(fused.probabilities, fused.predicted_class, student_set.labels,
                      static_cast<int>(student.num_classes()), class_names);
}

}  // namespace octcoda
