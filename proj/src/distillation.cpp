#include "octcoda/distillation.hpp"

#include <cmath>

namespace octcoda {

namespace {

void check_labels(std::span<const int> labels, Eigen::Index rows, int num_classes,
                  const char* who) {
  if (static_cast<Eigen::Index>(labels.size()) != rows) {
    throw Error(ErrorCode::DimensionMismatch,
                std::string(who) + ": " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(rows) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || (num_classes > 0 && y >= num_classes)) {
      throw Error(ErrorCode::LabelOutOfRange,
                  std::string(who) + ": label " + std::to_string(y) + " out of range");
    }
  }
}

}  // namespace

void DistillConfig::validate() const {
  if (!(tau > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "distill.tau must be > 0, got " + std::to_string(tau));
  }
  if (!(alpha >= 0.0)) throw Error(ErrorCode::InvalidConfig, "distill.alpha must be >= 0");
  if (!(beta >= 0.0)) throw Error(ErrorCode::InvalidConfig, "distill.beta must be >= 0");
}

Matrix prototype_weights(std::span<const int> labels, int num_classes, std::vector<bool>* present) {
  const auto batch = static_cast<Eigen::Index>(labels.size());
  Matrix a = Matrix::Zero(num_classes, batch);
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  for (Eigen::Index i = 0; i < batch; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    a(y, i) = 1.0 / counts[static_cast<std::size_t>(y)];
  }
  if (present != nullptr) {
    present->assign(static_cast<std::size_t>(num_classes), false);
    for (int d = 0; d < num_classes; ++d) (*present)[static_cast<std::size_t>(d)] = counts[static_cast<std::size_t>(d)] > 0;
  }
  return a;
}

ClassPrototypes class_prototypes(const SimilarityMatrix& sim, std::span<const int> labels,
                                 int num_classes) {
  if (num_classes <= 0) throw Error(ErrorCode::InvalidArgument, "class_prototypes: num_classes <= 0");
  check_labels(labels, sim.rows(), num_classes, "class_prototypes");
  ClassPrototypes out;
  out.values = Matrix::Zero(num_classes, sim.cols());
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (Eigen::Index i = 0; i < sim.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    out.values.row(y) += sim.row(i);
    ++counts[static_cast<std::size_t>(y)];
  }
  out.present.resize(static_cast<std::size_t>(num_classes));
  for (int d = 0; d < num_classes; ++d) {
    const int n = counts[static_cast<std::size_t>(d)];
    out.present[static_cast<std::size_t>(d)] = n > 0;
    if (n > 0) out.values.row(d) /= n;
  }
  return out;
}

double gpd_loss(const ClassPrototypes& teacher, const ClassPrototypes& student,
                GpdReduction reduction) {
  if (teacher.values.cols() != student.values.cols() ||
      teacher.num_classes() != student.num_classes()) {
    throw Error(ErrorCode::DimensionMismatch,
                "gpd_loss: prototypes " + shape_of(teacher.values) + " vs " +
                    shape_of(student.values));
  }
  double total = 0.0;
  int common = 0;
  for (std::size_t d = 0; d < teacher.num_classes(); ++d) {
    if (!teacher.present[d] || !student.present[d]) continue;
    const auto row = static_cast<Eigen::Index>(d);
    total += (teacher.values.row(row) - student.values.row(row)).squaredNorm();
    ++common;
  }
  if (common == 0) return 0.0;
  return reduction == GpdReduction::Mean ? total / common : total;
}

Var<double> gpd_loss(Var<double> student_sims, std::span<const int> student_labels,
                     const ClassPrototypes& teacher, GpdReduction reduction) {
  Tape<double>& tape = *student_sims.tape;
  const int num_classes = static_cast<int>(teacher.num_classes());
  if (student_sims.cols() != teacher.values.cols()) {
    throw Error(ErrorCode::DimensionMismatch,
                "gpd_loss: student similarities " + shape_of(student_sims.value()) +
                    " vs teacher prototypes " + shape_of(teacher.values));
  }
  check_labels(student_labels, student_sims.rows(), num_classes, "gpd_loss");
  std::vector<bool> present;
  const Matrix weights = prototype_weights(student_labels, num_classes, &present);

  std::vector<Eigen::Index> common;
  for (int d = 0; d < num_classes; ++d) {
    if (present[static_cast<std::size_t>(d)] && teacher.present[static_cast<std::size_t>(d)]) {
      common.push_back(d);
    }
  }
  if (common.empty()) return tape.constant(Matrix::Zero(1, 1));

  const auto n = static_cast<Eigen::Index>(common.size());
  Matrix pick(n, student_sims.rows());
  Matrix target(n, teacher.values.cols());
  for (Eigen::Index k = 0; k < n; ++k) {
    pick.row(k) = weights.row(common[static_cast<std::size_t>(k)]);
    target.row(k) = teacher.values.row(common[static_cast<std::size_t>(k)]);
  }
  const auto student_protos = matmul(tape.constant(pick), student_sims);
  const auto diff = sub(student_protos, tape.constant(target));
  const auto sq = sum(hadamard(diff, diff));
  return reduction == GpdReduction::Mean ? scale(sq, 1.0 / static_cast<double>(n)) : sq;
}

Var<double> contrastive_from_logits(Var<double> logits, const Mask& candidates,
                                    const Mask& positives, LcdStats* stats) {
  const Matrix& l = logits.value();
  if (candidates.rows() != l.rows() || candidates.cols() != l.cols() ||
      positives.rows() != l.rows() || positives.cols() != l.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "contrastive_from_logits: mask shape mismatch");
  }
  const Eigen::Index anchors = l.rows();
  const Eigen::Index width = l.cols();

  // Per-anchor pieces kept for the backward rule.
  Matrix shifted_exp = Matrix::Zero(anchors, width);  // exp(l - max) on candidates
  Matrix inv_denominator = Matrix::Zero(anchors, width);  // 1/D_p on usable positives
  Vector inv_positive_count = Vector::Zero(anchors);

  LcdStats local;
  double total = 0.0;
  for (Eigen::Index i = 0; i < anchors; ++i) {
    int npos = 0;
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < width; ++j) {
      if (!candidates(i, j)) continue;
      mx = std::max(mx, l(i, j));
      if (positives(i, j)) ++npos;
    }
    if (npos == 0) {
      ++local.skipped_anchors;
      continue;
    }
    double z = 0.0;
    for (Eigen::Index j = 0; j < width; ++j) {
      if (candidates(i, j)) {
        shifted_exp(i, j) = std::exp(l(i, j) - mx);
        z += shifted_exp(i, j);
      }
    }
    double anchor_sum = 0.0;
    int usable = 0;
    for (Eigen::Index p = 0; p < width; ++p) {
      if (!positives(i, p)) continue;
      double d = z - shifted_exp(i, p);
      if (shifted_exp(i, p) > 0.5 * z) {
        // Recompute directly when the subtraction would cancel badly.
        d = 0.0;
        for (Eigen::Index q = 0; q < width; ++q) {
          if (candidates(i, q) && q != p) d += shifted_exp(i, q);
        }
      }
      if (!(d > 0.0)) continue;  // no other candidate to normalize against
      inv_denominator(i, p) = 1.0 / d;
      anchor_sum += (l(i, p) - mx) - std::log(d);
      ++usable;
    }
    if (usable == 0) {
      ++local.skipped_anchors;
      continue;
    }
    inv_positive_count(i) = 1.0 / usable;
    total += -anchor_sum / usable;
    ++local.anchors;
  }
  if (stats != nullptr) *stats = local;

  Matrix out(1, 1);
  out(0, 0) = local.anchors > 0 ? total / local.anchors : 0.0;
  const double inv_anchors = local.anchors > 0 ? 1.0 / local.anchors : 0.0;
  return logits.tape->push(
      std::move(out), logits.tracked() && local.anchors > 0,
      [logits, shifted_exp, inv_denominator, inv_positive_count, candidates, inv_anchors](
          Tape<double>& tp, const Matrix& g) {
        Matrix dl = Matrix::Zero(shifted_exp.rows(), shifted_exp.cols());
        for (Eigen::Index i = 0; i < dl.rows(); ++i) {
          if (inv_positive_count(i) == 0.0) continue;
          const double w = inv_denominator.row(i).sum();
          const double coeff = g(0, 0) * inv_anchors * inv_positive_count(i);
          for (Eigen::Index k = 0; k < dl.cols(); ++k) {
            if (!candidates(i, k)) continue;
            // Each usable positive p != k contributes e_k / D_p; k's own
            // denominator excludes it.
            double v = shifted_exp(i, k) * (w - inv_denominator(i, k));
            if (inv_denominator(i, k) > 0.0) v -= 1.0;
            dl(i, k) = coeff * v;
          }
        }
        tp.accumulate(logits, dl);
      });
}

Var<double> lcd_loss(Var<double> student_sims, std::span<const int> student_labels,
                     const SimilarityMatrix& teacher_sims, std::span<const int> teacher_labels,
                     double tau, LcdStats* stats) {
  if (!(tau > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "lcd_loss: tau must be > 0, got " + std::to_string(tau));
  }
  if (teacher_sims.cols() != student_sims.cols()) {
    throw Error(ErrorCode::DimensionMismatch,
                "lcd_loss: student " + shape_of(student_sims.value()) + " vs teacher " +
                    shape_of(teacher_sims));
  }
  check_labels(student_labels, student_sims.rows(), 0, "lcd_loss");
  check_labels(teacher_labels, teacher_sims.rows(), 0, "lcd_loss");

  Tape<double>& tape = *student_sims.tape;
  const Eigen::Index bs = student_sims.rows();
  const Eigen::Index bt = teacher_sims.rows();

  const auto anchors = l2_normalize_rows(student_sims);
  const auto teacher_rows = tape.constant(l2_normalize_rows(teacher_sims));
  const auto all = vstack(anchors, teacher_rows);
  const auto logits = scale(matmul(anchors, transpose(all)), 1.0 / tau);

  Mask candidates = Mask::Constant(bs, bs + bt, true);
  Mask positives(bs, bs + bt);
  for (Eigen::Index i = 0; i < bs; ++i) {
    candidates(i, i) = false;
    const int yi = student_labels[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < bs + bt; ++j) {
      const int yj = j < bs ? student_labels[static_cast<std::size_t>(j)]
                            : teacher_labels[static_cast<std::size_t>(j - bs)];
      positives(i, j) = candidates(i, j) && yj == yi;
    }
  }
  return contrastive_from_logits(logits, candidates, positives, stats);
}

double lcd_loss(const SimilarityMatrix& student_sims, std::span<const int> student_labels,
                const SimilarityMatrix& teacher_sims, std::span<const int> teacher_labels,
                double tau, LcdStats* stats) {
  Tape<double> tape;
  const auto s = tape.constant(student_sims);
  return lcd_loss(s, student_labels, teacher_sims, teacher_labels, tau, stats).value()(0, 0);
}

double total_loss(double cls, double gpd, double lcd, const DistillConfig& cfg) {
  return cls + cfg.alpha * gpd + cfg.beta * lcd;
}

Var<double> total_loss(Var<double> cls, Var<double> gpd, Var<double> lcd,
                       const DistillConfig& cfg) {
  return add(add(cls, scale(gpd, cfg.alpha)), scale(lcd, cfg.beta));
}

}  // namespace octcoda
