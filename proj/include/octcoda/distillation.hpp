#pragma once

#include <span>
#include <string>
#include <vector>

#include "octcoda/numerics.hpp"
#include "octcoda/tape.hpp"

namespace octcoda {

using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

enum class GpdReduction { Mean, Sum };

struct DistillConfig {
  double alpha = 0.6;   // weight of the prototype term
  double beta = 0.05;   // weight of the contrastive term
  double tau = 10.0;    // contrastive temperature
  GpdReduction gpd_reduction = GpdReduction::Mean;

  void validate() const;
};

/// Per-class mean similarity rows (C×N); rows of absent classes are zero and
/// masked out.
struct ClassPrototypes {
  Matrix values;
  std::vector<bool> present;

  std::size_t num_classes() const noexcept { return present.size(); }
};

ClassPrototypes class_prototypes(const SimilarityMatrix& sim, std::span<const int> labels,
                                 int num_classes);

/// Mean (or sum) over classes present in both sets of ||teacher - student||².
double gpd_loss(const ClassPrototypes& teacher, const ClassPrototypes& student,
                GpdReduction reduction = GpdReduction::Mean);

struct LcdStats {
  int anchors = 0;          // anchors that contributed
  int skipped_anchors = 0;  // anchors with no positive candidate
};

/// Supervised contrastive loss with student rows as anchors and the remaining
/// student rows plus every teacher row as candidates. Rows are L2-normalized
/// before the scaled dot products. Returns 0 when no anchor has a positive.
double lcd_loss(const SimilarityMatrix& student_sims, std::span<const int> student_labels,
                const SimilarityMatrix& teacher_sims, std::span<const int> teacher_labels,
                double tau, LcdStats* stats = nullptr);

double total_loss(double cls, double gpd, double lcd, const DistillConfig& cfg);

// ---------------------------------------------------------------------------
// Tape versions used in training. Teacher inputs are constants.

/// Row-averaging matrix A (C×B) so that A·S gives the present-class prototypes.
Matrix prototype_weights(std::span<const int> labels, int num_classes, std::vector<bool>* present);

Var<double> gpd_loss(Var<double> student_sims, std::span<const int> student_labels,
                     const ClassPrototypes& teacher, GpdReduction reduction = GpdReduction::Mean);

/// Fused per-anchor contrastive term over a logit matrix (anchors × candidates).
/// `candidates(i, j)` marks j as a member of anchor i's candidate set and
/// `positives(i, j)` marks the positives inside it. Anchors without positives
/// are excluded from the mean.
Var<double> contrastive_from_logits(Var<double> logits, const Mask& candidates,
                                    const Mask& positives, LcdStats* stats);

Var<double> lcd_loss(Var<double> student_sims, std::span<const int> student_labels,
                     const SimilarityMatrix& teacher_sims, std::span<const int> teacher_labels,
                     double tau, LcdStats* stats = nullptr);

Var<double> total_loss(Var<double> cls, Var<double> gpd, Var<double> lcd, const DistillConfig& cfg);

}  // namespace octcoda
