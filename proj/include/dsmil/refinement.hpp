#pragma once

// Cascaded instance classifier refinement with box regression. Branch k is
// supervised by pseudo ground truths mined from the scores of stage k-1
// (the MIL head for the first branch), re-ranked by the selection keyness.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsmil/detection.hpp"
#include "dsmil/geometry.hpp"
#include "dsmil/labels.hpp"
#include "dsmil/random.hpp"
#include "dsmil/sgd.hpp"
#include "dsmil/tensor.hpp"

namespace dsmil {

struct RefinementBranchParams {
  Tensor cls_w;  // D x (C + 1), background is column C
  Tensor cls_b;  // 1 x (C + 1)
  Tensor reg_w;  // D x 4C
  Tensor reg_b;  // 1 x 4C

  static RefinementBranchParams init(std::size_t feature_dim, std::size_t classes, Rng& rng);
  std::size_t classes() const { return reg_w.cols() / 4; }
  void register_into(ParameterSet& params, const std::string& prefix) const;
  static RefinementBranchParams from(const ParameterSet& params, const std::string& prefix);
};

struct BranchOutput {
  Tensor scores;      // N x (C + 1), softmax over classes
  Tensor regression;  // N x 4C, per-class (tx, ty, tw, th) slots
};

BranchOutput branch_forward(Tape& tape, const Tensor& features, const RefinementBranchParams& params);

inline constexpr double kForegroundIou = 0.5;

struct PseudoTarget {
  std::size_t classes = 0;
  std::vector<int> seeds;            // per class: mined proposal index, -1 if class absent
  std::vector<double> seed_weights;  // per class: combined score of the seed
  std::vector<int> labels;           // per proposal: 0..C-1, or C for background
  std::vector<RegressionTarget> targets;  // per proposal; meaningful for foreground only
  std::vector<double> weights;       // per proposal loss weight

  bool foreground(std::size_t i) const { return labels[i] < static_cast<int>(classes); }
  std::size_t foreground_count() const;
};

// For each positive class c the seed is argmax_i prev_scores[i][c] * q[i]
// (lowest index on ties). Each proposal follows its highest-IoU seed (lowest
// class on ties): IoU >= 0.5 makes it foreground of that class with a
// regression target towards the seed box, otherwise background. Loss weights
// are the followed seed's combined score. prev_scores may carry a trailing
// background column, which is ignored.
PseudoTarget mine_pseudo_targets(const Tensor& prev_scores, std::span<const double> q,
                                 std::span<const Box> boxes, const ClassLabels& image_labels);

Tensor refine_loss(Tape& tape, const Tensor& branch_scores, const PseudoTarget& targets);
Tensor regression_loss(Tape& tape, const Tensor& predicted, const PseudoTarget& targets);

struct BranchLoss {
  Tensor refine;
  std::optional<Tensor> regression;
};

// sum_k (refine_k + lambda * regression_k)
Tensor detection_loss(Tape& tape, std::span<const BranchLoss> branches, double lambda);

struct InferenceOptions {
  bool use_regression = true;
  double nms_threshold = 0.3;
};

// Scores are averaged over branches; boxes come from the last branch's
// regression (clipped to the image) when enabled; per-class NMS.
DetectionResult assemble_detections(const std::string& image_id, std::span<const BranchOutput> branches,
                                    std::span<const Box> boxes, ImageBounds bounds,
                                    const InferenceOptions& options);

}  // namespace dsmil
