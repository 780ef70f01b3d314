#include "dsmil/refinement.hpp"

#include <algorithm>

#include "dsmil/error.hpp"
#include "dsmil/selection.hpp"

namespace dsmil {

RefinementBranchParams RefinementBranchParams::init(std::size_t feature_dim, std::size_t classes,
                                                    Rng& rng) {
  RefinementBranchParams p;
  p.cls_w = glorot_parameter(feature_dim, classes + 1, rng);
  p.cls_b = zero_parameter(1, classes + 1);
  p.reg_w = glorot_parameter(feature_dim, 4 * classes, rng);
  p.reg_b = zero_parameter(1, 4 * classes);
  return p;
}

void RefinementBranchParams::register_into(ParameterSet& params, const std::string& prefix) const {
  params.add(prefix + "cls_w", cls_w);
  params.add(prefix + "cls_b", cls_b);
  params.add(prefix + "reg_w", reg_w);
  params.add(prefix + "reg_b", reg_b);
}

RefinementBranchParams RefinementBranchParams::from(const ParameterSet& params,
                                                    const std::string& prefix) {
  return RefinementBranchParams{params.get(prefix + "cls_w"), params.get(prefix + "cls_b"),
                                params.get(prefix + "reg_w"), params.get(prefix + "reg_b")};
}

BranchOutput branch_forward(Tape& tape, const Tensor& features, const RefinementBranchParams& params) {
  if (features.cols() != params.cls_w.rows()) {
    throw DimensionError("refinement: features " + features.shape_string() +
                         " do not match branch weights " + params.cls_w.shape_string());
  }
  BranchOutput out;
  out.scores = tape.softmax_rows(tape.add_row(tape.matmul(features, params.cls_w), params.cls_b));
  out.regression = tape.add_row(tape.matmul(features, params.reg_w), params.reg_b);
  return out;
}

std::size_t PseudoTarget::foreground_count() const {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [&](int l) { return l < static_cast<int>(classes); }));
}

PseudoTarget mine_pseudo_targets(const Tensor& prev_scores, std::span<const double> q,
                                 std::span<const Box> boxes, const ClassLabels& image_labels) {
  const std::size_t n = prev_scores.rows();
  const std::size_t c = image_labels.size();
  if (prev_scores.cols() != c && prev_scores.cols() != c + 1) {
    throw DimensionError("mine_pseudo_targets: scores " + prev_scores.shape_string() + " for " +
                         std::to_string(c) + " classes");
  }
  if (q.size() != n || boxes.size() != n) {
    throw DimensionError("mine_pseudo_targets: " + std::to_string(n) + " scored proposals, " +
                         std::to_string(q.size()) + " keyness values, " +
                         std::to_string(boxes.size()) + " boxes");
  }
  if (n == 0 || !has_positive(image_labels)) {
    throw MiningError("mine_pseudo_targets: bag has no positive class");
  }

  PseudoTarget t;
  t.classes = c;
  t.seeds.assign(c, -1);
  t.seed_weights.assign(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    if (image_labels[k] == 0) continue;
    std::size_t best = 0;
    double best_score = combined_score(q[0], prev_scores(0, k));
    for (std::size_t i = 1; i < n; ++i) {
      const double s = combined_score(q[i], prev_scores(i, k));
      if (s > best_score) {
        best = i;
        best_score = s;
      }
    }
    t.seeds[k] = static_cast<int>(best);
    t.seed_weights[k] = best_score;
  }

  t.labels.assign(n, static_cast<int>(c));
  t.targets.assign(n, RegressionTarget{});
  t.weights.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    int follow = -1;
    double best_iou = -1.0;
    for (std::size_t k = 0; k < c; ++k) {
      if (t.seeds[k] < 0) continue;
      const double v = iou(boxes[i], boxes[static_cast<std::size_t>(t.seeds[k])]);
      if (v > best_iou) {
        best_iou = v;
        follow = static_cast<int>(k);
      }
    }
    const auto k = static_cast<std::size_t>(follow);
    t.weights[i] = t.seed_weights[k];
    if (best_iou >= kForegroundIou) {
      t.labels[i] = follow;
      t.targets[i] = encode_target(boxes[i], boxes[static_cast<std::size_t>(t.seeds[k])]);
    }
  }
  return t;
}

Tensor refine_loss(Tape& tape, const Tensor& branch_scores, const PseudoTarget& targets) {
  if (branch_scores.cols() != targets.classes + 1 || branch_scores.rows() != targets.labels.size()) {
    throw DimensionError("refine_loss: scores " + branch_scores.shape_string() + " vs " +
                         std::to_string(targets.labels.size()) + " proposals / " +
                         std::to_string(targets.classes + 1) + " outputs");
  }
  return tape.weighted_nll(branch_scores, targets.labels, targets.weights);
}

Tensor regression_loss(Tape& tape, const Tensor& predicted, const PseudoTarget& targets) {
  const std::size_t n = targets.labels.size(), c = targets.classes;
  if (predicted.rows() != n || predicted.cols() != 4 * c) {
    throw DimensionError("regression_loss: predictions " + predicted.shape_string() + " vs " +
                         std::to_string(n) + "x" + std::to_string(4 * c));
  }
  Tensor target(n, 4 * c);
  Tensor mask(n, 4 * c);
  for (std::size_t i = 0; i < n; ++i) {
    if (!targets.foreground(i)) continue;
    const std::size_t base = 4 * static_cast<std::size_t>(targets.labels[i]);
    const RegressionTarget& r = targets.targets[i];
    const double vals[4] = {r.tx, r.ty, r.tw, r.th};
    for (std::size_t j = 0; j < 4; ++j) {
      target.at(i, base + j) = vals[j];
      mask.at(i, base + j) = 1.0;
    }
  }
  return tape.masked_smooth_l1(predicted, target, mask, static_cast<double>(targets.foreground_count()));
}

Tensor detection_loss(Tape& tape, std::span<const BranchLoss> branches, double lambda) {
  if (branches.empty()) throw ValidationError("detection_loss: no branches");
  if (!(lambda > 0.0)) throw ValidationError("detection_loss: lambda must be > 0");
  Tensor total;
  bool first = true;
  for (const BranchLoss& b : branches) {
    Tensor term = b.refine;
    if (b.regression) term = tape.add(term, tape.scale(*b.regression, lambda));
    total = first ? term : tape.add(total, term);
    first = false;
  }
  return total;
}

DetectionResult assemble_detections(const std::string& image_id, std::span<const BranchOutput> branches,
                                    std::span<const Box> boxes, ImageBounds bounds,
                                    const InferenceOptions& options) {
  if (branches.empty()) throw ValidationError("inference: no branches");
  const std::size_t n = boxes.size();
  const std::size_t c = branches.front().scores.cols() - 1;
  const BranchOutput& last = branches.back();
  DetectionResult result;
  result.image_id = image_id;
  result.per_class.resize(c);
  std::vector<ScoredBox> candidates(n);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (const BranchOutput& b : branches) s += b.scores(i, k);
      s /= static_cast<double>(branches.size());
      Box box = boxes[i];
      if (options.use_regression) {
        const RegressionTarget t{last.regression(i, 4 * k), last.regression(i, 4 * k + 1),
                                 last.regression(i, 4 * k + 2), last.regression(i, 4 * k + 3)};
        box = decode_target(t, boxes[i], bounds);
      }
      candidates[i] = ScoredBox{box, s};
    }
    for (std::size_t idx : nms(candidates, options.nms_threshold)) {
      result.per_class[k].push_back(Detection{candidates[idx].box, candidates[idx].score});
    }
  }
  return result;
}

}  // namespace dsmil
