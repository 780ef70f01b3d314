#pragma once

// Two-stream MIL image classifier. Per-proposal class scores come from a
// classification stream (softmax over classes) multiplied by a detection
// stream (softmax over proposals); summing the product over proposals gives
// the image-level class probability.

#include <cstddef>
#include <string>

#include "dsmil/labels.hpp"
#include "dsmil/random.hpp"
#include "dsmil/sgd.hpp"
#include "dsmil/tensor.hpp"

namespace dsmil {

struct MilHeadParams {
  Tensor w_cls;  // D x C
  Tensor b_cls;  // 1 x C
  Tensor w_det;  // D x C
  Tensor b_det;  // 1 x C

  static MilHeadParams init(std::size_t feature_dim, std::size_t classes, Rng& rng);
  std::size_t feature_dim() const { return w_cls.rows(); }
  std::size_t classes() const { return w_cls.cols(); }
  void register_into(ParameterSet& params, const std::string& prefix) const;
  static MilHeadParams from(const ParameterSet& params, const std::string& prefix);
};

struct InstanceScores {
  Tensor class_softmax;     // N x C, rows sum to 1
  Tensor proposal_softmax;  // N x C, columns sum to 1
  Tensor joint;             // N x C
  Tensor image_prob;        // 1 x C, clamped to [eps, 1 - eps]
};

InstanceScores mil_forward(Tape& tape, const Tensor& features, const MilHeadParams& params);

// -sum_c [y_c log p_c + (1 - y_c) log(1 - p_c)]
Tensor mil_loss(Tape& tape, const InstanceScores& scores, const ClassLabels& labels);

// argmax_i joint[i][cls], lowest index on ties.
std::size_t top_scoring_proposal(const InstanceScores& scores, std::size_t cls);

}  // namespace dsmil
