#include "dsmil/mil_head.hpp"

#include "dsmil/error.hpp"

namespace dsmil {

MilHeadParams MilHeadParams::init(std::size_t feature_dim, std::size_t classes, Rng& rng) {
  MilHeadParams p;
  p.w_cls = glorot_parameter(feature_dim, classes, rng);
  p.b_cls = zero_parameter(1, classes);
  p.w_det = glorot_parameter(feature_dim, classes, rng);
  p.b_det = zero_parameter(1, classes);
  return p;
}

void MilHeadParams::register_into(ParameterSet& params, const std::string& prefix) const {
  params.add(prefix + "w_cls", w_cls);
  params.add(prefix + "b_cls", b_cls);
  params.add(prefix + "w_det", w_det);
  params.add(prefix + "b_det", b_det);
}

MilHeadParams MilHeadParams::from(const ParameterSet& params, const std::string& prefix) {
  return MilHeadParams{params.get(prefix + "w_cls"), params.get(prefix + "b_cls"),
                       params.get(prefix + "w_det"), params.get(prefix + "b_det")};
}

InstanceScores mil_forward(Tape& tape, const Tensor& features, const MilHeadParams& params) {
  if (features.rows() == 0) throw DimensionError("mil_forward: bag has no proposals");
  if (features.cols() != params.feature_dim()) {
    throw DimensionError("mil_forward: features " + features.shape_string() +
                         " do not match head weights " + params.w_cls.shape_string());
  }
  InstanceScores s;
  s.class_softmax = tape.softmax_rows(tape.add_row(tape.matmul(features, params.w_cls), params.b_cls));
  s.proposal_softmax =
      tape.softmax_cols(tape.add_row(tape.matmul(features, params.w_det), params.b_det));
  s.joint = tape.mul(s.class_softmax, s.proposal_softmax);
  s.image_prob = tape.clamp(tape.column_sum(s.joint), kLogEpsilon, 1.0 - kLogEpsilon);
  return s;
}

Tensor mil_loss(Tape& tape, const InstanceScores& scores, const ClassLabels& labels) {
  const std::size_t c = scores.image_prob.cols();
  if (labels.size() != c) {
    throw DimensionError("mil_loss: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(c) + " classes");
  }
  std::vector<double> y(labels.begin(), labels.end());
  // bce() is a mean over classes; the image loss sums them.
  return tape.scale(tape.bce(scores.image_prob, Tensor(1, c, std::move(y))), static_cast<double>(c));
}

std::size_t top_scoring_proposal(const InstanceScores& scores, std::size_t cls) {
  const Tensor& j = scores.joint;
  if (cls >= j.cols()) {
    throw ValidationError("top_scoring_proposal: class " + std::to_string(cls) + " out of range (" +
                          std::to_string(j.cols()) + " classes)");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < j.rows(); ++i) {
    if (j(i, cls) > j(best, cls)) best = i;
  }
  return best;
}

}  // namespace dsmil
