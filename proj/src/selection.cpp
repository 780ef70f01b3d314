#include "dsmil/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dsmil/error.hpp"

namespace dsmil {

SelectionParams SelectionParams::init(std::size_t feature_dim, std::size_t classes,
                                      std::size_t hidden_width, Rng& rng) {
  SelectionParams p;
  p.hidden_width = hidden_width;
  std::size_t in = feature_dim;
  if (hidden_width > 0) {
    p.est_hidden_w = glorot_parameter(feature_dim, hidden_width, rng);
    p.est_hidden_b = zero_parameter(1, hidden_width);
    p.pred_hidden_w = glorot_parameter(feature_dim, hidden_width, rng);
    p.pred_hidden_b = zero_parameter(1, hidden_width);
    in = hidden_width;
  }
  p.est_w = glorot_parameter(in, 1, rng);
  p.est_b = zero_parameter(1, 1);
  p.pred_w = glorot_parameter(in, classes, rng);
  p.pred_b = zero_parameter(1, classes);
  return p;
}

void SelectionParams::register_into(ParameterSet& params, const std::string& prefix) const {
  if (hidden_width > 0) {
    params.add(prefix + "est_hidden_w", est_hidden_w);
    params.add(prefix + "est_hidden_b", est_hidden_b);
    params.add(prefix + "pred_hidden_w", pred_hidden_w);
    params.add(prefix + "pred_hidden_b", pred_hidden_b);
  }
  params.add(prefix + "est_w", est_w);
  params.add(prefix + "est_b", est_b);
  params.add(prefix + "pred_w", pred_w);
  params.add(prefix + "pred_b", pred_b);
}

SelectionParams SelectionParams::from(const ParameterSet& params, const std::string& prefix,
                                      std::size_t hidden_width) {
  SelectionParams p;
  p.hidden_width = hidden_width;
  if (hidden_width > 0) {
    p.est_hidden_w = params.get(prefix + "est_hidden_w");
    p.est_hidden_b = params.get(prefix + "est_hidden_b");
    p.pred_hidden_w = params.get(prefix + "pred_hidden_w");
    p.pred_hidden_b = params.get(prefix + "pred_hidden_b");
  }
  p.est_w = params.get(prefix + "est_w");
  p.est_b = params.get(prefix + "est_b");
  p.pred_w = params.get(prefix + "pred_w");
  p.pred_b = params.get(prefix + "pred_b");
  return p;
}

std::vector<Tensor> SelectionParams::estimator_tensors() const {
  std::vector<Tensor> v{est_w, est_b};
  if (hidden_width > 0) v.insert(v.end(), {est_hidden_w, est_hidden_b});
  return v;
}

std::vector<Tensor> SelectionParams::predictor_tensors() const {
  std::vector<Tensor> v{pred_w, pred_b};
  if (hidden_width > 0) v.insert(v.end(), {pred_hidden_w, pred_hidden_b});
  return v;
}

SelectionScores selection_scores(Tape& tape, const Tensor& features, const SelectionParams& params) {
  if (features.cols() != params.feature_dim()) {
    throw DimensionError("selection: features " + features.shape_string() +
                         " do not match estimator input width " +
                         std::to_string(params.feature_dim()));
  }
  Tensor est_in = features;
  Tensor pred_in = features;
  if (params.hidden_width > 0) {
    est_in = tape.relu(tape.add_row(tape.matmul(features, params.est_hidden_w), params.est_hidden_b));
    pred_in = tape.relu(tape.add_row(tape.matmul(features, params.pred_hidden_w), params.pred_hidden_b));
  }
  SelectionScores s;
  s.q = tape.sigmoid(tape.add_row(tape.matmul(est_in, params.est_w), params.est_b));
  s.class_scores = tape.sigmoid(tape.add_row(tape.matmul(pred_in, params.pred_w), params.pred_b));
  return s;
}

std::vector<int> e_step_labels(const Tensor& class_scores, const ClassLabels& image_labels,
                               double zeta) {
  if (!(zeta > 0.0 && zeta < 1.0)) throw ValidationError("e_step_labels: zeta must be in (0,1)");
  if (class_scores.cols() != image_labels.size()) {
    throw DimensionError("e_step_labels: scores " + class_scores.shape_string() + " vs " +
                         std::to_string(image_labels.size()) + " image labels");
  }
  std::vector<int> h(class_scores.rows(), 0);
  for (std::size_t i = 0; i < class_scores.rows(); ++i) {
    for (std::size_t c = 0; c < image_labels.size(); ++c) {
      if (image_labels[c] != 0 && class_scores(i, c) > zeta) {
        h[i] = 1;
        break;
      }
    }
  }
  return h;
}

MStepLabels m_step_labels(std::span<const double> q, const ClassLabels& image_labels) {
  const std::size_t n = q.size(), c = image_labels.size();
  MStepLabels out;
  out.y_hat = Tensor(n, c);
  if (n == 0) return out;
  double total = 0.0, largest = 0.0;
  for (double v : q) {
    total += v;
    largest = std::max(largest, std::abs(v));
  }
  out.xi = total / static_cast<double>(n);
  // Rounding in the mean can put it just below equal keyness values; a gap
  // within the summation error bound counts as a tie, which is not above.
  const double tie = 2.0 * static_cast<double>(n) * std::numeric_limits<double>::epsilon() * largest;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(q[i] - out.xi > tie)) continue;
    for (std::size_t k = 0; k < c; ++k) {
      if (image_labels[k] != 0) {
        out.y_hat.at(i, k) = 1.0;
        out.any_positive = true;
      }
    }
  }
  return out;
}

KeynessAssignment assign_keyness(const SelectionScores& scores, const ClassLabels& image_labels,
                                 double zeta) {
  KeynessAssignment a;
  a.zeta = zeta;
  a.h_hat = e_step_labels(scores.class_scores, image_labels, zeta);
  MStepLabels m = m_step_labels(scores.q.values(), image_labels);
  a.y_hat = m.y_hat;
  a.xi = m.xi;
  return a;
}

Tensor estimator_loss(Tape& tape, const Tensor& q, std::span<const int> h_hat) {
  if (q.size() != h_hat.size()) {
    throw DimensionError("estimator_loss: q " + q.shape_string() + " vs " +
                         std::to_string(h_hat.size()) + " pseudo labels");
  }
  std::vector<double> t(h_hat.begin(), h_hat.end());
  return tape.bce(q, Tensor(q.rows(), q.cols(), std::move(t)));
}

Tensor predictor_loss(Tape& tape, const Tensor& class_scores, const Tensor& y_hat) {
  return tape.bce(class_scores, y_hat);
}

const char* to_string(EmPhase phase) {
  switch (phase) {
    case EmPhase::E: return "E";
    case EmPhase::M: return "M";
    case EmPhase::Joint: return "joint";
  }
  return "?";
}

EmPhase EmSchedule::phase(std::size_t iteration) const {
  if (iteration >= joint_after) return EmPhase::Joint;
  if (alternate_every == 0) return EmPhase::Joint;
  return (iteration / alternate_every) % 2 == 0 ? EmPhase::E : EmPhase::M;
}

}  // namespace dsmil
