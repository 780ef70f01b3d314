#pragma once

// EM-trained proposal selection. An estimator scores how likely each
// proposal is a key proposal (q); a predictor scores per-class membership
// (p). Each side is trained by BCE against pseudo labels built from the
// other side and the image labels:
//   E step:  h_i = 1 iff some positive class c has p[i][c] > zeta
//   M step:  y_ic = 1 iff y_c = 1 and q_i > xi, xi = mean(q); values equal
//            to the mean up to summation rounding are not above it

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dsmil/labels.hpp"
#include "dsmil/random.hpp"
#include "dsmil/sgd.hpp"
#include "dsmil/tensor.hpp"

namespace dsmil {

struct SelectionParams {
  // With hidden_width == 0 both heads are linear + sigmoid. Otherwise each
  // head first maps features through its own ReLU layer of that width.
  std::size_t hidden_width = 0;
  Tensor est_hidden_w, est_hidden_b;
  Tensor pred_hidden_w, pred_hidden_b;
  Tensor est_w;   // (D or H) x 1
  Tensor est_b;   // 1 x 1
  Tensor pred_w;  // (D or H) x C
  Tensor pred_b;  // 1 x C

  static SelectionParams init(std::size_t feature_dim, std::size_t classes, std::size_t hidden_width,
                              Rng& rng);
  std::size_t classes() const { return pred_w.cols(); }
  std::size_t feature_dim() const { return hidden_width ? est_hidden_w.rows() : est_w.rows(); }
  void register_into(ParameterSet& params, const std::string& prefix) const;
  static SelectionParams from(const ParameterSet& params, const std::string& prefix,
                              std::size_t hidden_width);

  std::vector<Tensor> estimator_tensors() const;
  std::vector<Tensor> predictor_tensors() const;
};

struct SelectionScores {
  Tensor q;             // N x 1 keyness probabilities
  Tensor class_scores;  // N x C per-class sigmoids
};

SelectionScores selection_scores(Tape& tape, const Tensor& features, const SelectionParams& params);

// Re-rank score used for pseudo ground-truth mining.
inline double combined_score(double q, double class_score) { return q * class_score; }

std::vector<int> e_step_labels(const Tensor& class_scores, const ClassLabels& image_labels,
                               double zeta);

struct MStepLabels {
  Tensor y_hat;  // N x C binary
  double xi = 0.0;
  bool any_positive = false;
};

MStepLabels m_step_labels(std::span<const double> q, const ClassLabels& image_labels);

// The pair of pseudo labels exchanged in one EM round.
struct KeynessAssignment {
  std::vector<int> h_hat;
  Tensor y_hat;
  double zeta = 0.0;
  double xi = 0.0;
};

KeynessAssignment assign_keyness(const SelectionScores& scores, const ClassLabels& image_labels,
                                 double zeta);

Tensor estimator_loss(Tape& tape, const Tensor& q, std::span<const int> h_hat);
Tensor predictor_loss(Tape& tape, const Tensor& class_scores, const Tensor& y_hat);

enum class EmPhase { E, M, Joint };

const char* to_string(EmPhase phase);

struct EmSchedule {
  std::size_t alternate_every = 3000;
  std::size_t joint_after = 30000;

  // [0, a) -> E, [a, 2a) -> M, ... ; iteration >= joint_after -> Joint
  EmPhase phase(std::size_t iteration) const;
};

}  // namespace dsmil
