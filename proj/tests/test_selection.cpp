#include "doctest.h"
#include "dsmil/error.hpp"
#include "dsmil/selection.hpp"
#include "gradient_suite.hpp"
#include "oracle_suites.hpp"

using namespace dsmil;

TEST_CASE("estimator and predictor gradients match finite differences") {
  Rng rng = make_stream(41, 0);
  for (int i = 0; i < 10; ++i) {
    CHECK(testing::estimator_error(rng) < 1e-4);
    CHECK(testing::predictor_error(rng) < 1e-4);
  }
}

TEST_CASE("E-step labels agree with brute-force enumeration") {
  Rng rng = make_stream(42, 0);
  CHECK(testing::e_step_mismatches(0.5, 4, 200, rng) == 0);
  CHECK(testing::e_step_mismatches(0.3, 4, 200, rng) == 0);
}

TEST_CASE("M-step labels agree with brute-force enumeration") { CHECK(testing::m_step_mismatches(3) == 0); }

TEST_CASE("E-step threshold is strict and ignores absent classes") {
  const Tensor p = Tensor::from_rows({{0.5, 0.9}, {0.51, 0.1}, {0.2, 0.2}});
  CHECK(e_step_labels(p, ClassLabels{1, 0}, 0.5) == std::vector<int>{0, 1, 0});
  CHECK(e_step_labels(p, ClassLabels{0, 1}, 0.5) == std::vector<int>{1, 0, 0});
  CHECK(e_step_labels(p, ClassLabels{0, 0}, 0.5) == std::vector<int>{0, 0, 0});
  CHECK_THROWS_AS(e_step_labels(p, ClassLabels{1, 0}, 1.0), ValidationError);
  CHECK_THROWS_AS(e_step_labels(p, ClassLabels{1}, 0.5), DimensionError);
}

TEST_CASE("M-step threshold is the mean keyness") {
  const std::vector<double> q{0.2, 0.4, 0.9};
  const MStepLabels m = m_step_labels(q, ClassLabels{1, 0, 1});
  CHECK(m.xi == doctest::Approx(0.5));
  CHECK(m.any_positive);
  CHECK(m.y_hat(2, 0) == 1.0);
  CHECK(m.y_hat(2, 1) == 0.0);
  CHECK(m.y_hat(2, 2) == 1.0);
  CHECK(m.y_hat(1, 0) == 0.0);
  const std::vector<double> flat{0.3, 0.3};
  CHECK_FALSE(m_step_labels(flat, ClassLabels{1}).any_positive);
}

TEST_CASE("phase gating isolates the estimator and the predictor") {
  const testing::GatingResult r = testing::phase_gating();
  CHECK(r.e_zeroes_predictor);
  CHECK(r.e_moves_estimator);
  CHECK(r.m_zeroes_estimator);
  CHECK(r.m_moves_predictor);
}

TEST_CASE("EM schedule alternates then switches to joint training") {
  const EmSchedule s{3000, 30000};
  CHECK(s.phase(0) == EmPhase::E);
  CHECK(s.phase(2999) == EmPhase::E);
  CHECK(s.phase(3000) == EmPhase::M);
  CHECK(s.phase(6000) == EmPhase::E);
  CHECK(s.phase(29999) == EmPhase::M);
  CHECK(s.phase(30000) == EmPhase::Joint);
  CHECK(std::string(to_string(EmPhase::Joint)) == "joint");
}

TEST_CASE("hidden-layer heads produce probabilities of the right shape") {
  Rng rng = make_stream(43, 0);
  SelectionParams p = SelectionParams::init(5, 3, 4, rng);
  Tensor x = testing::random_tensor(6, 5, rng, 1.0, false);
  Tape tape;
  SelectionScores s = selection_scores(tape, x, p);
  CHECK(s.q.rows() == 6);
  CHECK(s.q.cols() == 1);
  CHECK(s.class_scores.cols() == 3);
  for (double v : s.q.values()) CHECK((v > 0.0 && v < 1.0));
  CHECK(p.estimator_tensors().size() == 4);
}
