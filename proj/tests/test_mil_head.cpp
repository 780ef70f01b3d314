#include <cmath>

#include "doctest.h"
#include "dsmil/error.hpp"
#include "dsmil/mil_head.hpp"
#include "gradient_suite.hpp"

using namespace dsmil;

TEST_CASE("mil loss gradients match finite differences") {
  Rng rng = make_stream(21, 0);
  for (int i = 0; i < 10; ++i) CHECK(testing::mil_loss_error(rng) < 1e-4);
}

TEST_CASE("two-stream scores are normalized and image probability is their column sum") {
  Rng rng = make_stream(22, 0);
  Tensor x = testing::random_tensor(6, 5, rng, 1.0, false);
  MilHeadParams p = MilHeadParams::init(5, 3, rng);
  Tape tape;
  InstanceScores s = mil_forward(tape, x, p);
  for (std::size_t i = 0; i < 6; ++i) {
    double row = 0.0;
    for (std::size_t c = 0; c < 3; ++c) row += s.class_softmax(i, c);
    CHECK(row == doctest::Approx(1.0));
  }
  for (std::size_t c = 0; c < 3; ++c) {
    double col = 0.0, joint = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
      col += s.proposal_softmax(i, c);
      joint += s.joint(i, c);
      CHECK(s.joint(i, c) == doctest::Approx(s.class_softmax(i, c) * s.proposal_softmax(i, c)));
    }
    CHECK(col == doctest::Approx(1.0));
    CHECK(s.image_prob(0, c) == doctest::Approx(joint));
  }
}

TEST_CASE("mil loss is the summed binary cross-entropy over classes") {
  Rng rng = make_stream(23, 0);
  Tensor x = testing::random_tensor(4, 3, rng, 1.0, false);
  MilHeadParams p = MilHeadParams::init(3, 2, rng);
  Tape tape;
  InstanceScores s = mil_forward(tape, x, p);
  const ClassLabels y{1, 0};
  const double expected = -std::log(s.image_prob(0, 0)) - std::log(1.0 - s.image_prob(0, 1));
  CHECK(mil_loss(tape, s, y).item() == doctest::Approx(expected));
}

TEST_CASE("top proposal takes the lowest index on ties") {
  Rng rng = make_stream(24, 0);
  MilHeadParams p = MilHeadParams::init(2, 2, rng);
  Tensor x(3, 2, 1.0);  // identical rows give identical joint scores
  Tape tape;
  CHECK(top_scoring_proposal(mil_forward(tape, x, p), 1) == 0);
}

TEST_CASE("mil head rejects mismatched inputs") {
  Rng rng = make_stream(25, 0);
  MilHeadParams p = MilHeadParams::init(3, 2, rng);
  Tape tape;
  CHECK_THROWS_AS(mil_forward(tape, Tensor(4, 2), p), DimensionError);
  InstanceScores s = mil_forward(tape, Tensor(4, 3), p);
  CHECK_THROWS_AS(mil_loss(tape, s, ClassLabels{1}), DimensionError);
}
