#include "doctest.h"
#include "dsmil/error.hpp"
#include "dsmil/sgd.hpp"

using namespace dsmil;

TEST_CASE("learning rate drops by the decay factor at each milestone") {
  SgdConfig c;
  c.learning_rate = 0.1;
  c.decay_factor = 10.0;
  c.decay_steps = {5, 8};
  CHECK(c.rate_at(0) == doctest::Approx(0.1));
  CHECK(c.rate_at(4) == doctest::Approx(0.1));
  CHECK(c.rate_at(5) == doctest::Approx(0.01));
  CHECK(c.rate_at(8) == doctest::Approx(0.001));
}

TEST_CASE("momentum update with weight decay follows the hand computation") {
  ParameterSet params;
  params.add("w", Tensor(1, 2, std::vector<double>{1.0, -2.0}));
  SgdConfig c;
  c.learning_rate = 0.1;
  c.momentum = 0.5;
  c.weight_decay = 0.01;
  Sgd opt(c);
  Tensor& w = params.get("w");
  w.zero_grad();
  w.mutable_grad()[0] = 2.0;
  w.mutable_grad()[1] = 0.0;
  opt.step(params, 0);
  // v = -0.1 * (2 + 0.01) = -0.201 ; p = 0.799
  // v = -0.1 * (0 - 0.02) = 0.002  ; p = -1.998
  CHECK(w(0, 0) == doctest::Approx(0.799));
  CHECK(w(0, 1) == doctest::Approx(-1.998));
  CHECK(w.grad()[0] == 0.0);
  w.mutable_grad()[0] = 1.0;
  opt.step(params, 1);
  // v = 0.5 * -0.201 - 0.1 * (1 + 0.00799) = -0.201299
  CHECK(w(0, 0) == doctest::Approx(0.799 - 0.201299));
}

TEST_CASE("parameters without a gradient are an optimizer error") {
  ParameterSet params;
  params.add("w", Tensor(1, 1, 0.0));
  Sgd opt(SgdConfig{});
  CHECK_THROWS_AS(opt.step(params, 0), OptimizerError);
}

TEST_CASE("parameter registry") {
  ParameterSet params;
  params.add("a", Tensor(1, 1, 1.0));
  CHECK(params.get("a").requires_grad());
  CHECK_THROWS_AS(params.add("a", Tensor(1, 1)), ValidationError);
  CHECK_THROWS_AS(params.get("b"), LookupError);
}

TEST_CASE("invalid optimizer settings are rejected") {
  SgdConfig c;
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = SgdConfig{};
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = SgdConfig{};
  c.weight_decay = -1.0;
  CHECK_THROWS_AS(Sgd{c}, ValidationError);
}
