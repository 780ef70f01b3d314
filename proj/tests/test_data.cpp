#include <bit>
#include <cmath>
#include <sstream>
#include <string>

#include "doctest.h"
#include "dsmil/data.hpp"
#include "dsmil/error.hpp"

using namespace dsmil;

namespace {

std::string serialize(const Dataset& ds) {
  std::ostringstream out;
  write_dataset(ds, out);
  return out.str();
}

SyntheticConfig small_config(std::size_t images) {
  SyntheticConfig c;
  c.num_images = images;
  c.seed = 9;
  return c;
}

template <class E>
std::string error_text(const std::string& text) {
  std::istringstream in(text);
  try {
    read_dataset(in);
  } catch (const E& e) {
    return e.what();
  }
  return "<no error>";
}

}  // namespace

TEST_CASE("write then read is the identity") {
  const Dataset ds = generate_dataset(small_config(10));
  std::istringstream in(serialize(ds));
  const Dataset back = read_dataset(in);
  CHECK(back.header.classes == ds.header.classes);
  CHECK(back.header.feature_dim == ds.header.feature_dim);
  REQUIRE(back.bags.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    const ProposalBag &a = ds.bags[i], &b = back.bags[i];
    CHECK(a.image_id == b.image_id);
    CHECK(a.width == b.width);
    CHECK(a.height == b.height);
    CHECK(a.boxes == b.boxes);
    CHECK(a.labels == b.labels);
    CHECK(a.gt == b.gt);
    REQUIRE(a.features.size() == b.features.size());
    for (std::size_t j = 0; j < a.features.size(); ++j) {
      CHECK(std::bit_cast<std::uint64_t>(a.features.values()[j]) ==
            std::bit_cast<std::uint64_t>(b.features.values()[j]));
    }
  }
}

TEST_CASE("generation is deterministic for a fixed seed") {
  CHECK(serialize(generate_dataset(small_config(5))) == serialize(generate_dataset(small_config(5))));
  SyntheticConfig other = small_config(5);
  other.seed = 10;
  CHECK(serialize(generate_dataset(other)) != serialize(generate_dataset(small_config(5))));
}

TEST_CASE("the test stream is disjoint from the training stream") {
  const Dataset train = generate_dataset(small_config(5));
  const Dataset test = generate_dataset(small_config(5), 1000);
  CHECK(train.bags[0].image_id != test.bags[0].image_id);
  CHECK_FALSE(train.bags[0].boxes == test.bags[0].boxes);
}

TEST_CASE("without noise or context a part proposal looks exactly like its object") {
  SyntheticConfig c = small_config(8);
  c.noise_sigma = 0.0;
  c.context_strength = 0.0;
  c.geometry_strength = 0.0;
  const Dataset ds = generate_dataset(c);
  for (const ProposalBag& bag : ds.bags) {
    for (const GroundTruthObject& g : bag.gt) {
      std::size_t full = bag.proposals();
      for (std::size_t i = 0; i < bag.proposals(); ++i) {
        if (bag.boxes[i] == g.box) full = i;
      }
      REQUIRE(full < bag.proposals());
      bool twin = false;
      for (std::size_t i = 0; i < bag.proposals() && !twin; ++i) {
        if (i == full || bag.boxes[i].area() >= g.box.area()) continue;
        bool same = true;
        for (std::size_t j = 0; j < c.feature_dim && same; ++j) same = bag.features(i, j) == bag.features(full, j);
        twin = same;
      }
      CHECK(twin);
    }
  }
}

TEST_CASE("every object has a proposal covering it") {
  const Dataset ds = generate_dataset(small_config(50));
  for (const ProposalBag& bag : ds.bags) {
    for (const GroundTruthObject& g : bag.gt) {
      double best = 0.0;
      for (const Box& b : bag.boxes) best = std::max(best, iou(b, g.box));
      CHECK(best >= 0.5);
    }
  }
}

TEST_CASE("classes are balanced within ten percent") {
  const Dataset ds = generate_dataset(small_config(200));
  std::vector<double> counts(ds.header.classes, 0.0);
  for (const ProposalBag& bag : ds.bags) {
    for (std::size_t c = 0; c < counts.size(); ++c) counts[c] += bag.labels[c];
  }
  double mean = 0.0;
  for (double v : counts) mean += v;
  mean /= static_cast<double>(counts.size());
  for (double v : counts) CHECK(std::abs(v - mean) <= 0.1 * mean);
}

TEST_CASE("full-object features are linearly separable from background") {
  const Dataset ds = generate_dataset(small_config(200));
  const std::size_t d = ds.header.feature_dim;
  std::vector<std::vector<double>> full, background;
  for (const ProposalBag& bag : ds.bags) {
    for (std::size_t i = 0; i < bag.proposals(); ++i) {
      bool is_full = false, touches = false;
      for (const GroundTruthObject& g : bag.gt) {
        is_full = is_full || bag.boxes[i] == g.box;
        touches = touches || iou(bag.boxes[i], g.box) > 0.0;
      }
      const auto row = bag.features.row(i);
      if (is_full) full.emplace_back(row.begin(), row.end());
      if (!touches) background.emplace_back(row.begin(), row.end());
    }
  }
  REQUIRE(!full.empty());
  REQUIRE(!background.empty());
  // Logistic-regression probe trained by full-batch gradient descent.
  std::vector<double> w(d, 0.0);
  double b = 0.0;
  auto score = [&](const std::vector<double>& f) {
    double s = b;
    for (std::size_t j = 0; j < d; ++j) s += w[j] * f[j];
    return s;
  };
  const double wf = 0.5 / static_cast<double>(full.size()), wb = 0.5 / static_cast<double>(background.size());
  for (int epoch = 0; epoch < 300; ++epoch) {
    std::vector<double> gw(d, 0.0);
    double gb = 0.0;
    auto accumulate = [&](const std::vector<double>& f, double label, double weight) {
      const double err = weight * (1.0 / (1.0 + std::exp(-score(f))) - label);
      for (std::size_t j = 0; j < d; ++j) gw[j] += err * f[j];
      gb += err;
    };
    for (const auto& f : full) accumulate(f, 1.0, wf);
    for (const auto& f : background) accumulate(f, 0.0, wb);
    for (std::size_t j = 0; j < d; ++j) w[j] -= 0.5 * gw[j];
    b -= 0.5 * gb;
  }
  std::size_t correct = 0;
  for (const auto& f : full) correct += score(f) > 0.0;
  for (const auto& f : background) correct += score(f) <= 0.0;
  CHECK(static_cast<double>(correct) / static_cast<double>(full.size() + background.size()) >= 0.95);
}

TEST_CASE("an empty file is an empty dataset") {
  std::istringstream in("");
  const Dataset ds = read_dataset(in);
  CHECK(ds.bags.empty());
}

TEST_CASE("malformed input reports where it failed") {
  const std::string text = serialize(generate_dataset(small_config(2)));
  const std::size_t second = text.find('\n') + 1;
  const std::string truncated = text.substr(0, second + 40);
  const std::string msg = error_text<ParseError>(truncated);
  CHECK(msg.find("line 2") != std::string::npos);
  CHECK(msg.find("byte offset") != std::string::npos);

  std::string unknown = text;
  unknown.insert(second + 1, "\"colour\":1,");
  CHECK(error_text<ParseError>(unknown).find("colour") != std::string::npos);

  const std::string header = text.substr(0, second);
  CHECK(error_text<ParseError>("{\"format\":\"other\",\"version\":1,\"classes\":1,\"feature_dim\":1}\n")
            .find("not a dsmil-bags") != std::string::npos);
  const std::string short_features =
      header + R"({"image_id":"a","width":10,"height":10,"boxes":[[0,0,5,5]],"labels":[0],"features_b64":"AAAAAAAAAAA="})" + "\n";
  CHECK(error_text<ShapeError>(short_features).find("line 2") != std::string::npos);
}

TEST_CASE("bags are validated against the header") {
  Dataset ds = generate_dataset(small_config(1));
  ProposalBag bag = ds.bags[0];
  bag.boxes[0] = Box{0, 0, double(bag.width) + 5, 10};
  CHECK_THROWS_AS(validate_bag(bag, ds.header), ValidationError);
  bag = ds.bags[0];
  bag.labels.assign(bag.labels.size(), 0);
  CHECK_THROWS_AS(validate_bag(bag, ds.header), ValidationError);
  SyntheticConfig bad = small_config(1);
  bad.part_fraction = 1.0;
  CHECK_THROWS_AS(generate_dataset(bad), ValidationError);
  CHECK_THROWS_AS(ds.find("missing"), LookupError);
}
