#pragma once

// Training configuration and the full-batch training loop.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dsmil/data.hpp"
#include "dsmil/model.hpp"
#include "dsmil/selection.hpp"
#include "dsmil/sgd.hpp"
#include "json.hpp"

namespace dsmil {

struct TrainConfig {
  std::string dataset;
  std::string eval_dataset;
  std::size_t classes = 0;      // 0: taken from the dataset header
  std::size_t feature_dim = 0;  // 0: taken from the dataset header
  ModuleToggles modules;
  std::size_t branches = 3;
  std::size_t embed_dim = 0;
  std::size_t selection_hidden = 0;
  SgdConfig sgd;
  double zeta = 0.5;
  double lambda = 1.0;
  std::size_t max_iterations = 5000;
  EmSchedule em;
  std::uint64_t seed = 0;
  double nms_threshold = 0.3;
  std::size_t log_every = 1;
  std::string out;

  // Desk scale: 5000 iterations, EM alternation every 100 until 1000.
  static TrainConfig desk_preset();
  // Published schedule: 150k iterations, lr 1e-3 decayed 10x at 75k,
  // EM alternation every 3000 until 30000.
  static TrainConfig paper_preset();

  // Fields absent from `j` keep the values of the preset named by j["preset"]
  // ("desk" when absent). Unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;

  ModelConfig model_config(const DatasetHeader& header) const;
  // SHA-256 over every field that affects the trained weights.
  std::string hash() const;
};

// Applies "--key=value" / "--group.key=value" overrides to a config
// document. Values parse as JSON when possible and as strings otherwise.
// Returns the arguments that were not overrides.
std::vector<std::string> apply_overrides(nlohmann::json& config, const std::vector<std::string>& args);

struct LossBreakdown {
  double total = 0.0;
  double cls = 0.0;
  double refine = 0.0;
  double regression = 0.0;
  double estimator = 0.0;
  double predictor = 0.0;
};

struct IterationLog {
  std::size_t iteration = 0;
  std::string phase;  // "E", "M", "joint", or "none" without selection
  double learning_rate = 0.0;
  LossBreakdown loss;

  std::string to_json() const;
};

// One full-batch pass: zeroes gradients, then accumulates the gradient of
// the bag-averaged loss into every parameter. `phase` selects which
// selection loss is active; it is ignored when selection is disabled.
LossBreakdown accumulate_gradients(DsMilModel& model, const Dataset& data, const TrainConfig& config,
                                   EmPhase phase);

using LogSink = std::function<void(const IterationLog&)>;

// Runs config.max_iterations SGD steps from a fresh initialization.
DsMilModel train(const TrainConfig& config, const Dataset& data, const LogSink& sink = {});

// Runs detection over every bag.
std::vector<DetectionResult> detect_all(const DsMilModel& model, const Dataset& data,
                                        double nms_threshold);

}  // namespace dsmil
