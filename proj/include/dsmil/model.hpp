#pragma once

// The composed detector: discovery attention over the proposal features,
// then the MIL head, the selection estimator/predictor and K refinement
// branches, all reading the discovered features.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "dsmil/data.hpp"
#include "dsmil/detection.hpp"
#include "dsmil/discovery.hpp"
#include "dsmil/mil_head.hpp"
#include "dsmil/refinement.hpp"
#include "dsmil/selection.hpp"
#include "dsmil/sgd.hpp"

namespace dsmil {

struct ModuleToggles {
  bool use_selection = true;
  std::size_t discovery_count = 2;  // 0, 1 or 2
  bool use_regression = true;
};

struct ModelConfig {
  std::size_t classes = 0;
  std::size_t feature_dim = 0;
  ModuleToggles modules;
  std::size_t branches = 3;          // K
  std::size_t embed_dim = 0;         // 0 -> ceil(D / 2)
  std::size_t selection_hidden = 0;  // 0 -> linear estimator/predictor

  void validate() const;
  std::size_t resolved_embed_dim() const;
};

struct ForwardPass {
  std::vector<AttentionRecord> attention;
  Tensor features;  // discovered features (input features when no discovery)
  InstanceScores mil;
  std::optional<SelectionScores> selection;
  std::vector<BranchOutput> branches;
};

class DsMilModel {
 public:
  // Glorot-initialized weights drawn from a stream derived from seed.
  static DsMilModel init(const ModelConfig& config, std::uint64_t seed);
  // Wraps existing tensors; throws LookupError if one is missing.
  static DsMilModel from_parameters(const ModelConfig& config, ParameterSet params);

  const ModelConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  const DiscoveryParams& discovery() const { return discovery_; }
  const MilHeadParams& mil_head() const { return mil_; }
  const std::optional<SelectionParams>& selection() const { return selection_; }
  const std::vector<RefinementBranchParams>& branches() const { return branches_; }

  ForwardPass forward(Tape& tape, const Tensor& features) const;
  DetectionResult detect(const ProposalBag& bag, double nms_threshold) const;

 private:
  DsMilModel(ModelConfig config, ParameterSet params);

  ModelConfig config_;
  ParameterSet params_;
  DiscoveryParams discovery_;
  MilHeadParams mil_;
  std::optional<SelectionParams> selection_;
  std::vector<RefinementBranchParams> branches_;
};

}  // namespace dsmil
