#include "dsmil/model.hpp"

#include "dsmil/error.hpp"
#include "dsmil/random.hpp"

namespace dsmil {

namespace {

constexpr const char* kDiscoveryPrefix = "discovery.";
constexpr const char* kMilPrefix = "mil.";
constexpr const char* kSelectionPrefix = "selection.";

std::string branch_prefix(std::size_t k) { return "branch" + std::to_string(k) + "."; }

}  // namespace

void ModelConfig::validate() const {
  if (classes == 0) throw ValidationError("model: classes must be > 0");
  if (feature_dim == 0) throw ValidationError("model: feature_dim must be > 0");
  if (modules.discovery_count > 2) throw ValidationError("model: discovery_count must be 0, 1 or 2");
  if (branches < 1 || branches > 4) throw ValidationError("model: branch count K must be in [1,4]");
}

std::size_t ModelConfig::resolved_embed_dim() const {
  return embed_dim > 0 ? embed_dim : default_embed_dim(feature_dim);
}

DsMilModel DsMilModel::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ParameterSet params;
  // Separate streams per module keep one module's init independent of which
  // other modules are enabled.
  Rng disc_rng = make_stream(seed, 1);
  Rng mil_rng = make_stream(seed, 2);
  Rng sel_rng = make_stream(seed, 3);
  DiscoveryParams::init(config.feature_dim, config.resolved_embed_dim(), config.modules.discovery_count,
                        disc_rng)
      .register_into(params, kDiscoveryPrefix);
  MilHeadParams::init(config.feature_dim, config.classes, mil_rng).register_into(params, kMilPrefix);
  if (config.modules.use_selection) {
    SelectionParams::init(config.feature_dim, config.classes, config.selection_hidden, sel_rng)
        .register_into(params, kSelectionPrefix);
  }
  for (std::size_t k = 0; k < config.branches; ++k) {
    Rng branch_rng = make_stream(seed, 10 + k);
    RefinementBranchParams::init(config.feature_dim, config.classes, branch_rng)
        .register_into(params, branch_prefix(k));
  }
  return DsMilModel(config, std::move(params));
}

DsMilModel DsMilModel::from_parameters(const ModelConfig& config, ParameterSet params) {
  config.validate();
  return DsMilModel(config, std::move(params));
}

DsMilModel::DsMilModel(ModelConfig config, ParameterSet params)
    : config_(std::move(config)), params_(std::move(params)) {
  discovery_ = DiscoveryParams::from(params_, kDiscoveryPrefix, config_.modules.discovery_count);
  mil_ = MilHeadParams::from(params_, kMilPrefix);
  if (config_.modules.use_selection) {
    selection_ = SelectionParams::from(params_, kSelectionPrefix, config_.selection_hidden);
  }
  for (std::size_t k = 0; k < config_.branches; ++k) {
    branches_.push_back(RefinementBranchParams::from(params_, branch_prefix(k)));
  }
  if (mil_.feature_dim() != config_.feature_dim || mil_.classes() != config_.classes) {
    throw DimensionError("model: MIL head " + mil_.w_cls.shape_string() + " does not match config " +
                         std::to_string(config_.feature_dim) + "x" + std::to_string(config_.classes));
  }
}

ForwardPass DsMilModel::forward(Tape& tape, const Tensor& features) const {
  if (features.cols() != config_.feature_dim) {
    throw DimensionError("model: features " + features.shape_string() + " for feature_dim " +
                         std::to_string(config_.feature_dim));
  }
  ForwardPass f;
  f.attention = discovery_forward(tape, features, discovery_);
  f.features = f.attention.empty() ? features : f.attention.back().output;
  f.mil = mil_forward(tape, f.features, mil_);
  if (selection_) {
    // The selection pair trains on its own pseudo labels and does not push
    // gradients into the shared features.
    f.selection = selection_scores(tape, f.features.detach(), *selection_);
  }
  for (const RefinementBranchParams& b : branches_) f.branches.push_back(branch_forward(tape, f.features, b));
  return f;
}

DetectionResult DsMilModel::detect(const ProposalBag& bag, double nms_threshold) const {
  Tape tape;
  const ForwardPass f = forward(tape, bag.features);
  InferenceOptions opts;
  opts.use_regression = config_.modules.use_regression;
  opts.nms_threshold = nms_threshold;
  return assemble_detections(bag.image_id, f.branches, bag.boxes, bag.bounds(), opts);
}

}  // namespace dsmil
