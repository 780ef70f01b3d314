#include "dsmil/trainer.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstdio>

#include "dsmil/error.hpp"

namespace dsmil {

using nlohmann::json;

namespace {

// Overlays `patch` onto `base`, refusing keys the base does not define.
void merge_strict(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ValidationError("config: '" + path + "' must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ValidationError("config: unknown field '" + where + "'");
    if (base[key].is_object()) {
      merge_strict(base[key], value, where);
    } else {
      base[key] = value;
    }
  }
}

template <typename T>
T field(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("config: field '") + key + "' has the wrong type");
  }
}

std::string sha256_hex(const std::string& text) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("E_INTERNAL", "sha256 failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

}  // namespace

TrainConfig TrainConfig::desk_preset() {
  TrainConfig c;
  c.sgd.learning_rate = 0.01;
  c.sgd.momentum = 0.9;
  c.sgd.weight_decay = 0.0005;
  c.sgd.decay_factor = 10.0;
  c.sgd.decay_steps = {2500};
  c.max_iterations = 5000;
  c.em = EmSchedule{100, 1000};
  return c;
}

TrainConfig TrainConfig::paper_preset() {
  TrainConfig c;
  c.sgd.learning_rate = 0.001;
  c.sgd.momentum = 0.9;
  c.sgd.weight_decay = 0.0005;
  c.sgd.decay_factor = 10.0;
  c.sgd.decay_steps = {75000};
  c.max_iterations = 150000;
  c.em = EmSchedule{3000, 30000};
  c.branches = 3;
  return c;
}

json TrainConfig::to_json() const {
  return json{
      {"dataset", dataset},
      {"eval_dataset", eval_dataset},
      {"classes", classes},
      {"feature_dim", feature_dim},
      {"modules",
       {{"use_selection", modules.use_selection},
        {"discovery_count", modules.discovery_count},
        {"use_regression", modules.use_regression}}},
      {"branches", branches},
      {"embed_dim", embed_dim},
      {"selection_hidden", selection_hidden},
      {"sgd",
       {{"learning_rate", sgd.learning_rate},
        {"momentum", sgd.momentum},
        {"weight_decay", sgd.weight_decay},
        {"decay_factor", sgd.decay_factor},
        {"decay_steps", sgd.decay_steps}}},
      {"zeta", zeta},
      {"lambda", lambda},
      {"max_iterations", max_iterations},
      {"em", {{"alternate_every", em.alternate_every}, {"joint_after", em.joint_after}}},
      {"seed", seed},
      {"nms_threshold", nms_threshold},
      {"log_every", log_every},
      {"out", out},
  };
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("config: top level must be an object");
  json patch = j;
  std::string preset = "desk";
  if (patch.contains("preset")) {
    if (!patch["preset"].is_string()) throw ValidationError("config: 'preset' must be a string");
    preset = patch["preset"].get<std::string>();
    patch.erase("preset");
  }
  TrainConfig base;
  if (preset == "desk") {
    base = desk_preset();
  } else if (preset == "paper") {
    base = paper_preset();
  } else {
    throw ValidationError("config: unknown preset '" + preset + "' (expected desk or paper)");
  }
  json merged = base.to_json();
  merge_strict(merged, patch, "");

  TrainConfig c;
  c.dataset = field<std::string>(merged, "dataset");
  c.eval_dataset = field<std::string>(merged, "eval_dataset");
  c.classes = field<std::size_t>(merged, "classes");
  c.feature_dim = field<std::size_t>(merged, "feature_dim");
  const json& m = merged["modules"];
  c.modules.use_selection = field<bool>(m, "use_selection");
  c.modules.discovery_count = field<std::size_t>(m, "discovery_count");
  c.modules.use_regression = field<bool>(m, "use_regression");
  c.branches = field<std::size_t>(merged, "branches");
  c.embed_dim = field<std::size_t>(merged, "embed_dim");
  c.selection_hidden = field<std::size_t>(merged, "selection_hidden");
  const json& s = merged["sgd"];
  c.sgd.learning_rate = field<double>(s, "learning_rate");
  c.sgd.momentum = field<double>(s, "momentum");
  c.sgd.weight_decay = field<double>(s, "weight_decay");
  c.sgd.decay_factor = field<double>(s, "decay_factor");
  c.sgd.decay_steps = field<std::vector<std::size_t>>(s, "decay_steps");
  c.zeta = field<double>(merged, "zeta");
  c.lambda = field<double>(merged, "lambda");
  c.max_iterations = field<std::size_t>(merged, "max_iterations");
  c.em.alternate_every = field<std::size_t>(merged["em"], "alternate_every");
  c.em.joint_after = field<std::size_t>(merged["em"], "joint_after");
  c.seed = field<std::uint64_t>(merged, "seed");
  c.nms_threshold = field<double>(merged, "nms_threshold");
  c.log_every = field<std::size_t>(merged, "log_every");
  c.out = field<std::string>(merged, "out");
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (modules.discovery_count > 2) throw ValidationError("config: discovery_count must be 0, 1 or 2");
  if (branches < 1 || branches > 4) throw ValidationError("config: branches (K) must be in [1,4]");
  sgd.validate();
  if (!(zeta > 0.0 && zeta < 1.0)) throw ValidationError("config: zeta must be in (0,1)");
  if (!(lambda > 0.0)) throw ValidationError("config: lambda must be > 0");
  if (!(nms_threshold > 0.0 && nms_threshold < 1.0)) {
    throw ValidationError("config: nms_threshold must be in (0,1)");
  }
  if (em.alternate_every == 0) throw ValidationError("config: em.alternate_every must be > 0");
  if (log_every == 0) throw ValidationError("config: log_every must be > 0");
}

ModelConfig TrainConfig::model_config(const DatasetHeader& header) const {
  if (classes != 0 && classes != header.classes) {
    throw ValidationError("config expects " + std::to_string(classes) + " classes, dataset has " +
                          std::to_string(header.classes));
  }
  if (feature_dim != 0 && feature_dim != header.feature_dim) {
    throw ValidationError("config expects feature_dim " + std::to_string(feature_dim) +
                          ", dataset has " + std::to_string(header.feature_dim));
  }
  ModelConfig m;
  m.classes = header.classes;
  m.feature_dim = header.feature_dim;
  m.modules = modules;
  m.branches = branches;
  m.embed_dim = embed_dim;
  m.selection_hidden = selection_hidden;
  return m;
}

std::string TrainConfig::hash() const {
  json j = to_json();
  for (const char* key : {"dataset", "eval_dataset", "out", "log_every"}) j.erase(key);
  return sha256_hex(j.dump());
}

std::vector<std::string> apply_overrides(json& config, const std::vector<std::string>& args) {
  std::vector<std::string> rest;
  for (const std::string& arg : args) {
    const auto eq = arg.find('=');
    if (arg.rfind("--", 0) != 0 || eq == std::string::npos) {
      rest.push_back(arg);
      continue;
    }
    const std::string key = arg.substr(2, eq - 2);
    const std::string raw = arg.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    json* node = &config;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw ValidationError("override: malformed key '" + key + "'");
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = json::object();
      node = &(*node)[part];
      start = dot + 1;
    }
  }
  return rest;
}

std::string IterationLog::to_json() const {
  json j = {{"iteration", iteration},    {"phase", phase},
            {"lr", learning_rate},       {"loss_total", loss.total},
            {"loss_cls", loss.cls},      {"loss_refine", loss.refine},
            {"loss_regression", loss.regression}, {"loss_estimator", loss.estimator},
            {"loss_predictor", loss.predictor}};
  return j.dump();
}

LossBreakdown accumulate_gradients(DsMilModel& model, const Dataset& data, const TrainConfig& config,
                                   EmPhase phase) {
  model.parameters().zero_grad();
  LossBreakdown sum;
  if (data.bags.empty()) return sum;
  const double inv_bags = 1.0 / static_cast<double>(data.bags.size());
  const bool train_estimator = phase == EmPhase::E || phase == EmPhase::Joint;
  const bool train_predictor = phase == EmPhase::M || phase == EmPhase::Joint;
  const ModelConfig& mc = model.config();

  for (const ProposalBag& bag : data.bags) {
    Tape tape;
    const ForwardPass f = model.forward(tape, bag.features);
    Tensor total = mil_loss(tape, f.mil, bag.labels);
    sum.cls += total.item();

    std::vector<double> keyness(bag.proposals(), 1.0);
    if (f.selection) {
      const SelectionScores& sel = *f.selection;
      keyness.assign(sel.q.values().begin(), sel.q.values().end());
      if (train_estimator) {
        const std::vector<int> h_hat = e_step_labels(sel.class_scores.detach(), bag.labels, config.zeta);
        Tensor l = estimator_loss(tape, sel.q, h_hat);
        sum.estimator += l.item();
        total = tape.add(total, l);
      }
      if (train_predictor) {
        const MStepLabels m = m_step_labels(keyness, bag.labels);
        // A constant-keyness bag has no positives for its labelled classes;
        // its predictor update is skipped.
        if (m.any_positive || !has_positive(bag.labels)) {
          Tensor l = predictor_loss(tape, sel.class_scores, m.y_hat);
          sum.predictor += l.item();
          total = tape.add(total, l);
        }
      }
    }

    if (has_positive(bag.labels)) {
      Tensor prev = f.mil.joint.detach();
      std::vector<BranchLoss> branch_losses;
      for (const BranchOutput& out : f.branches) {
        const PseudoTarget targets = mine_pseudo_targets(prev, keyness, bag.boxes, bag.labels);
        BranchLoss bl{refine_loss(tape, out.scores, targets), std::nullopt};
        sum.refine += bl.refine.item();
        if (mc.modules.use_regression) {
          bl.regression = regression_loss(tape, out.regression, targets);
          sum.regression += bl.regression->item();
        }
        branch_losses.push_back(std::move(bl));
        prev = out.scores.detach();
      }
      total = tape.add(total, detection_loss(tape, branch_losses, config.lambda));
    }
    sum.total += total.item();
    backward(tape, tape.scale(total, inv_bags));
  }
  sum.total *= inv_bags;
  sum.cls *= inv_bags;
  sum.refine *= inv_bags;
  sum.regression *= inv_bags;
  sum.estimator *= inv_bags;
  sum.predictor *= inv_bags;
  return sum;
}

DsMilModel train(const TrainConfig& config, const Dataset& data, const LogSink& sink) {
  config.validate();
  for (const ProposalBag& bag : data.bags) validate_bag(bag, data.header);
  DsMilModel model = DsMilModel::init(config.model_config(data.header), config.seed);
  Sgd optimizer(config.sgd);
  const bool selection = model.config().modules.use_selection;
  std::string previous_phase;
  for (std::size_t it = 0; it < config.max_iterations; ++it) {
    const EmPhase phase = config.em.phase(it);
    const LossBreakdown loss = accumulate_gradients(model, data, config, phase);
    IterationLog entry{it, selection ? to_string(phase) : "none", config.sgd.rate_at(it), loss};
    optimizer.step(model.parameters(), it);
    const bool boundary = entry.phase != previous_phase;
    if (sink && (it % config.log_every == 0 || boundary || it + 1 == config.max_iterations)) {
      sink(entry);
    }
    previous_phase = entry.phase;
  }
  return model;
}

std::vector<DetectionResult> detect_all(const DsMilModel& model, const Dataset& data,
                                        double nms_threshold) {
  std::vector<DetectionResult> out;
  out.reserve(data.bags.size());
  for (const ProposalBag& bag : data.bags) out.push_back(model.detect(bag, nms_threshold));
  return out;
}

}  // namespace dsmil
