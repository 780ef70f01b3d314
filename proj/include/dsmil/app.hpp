#pragma once

// The command implementations behind the `dsmil` executable. Each writes its
// artifacts and reports progress as JSON lines on `log`.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dsmil/checkpoint.hpp"
#include "dsmil/data.hpp"
#include "dsmil/eval.hpp"
#include "dsmil/trainer.hpp"
#include "json.hpp"

namespace dsmil {

namespace fs = std::filesystem;

// Reads a JSON config file (an empty object when `path` is empty), applies
// "--key=value" overrides and then DSMIL_SEED from the environment.
nlohmann::json load_config(const fs::path& path, const std::vector<std::string>& overrides,
                           const char* seed_env);

struct GenerateConfig {
  SyntheticConfig synthetic;
  std::size_t test_images = 100;
  // Offset of the test image streams; keeps them disjoint from training.
  std::uint64_t test_stream_offset = std::uint64_t{1} << 32;

  static GenerateConfig from_json(const nlohmann::json& j);
};

// Writes <out_dir>/train.jsonl and, when test_images > 0, <out_dir>/test.jsonl.
void cmd_generate(const GenerateConfig& config, const fs::path& out_dir, std::ostream& log);

struct TrainOutcome {
  DsMilModel model;
  std::vector<IterationLog> log;
};

// Trains on config.dataset; writes checkpoint.bin and train_log.jsonl under
// config.out when it is set.
TrainOutcome cmd_train(const TrainConfig& config, std::ostream& log);

// The metrics of `checkpoint` on `dataset`; writes metrics.json under
// out_dir when it is set.
Metrics cmd_eval(const fs::path& checkpoint, const fs::path& dataset, const fs::path& out_dir,
                 std::ostream& log);
Metrics evaluate_model(const DsMilModel& model, const Dataset& data, double nms_threshold);

// Ablation variants: "baseline", "+S", "+D", "+2D", "+S+2D", "+S+2D+Reg",
// and "K=1" .. "K=4" (the full model with that many branches).
const std::vector<std::string>& ablation_variants();
TrainConfig apply_variant(TrainConfig config, const std::string& variant);

struct AblationConfig {
  TrainConfig base;
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds;

  // TrainConfig fields plus optional "variants" (default: all) and "seeds"
  // (default: 0..4).
  static AblationConfig from_json(const nlohmann::json& j);
};

struct AblationRow {
  std::string variant;
  std::vector<double> map;  // one per seed
  double median = 0.0;
};

struct AblationTable {
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;

  const AblationRow& row(const std::string& variant) const;
  nlohmann::json to_json() const;
};

double median(std::vector<double> values);

// Trains and evaluates every variant for every seed. Runs whose effective
// configuration coincides (e.g. "K=3" and "+S+2D+Reg") are trained once.
// Writes ablation.json under base.out when it is set.
AblationTable cmd_ablate(const AblationConfig& config, std::ostream& log);

// One CSV block per discovery module: module,row,x1,y1,x2,y2,w_0..w_{N-1}.
void cmd_dump_attention(const fs::path& checkpoint, const fs::path& dataset, const std::string& image_id,
                        std::ostream& csv);

}  // namespace dsmil
