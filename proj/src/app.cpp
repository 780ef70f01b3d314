#include "dsmil/app.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>

#include "dsmil/error.hpp"
#include "dsmil/format.hpp"

namespace dsmil {

using nlohmann::json;

namespace {

void merge_known(json& base, const json& patch, const std::string& what) {
  if (!patch.is_object()) throw ValidationError(what + ": config must be a JSON object");
  for (const auto& [key, value] : patch.items()) {
    if (!base.contains(key)) throw ValidationError(what + ": unknown field '" + key + "'");
    base[key] = value;
  }
}

template <typename T>
T field(const json& j, const char* key, const std::string& what) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(what + ": field '" + key + "' has the wrong type");
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

Dataset load_dataset(const std::string& path, const char* what) {
  if (path.empty()) throw ValidationError(std::string("config: ") + what + " path is empty");
  return read_dataset(fs::path(path));
}

void check_compatible(const ModelConfig& model, const DatasetHeader& header) {
  if (model.classes != header.classes || model.feature_dim != header.feature_dim) {
    throw CompatibilityError("checkpoint expects C=" + std::to_string(model.classes) +
                             " D=" + std::to_string(model.feature_dim) + ", dataset has C=" +
                             std::to_string(header.classes) + " D=" + std::to_string(header.feature_dim));
  }
}

}  // namespace

json load_config(const fs::path& path, const std::vector<std::string>& overrides, const char* seed_env) {
  json config = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    try {
      config = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ParseError("config " + path.string() + ": " + e.what());
    }
  }
  const std::vector<std::string> rest = apply_overrides(config, overrides);
  if (!rest.empty()) throw ValidationError("unrecognised argument '" + rest.front() + "'");
  if (seed_env != nullptr && *seed_env != '\0') {
    std::uint64_t seed = 0;
    const std::string_view s(seed_env);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), seed);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ValidationError("DSMIL_SEED is not an unsigned integer: '" + std::string(s) + "'");
    }
    config["seed"] = seed;
  }
  return config;
}

GenerateConfig GenerateConfig::from_json(const json& j) {
  const std::string what = "generate config";
  GenerateConfig d;
  json merged = {{"num_images", d.synthetic.num_images},
                 {"classes", d.synthetic.classes},
                 {"feature_dim", d.synthetic.feature_dim},
                 {"proposals_per_image", d.synthetic.proposals_per_image},
                 {"part_fraction", d.synthetic.part_fraction},
                 {"context_strength", d.synthetic.context_strength},
                 {"noise_sigma", d.synthetic.noise_sigma},
                 {"geometry_strength", d.synthetic.geometry_strength},
                 {"max_objects", d.synthetic.max_objects},
                 {"seed", d.synthetic.seed},
                 {"id_prefix", d.synthetic.id_prefix},
                 {"test_images", d.test_images},
                 {"test_stream_offset", d.test_stream_offset}};
  merge_known(merged, j, what);
  GenerateConfig c;
  SyntheticConfig& s = c.synthetic;
  s.num_images = field<std::size_t>(merged, "num_images", what);
  s.classes = field<std::size_t>(merged, "classes", what);
  s.feature_dim = field<std::size_t>(merged, "feature_dim", what);
  s.proposals_per_image = field<std::size_t>(merged, "proposals_per_image", what);
  s.part_fraction = field<double>(merged, "part_fraction", what);
  s.context_strength = field<double>(merged, "context_strength", what);
  s.noise_sigma = field<double>(merged, "noise_sigma", what);
  s.geometry_strength = field<double>(merged, "geometry_strength", what);
  s.max_objects = field<std::size_t>(merged, "max_objects", what);
  s.seed = field<std::uint64_t>(merged, "seed", what);
  s.id_prefix = field<std::string>(merged, "id_prefix", what);
  c.test_images = field<std::size_t>(merged, "test_images", what);
  c.test_stream_offset = field<std::uint64_t>(merged, "test_stream_offset", what);
  s.validate();
  return c;
}

void cmd_generate(const GenerateConfig& config, const fs::path& out_dir, std::ostream& log) {
  config.synthetic.validate();
  ensure_dir(out_dir);
  const Dataset train = generate_dataset(config.synthetic);
  write_dataset(train, out_dir / "train.jsonl");
  std::size_t proposals = 0;
  for (const ProposalBag& b : train.bags) proposals += b.proposals();
  json summary = {{"event", "generate"},
                  {"split", "train"},
                  {"path", (out_dir / "train.jsonl").string()},
                  {"images", train.bags.size()},
                  {"classes", train.header.classes},
                  {"proposals", proposals}};
  log << summary.dump() << '\n';
  if (config.test_images > 0) {
    SyntheticConfig test_cfg = config.synthetic;
    test_cfg.num_images = config.test_images;
    test_cfg.id_prefix = config.synthetic.id_prefix + "_test";
    const Dataset test = generate_dataset(test_cfg, config.test_stream_offset);
    write_dataset(test, out_dir / "test.jsonl");
    proposals = 0;
    for (const ProposalBag& b : test.bags) proposals += b.proposals();
    summary["split"] = "test";
    summary["path"] = (out_dir / "test.jsonl").string();
    summary["images"] = test.bags.size();
    summary["proposals"] = proposals;
    log << summary.dump() << '\n';
  }
}

TrainOutcome cmd_train(const TrainConfig& config, std::ostream& log) {
  config.validate();
  const Dataset data = load_dataset(config.dataset, "dataset");
  // Surfaces C/D mismatches before any training work.
  config.model_config(data.header).validate();
  std::vector<IterationLog> entries;
  DsMilModel model = train(config, data, [&](const IterationLog& e) {
    entries.push_back(e);
    log << e.to_json() << '\n';
  });
  if (!config.out.empty()) {
    const fs::path dir(config.out);
    ensure_dir(dir);
    write_checkpoint(config, model, dir / "checkpoint.bin");
    std::string body;
    for (const IterationLog& e : entries) body += e.to_json() + '\n';
    write_text(dir / "train_log.jsonl", body);
  }
  return TrainOutcome{std::move(model), std::move(entries)};
}

Metrics evaluate_model(const DsMilModel& model, const Dataset& data, double nms_threshold) {
  check_compatible(model.config(), data.header);
  const std::vector<DetectionResult> results = detect_all(model, data, nms_threshold);
  return evaluate(results, data.bags);
}

Metrics cmd_eval(const fs::path& checkpoint, const fs::path& dataset, const fs::path& out_dir,
                 std::ostream& log) {
  const Checkpoint ck = read_checkpoint(checkpoint);
  const Dataset data = read_dataset(dataset);
  check_compatible(ck.model, data.header);
  const Metrics m = evaluate_model(ck.to_model(), data, ck.config.nms_threshold);
  const std::string text = m.to_json();
  log << text << '\n';
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_text(out_dir / "metrics.json", text + '\n');
  }
  return m;
}

const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> names = {"baseline", "+S",  "+D",  "+2D", "+S+2D",
                                                 "+S+2D+Reg", "K=1", "K=2", "K=3", "K=4"};
  return names;
}

TrainConfig apply_variant(TrainConfig config, const std::string& variant) {
  ModuleToggles& m = config.modules;
  if (variant.rfind("K=", 0) == 0) {
    const std::string k = variant.substr(2);
    if (k.size() != 1 || k[0] < '1' || k[0] > '4') {
      throw ValidationError("ablation: unknown variant '" + variant + "'");
    }
    m = ModuleToggles{true, 2, true};
    config.branches = static_cast<std::size_t>(k[0] - '0');
    return config;
  }
  if (variant == "baseline") {
    m = ModuleToggles{false, 0, false};
  } else if (variant == "+S") {
    m = ModuleToggles{true, 0, false};
  } else if (variant == "+D") {
    m = ModuleToggles{false, 1, false};
  } else if (variant == "+2D") {
    m = ModuleToggles{false, 2, false};
  } else if (variant == "+S+2D") {
    m = ModuleToggles{true, 2, false};
  } else if (variant == "+S+2D+Reg") {
    m = ModuleToggles{true, 2, true};
  } else {
    throw ValidationError("ablation: unknown variant '" + variant + "'");
  }
  return config;
}

AblationConfig AblationConfig::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("ablation config must be a JSON object");
  json rest = j;
  AblationConfig c;
  c.variants = ablation_variants();
  c.seeds = {0, 1, 2, 3, 4};
  try {
    if (rest.contains("variants")) {
      c.variants = rest["variants"].get<std::vector<std::string>>();
      rest.erase("variants");
    }
    if (rest.contains("seeds")) {
      c.seeds = rest["seeds"].get<std::vector<std::uint64_t>>();
      rest.erase("seeds");
    }
  } catch (const json::exception&) {
    throw ValidationError("ablation: 'variants' must be strings and 'seeds' unsigned integers");
  }
  c.base = TrainConfig::from_json(rest);
  if (c.variants.empty()) throw ValidationError("ablation: no variants requested");
  if (c.seeds.empty()) throw ValidationError("ablation: no seeds requested");
  for (std::size_t i = 0; i < c.variants.size(); ++i) {
    apply_variant(c.base, c.variants[i]);
    if (std::find(c.variants.begin(), c.variants.begin() + static_cast<std::ptrdiff_t>(i), c.variants[i]) !=
        c.variants.begin() + static_cast<std::ptrdiff_t>(i)) {
      throw ValidationError("ablation: variant '" + c.variants[i] + "' requested twice");
    }
  }
  return c;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ValidationError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

const AblationRow& AblationTable::row(const std::string& variant) const {
  for (const AblationRow& r : rows) {
    if (r.variant == variant) return r;
  }
  throw LookupError("ablation: no row for variant '" + variant + "'");
}

json AblationTable::to_json() const {
  json out = {{"seeds", seeds}, {"variants", json::array()}};
  for (const AblationRow& r : rows) {
    out["variants"].push_back({{"variant", r.variant}, {"map", r.map}, {"median_map", r.median}});
  }
  return out;
}

AblationTable cmd_ablate(const AblationConfig& config, std::ostream& log) {
  const Dataset train_data = load_dataset(config.base.dataset, "dataset");
  const Dataset eval_data =
      config.base.eval_dataset.empty() ? train_data : load_dataset(config.base.eval_dataset, "eval_dataset");
  config.base.model_config(train_data.header).validate();

  AblationTable table;
  table.seeds = config.seeds;
  std::map<std::string, double> done;  // config hash -> mAP
  for (const std::string& variant : config.variants) {
    AblationRow row{variant, {}, 0.0};
    for (std::uint64_t seed : config.seeds) {
      TrainConfig run = apply_variant(config.base, variant);
      run.seed = seed;
      run.out.clear();
      const std::string key = run.hash();
      auto it = done.find(key);
      if (it == done.end()) {
        const DsMilModel model = train(run, train_data);
        const Metrics m = evaluate_model(model, eval_data, run.nms_threshold);
        it = done.emplace(key, m.map).first;
      }
      row.map.push_back(it->second);
      log << json{{"event", "ablate"}, {"variant", variant}, {"seed", seed}, {"map", it->second}}.dump()
          << '\n';
    }
    row.median = median(row.map);
    table.rows.push_back(std::move(row));
  }
  if (!config.base.out.empty()) {
    const fs::path dir(config.base.out);
    ensure_dir(dir);
    write_text(dir / "ablation.json", table.to_json().dump(2) + '\n');
  }
  return table;
}

void cmd_dump_attention(const fs::path& checkpoint, const fs::path& dataset, const std::string& image_id,
                        std::ostream& csv) {
  const Checkpoint ck = read_checkpoint(checkpoint);
  const Dataset data = read_dataset(dataset);
  check_compatible(ck.model, data.header);
  const ProposalBag& bag = data.find(image_id);
  if (ck.model.modules.discovery_count == 0) {
    csv << "# no attention to dump: checkpoint was trained with discovery_count=0\n";
    return;
  }
  const DsMilModel model = ck.to_model();
  Tape tape;
  const std::vector<AttentionRecord> records = discovery_forward(tape, bag.features, model.discovery());
  const std::size_t n = bag.proposals();
  csv << "module,row,x1,y1,x2,y2";
  for (std::size_t j = 0; j < n; ++j) csv << ",w_" << j;
  csv << '\n';
  for (std::size_t m = 0; m < records.size(); ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      const Box& b = bag.boxes[i];
      csv << m << ',' << i << ',' << format_double(b.x1) << ',' << format_double(b.y1) << ','
          << format_double(b.x2) << ',' << format_double(b.y2);
      for (std::size_t j = 0; j < n; ++j) csv << ',' << format_double(records[m].weights(i, j));
      csv << '\n';
    }
  }
}

}  // namespace dsmil
