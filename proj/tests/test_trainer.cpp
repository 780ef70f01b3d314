#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dsmil/app.hpp"
#include "dsmil/checkpoint.hpp"
#include "dsmil/error.hpp"
#include "dsmil/trainer.hpp"

using namespace dsmil;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("dsmil_test_trainer_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Dataset tiny_dataset(std::size_t images = 8, std::uint64_t seed = 2) {
  SyntheticConfig c;
  c.num_images = images;
  c.classes = 3;
  c.feature_dim = 8;
  c.proposals_per_image = 12;
  c.seed = seed;
  return generate_dataset(c);
}

TrainConfig tiny_config(const Dataset& data) {
  TrainConfig c = TrainConfig::desk_preset();
  c.classes = data.header.classes;
  c.feature_dim = data.header.feature_dim;
  c.max_iterations = 20;
  c.em = EmSchedule{5, 10};
  return c;
}

std::string checkpoint_bytes(const TrainConfig& c, const DsMilModel& m) {
  std::ostringstream out;
  write_checkpoint(c, m, out);
  return out.str();
}

}  // namespace

TEST_CASE("config presets") {
  const TrainConfig desk = TrainConfig::desk_preset();
  CHECK(desk.max_iterations == 5000);
  CHECK(desk.em.alternate_every == 100);
  CHECK(desk.em.joint_after == 1000);
  const TrainConfig paper = TrainConfig::paper_preset();
  CHECK(paper.max_iterations == 150000);
  CHECK(paper.sgd.learning_rate == doctest::Approx(0.001));
  CHECK(paper.sgd.decay_steps == std::vector<std::size_t>{75000});
  CHECK(paper.em.alternate_every == 3000);
  CHECK(paper.em.joint_after == 30000);
  CHECK(TrainConfig::from_json(json{{"preset", "paper"}}).max_iterations == 150000);
  CHECK_THROWS_AS(TrainConfig::from_json(json{{"preset", "huge"}}), ValidationError);
}

TEST_CASE("config JSON round-trips and rejects unknown or invalid fields") {
  TrainConfig c = TrainConfig::desk_preset();
  c.zeta = 0.3;
  c.modules.discovery_count = 1;
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK_THROWS_AS(TrainConfig::from_json(json{{"colour", 1}}), ValidationError);
  CHECK_THROWS_AS(TrainConfig::from_json(json{{"sgd", {{"rate", 1}}}}), ValidationError);
  CHECK_THROWS_AS(TrainConfig::from_json(json{{"branches", 5}}), ValidationError);
  CHECK_THROWS_AS(TrainConfig::from_json(json{{"branches", 0}}), ValidationError);
  CHECK_THROWS_AS(TrainConfig::from_json(json{{"modules", {{"discovery_count", 3}}}}), ValidationError);
  CHECK_THROWS_AS(TrainConfig::from_json(json{{"zeta", 1.0}}), ValidationError);
  CHECK_THROWS_AS(TrainConfig::from_json(json{{"zeta", "high"}}), ValidationError);
}

TEST_CASE("overrides address nested keys and parse values as JSON") {
  json cfg = {{"sgd", {{"learning_rate", 0.1}}}};
  const auto rest = apply_overrides(cfg, {"--sgd.learning_rate=0.5", "--dataset=a.jsonl", "--em.alternate_every=7",
                                          "positional", "--modules.use_selection=false"});
  CHECK(rest == std::vector<std::string>{"positional"});
  CHECK(cfg["sgd"]["learning_rate"] == 0.5);
  CHECK(cfg["dataset"] == "a.jsonl");
  CHECK(cfg["em"]["alternate_every"] == 7);
  CHECK(cfg["modules"]["use_selection"] == false);
}

TEST_CASE("the environment seed wins over file and flags") {
  const fs::path dir = scratch("seed");
  std::ofstream(dir / "c.json") << R"({"seed": 3})";
  CHECK(load_config(dir / "c.json", {}, nullptr)["seed"] == 3);
  CHECK(load_config(dir / "c.json", {"--seed=4"}, nullptr)["seed"] == 4);
  CHECK(load_config(dir / "c.json", {"--seed=4"}, "9")["seed"] == 9);
  CHECK_THROWS_AS(load_config(dir / "missing.json", {}, nullptr), IoError);
}

TEST_CASE("the config hash ignores file locations and logging") {
  TrainConfig a = TrainConfig::desk_preset();
  TrainConfig b = a;
  b.dataset = "elsewhere.jsonl";
  b.eval_dataset = "x";
  b.out = "out";
  b.log_every = 50;
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 64);
  b.seed = 1;
  CHECK(a.hash() != b.hash());
}

TEST_CASE("class or width mismatch with the dataset is rejected before training") {
  const Dataset data = tiny_dataset();
  TrainConfig c = tiny_config(data);
  c.classes = 5;
  CHECK_THROWS_AS(train(c, data), ValidationError);
  c = tiny_config(data);
  c.feature_dim = 4;
  CHECK_THROWS_AS(train(c, data), ValidationError);
}

TEST_CASE("training lowers the loss and logs every iteration") {
  const Dataset data = tiny_dataset();
  TrainConfig c = tiny_config(data);
  c.max_iterations = 60;
  std::vector<IterationLog> log;
  train(c, data, [&](const IterationLog& e) { log.push_back(e); });
  REQUIRE(log.size() == 60);
  CHECK(log.back().loss.total < log.front().loss.total);
  CHECK(log[0].phase == "E");
  CHECK(log[5].phase == "M");
  CHECK(log[10].phase == "joint");
  const json line = json::parse(log[0].to_json());
  for (const char* key : {"iteration", "phase", "lr", "loss_total", "loss_cls", "loss_refine", "loss_regression",
                          "loss_estimator", "loss_predictor"}) {
    CHECK(line.contains(key));
  }
}

TEST_CASE("preset \"paper\" switches to M at iteration 3000") {
  const Dataset data = tiny_dataset(2);
  TrainConfig c = TrainConfig::paper_preset();
  c.max_iterations = 3001;
  c.branches = 1;
  c.modules.discovery_count = 0;
  c.log_every = 1000;
  std::vector<IterationLog> log;
  train(c, data, [&](const IterationLog& e) { log.push_back(e); });
  REQUIRE(!log.empty());
  CHECK(log.front().iteration == 0);
  CHECK(log.front().phase == "E");
  const auto at = std::find_if(log.begin(), log.end(), [](const IterationLog& e) { return e.iteration == 3000; });
  REQUIRE(at != log.end());
  CHECK(at->phase == "M");
}

TEST_CASE("without selection the phase is reported as none") {
  const Dataset data = tiny_dataset();
  TrainConfig c = tiny_config(data);
  c.modules.use_selection = false;
  c.max_iterations = 2;
  std::vector<IterationLog> log;
  train(c, data, [&](const IterationLog& e) { log.push_back(e); });
  CHECK(log[0].phase == "none");
  CHECK(log[0].loss.estimator == 0.0);
}

TEST_CASE("training is deterministic and checkpoints round-trip") {
  const Dataset data = tiny_dataset();
  const TrainConfig c = tiny_config(data);
  const DsMilModel a = train(c, data), b = train(c, data);
  const std::string bytes = checkpoint_bytes(c, a);
  CHECK(bytes == checkpoint_bytes(c, b));
  CHECK(bytes.substr(0, 8) == "DSMILCK1");

  std::istringstream in(bytes);
  const Checkpoint ck = read_checkpoint(in);
  CHECK(ck.config_hash == c.hash());
  CHECK(ck.config.to_json() == c.to_json());
  CHECK(checkpoint_bytes(ck.config, ck.to_model()) == bytes);
  const auto da = a.detect(data.bags[0], 0.3), db = ck.to_model().detect(data.bags[0], 0.3);
  CHECK(da.per_class[0][0].score == db.per_class[0][0].score);

  TrainConfig other = c;
  other.seed = 1;
  CHECK(checkpoint_bytes(other, train(other, data)) != bytes);
}

TEST_CASE("corrupt checkpoints are rejected with the right error") {
  const Dataset data = tiny_dataset();
  const TrainConfig c = tiny_config(data);
  const std::string bytes = checkpoint_bytes(c, DsMilModel::init(c.model_config(data.header), 0));
  auto read = [](const std::string& b) {
    std::istringstream in(b);
    return read_checkpoint(in);
  };
  CHECK_THROWS_AS(read("NOTACKPT" + bytes.substr(8)), ParseError);
  CHECK_THROWS_AS(read(bytes.substr(0, bytes.size() - 3)), ParseError);
  CHECK_THROWS_AS(read(bytes + "x"), ParseError);
  std::string version = bytes;
  version[8] = 2;
  CHECK_THROWS_AS(read(version), CompatibilityError);
  std::string tampered = bytes;
  const std::size_t at = tampered.find("\"zeta\":0.5");
  REQUIRE(at != std::string::npos);
  tampered[at + 9] = '4';
  CHECK_THROWS_AS(read(tampered), CompatibilityError);
}

TEST_CASE("evaluation refuses a dataset of a different shape") {
  const Dataset data = tiny_dataset();
  const TrainConfig c = tiny_config(data);
  const DsMilModel m = DsMilModel::init(c.model_config(data.header), 0);
  SyntheticConfig wide;
  wide.num_images = 2;
  CHECK_THROWS_AS(evaluate_model(m, generate_dataset(wide), 0.3), CompatibilityError);
}

TEST_CASE("command round trip through files") {
  const fs::path dir = scratch("commands");
  GenerateConfig g = GenerateConfig::from_json(json{{"num_images", 20}, {"test_images", 10}, {"seed", 5}});
  std::ostringstream log;
  cmd_generate(g, dir / "data", log);
  CHECK(fs::exists(dir / "data" / "train.jsonl"));
  CHECK(fs::exists(dir / "data" / "test.jsonl"));
  CHECK_THROWS_AS(GenerateConfig::from_json(json{{"num_images", 0}}), ValidationError);
  CHECK_THROWS_AS(GenerateConfig::from_json(json{{"images", 5}}), ValidationError);

  TrainConfig t = TrainConfig::desk_preset();
  t.dataset = (dir / "data" / "train.jsonl").string();
  t.max_iterations = 0;
  t.out = (dir / "untrained").string();
  const TrainOutcome untrained = cmd_train(t, log);
  CHECK(untrained.log.empty());
  CHECK(fs::file_size(dir / "untrained" / "train_log.jsonl") == 0);
  CHECK(fs::exists(dir / "untrained" / "checkpoint.bin"));

  t.max_iterations = 150;
  t.sgd.learning_rate = 0.03;
  t.em = EmSchedule{20, 100};
  t.out = (dir / "trained").string();
  cmd_train(t, log);
  const Metrics before = cmd_eval(dir / "untrained" / "checkpoint.bin", dir / "data" / "test.jsonl", {}, log);
  const Metrics after =
      cmd_eval(dir / "trained" / "checkpoint.bin", dir / "data" / "test.jsonl", dir / "metrics", log);
  CHECK(before.map < after.map);
  const json metrics = json::parse(std::ifstream(dir / "metrics" / "metrics.json"));
  for (const char* key : {"map", "per_class_ap", "corloc", "per_class_corloc"}) CHECK(metrics.contains(key));

  std::ostringstream csv;
  const Dataset test = read_dataset(dir / "data" / "test.jsonl");
  cmd_dump_attention(dir / "trained" / "checkpoint.bin", dir / "data" / "test.jsonl", test.bags[0].image_id, csv);
  std::istringstream lines(csv.str());
  std::string line;
  std::getline(lines, line);
  CHECK(line.rfind("module,row,x1,y1,x2,y2,w_0", 0) == 0);
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    std::istringstream cells(line);
    std::string cell;
    double sum = 0.0;
    for (int i = 0; std::getline(cells, cell, ','); ++i) {
      if (i >= 6) sum += std::strtod(cell.c_str(), nullptr);
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
    ++rows;
  }
  CHECK(rows == 2 * test.bags[0].proposals());
  CHECK_THROWS_AS(cmd_dump_attention(dir / "trained" / "checkpoint.bin", dir / "data" / "test.jsonl", "nope", csv),
                  LookupError);
}

TEST_CASE("attention dump of a single-proposal image and of a model without discovery") {
  const fs::path dir = scratch("dump");
  Dataset one = tiny_dataset(1);
  ProposalBag& bag = one.bags[0];
  bag.boxes.resize(1);
  bag.features = Tensor(1, one.header.feature_dim, std::vector<double>(bag.features.values().begin(),
                                                                       bag.features.values().begin() + 8));
  bag.gt.clear();
  write_dataset(one, dir / "one.jsonl");
  TrainConfig c = tiny_config(one);
  c.modules.discovery_count = 1;
  write_checkpoint(c, DsMilModel::init(c.model_config(one.header), 0), dir / "d1.bin");
  std::ostringstream csv;
  cmd_dump_attention(dir / "d1.bin", dir / "one.jsonl", bag.image_id, csv);
  const std::string single = csv.str();
  CHECK(single.find(",1.0\n") != std::string::npos);
  CHECK(std::count(single.begin(), single.end(), '\n') == 2);

  c.modules.discovery_count = 0;
  write_checkpoint(c, DsMilModel::init(c.model_config(one.header), 0), dir / "d0.bin");
  std::ostringstream none;
  cmd_dump_attention(dir / "d0.bin", dir / "one.jsonl", bag.image_id, none);
  const std::string header = none.str();
  CHECK(header.rfind("# ", 0) == 0);
  CHECK(std::count(header.begin(), header.end(), '\n') == 1);
}

TEST_CASE("ablation variants, deduplication and single-variant equivalence") {
  CHECK(ablation_variants().size() == 10);
  const TrainConfig base = TrainConfig::desk_preset();
  CHECK(apply_variant(base, "K=3").hash() == apply_variant(base, "+S+2D+Reg").hash());
  CHECK(apply_variant(base, "baseline").modules.discovery_count == 0);
  CHECK(apply_variant(base, "+D").modules.discovery_count == 1);
  CHECK(apply_variant(base, "K=1").branches == 1);
  CHECK_THROWS_AS(apply_variant(base, "K=9"), ValidationError);
  CHECK_THROWS_AS(AblationConfig::from_json(json{{"variants", {"+S", "+S"}}}), ValidationError);
  CHECK_THROWS_AS(AblationConfig::from_json(json{{"variants", {"+X"}}}), ValidationError);
  CHECK(AblationConfig::from_json(json::object()).seeds == std::vector<std::uint64_t>{0, 1, 2, 3, 4});
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);

  const fs::path dir = scratch("ablate");
  write_dataset(tiny_dataset(), dir / "train.jsonl");
  json cfg = tiny_config(tiny_dataset()).to_json();
  cfg["dataset"] = (dir / "train.jsonl").string();
  cfg["out"] = (dir / "out").string();
  cfg["variants"] = {"+S+2D"};
  cfg["seeds"] = {3};
  std::ostringstream log;
  const AblationTable table = cmd_ablate(AblationConfig::from_json(cfg), log);
  REQUIRE(table.rows.size() == 1);
  const json written = json::parse(std::ifstream(dir / "out" / "ablation.json"));
  CHECK(written["variants"][0]["variant"] == "+S+2D");

  TrainConfig single = apply_variant(tiny_config(tiny_dataset()), "+S+2D");
  single.dataset = cfg["dataset"];
  single.seed = 3;
  const TrainOutcome run = cmd_train(single, log);
  const Metrics m = evaluate_model(run.model, read_dataset(dir / "train.jsonl"), single.nms_threshold);
  CHECK(table.rows[0].map[0] == m.map);
}
