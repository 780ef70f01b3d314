#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dsmil/app.hpp"
#include "dsmil/error.hpp"

namespace {

std::vector<std::string> overrides_of(const CLI::App* sub) { return sub->remaining(); }

int fail(const std::string& code, const std::string& message) {
  std::string line = message;
  for (char& ch : line) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  std::cerr << code << ": " << line << '\n';
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dsmil: weakly supervised detection over proposal features"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, dataset, image_id;

  auto* generate = app.add_subcommand("generate", "write a synthetic train/test dataset pair");
  generate->add_option("--config", config_path, "generator config (JSON)");
  generate->add_option("--out", out_dir, "output directory")->required();
  generate->allow_extras();

  auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
  train->add_option("--config", config_path, "training config (JSON)");
  train->add_option("--out", out_dir, "output directory");
  train->allow_extras();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--dataset", dataset)->required();
  eval->add_option("--out", out_dir, "output directory for metrics.json");

  auto* ablate = app.add_subcommand("ablate", "train and evaluate the ablation variants");
  ablate->add_option("--config", config_path, "ablation config (JSON)");
  ablate->add_option("--out", out_dir, "output directory");
  ablate->allow_extras();

  auto* dump = app.add_subcommand("dump-attention", "print discovery attention weights as CSV");
  dump->add_option("--checkpoint", checkpoint)->required();
  dump->add_option("--dataset", dataset)->required();
  dump->add_option("--image-id", image_id)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("E_USAGE", e.what());
  }

  try {
    const char* seed_env = std::getenv("DSMIL_SEED");
    if (generate->parsed()) {
      auto cfg = dsmil::load_config(config_path, overrides_of(generate), seed_env);
      dsmil::cmd_generate(dsmil::GenerateConfig::from_json(cfg), out_dir, std::cout);
    } else if (train->parsed()) {
      auto cfg = dsmil::load_config(config_path, overrides_of(train), seed_env);
      if (!out_dir.empty()) cfg["out"] = out_dir;
      dsmil::cmd_train(dsmil::TrainConfig::from_json(cfg), std::cout);
    } else if (eval->parsed()) {
      dsmil::cmd_eval(checkpoint, dataset, out_dir, std::cout);
    } else if (ablate->parsed()) {
      auto cfg = dsmil::load_config(config_path, overrides_of(ablate), seed_env);
      if (!out_dir.empty()) cfg["out"] = out_dir;
      dsmil::cmd_ablate(dsmil::AblationConfig::from_json(cfg), std::cout);
    } else if (dump->parsed()) {
      dsmil::cmd_dump_attention(checkpoint, dataset, image_id, std::cout);
    }
  } catch (const dsmil::Error& e) {
    return fail(e.code(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail("E_PARSE", e.what());
  } catch (const std::exception& e) {
    return fail("E_INTERNAL", e.what());
  }
  return 0;
}
