#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "vrft/errors.hpp"
#include "vrft/prompt_builder.hpp"
#include "vrft/reward_json.hpp"
#include "vrft/runner.hpp"
#include "vrft/service.hpp"
#include "vrft/version.hpp"

namespace {

// --spec accepts a preset name or a path to a JSON spec file.
vrft::RewardSpec spec_argument(const std::string& arg) {
  if (std::filesystem::exists(arg)) {
    std::ifstream in(arg);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw vrft::ConfigError("spec", std::string("not valid JSON: ") + e.what());
    }
    return vrft::resolve_spec(j, vrft::builtin_presets(), "spec");
  }
  return vrft::resolve_spec(nlohmann::json(arg), vrft::builtin_presets(), "spec");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reward functions, GRPO and toy experiments for visual reinforcement fine-tuning"};
  app.set_version_flag("--version", std::string("vrft ") + vrft::kVersion);
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run an experiment recipe from a JSON config");
  run->add_option("--config", config_path, "Run config")->required();

  std::string input, spec_arg, output;
  auto* score = app.add_subcommand("score", "Score a JSONL file of rollouts");
  score->add_option("--input", input, "Input JSONL")->required();
  score->add_option("--spec", spec_arg, "Preset name or spec JSON file")->required();
  score->add_option("--output", output, "Output JSONL")->required();

  bool dump = false;
  std::string knowledge_path, kind = "classification", modality = "medical", target = "lesion";
  std::vector<std::string> classes;
  auto* prompts = app.add_subcommand("prompts", "Render prompt templates");
  prompts->add_flag("--dump", dump, "Print the rendered prompt");
  prompts->add_option("--knowledge", knowledge_path, "Knowledge JSON file {class: attributes}");
  prompts->add_option("--kind", kind, "classification or detection")
      ->check(CLI::IsMember({"classification", "detection"}));
  prompts->add_option("--modality", modality, "Imaging modality");
  prompts->add_option("--target", target, "Target object");
  prompts->add_option("--classes", classes, "Class names")->delimiter(',');

  int port = 8080;
  std::string host = "127.0.0.1", presets_path;
  auto* serve = app.add_subcommand("serve", "Serve the scoring API");
  serve->add_option("--port", port, "Port")->check(CLI::Range(1, 65535));
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--presets", presets_path, "Extra presets JSON {name: spec}");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return vrft::run_file(config_path, std::cerr);

    if (*score) {
      const auto spec = spec_argument(spec_arg);
      const auto result = vrft::score_file(input, spec, output);
      std::cerr << "scored " << result.scored << ", failed " << result.failed << "\n";
      return result.failed ? vrft::kExitFailure : vrft::kExitOk;
    }

    if (*prompts) {
      vrft::PromptTemplate tmpl;
      tmpl.kind = kind == "detection" ? vrft::PromptTemplate::Kind::detection : vrft::PromptTemplate::Kind::classification;
      tmpl.modality = modality;
      tmpl.target = target;
      tmpl.classes = classes;
      std::optional<vrft::KnowledgeBase> kb;
      if (!knowledge_path.empty()) kb = vrft::load_knowledge(knowledge_path);
      const auto text = vrft::build_prompt(tmpl, kb);
      if (dump) std::cout << text << "\n";
      return vrft::kExitOk;
    }

    if (*serve) {
      const auto presets = presets_path.empty() ? vrft::builtin_presets() : vrft::load_presets(presets_path);
      std::cerr << "listening on " << host << ":" << port << "\n";
      if (!vrft::serve(host, port, presets)) {
        std::cerr << "cannot bind " << host << ":" << port << "\n";
        return vrft::kExitFailure;
      }
      return vrft::kExitOk;
    }
  } catch (const vrft::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return vrft::kExitConfig;
  }
  return vrft::kExitOk;
}
