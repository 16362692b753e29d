#include "vrft/batch_scoring.hpp"

#include <exception>

#include "vrft/errors.hpp"
#include "vrft/reward_json.hpp"

namespace vrft {

namespace {

std::string get_string(const nlohmann::json& j, const char* key, const std::string& path) {
  if (!j.contains(key)) throw ConfigError(path + "." + key, "missing");
  if (!j[key].is_string()) throw ConfigError(path + "." + key, "expected a string");
  return j[key].get<std::string>();
}

}  // namespace

ScoreItem score_item_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  for (const auto& [key, value] : j.items()) {
    if (key != "id" && key != "prompt" && key != "completion" && key != "ground_truth" && key != "task") {
      throw ConfigError(path + "." + key, "unknown field");
    }
  }
  ScoreItem item;
  item.id = get_string(j, "id", path);
  item.prompt = j.contains("prompt") ? get_string(j, "prompt", path) : "";
  item.completion = get_string(j, "completion", path);
  const auto task = get_string(j, "task", path);
  try {
    item.task = task_mode_from_string(task);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ".task", e.what());
  }
  if (!j.contains("ground_truth")) throw ConfigError(path + ".ground_truth", "missing");
  item.truth = ground_truth_from_json(j["ground_truth"], path + ".ground_truth");
  return item;
}

RewardBreakdown score_item(const ScoreItem& item, const RewardSpec& spec) {
  check_compatible(item.task, item.truth, spec);
  return score(parse_completion(item.completion, item.task), item.truth, item.prompt, spec);
}

std::vector<RewardBreakdown> score_batch(std::span<const ScoreItem> items, const RewardSpec& spec, bool parallel) {
  spec.validate();
  for (const auto& item : items) check_compatible(item.task, item.truth, spec);
  std::vector<RewardBreakdown> out(items.size());
  std::vector<std::exception_ptr> errors(items.size());
  const auto n = static_cast<std::ptrdiff_t>(items.size());
#pragma omp parallel for schedule(dynamic, 16) if (parallel)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      out[static_cast<std::size_t>(i)] = score_item(items[static_cast<std::size_t>(i)], spec);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::string breakdown_json_text(const RewardBreakdown& b) {
  return "{\"format\":" + format_double(b.format) + ",\"task\":" + format_double(b.task) +
         ",\"recite\":" + format_double(b.recite) + ",\"total\":" + format_double(b.total) + "}";
}

}  // namespace vrft
