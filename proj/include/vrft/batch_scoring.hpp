#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vrft/reward_engine.hpp"

namespace vrft {

/// One rollout to score: {id, prompt, completion, ground_truth, task}.
struct ScoreItem {
  std::string id;
  std::string prompt;
  std::string completion;
  GroundTruth truth;
  TaskMode task = TaskMode::classification;
};

/// Throws ConfigError with the field path on schema violations.
ScoreItem score_item_from_json(const nlohmann::json& j, const std::string& path = "item");

/// Scores one item. Throws ConfigError when its task or ground truth do not fit the spec.
RewardBreakdown score_item(const ScoreItem& item, const RewardSpec& spec);

/// Scores every item in order. `parallel` selects the OpenMP kernel; both paths give
/// identical results. Throws the first item's ConfigError, if any.
std::vector<RewardBreakdown> score_batch(std::span<const ScoreItem> items, const RewardSpec& spec,
                                         bool parallel = true);

/// {"format":..,"task":..,"recite":..,"total":..} with 17 significant digits.
std::string breakdown_json_text(const RewardBreakdown& b);

}  // namespace vrft
