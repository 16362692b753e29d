#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "vrft/reward_engine.hpp"

namespace vrft {

/// Parses a RewardSpec from a JSON object. Missing fields keep their defaults; unknown
/// fields and type errors throw ConfigError with the field path (prefixed by `path`).
RewardSpec reward_spec_from_json(const nlohmann::json& j, const std::string& path = "spec");
nlohmann::json to_json(const RewardSpec& spec);

GroundTruth ground_truth_from_json(const nlohmann::json& j, const std::string& path = "ground_truth");
nlohmann::json to_json(const GroundTruth& gt);

/// Named specs served by `/healthz` and accepted wherever a spec is expected.
const std::map<std::string, RewardSpec>& builtin_presets();

/// A preset name (JSON string) or an inline spec object.
RewardSpec resolve_spec(const nlohmann::json& j, const std::map<std::string, RewardSpec>& presets,
                        const std::string& path = "spec");

/// Loads extra presets from a JSON object {name: spec}; merged over the builtins.
std::map<std::string, RewardSpec> load_presets(const std::string& file);

/// 17 significant digits ("%.17g"), enough to round-trip every double.
std::string format_double(double v);

}  // namespace vrft
