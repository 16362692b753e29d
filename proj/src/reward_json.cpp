#include "vrft/reward_json.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "vrft/errors.hpp"

namespace vrft {

namespace {

using nlohmann::json;

double get_number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(path, "must be finite");
  return v;
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& path) {
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError(path + "." + key, "unknown field");
  }
}

}  // namespace

RewardSpec reward_spec_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  reject_unknown(j,
                 {"mode", "lambda", "alpha", "gamma", "delta", "iou_threshold", "mfrs_weights",
                  "recite_target", "clamp_recite", "bleu"},
                 path);
  RewardSpec spec;
  if (j.contains("mode")) {
    if (!j["mode"].is_string()) throw ConfigError(path + ".mode", "expected a string");
    try {
      spec.mode = task_mode_from_string(j["mode"].get<std::string>());
    } catch (const ConfigError& e) {
      throw ConfigError(path + ".mode", e.what());
    }
  }
  if (j.contains("lambda")) spec.lambda = get_number(j["lambda"], path + ".lambda");
  if (j.contains("alpha")) spec.alpha = get_number(j["alpha"], path + ".alpha");
  if (j.contains("gamma")) spec.gamma = get_number(j["gamma"], path + ".gamma");
  if (j.contains("delta")) spec.delta = get_number(j["delta"], path + ".delta");
  if (j.contains("iou_threshold")) spec.iou_threshold = get_number(j["iou_threshold"], path + ".iou_threshold");
  if (j.contains("mfrs_weights")) {
    const auto& w = j["mfrs_weights"];
    if (!w.is_array()) throw ConfigError(path + ".mfrs_weights", "expected an array");
    spec.mfrs_weights.clear();
    for (std::size_t i = 0; i < w.size(); ++i) {
      spec.mfrs_weights.push_back(get_number(w[i], path + ".mfrs_weights[" + std::to_string(i) + "]"));
    }
  }
  if (j.contains("recite_target")) {
    const auto& t = j["recite_target"];
    if (t == "think_only") {
      spec.recite_target = ReciteTarget::think_only;
    } else if (t == "full_output") {
      spec.recite_target = ReciteTarget::full_output;
    } else {
      throw ConfigError(path + ".recite_target", "expected \"think_only\" or \"full_output\"");
    }
  }
  if (j.contains("clamp_recite")) {
    if (!j["clamp_recite"].is_boolean()) throw ConfigError(path + ".clamp_recite", "expected a boolean");
    spec.clamp_recite = j["clamp_recite"].get<bool>();
  }
  if (j.contains("bleu")) {
    const auto& b = j["bleu"];
    if (!b.is_object()) throw ConfigError(path + ".bleu", "expected an object");
    reject_unknown(b, {"max_n", "tokenizer", "smoothing"}, path + ".bleu");
    if (b.contains("max_n")) {
      if (!b["max_n"].is_number_integer()) throw ConfigError(path + ".bleu.max_n", "expected an integer");
      spec.bleu.max_n = b["max_n"].get<int>();
    }
    if (b.contains("tokenizer") && b["tokenizer"] != "whitespace_lower") {
      throw ConfigError(path + ".bleu.tokenizer", "only \"whitespace_lower\" is supported");
    }
    if (b.contains("smoothing") && b["smoothing"] != "none") {
      throw ConfigError(path + ".bleu.smoothing", "only \"none\" is supported");
    }
  }
  spec.validate(path);
  return spec;
}

json to_json(const RewardSpec& spec) {
  return {{"mode", std::string(to_string(spec.mode))},
          {"lambda", spec.lambda},
          {"alpha", spec.alpha},
          {"gamma", spec.gamma},
          {"delta", spec.delta},
          {"iou_threshold", spec.iou_threshold},
          {"mfrs_weights", spec.mfrs_weights},
          {"recite_target", spec.recite_target == ReciteTarget::think_only ? "think_only" : "full_output"},
          {"clamp_recite", spec.clamp_recite},
          {"bleu", {{"max_n", spec.bleu.max_n}, {"tokenizer", "whitespace_lower"}, {"smoothing", "none"}}}};
}

GroundTruth ground_truth_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  reject_unknown(j, {"label", "grade", "bbox"}, path);
  GroundTruth gt;
  if (j.contains("label")) {
    if (!j["label"].is_string()) throw ConfigError(path + ".label", "expected a string");
    gt.label = j["label"].get<std::string>();
  }
  if (j.contains("grade")) {
    if (!j["grade"].is_number_integer()) throw ConfigError(path + ".grade", "expected an integer");
    gt.grade = j["grade"].get<long long>();
    if (*gt.grade < 0) throw ConfigError(path + ".grade", "must be >= 0");
  }
  if (j.contains("bbox")) {
    const auto& b = j["bbox"];
    if (!b.is_array() || b.size() != 4) throw ConfigError(path + ".bbox", "expected [x1, y1, x2, y2]");
    double v[4];
    for (std::size_t i = 0; i < 4; ++i) v[i] = get_number(b[i], path + ".bbox[" + std::to_string(i) + "]");
    gt.bbox = BBox{v[0], v[1], v[2], v[3]}.normalized();
  }
  return gt;
}

json to_json(const GroundTruth& gt) {
  json j = json::object();
  if (gt.label) j["label"] = *gt.label;
  if (gt.grade) j["grade"] = *gt.grade;
  if (gt.bbox) j["bbox"] = {gt.bbox->x1, gt.bbox->y1, gt.bbox->x2, gt.bbox->y2};
  return j;
}

const std::map<std::string, RewardSpec>& builtin_presets() {
  static const std::map<std::string, RewardSpec> presets = [] {
    std::map<std::string, RewardSpec> m;
    RewardSpec paper;
    m["paper_default"] = paper;

    RewardSpec det;
    det.mode = TaskMode::detection;
    m["detection_default"] = det;

    RewardSpec mfrs;
    mfrs.mode = TaskMode::grading;
    m["mfrs_default"] = mfrs;

    RewardSpec exact = mfrs;
    exact.mfrs_weights = {1.0};
    m["grading_exact"] = exact;

    RewardSpec pos;
    pos.delta = 0.2;
    m["recite_pos"] = pos;

    RewardSpec neg;
    neg.delta = -2.0;
    m["recite_neg"] = neg;
    return m;
  }();
  return presets;
}

RewardSpec resolve_spec(const json& j, const std::map<std::string, RewardSpec>& presets,
                        const std::string& path) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    auto it = presets.find(name);
    if (it == presets.end()) throw ConfigError(path, "unknown preset '" + name + "'");
    return it->second;
  }
  return reward_spec_from_json(j, path);
}

std::map<std::string, RewardSpec> load_presets(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("presets", "cannot open '" + file + "'");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ConfigError("presets", "expected a JSON object of specs");
  auto presets = builtin_presets();
  for (const auto& [name, value] : j.items()) presets[name] = reward_spec_from_json(value, "presets." + name);
  return presets;
}

std::string format_double(double v) {
  if (!std::isfinite(v)) return "null";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace vrft
