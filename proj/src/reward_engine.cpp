#include "vrft/reward_engine.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>

#include "vrft/errors.hpp"

namespace vrft {

namespace {

constexpr double kReciteEps = 1e-9;

std::string normalize_label(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

void RewardSpec::validate(const std::string& path) const {
  auto finite = [&](double v, const char* field) {
    if (!std::isfinite(v)) throw ConfigError(path + "." + field, "must be finite");
  };
  finite(lambda, "lambda");
  finite(alpha, "alpha");
  finite(gamma, "gamma");
  finite(delta, "delta");
  finite(iou_threshold, "iou_threshold");
  if (!(lambda > 0.0 && lambda < 1.0)) throw ConfigError(path + ".lambda", "must lie in (0, 1)");
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
    throw ConfigError(path + ".iou_threshold", "must lie in (0, 1)");
  }
  if (mode == TaskMode::grading && std::abs(alpha + gamma - 1.0) > 1e-12) {
    throw ConfigError(path + ".alpha", "alpha + gamma must equal 1 in grading mode");
  }
  if (mfrs_weights.empty() || mfrs_weights.front() != 1.0) {
    throw ConfigError(path + ".mfrs_weights", "first entry must be 1.0");
  }
  for (std::size_t i = 1; i < mfrs_weights.size(); ++i) {
    if (!std::isfinite(mfrs_weights[i]) || !(mfrs_weights[i] < mfrs_weights[i - 1])) {
      throw ConfigError(path + ".mfrs_weights[" + std::to_string(i) + "]", "weights must strictly decrease");
    }
  }
  bleu.validate(path + ".bleu");
}

double accuracy_reward(const ParsedOutput& p, const GroundTruth& gt) {
  if (!p.label || !gt.label) return 0.0;
  return normalize_label(*p.label) == normalize_label(*gt.label) ? 1.0 : 0.0;
}

double iou(const BBox& a_in, const BBox& b_in) {
  const BBox a = a_in.normalized();
  const BBox b = b_in.normalized();
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (!(uni > 0.0)) return 0.0;
  return inter / uni;
}

double detection_reward(const ParsedOutput& p, const GroundTruth& gt, const RewardSpec& spec) {
  if (!p.bbox || !gt.bbox) return 0.0;
  return iou(*p.bbox, *gt.bbox) > spec.iou_threshold ? 1.0 : 0.0;
}

double mfrs_reward(long long pred_grade, long long gt_grade, const RewardSpec& spec) {
  const long long diff = pred_grade > gt_grade ? pred_grade - gt_grade : gt_grade - pred_grade;
  if (diff < 0 || static_cast<unsigned long long>(diff) >= spec.mfrs_weights.size()) return 0.0;
  return spec.mfrs_weights[static_cast<std::size_t>(diff)];
}

double recitation_reward(const ParsedOutput& p, std::string_view prompt, const RewardSpec& spec) {
  if (spec.delta == 0.0) return 0.0;
  const std::string& target = spec.recite_target == ReciteTarget::think_only ? p.think_text : p.raw;
  double r = spec.delta * bleu(target, prompt, spec.bleu);
  if (spec.clamp_recite) r = std::clamp(r, -1.0 + kReciteEps, 1.0 - kReciteEps);
  return r;
}

void check_compatible(TaskMode mode, const GroundTruth& gt, const RewardSpec& spec) {
  if (mode != spec.mode) {
    throw ConfigError("spec.mode", "spec mode '" + std::string(to_string(spec.mode)) +
                                       "' does not match task '" + std::string(to_string(mode)) + "'");
  }
  switch (spec.mode) {
    case TaskMode::classification:
      if (!gt.label) throw ConfigError("ground_truth.label", "required for classification");
      break;
    case TaskMode::detection:
      if (!gt.bbox) throw ConfigError("ground_truth.bbox", "required for detection");
      break;
    case TaskMode::grading:
      if (!gt.grade) throw ConfigError("ground_truth.grade", "required for grading");
      if (*gt.grade < 0) throw ConfigError("ground_truth.grade", "must be >= 0");
      break;
  }
}

RewardBreakdown score(const ParsedOutput& p, const GroundTruth& gt, std::string_view prompt,
                      const RewardSpec& spec) {
  spec.validate();
  check_compatible(p.mode, gt, spec);

  RewardBreakdown out;
  out.format = format_reward(p);
  out.recite = recitation_reward(p, prompt, spec);
  switch (spec.mode) {
    case TaskMode::classification:
      out.task = accuracy_reward(p, gt);
      break;
    case TaskMode::detection:
      out.task = detection_reward(p, gt, spec);
      break;
    case TaskMode::grading: {
      const auto pred = p.label ? parse_integer(*p.label) : std::nullopt;
      out.task = (pred && *pred >= 0) ? mfrs_reward(*pred, *gt.grade, spec) : 0.0;
      break;
    }
  }
  if (spec.mode == TaskMode::grading) {
    out.total = spec.alpha * out.task + spec.gamma * out.format + out.recite;
  } else {
    out.total = spec.lambda * out.task + (1.0 - spec.lambda) * out.format + out.recite;
  }
  return out;
}

}  // namespace vrft
