#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vrft/bleu.hpp"
#include "vrft/structured_output.hpp"

namespace vrft {

enum class ReciteTarget { think_only, full_output };

/// Reward configuration. Classification/detection totals mix task and format rewards
/// with `lambda`; grading totals use `alpha`/`gamma`. A non-zero `delta` adds the
/// BLEU-based recitation term on top in every mode.
struct RewardSpec {
  TaskMode mode = TaskMode::classification;
  double lambda = 0.9;
  double alpha = 0.9;
  double gamma = 0.1;
  double delta = 0.0;
  double iou_threshold = 0.5;
  /// Grading partial credit indexed by |pred - truth|; distances past the end score 0.
  /// A single {1.0} entry is plain exact match.
  std::vector<double> mfrs_weights{1.0, 0.25, 0.0625};
  ReciteTarget recite_target = ReciteTarget::think_only;
  bool clamp_recite = false;
  BleuConfig bleu;

  /// Throws ConfigError naming the first invalid field (prefixed with `path`).
  void validate(const std::string& path = "spec") const;
};

struct GroundTruth {
  std::optional<std::string> label;
  std::optional<long long> grade;
  std::optional<BBox> bbox;
};

struct RewardBreakdown {
  double format = 0;
  double task = 0;
  double recite = 0;
  double total = 0;

  bool operator==(const RewardBreakdown&) const = default;
};

/// Case-insensitive exact match after trimming; 0 when no label was extracted.
double accuracy_reward(const ParsedOutput& p, const GroundTruth& gt);

/// Intersection over union of two boxes; 0 for an empty union.
double iou(const BBox& a, const BBox& b);

/// 1 iff a box was extracted and its IoU with the truth is strictly above the threshold.
double detection_reward(const ParsedOutput& p, const GroundTruth& gt, const RewardSpec& spec);

/// Multi-grade fuzzy reward: spec.mfrs_weights[|pred - truth|], or 0 past the table.
double mfrs_reward(long long pred_grade, long long gt_grade, const RewardSpec& spec);

/// delta * BLEU(target, prompt) where the target is the think text or the whole completion.
double recitation_reward(const ParsedOutput& p, std::string_view prompt, const RewardSpec& spec);

/// Full reward for one completion. Throws ConfigError when the spec is invalid, the
/// completion was parsed under a different mode, or the ground truth lacks the field the
/// mode needs.
RewardBreakdown score(const ParsedOutput& p, const GroundTruth& gt, std::string_view prompt,
                      const RewardSpec& spec);

/// Checks that `gt` and `mode` are compatible with `spec`; throws ConfigError otherwise.
void check_compatible(TaskMode mode, const GroundTruth& gt, const RewardSpec& spec);

}  // namespace vrft
