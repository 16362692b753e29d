#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "vrft/envs.hpp"
#include "vrft/grpo.hpp"
#include "vrft/reward_engine.hpp"

namespace vrft {

enum class Experiment { pa_prompt, pa_policy, recite_pos, recite_neg, mfrs_vs_exact, sft_baseline };

std::string_view to_string(Experiment e);
Experiment experiment_from_string(const std::string& s);

inline constexpr const char* kCsvSchema = "1.0";
inline constexpr const char* kCsvHeader = "step,mean_total_reward,mean_format_reward,accuracy,mean_bleu_vs_prompt,mean_kl";

struct RunConfig {
  Experiment experiment = Experiment::mfrs_vs_exact;
  /// Only the config matching the experiment's environment is used.
  OrdinalEnvConfig ordinal;
  RecitationEnvConfig recitation;
  DetectionEnvConfig detection;
  RewardSpec reward;
  GrpoConfig grpo;
  int steps = 100;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::string output_dir = "runs";
  /// pa_policy: localization train-set sizes M, one arm each.
  std::vector<int> sweep{2, 8, 32, 128};

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

/// Parses and validates a run config. Missing fields take experiment defaults; unknown
/// fields throw. `reward` is a preset name or an inline spec.
RunConfig run_config_from_json(const nlohmann::json& j,
                               const std::map<std::string, RewardSpec>& presets);
RunConfig load_run_config(const std::string& path, const std::map<std::string, RewardSpec>& presets);
nlohmann::json to_json(const RunConfig& cfg);

/// Parses VRFT_SEED-style lists ("3" or "1,2,5"). Throws ConfigError on junk.
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

/// One arm of a recipe: its name and the reward spec it trains on.
struct ArmResult {
  std::string arm;
  std::uint64_t seed = 0;
  std::string dataset_hash;
  /// Step 0 (initial policy) through cfg.steps.
  std::vector<RunRecord> records;
};

/// Arm names of the recipe in output order. Single-arm recipes return one name and
/// write directly into output_dir.
std::vector<std::string> arm_names(const RunConfig& cfg);

/// Runs every arm of the recipe for one seed. `on_record(arm, record)` sees each row as
/// soon as it exists. Throws NumericalError on divergence.
std::vector<ArmResult> run_seed(const RunConfig& cfg, std::uint64_t seed,
                                const std::function<void(const std::string&, const RunRecord&)>& on_record = {});

/// Supervised cross-entropy on the ground-truth tokens of the training split (full
/// batch, temperature 1, cfg.optimizer and cfg.learning_rate). Records use the GRPO
/// schema: rewards and BLEU come from greedy outputs on the training split, KL is the
/// k3 estimate on the ground-truth tokens. Throws ConfigError when the environment has
/// no supervised labels.
std::vector<RunRecord> sft_baseline(const Environment& env, Policy& policy, const RewardSpec& spec,
                                    const GrpoConfig& cfg, int steps, const TrainOptions& options = {});

/// Mean of the last max(1, ceil(0.1 * n)) rows after step 0 (the init row when steps = 0).
RunRecord final_window(const std::vector<RunRecord>& records);

/// First step at which the trailing 5-step mean reward covers 90% of the rise from the
/// step-0 reward to the plateau (final_window reward); 0 when there is no rise.
int steps_to_plateau(const std::vector<RunRecord>& records, double fraction = 0.9);

std::string records_csv(const std::vector<RunRecord>& records);
/// Inverse of records_csv (wall_ms stays 0). Throws ConfigError on a schema mismatch.
std::vector<RunRecord> parse_records_csv(const std::string& text);

/// Summary derived solely from the records (plus dataset hashes).
nlohmann::json summarize(const RunConfig& cfg, const std::vector<ArmResult>& results);

/// Exit codes of `vrft run`.
enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitNumerical = 3 };

/// Executes the recipe for all seeds and writes records_<seed>.csv, timing_<seed>.csv,
/// config.resolved.json and summary.json. Diagnostics go to `log`.
int run(const RunConfig& cfg, std::ostream& log);
/// Loads the config (VRFT_SEED overrides the seed list) and runs it.
int run_file(const std::string& config_path, std::ostream& log);

struct ScoreFileResult {
  std::size_t scored = 0;
  std::size_t failed = 0;
};

/// Scores a JSONL file of {id, prompt, completion, ground_truth, task} records. Each
/// output line is the input record plus a "reward" object, or {"line", "error"} for a
/// line that could not be scored. Output order equals input order.
ScoreFileResult score_stream(std::istream& in, const RewardSpec& spec, std::ostream& out, bool parallel = true);
ScoreFileResult score_file(const std::string& input, const RewardSpec& spec, const std::string& output);

}  // namespace vrft
