#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vrft/envs.hpp"
#include "vrft/policy.hpp"
#include "vrft/reward_engine.hpp"

namespace vrft {

enum class OptimizerKind { sgd, adam };

struct GrpoConfig {
  int group_size = 8;
  double beta = 0.04;
  double clip_eps = 0.2;
  double temperature = 0.9;
  /// Toy default; billion-parameter runs use 1e-6, which would freeze these policies.
  double learning_rate = 1e-2;
  double adv_std_floor = 1e-4;
  std::uint64_t seed = 0;
  int prompts_per_step = 8;
  OptimizerKind optimizer = OptimizerKind::adam;
  /// Run rollouts and per-group gradients on the OpenMP path; false selects the serial
  /// reference. Both give bit-identical results.
  bool parallel = true;

  void validate(const std::string& path = "grpo") const;
};

/// One prompt and its sampled group.
struct GroupBatch {
  std::string prompt_id;
  Observation obs;
  std::vector<Completion> completions;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

/// A_i = (r_i - mean) / (population std + floor). Computed on r_i - r_0, so a group of
/// equal rewards gives exact zeros and adding a constant that keeps every reward exactly
/// representable leaves the result bit-identical. Throws ConfigError for fewer than two
/// rewards and NumericalError for non-finite input.
std::vector<double> group_advantages(std::span<const double> rewards, double floor);

/// k3 estimator of KL(theta || ref) from one sampled token: rho - ln rho - 1 with
/// rho = exp(logp_ref - logp_theta).
double kl_estimate(double logp_theta, double logp_ref);

struct LossGrad {
  double loss = 0;
  std::vector<double> grad;
};

/// Clipped surrogate with KL penalty, averaged over the group:
///   loss = -(1/N) sum_i mean_t [ min(rho_t A_i, clip(rho_t, 1-eps, 1+eps) A_i) - beta k3_t ]
/// where rho_t = pi_theta / pi_old is recomputed from `policy` at cfg.temperature and the
/// gradient is exact with respect to the policy parameters.
LossGrad grpo_loss(const Policy& policy, const GroupBatch& batch, const GrpoConfig& cfg);
/// Mean of the per-group losses.
LossGrad grpo_loss(const Policy& policy, std::span<const GroupBatch> batches, const GrpoConfig& cfg);

/// Adam or SGD over a flat parameter vector.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, std::size_t dim);
  /// theta -= step(grad). Throws NumericalError if a parameter becomes non-finite.
  void step(std::span<double> theta, std::span<const double> grad);

 private:
  OptimizerKind kind_;
  double lr_;
  std::vector<double> m_;
  std::vector<double> v_;
  long t_ = 0;
};

struct RunRecord {
  int step = 0;
  double mean_total_reward = 0;
  double mean_format_reward = 0;
  double accuracy = 0;
  double mean_bleu_vs_prompt = 0;
  double mean_kl = 0;
  double wall_ms = 0;
};

struct StepDiagnostics {
  int step = 0;
  double loss = 0;
  /// Mean over groups of the group-mean advantage.
  double mean_advantage = 0;
  int degenerate_groups = 0;
};

struct TrainOptions {
  /// Accuracy after each update; defaults to greedy accuracy on the test split.
  std::function<double(const Policy&)> evaluator;
  std::function<void(const StepDiagnostics&)> on_step;
  /// Called with each record as soon as it is complete.
  std::function<void(const RunRecord&)> on_record;
  /// Emit a step-0 record that rolls out and evaluates the initial policy without updating.
  bool record_initial = false;
};

/// Reward audit of one rollout plus the BLEU of its think text against the prompt.
struct RolloutScore {
  RewardBreakdown reward;
  double bleu_vs_prompt = 0;
};

/// Rolls out and scores one training step's groups without updating. Scores are laid
/// out group-major. Exposed for the serial/parallel equivalence tests and the benchmark.
std::vector<GroupBatch> collect_groups(const Environment& env, const Policy& policy, const Policy& reference,
                                       const RewardSpec& spec, const GrpoConfig& cfg, int step,
                                       std::vector<RolloutScore>* scores = nullptr);

/// GRPO loop: per step, draw prompts_per_step training prompts, sample group_size
/// completions each at cfg.temperature, render and score them, normalize advantages
/// within each group and take one optimizer step on grpo_loss. The KL reference is the
/// policy as passed in. Deterministic for a given cfg.seed; records do not depend on
/// cfg.parallel apart from wall_ms.
std::vector<RunRecord> train(const Environment& env, Policy& policy, const RewardSpec& spec,
                             const GrpoConfig& cfg, int steps, const TrainOptions& options = {});

/// Throws ConfigError if env, policy and spec disagree on mode or architecture.
void check_setup(const Environment& env, const Policy& policy, const RewardSpec& spec);

}  // namespace vrft
