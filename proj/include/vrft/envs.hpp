#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vrft/policy.hpp"
#include "vrft/reward_engine.hpp"

namespace vrft {

struct Sample {
  std::string id;
  Observation obs;
  GroundTruth truth;
  /// Index of the correct token at the answer position (grade, class or region).
  int target = 0;
  /// Class index; differs from `target` only for localization samples.
  int cls = 0;
};

struct Dataset {
  TaskMode mode = TaskMode::classification;
  std::vector<Sample> samples;
};

/// One JSON object per line: {"id", "task", "observation", "ground_truth", "target", "class"}.
void export_jsonl(const Dataset& data, std::ostream& out);
/// Throws ConfigError naming the line and field on malformed input.
Dataset import_jsonl(std::istream& in);
/// FNV-1a over the JSONL export, as 16 hex digits.
std::string dataset_hash(const Dataset& data);

/// A task with a fixed train/test split and a matching initial policy.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual TaskMode mode() const = 0;
  virtual Arch arch() const = 0;
  /// Fresh initial policy; also serves as the KL reference.
  virtual std::unique_ptr<Policy> make_policy() const = 0;
  virtual std::string render(const Sample& s, std::span<const int> tokens) const = 0;
  /// Reference text for the recitation reward.
  virtual const std::string& prompt(const Sample& s) const = 0;
  virtual bool correct(const Sample& s, std::span<const int> tokens) const = 0;
  /// Ground-truth token sequence for supervised training, when the task has one.
  virtual std::optional<std::vector<int>> supervised_tokens(const Sample&) const { return std::nullopt; }

  const Dataset& train_set() const { return train_; }
  const Dataset& test_set() const { return test_; }

 protected:
  Dataset train_;
  Dataset test_;
};

/// Greedy-decoding accuracy over the test split. `parallel` selects the OpenMP kernel.
double greedy_accuracy(const Environment& env, const Policy& policy, bool parallel = true);

// --- few-shot protocol -------------------------------------------------------

struct FewShotSampler {
  int shots_per_class = 256;  // 10, 20 or 256
  std::uint64_t seed = 0;

  void validate(const std::string& path = "sampler") const;
};

/// Splits `samples` (grouped by Sample::cls in [0, num_classes)) into a test set of
/// `test_per_class` per class that depends only on the sampler seed, and a train set of
/// min(shots, remaining) per class taken as a prefix of a seeded permutation, so smaller
/// shot counts are subsets of larger ones. Throws ConfigError for an empty class.
std::pair<std::vector<Sample>, std::vector<Sample>> few_shot_split(const std::vector<Sample>& samples,
                                                                   int num_classes, const FewShotSampler& sampler,
                                                                   int test_per_class);

// --- ordinal grading --------------------------------------------------------

struct OrdinalEnvConfig {
  int num_grades = 5;
  double noise_sigma = 0.8;
  int feature_dim = 4;
  double grade_spacing = 1.0;
  int samples_per_grade = 400;
  /// Integer answers the policy can emit (0..answer_range-1); grades are 0..num_grades-1.
  int answer_range = 20;
  int shots_per_class = 256;
  int test_per_class = 100;
  /// Grade g keeps samples_per_grade * imbalance_ratio^(-g/(G-1)) samples; 1 disables.
  double imbalance_ratio = 1.0;

  void validate(const std::string& path = "env") const;
};

/// Observations are grade * spacing along a fixed unit direction plus isotropic noise,
/// so feature distance tracks grade distance. Policy: softmax bandit over answer_range
/// integers rendered as `\boxed{k}`.
class OrdinalEnv final : public Environment {
 public:
  OrdinalEnv(OrdinalEnvConfig cfg, std::uint64_t seed);

  TaskMode mode() const override { return TaskMode::grading; }
  Arch arch() const override { return Arch::softmax_bandit; }
  std::unique_ptr<Policy> make_policy() const override;
  std::string render(const Sample& s, std::span<const int> tokens) const override;
  const std::string& prompt(const Sample&) const override { return prompt_; }
  bool correct(const Sample& s, std::span<const int> tokens) const override;
  std::optional<std::vector<int>> supervised_tokens(const Sample& s) const override;

  const OrdinalEnvConfig& config() const { return cfg_; }
  /// Grade centroid in feature space.
  std::vector<double> embed(int grade) const;

 private:
  OrdinalEnvConfig cfg_;
  std::string prompt_;
};

/// Draws one observation for `grade`. Throws ConfigError when grade is outside [0, G).
Observation ordinal_observe(const OrdinalEnvConfig& cfg, int grade, Rng& rng);

/// Monte-Carlo accuracy of the nearest-centroid (Bayes-optimal) classifier.
double ordinal_bayes_accuracy(const OrdinalEnvConfig& cfg, int samples, std::uint64_t seed, bool parallel = true);

enum class RewardKind { exact, mfrs };

/// Probability that a group of `group_size` completions from a uniform policy over the
/// answer range all receive the same total reward (zero advantage everywhere), averaged
/// over grades. Computed exactly from the per-grade reward distribution.
double sparse_reward_probe(const OrdinalEnvConfig& cfg, RewardKind kind, int group_size = 8);

// --- recitation -------------------------------------------------------------

struct RecitationEnvConfig {
  /// Injected knowledge; tokens recited in order by the pretrained-like initial policy.
  std::string knowledge_text =
      "melanoma: irregular asymmetric borders with dark uneven pigment; nevus: round symmetric brown lesion";
  /// Think-slot vocabulary: the distinct knowledge tokens plus observation tokens.
  int vocab_size = 0;  // 0: distinct knowledge tokens + 1
  int answer_classes = 4;
  int think_len = 0;  // 0: number of knowledge tokens
  double signal = 1.0;
  double noise_sigma = 2.0;
  /// Initial logit bonus for reciting the aligned knowledge token at each slot.
  double recite_bias = 5.0;
  /// When true the answer head also reads the attribute channel (knowledge in prompt).
  bool prompt_knowledge = false;
  int samples_per_class = 300;
  int test_per_class = 100;
  int shots_per_class = 256;

  void validate(const std::string& path = "env") const;
};

/// Think slots either recite a knowledge token or emit an observation token; each
/// observation token at slot t exposes evidence channel t to the answer head, which
/// always sees one direct-view channel. Reciting raises BLEU against the knowledge text
/// but leaves the answer with less evidence. Observations hold think_len + 2 channels of
/// K values: the slot channels, the direct view, then the attribute channel.
class RecitationEnv final : public Environment {
 public:
  RecitationEnv(RecitationEnvConfig cfg, std::uint64_t seed);

  TaskMode mode() const override { return TaskMode::classification; }
  Arch arch() const override { return Arch::seq_softmax; }
  std::unique_ptr<Policy> make_policy() const override;
  std::string render(const Sample& s, std::span<const int> tokens) const override;
  const std::string& prompt(const Sample&) const override { return cfg_.knowledge_text; }
  bool correct(const Sample& s, std::span<const int> tokens) const override;

  const RecitationEnvConfig& config() const { return cfg_; }
  const std::vector<std::string>& vocabulary() const { return vocab_; }
  /// Number of distinct knowledge tokens; vocabulary ids at or above it are observation tokens.
  int knowledge_vocab() const { return knowledge_vocab_; }
  int think_len() const { return think_len_; }
  /// Vocabulary id of the knowledge token aligned with slot t.
  int recite_token(int slot) const { return recite_ids_[static_cast<std::size_t>(slot)]; }
  std::string class_name(int k) const;

 private:
  RecitationEnvConfig cfg_;
  std::vector<std::string> vocab_;
  std::vector<int> recite_ids_;
  int knowledge_vocab_ = 0;
  int think_len_ = 0;
};

// --- localization -----------------------------------------------------------

struct DetectionEnvConfig {
  int grid = 3;  // grid x grid candidate regions
  double cell = 32.0;
  /// Fractional overlap of adjacent candidate boxes along each axis.
  double distractor_overlap = 0.25;
  int classes = 4;
  int descriptor_dim = 16;
  double descriptor_signal = 2.0;
  double descriptor_noise = 1.0;
  double evidence_signal = 1.0;
  double evidence_noise = 0.7;
  int train_size = 64;  // M localization samples
  int test_size = 2000;

  void validate(const std::string& path = "env") const;
};

/// Contexts with one informative region among grid x grid candidates. The informative
/// region's descriptor carries a fixed signature and its evidence row carries the class
/// signal; every other row is noise. Localization answers are candidate boxes rendered
/// as JSON in `<answer>`. Train samples are a prefix-stable function of the seed, so a
/// smaller train_size is a subset of a larger one.
class DetectionEnv final : public Environment {
 public:
  DetectionEnv(DetectionEnvConfig cfg, std::uint64_t seed);

  TaskMode mode() const override { return TaskMode::detection; }
  Arch arch() const override { return Arch::shared_backbone; }
  std::unique_ptr<Policy> make_policy() const override;
  std::string render(const Sample& s, std::span<const int> tokens) const override;
  const std::string& prompt(const Sample&) const override { return prompt_; }
  bool correct(const Sample& s, std::span<const int> tokens) const override;
  std::optional<std::vector<int>> supervised_tokens(const Sample& s) const override;

  const DetectionEnvConfig& config() const { return cfg_; }
  int regions() const { return cfg_.grid * cfg_.grid; }
  BBox candidate_box(int region) const;

 private:
  DetectionEnvConfig cfg_;
  std::string prompt_;
};

/// Zero-shot classification accuracy of the classify head on the test split.
double zero_shot_accuracy(const DetectionEnv& env, const Policy& policy);

}  // namespace vrft
