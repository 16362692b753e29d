#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vrft/rng.hpp"

namespace vrft {

enum class Arch { softmax_bandit, seq_softmax, shared_backbone };

std::string_view to_string(Arch arch);

using Observation = std::vector<double>;

/// A toy autoregressive policy: at each position it emits one token from a finite
/// vocabulary through softmax(logits / temperature). Logits may depend on the
/// observation and on the tokens already emitted. Parameters are a flat vector.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual Arch arch() const = 0;
  virtual std::size_t num_positions() const = 0;
  virtual std::size_t vocab_size(std::size_t pos) const = 0;

  /// Raw (temperature 1) logits for position `pos` given the emitted `prefix`.
  virtual void logits(std::span<const double> obs, std::size_t pos, std::span<const int> prefix,
                      std::span<double> out) const = 0;

  /// grad += sum_v coeff[v] * d logits[v] / d theta.
  virtual void add_logit_grad(std::span<const double> obs, std::size_t pos, std::span<const int> prefix,
                              std::span<const double> coeff, std::span<double> grad) const = 0;

  virtual std::unique_ptr<Policy> clone() const = 0;

  /// Shape line written into checkpoints; loading checks it.
  virtual std::string shape() const = 0;

  std::span<double> params() { return theta_; }
  std::span<const double> params() const { return theta_; }
  std::size_t dim() const { return theta_.size(); }

 protected:
  explicit Policy(std::size_t dim) : theta_(dim, 0.0) {}
  Policy(const Policy&) = default;

  std::vector<double> theta_;
};

/// Contextual linear-softmax bandit: logits_a = w_a . x + b_a.
class SoftmaxBandit final : public Policy {
 public:
  SoftmaxBandit(std::size_t num_actions, std::size_t obs_dim);

  Arch arch() const override { return Arch::softmax_bandit; }
  std::size_t num_positions() const override { return 1; }
  std::size_t vocab_size(std::size_t) const override { return actions_; }
  void logits(std::span<const double> obs, std::size_t pos, std::span<const int> prefix,
              std::span<double> out) const override;
  void add_logit_grad(std::span<const double> obs, std::size_t pos, std::span<const int> prefix,
                      std::span<const double> coeff, std::span<double> grad) const override;
  std::unique_ptr<Policy> clone() const override { return std::make_unique<SoftmaxBandit>(*this); }
  std::string shape() const override;

  /// Mutable weights of action `a` (obs_dim weights followed by the bias).
  std::span<double> row(std::size_t a) { return params().subspan(a * (obs_dim_ + 1), obs_dim_ + 1); }

 private:
  std::size_t actions_;
  std::size_t obs_dim_;
};

/// Per-position linear softmax. Position t has its own weight block of shape
/// vocab_t x feature_dim_t applied to a feature vector phi_t(obs, prefix) supplied
/// by the environment.
class SeqSoftmax final : public Policy {
 public:
  struct Position {
    std::size_t vocab;
    std::size_t feature_dim;
  };
  using FeatureFn = std::function<void(std::span<const double> obs, std::size_t pos,
                                       std::span<const int> prefix, std::span<double> phi)>;

  SeqSoftmax(std::vector<Position> positions, FeatureFn features);

  Arch arch() const override { return Arch::seq_softmax; }
  std::size_t num_positions() const override { return positions_.size(); }
  std::size_t vocab_size(std::size_t pos) const override { return positions_[pos].vocab; }
  void logits(std::span<const double> obs, std::size_t pos, std::span<const int> prefix,
              std::span<double> out) const override;
  void add_logit_grad(std::span<const double> obs, std::size_t pos, std::span<const int> prefix,
                      std::span<const double> coeff, std::span<double> grad) const override;
  std::unique_ptr<Policy> clone() const override { return std::make_unique<SeqSoftmax>(*this); }
  std::string shape() const override;

  /// Weights of token `v` at position `pos`.
  std::span<double> weights(std::size_t pos, std::size_t v);

 private:
  std::vector<Position> positions_;
  std::vector<std::size_t> offsets_;
  FeatureFn features_;
};

/// Attention over R candidate regions shared by two heads. Observation layout:
/// R x C class evidence followed by R x F region descriptors. Attention logits are
/// a_r = q . d_r; the localize head emits a region, the classify head emits a class
/// with logits sum_r softmax(a)_r * evidence[r].
class SharedBackbone final : public Policy {
 public:
  enum class Head { localize, classify };

  SharedBackbone(std::size_t regions, std::size_t classes, std::size_t descriptor_dim,
                 Head head = Head::localize);

  Arch arch() const override { return Arch::shared_backbone; }
  std::size_t num_positions() const override { return 1; }
  std::size_t vocab_size(std::size_t) const override { return head_ == Head::localize ? regions_ : classes_; }
  void logits(std::span<const double> obs, std::size_t pos, std::span<const int> prefix,
              std::span<double> out) const override;
  void add_logit_grad(std::span<const double> obs, std::size_t pos, std::span<const int> prefix,
                      std::span<const double> coeff, std::span<double> grad) const override;
  std::unique_ptr<Policy> clone() const override { return std::make_unique<SharedBackbone>(*this); }
  std::string shape() const override;

  Head head() const { return head_; }
  void set_head(Head head) { head_ = head; }
  std::size_t regions() const { return regions_; }
  std::size_t classes() const { return classes_; }
  std::size_t descriptor_dim() const { return descriptor_dim_; }
  std::size_t observation_size() const { return regions_ * (classes_ + descriptor_dim_); }

  /// softmax over regions of q . d_r.
  std::vector<double> attention(std::span<const double> obs) const;

 private:
  std::size_t regions_;
  std::size_t classes_;
  std::size_t descriptor_dim_;
  Head head_;
};

/// Logits of either head regardless of the policy's active head.
/// Throws ConfigError unless the policy is a SharedBackbone.
std::vector<double> shared_backbone_forward(const Policy& policy, std::span<const double> obs,
                                            SharedBackbone::Head head);

/// One sampled sequence. Log-probs are per token at the sampling temperature.
struct Completion {
  std::vector<int> tokens;
  std::vector<double> logp_theta;
  std::vector<double> logp_ref;
  std::vector<double> logp_old;
  std::string rendered;
};

/// log softmax(logits / temperature), numerically stable.
std::vector<double> log_softmax(std::span<const double> logits, double temperature);

/// Draws a full sequence. Fills tokens and logp_theta (= logp_old); leaves logp_ref and
/// rendered to the caller.
Completion sample(const Policy& policy, std::span<const double> obs, double temperature, Rng& rng);

/// Argmax decoding.
std::vector<int> greedy(const Policy& policy, std::span<const double> obs);

/// Per-token log-probs of `tokens` at `temperature`. Throws std::out_of_range for a
/// token outside its position's vocabulary.
std::vector<double> token_log_probs(const Policy& policy, std::span<const double> obs,
                                    std::span<const int> tokens, double temperature);

/// Adds scale * d log p(tokens[pos] | prefix) / d theta into grad; returns that log-prob.
double add_token_log_prob_grad(const Policy& policy, std::span<const double> obs, std::size_t pos,
                               std::span<const int> tokens, double temperature, double scale,
                               std::span<double> grad);

struct LogProbGrad {
  double logp;
  std::vector<double> grad;
};

/// Exact sequence log-probability and its gradient with respect to the parameters.
LogProbGrad log_prob_and_grad(const Policy& policy, std::span<const double> obs, std::span<const int> tokens,
                              double temperature = 1.0);

/// Text checkpoint: '#'-prefixed header (format, arch, shape, size) then one value per line.
void save_checkpoint(const Policy& policy, std::ostream& out);
/// Loads values into a policy of matching arch and shape; throws ConfigError on mismatch.
void load_checkpoint(Policy& policy, std::istream& in);

}  // namespace vrft
