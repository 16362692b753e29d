#include "vrft/policy.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "vrft/errors.hpp"
#include "vrft/reward_json.hpp"

namespace vrft {

std::string_view to_string(Arch arch) {
  switch (arch) {
    case Arch::softmax_bandit: return "softmax_bandit";
    case Arch::seq_softmax: return "seq_softmax";
    case Arch::shared_backbone: return "shared_backbone";
  }
  return "softmax_bandit";
}

// --- SoftmaxBandit ----------------------------------------------------------

SoftmaxBandit::SoftmaxBandit(std::size_t num_actions, std::size_t obs_dim)
    : Policy(num_actions * (obs_dim + 1)), actions_(num_actions), obs_dim_(obs_dim) {
  if (num_actions == 0) throw ConfigError("policy.actions", "must be >= 1");
}

void SoftmaxBandit::logits(std::span<const double> obs, std::size_t, std::span<const int>,
                           std::span<double> out) const {
  const std::size_t stride = obs_dim_ + 1;
  for (std::size_t a = 0; a < actions_; ++a) {
    const double* w = theta_.data() + a * stride;
    double z = w[obs_dim_];
    for (std::size_t i = 0; i < obs_dim_; ++i) z += w[i] * obs[i];
    out[a] = z;
  }
}

void SoftmaxBandit::add_logit_grad(std::span<const double> obs, std::size_t, std::span<const int>,
                                   std::span<const double> coeff, std::span<double> grad) const {
  const std::size_t stride = obs_dim_ + 1;
  for (std::size_t a = 0; a < actions_; ++a) {
    const double c = coeff[a];
    if (c == 0.0) continue;
    double* g = grad.data() + a * stride;
    for (std::size_t i = 0; i < obs_dim_; ++i) g[i] += c * obs[i];
    g[obs_dim_] += c;
  }
}

std::string SoftmaxBandit::shape() const {
  return "actions=" + std::to_string(actions_) + " obs_dim=" + std::to_string(obs_dim_);
}

// --- SeqSoftmax -------------------------------------------------------------

namespace {

std::size_t total_params(const std::vector<SeqSoftmax::Position>& positions) {
  std::size_t n = 0;
  for (const auto& p : positions) n += p.vocab * p.feature_dim;
  return n;
}

}  // namespace

SeqSoftmax::SeqSoftmax(std::vector<Position> positions, FeatureFn features)
    : Policy(total_params(positions)), positions_(std::move(positions)), features_(std::move(features)) {
  if (positions_.empty()) throw ConfigError("policy.positions", "need at least one position");
  std::size_t off = 0;
  for (const auto& p : positions_) {
    if (p.vocab == 0 || p.feature_dim == 0) throw ConfigError("policy.positions", "empty vocabulary or features");
    offsets_.push_back(off);
    off += p.vocab * p.feature_dim;
  }
}

void SeqSoftmax::logits(std::span<const double> obs, std::size_t pos, std::span<const int> prefix,
                        std::span<double> out) const {
  const Position& p = positions_[pos];
  std::vector<double> phi(p.feature_dim);
  features_(obs, pos, prefix, phi);
  const double* w = theta_.data() + offsets_[pos];
  for (std::size_t v = 0; v < p.vocab; ++v) {
    out[v] = std::inner_product(phi.begin(), phi.end(), w + v * p.feature_dim, 0.0);
  }
}

void SeqSoftmax::add_logit_grad(std::span<const double> obs, std::size_t pos, std::span<const int> prefix,
                                std::span<const double> coeff, std::span<double> grad) const {
  const Position& p = positions_[pos];
  std::vector<double> phi(p.feature_dim);
  features_(obs, pos, prefix, phi);
  double* g = grad.data() + offsets_[pos];
  for (std::size_t v = 0; v < p.vocab; ++v) {
    const double c = coeff[v];
    if (c == 0.0) continue;
    for (std::size_t i = 0; i < p.feature_dim; ++i) g[v * p.feature_dim + i] += c * phi[i];
  }
}

std::span<double> SeqSoftmax::weights(std::size_t pos, std::size_t v) {
  const Position& p = positions_.at(pos);
  return params().subspan(offsets_[pos] + v * p.feature_dim, p.feature_dim);
}

std::string SeqSoftmax::shape() const {
  std::string s = "positions=";
  for (std::size_t i = 0; i < positions_.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(positions_[i].vocab) + 'x' + std::to_string(positions_[i].feature_dim);
  }
  return s;
}

// --- SharedBackbone ---------------------------------------------------------

SharedBackbone::SharedBackbone(std::size_t regions, std::size_t classes, std::size_t descriptor_dim, Head head)
    : Policy(descriptor_dim), regions_(regions), classes_(classes), descriptor_dim_(descriptor_dim), head_(head) {
  if (regions == 0 || classes == 0 || descriptor_dim == 0) {
    throw ConfigError("policy", "shared_backbone needs regions, classes and descriptor_dim >= 1");
  }
}

std::vector<double> SharedBackbone::attention(std::span<const double> obs) const {
  const double* desc = obs.data() + regions_ * classes_;
  std::vector<double> a(regions_);
  for (std::size_t r = 0; r < regions_; ++r) {
    a[r] = std::inner_product(theta_.begin(), theta_.end(), desc + r * descriptor_dim_, 0.0);
  }
  auto logw = log_softmax(a, 1.0);
  for (auto& v : logw) v = std::exp(v);
  return logw;
}

void SharedBackbone::logits(std::span<const double> obs, std::size_t, std::span<const int>,
                            std::span<double> out) const {
  const double* desc = obs.data() + regions_ * classes_;
  if (head_ == Head::localize) {
    for (std::size_t r = 0; r < regions_; ++r) {
      out[r] = std::inner_product(theta_.begin(), theta_.end(), desc + r * descriptor_dim_, 0.0);
    }
    return;
  }
  const auto w = attention(obs);
  std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(classes_), 0.0);
  for (std::size_t r = 0; r < regions_; ++r) {
    for (std::size_t c = 0; c < classes_; ++c) out[c] += w[r] * obs[r * classes_ + c];
  }
}

void SharedBackbone::add_logit_grad(std::span<const double> obs, std::size_t, std::span<const int>,
                                    std::span<const double> coeff, std::span<double> grad) const {
  const double* desc = obs.data() + regions_ * classes_;
  if (head_ == Head::localize) {
    for (std::size_t r = 0; r < regions_; ++r) {
      if (coeff[r] == 0.0) continue;
      for (std::size_t i = 0; i < descriptor_dim_; ++i) grad[i] += coeff[r] * desc[r * descriptor_dim_ + i];
    }
    return;
  }
  // logit_c = sum_r w_r E_rc with w = softmax(a). d w_r / d q = w_r (d_r - dbar).
  // sum_c coeff_c d logit_c = sum_r w_r u_r (d_r - dbar), u_r = sum_c coeff_c E_rc.
  const auto w = attention(obs);
  std::vector<double> dbar(descriptor_dim_, 0.0);
  for (std::size_t r = 0; r < regions_; ++r) {
    for (std::size_t i = 0; i < descriptor_dim_; ++i) dbar[i] += w[r] * desc[r * descriptor_dim_ + i];
  }
  for (std::size_t r = 0; r < regions_; ++r) {
    double u = 0.0;
    for (std::size_t c = 0; c < classes_; ++c) u += coeff[c] * obs[r * classes_ + c];
    const double s = w[r] * u;
    if (s == 0.0) continue;
    for (std::size_t i = 0; i < descriptor_dim_; ++i) grad[i] += s * (desc[r * descriptor_dim_ + i] - dbar[i]);
  }
}

std::string SharedBackbone::shape() const {
  return "regions=" + std::to_string(regions_) + " classes=" + std::to_string(classes_) +
         " descriptor_dim=" + std::to_string(descriptor_dim_);
}

std::vector<double> shared_backbone_forward(const Policy& policy, std::span<const double> obs,
                                            SharedBackbone::Head head) {
  const auto* sb = dynamic_cast<const SharedBackbone*>(&policy);
  if (sb == nullptr) {
    throw ConfigError("policy.arch", "shared_backbone_forward needs a shared_backbone policy, got " +
                                         std::string(to_string(policy.arch())));
  }
  SharedBackbone view = *sb;
  view.set_head(head);
  std::vector<double> out(view.vocab_size(0));
  view.logits(obs, 0, {}, out);
  return out;
}

// --- sampling and differentiation -------------------------------------------

std::vector<double> log_softmax(std::span<const double> logits, double temperature) {
  std::vector<double> out(logits.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (double z : logits) mx = std::max(mx, z / temperature);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = logits[i] / temperature - mx;
    sum += std::exp(out[i]);
  }
  const double lse = std::log(sum);
  for (double& v : out) v -= lse;
  return out;
}

namespace {

std::vector<double> position_log_probs(const Policy& policy, std::span<const double> obs, std::size_t pos,
                                       std::span<const int> prefix, double temperature) {
  std::vector<double> z(policy.vocab_size(pos));
  policy.logits(obs, pos, prefix, z);
  return log_softmax(z, temperature);
}

void check_token(const Policy& policy, std::size_t pos, int token) {
  if (token < 0 || static_cast<std::size_t>(token) >= policy.vocab_size(pos)) {
    throw std::out_of_range("token " + std::to_string(token) + " outside vocabulary of position " +
                            std::to_string(pos));
  }
}

}  // namespace

Completion sample(const Policy& policy, std::span<const double> obs, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw ConfigError("temperature", "must be > 0");
  Completion c;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t pos = 0; pos < policy.num_positions(); ++pos) {
    const auto lp = position_log_probs(policy, obs, pos, c.tokens, temperature);
    double u = unif(rng);
    int chosen = static_cast<int>(lp.size()) - 1;
    for (std::size_t v = 0; v < lp.size(); ++v) {
      u -= std::exp(lp[v]);
      if (u < 0.0) {
        chosen = static_cast<int>(v);
        break;
      }
    }
    // Guard the rounding tail: never pick a zero-probability token.
    while (chosen > 0 && std::exp(lp[static_cast<std::size_t>(chosen)]) == 0.0) --chosen;
    c.tokens.push_back(chosen);
    c.logp_theta.push_back(lp[static_cast<std::size_t>(chosen)]);
  }
  c.logp_old = c.logp_theta;
  return c;
}

std::vector<int> greedy(const Policy& policy, std::span<const double> obs) {
  std::vector<int> tokens;
  for (std::size_t pos = 0; pos < policy.num_positions(); ++pos) {
    std::vector<double> z(policy.vocab_size(pos));
    policy.logits(obs, pos, tokens, z);
    tokens.push_back(static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin()));
  }
  return tokens;
}

std::vector<double> token_log_probs(const Policy& policy, std::span<const double> obs,
                                    std::span<const int> tokens, double temperature) {
  if (tokens.size() != policy.num_positions()) {
    throw std::out_of_range("sequence length " + std::to_string(tokens.size()) + " != " +
                            std::to_string(policy.num_positions()));
  }
  std::vector<double> out;
  for (std::size_t pos = 0; pos < tokens.size(); ++pos) {
    check_token(policy, pos, tokens[pos]);
    const auto lp = position_log_probs(policy, obs, pos, tokens.first(pos), temperature);
    out.push_back(lp[static_cast<std::size_t>(tokens[pos])]);
  }
  return out;
}

double add_token_log_prob_grad(const Policy& policy, std::span<const double> obs, std::size_t pos,
                               std::span<const int> tokens, double temperature, double scale,
                               std::span<double> grad) {
  check_token(policy, pos, tokens[pos]);
  const auto prefix = tokens.first(pos);
  const auto lp = position_log_probs(policy, obs, pos, prefix, temperature);
  const auto a = static_cast<std::size_t>(tokens[pos]);
  if (scale != 0.0) {
    // d log p_a / d logit_v = (1[v = a] - p_v) / T
    std::vector<double> coeff(lp.size());
    for (std::size_t v = 0; v < lp.size(); ++v) coeff[v] = -std::exp(lp[v]) * scale / temperature;
    coeff[a] += scale / temperature;
    policy.add_logit_grad(obs, pos, prefix, coeff, grad);
  }
  return lp[a];
}

LogProbGrad log_prob_and_grad(const Policy& policy, std::span<const double> obs, std::span<const int> tokens,
                              double temperature) {
  if (tokens.size() != policy.num_positions()) {
    throw std::out_of_range("sequence length " + std::to_string(tokens.size()) + " != " +
                            std::to_string(policy.num_positions()));
  }
  LogProbGrad out{0.0, std::vector<double>(policy.dim(), 0.0)};
  for (std::size_t pos = 0; pos < tokens.size(); ++pos) {
    out.logp += add_token_log_prob_grad(policy, obs, pos, tokens, temperature, 1.0, out.grad);
  }
  return out;
}

// --- checkpoints ------------------------------------------------------------

void save_checkpoint(const Policy& policy, std::ostream& out) {
  out << "# vrft-policy v1\n";
  out << "# arch " << to_string(policy.arch()) << '\n';
  out << "# shape " << policy.shape() << '\n';
  out << "# size " << policy.dim() << '\n';
  for (double v : policy.params()) out << format_double(v) << '\n';
}

void load_checkpoint(Policy& policy, std::istream& in) {
  std::string line;
  std::string arch;
  std::string shape;
  std::size_t size = 0;
  bool have_size = false;
  std::vector<double> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string key;
      hs >> key;
      std::string rest;
      std::getline(hs >> std::ws, rest);
      if (key == "arch") arch = rest;
      if (key == "shape") shape = rest;
      if (key == "size") {
        size = std::stoul(rest);
        have_size = true;
      }
      continue;
    }
    try {
      std::size_t used = 0;
      const double v = std::stod(line, &used);
      if (!std::isfinite(v)) throw NumericalError("non-finite checkpoint value");
      values.push_back(v);
    } catch (const std::logic_error&) {
      throw ConfigError("checkpoint", "unparseable value line '" + line + "'");
    }
  }
  if (arch != to_string(policy.arch())) throw ConfigError("checkpoint.arch", "expected " + std::string(to_string(policy.arch())) + ", got '" + arch + "'");
  if (shape != policy.shape()) throw ConfigError("checkpoint.shape", "expected '" + policy.shape() + "', got '" + shape + "'");
  if (!have_size || size != policy.dim() || values.size() != policy.dim()) {
    throw ConfigError("checkpoint.size", "expected " + std::to_string(policy.dim()) + " values");
  }
  std::copy(values.begin(), values.end(), policy.params().begin());
}

}  // namespace vrft
