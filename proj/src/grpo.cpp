#include "vrft/grpo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>

#include "vrft/bleu.hpp"
#include "vrft/errors.hpp"
#include "vrft/structured_output.hpp"

namespace vrft {

void GrpoConfig::validate(const std::string& path) const {
  if (group_size < 2) throw ConfigError(path + ".group_size", "must be >= 2");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError(path + ".beta", "must be >= 0");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ConfigError(path + ".clip_eps", "must lie in (0, 1)");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError(path + ".temperature", "must be > 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError(path + ".learning_rate", "must be > 0");
  }
  if (!(adv_std_floor >= 0.0) || !std::isfinite(adv_std_floor)) {
    throw ConfigError(path + ".adv_std_floor", "must be >= 0");
  }
  if (prompts_per_step < 1) throw ConfigError(path + ".prompts_per_step", "must be >= 1");
}

std::vector<double> group_advantages(std::span<const double> rewards, double floor) {
  if (rewards.size() < 2) throw ConfigError("rewards", "a group needs at least two rewards");
  for (double r : rewards) {
    if (!std::isfinite(r)) throw NumericalError("non-finite reward in group");
  }
  const auto n = static_cast<double>(rewards.size());
  // Centre on the first reward before averaging: equal rewards then cancel exactly.
  std::vector<double> d(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) d[i] = rewards[i] - rewards[0];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double var = 0.0;
  for (double x : d) var += (x - mean) * (x - mean);
  const double denom = std::sqrt(var / n) + floor;
  std::vector<double> adv(rewards.size(), 0.0);
  if (denom == 0.0) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (d[i] - mean) / denom;
  return adv;
}

double kl_estimate(double logp_theta, double logp_ref) {
  const double log_ratio = logp_ref - logp_theta;
  // expm1 keeps precision near rho = 1: rho - ln rho - 1 = expm1(x) - x.
  return std::expm1(log_ratio) - log_ratio;
}

LossGrad grpo_loss(const Policy& policy, const GroupBatch& batch, const GrpoConfig& cfg) {
  const std::size_t n = batch.completions.size();
  if (n == 0) throw ConfigError("batch", "empty group");
  if (batch.advantages.size() != n) throw ConfigError("batch.advantages", "size differs from completions");
  LossGrad out{0.0, std::vector<double>(policy.dim(), 0.0)};
  const double lo = 1.0 - cfg.clip_eps;
  const double hi = 1.0 + cfg.clip_eps;
  for (std::size_t i = 0; i < n; ++i) {
    const Completion& c = batch.completions[i];
    const double adv = batch.advantages[i];
    const std::size_t steps = c.tokens.size();
    if (steps == 0) continue;
    if (c.logp_old.size() != steps || c.logp_ref.size() != steps) {
      throw ConfigError("batch.completions", "log-prob lists must match token count");
    }
    const double weight = 1.0 / (static_cast<double>(n) * static_cast<double>(steps));
    for (std::size_t t = 0; t < steps; ++t) {
      if (!std::isfinite(c.logp_old[t]) || !std::isfinite(c.logp_ref[t])) {
        throw NumericalError("non-finite log-prob in batch");
      }
      // First pass for the value; the gradient coefficient depends on it.
      const double logp = add_token_log_prob_grad(policy, batch.obs, t, c.tokens, cfg.temperature, 0.0, out.grad);
      if (!std::isfinite(logp)) throw NumericalError("non-finite policy log-prob");
      const double ratio = std::exp(logp - c.logp_old[t]);
      const double unclipped = ratio * adv;
      const double clipped = std::clamp(ratio, lo, hi) * adv;
      const double surrogate = std::min(unclipped, clipped);
      const double kl = kl_estimate(logp, c.logp_ref[t]);
      out.loss -= weight * (surrogate - cfg.beta * kl);

      // d/dlogp of the surrogate: rho*A on the unclipped branch, 0 once clipping binds.
      const bool inside = ratio >= lo && ratio <= hi;
      const double d_surrogate = (inside || unclipped < clipped) ? unclipped : 0.0;
      // d k3 / dlogp = 1 - exp(logp_ref - logp)
      const double d_kl = -std::expm1(c.logp_ref[t] - logp);
      const double coeff = -weight * (d_surrogate - cfg.beta * d_kl);
      if (coeff != 0.0) {
        add_token_log_prob_grad(policy, batch.obs, t, c.tokens, cfg.temperature, coeff, out.grad);
      }
    }
  }
  return out;
}

LossGrad grpo_loss(const Policy& policy, std::span<const GroupBatch> batches, const GrpoConfig& cfg) {
  if (batches.empty()) throw ConfigError("batch", "no groups");
  LossGrad total{0.0, std::vector<double>(policy.dim(), 0.0)};
  for (const auto& b : batches) {
    const auto lg = grpo_loss(policy, b, cfg);
    total.loss += lg.loss;
    for (std::size_t k = 0; k < total.grad.size(); ++k) total.grad[k] += lg.grad[k];
  }
  const double inv = 1.0 / static_cast<double>(batches.size());
  total.loss *= inv;
  for (double& g : total.grad) g *= inv;
  return total;
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, std::size_t dim)
    : kind_(kind), lr_(learning_rate), m_(dim, 0.0), v_(dim, 0.0) {}

void Optimizer::step(std::span<double> theta, std::span<const double> grad) {
  constexpr double b1 = 0.9;
  constexpr double b2 = 0.999;
  constexpr double eps = 1e-8;
  ++t_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < theta.size(); ++k) {
    if (kind_ == OptimizerKind::sgd) {
      theta[k] -= lr_ * grad[k];
    } else {
      m_[k] = b1 * m_[k] + (1.0 - b1) * grad[k];
      v_[k] = b2 * v_[k] + (1.0 - b2) * grad[k] * grad[k];
      theta[k] -= lr_ * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + eps);
    }
    if (!std::isfinite(theta[k])) throw NumericalError("parameter became non-finite during update");
  }
}

void check_setup(const Environment& env, const Policy& policy, const RewardSpec& spec) {
  spec.validate();
  if (env.mode() != spec.mode) {
    throw ConfigError("reward.mode", "environment task is " + std::string(to_string(env.mode())) +
                                         " but the reward spec is " + std::string(to_string(spec.mode)));
  }
  if (env.arch() != policy.arch()) {
    throw ConfigError("policy.arch", "environment needs " + std::string(to_string(env.arch())) + ", got " +
                                         std::string(to_string(policy.arch())));
  }
  const auto fresh = env.make_policy();
  if (fresh->shape() != policy.shape()) {
    throw ConfigError("policy.shape", "expected '" + fresh->shape() + "', got '" + policy.shape() + "'");
  }
}

namespace {

// Runs body(i) for i in [0, n), in parallel when asked; the first exception is rethrown.
template <class Body>
void for_each_index(std::ptrdiff_t n, bool parallel, Body&& body) {
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct GroupStats {
  double total = 0, format = 0, bleu = 0, kl = 0;
  long tokens = 0;
};

}  // namespace

std::vector<GroupBatch> collect_groups(const Environment& env, const Policy& policy, const Policy& reference,
                                       const RewardSpec& spec, const GrpoConfig& cfg, int step,
                                       std::vector<RolloutScore>* scores_out) {
  const auto& train = env.train_set().samples;
  if (train.empty()) throw ConfigError("env", "empty training split");
  const auto prompts = static_cast<std::size_t>(cfg.prompts_per_step);
  const auto n = static_cast<std::size_t>(cfg.group_size);

  Rng pick = make_rng(cfg.seed, {0x9a7c4u, static_cast<std::uint64_t>(step)});
  std::vector<std::size_t> chosen(prompts);
  for (auto& idx : chosen) idx = static_cast<std::size_t>(pick() % train.size());

  std::vector<GroupBatch> groups(prompts);
  std::vector<RolloutScore> scores(prompts * n);
  for_each_index(static_cast<std::ptrdiff_t>(prompts), cfg.parallel, [&](std::ptrdiff_t pi) {
    const auto p = static_cast<std::size_t>(pi);
    const Sample& s = train[chosen[p]];
    Rng rng = make_rng(cfg.seed, {static_cast<std::uint64_t>(step), p});
    GroupBatch& g = groups[p];
    g.prompt_id = s.id;
    g.obs = s.obs;
    for (std::size_t i = 0; i < n; ++i) {
      Completion c = sample(policy, s.obs, cfg.temperature, rng);
      c.logp_ref = token_log_probs(reference, s.obs, c.tokens, cfg.temperature);
      c.rendered = env.render(s, c.tokens);
      const auto parsed = parse_completion(c.rendered, env.mode());
      const auto b = score(parsed, s.truth, env.prompt(s), spec);
      scores[p * n + i] = {b, bleu(parsed.think_text, env.prompt(s), spec.bleu)};
      g.rewards.push_back(b.total);
      g.completions.push_back(std::move(c));
    }
    g.advantages = group_advantages(g.rewards, cfg.adv_std_floor);
  });
  if (scores_out) *scores_out = std::move(scores);
  return groups;
}

std::vector<RunRecord> train(const Environment& env, Policy& policy, const RewardSpec& spec,
                             const GrpoConfig& cfg, int steps, const TrainOptions& options) {
  cfg.validate();
  check_setup(env, policy, spec);
  if (steps < 0) throw ConfigError("steps", "must be >= 0");

  const auto reference = policy.clone();
  Optimizer opt(cfg.optimizer, cfg.learning_rate, policy.dim());
  std::vector<RunRecord> records;
  const auto n = static_cast<std::size_t>(cfg.group_size);
  for (int step = options.record_initial ? 0 : 1; step <= steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<RolloutScore> scores;
    const auto groups = collect_groups(env, policy, *reference, spec, cfg, step, &scores);
    const bool update = step > 0;

    // Per-group statistics and gradients, reduced afterwards in prompt order so the
    // result does not depend on scheduling.
    std::vector<LossGrad> parts(groups.size());
    std::vector<GroupStats> stats(groups.size());
    for_each_index(static_cast<std::ptrdiff_t>(groups.size()), cfg.parallel, [&](std::ptrdiff_t gi) {
      const auto p = static_cast<std::size_t>(gi);
      const GroupBatch& g = groups[p];
      if (update) parts[p] = grpo_loss(policy, g, cfg);
      GroupStats& st = stats[p];
      for (std::size_t i = 0; i < n; ++i) {
        const RolloutScore& sc = scores[p * n + i];
        const Completion& c = g.completions[i];
        st.total += sc.reward.total;
        st.format += sc.reward.format;
        st.bleu += sc.bleu_vs_prompt;
        for (std::size_t t = 0; t < c.tokens.size(); ++t) st.kl += kl_estimate(c.logp_theta[t], c.logp_ref[t]);
        st.tokens += static_cast<long>(c.tokens.size());
      }
    });

    GroupStats sum;
    StepDiagnostics diag;
    diag.step = step;
    for (std::size_t p = 0; p < groups.size(); ++p) {
      sum.total += stats[p].total;
      sum.format += stats[p].format;
      sum.bleu += stats[p].bleu;
      sum.kl += stats[p].kl;
      sum.tokens += stats[p].tokens;
      const auto& adv = groups[p].advantages;
      diag.mean_advantage += std::accumulate(adv.begin(), adv.end(), 0.0) / static_cast<double>(adv.size());
      const auto& r = groups[p].rewards;
      if (std::all_of(r.begin(), r.end(), [&](double v) { return v == r.front(); })) ++diag.degenerate_groups;
    }
    const double inv_groups = 1.0 / static_cast<double>(groups.size());
    diag.mean_advantage *= inv_groups;

    if (update) {
      LossGrad total{0.0, std::vector<double>(policy.dim(), 0.0)};
      for (std::size_t p = 0; p < groups.size(); ++p) {
        total.loss += parts[p].loss;
        for (std::size_t k = 0; k < total.grad.size(); ++k) total.grad[k] += parts[p].grad[k];
      }
      total.loss *= inv_groups;
      for (double& g : total.grad) g *= inv_groups;
      diag.loss = total.loss;
      opt.step(policy.params(), total.grad);
    }

    const double completions = static_cast<double>(groups.size() * n);
    RunRecord rec;
    rec.step = step;
    rec.mean_total_reward = sum.total / completions;
    rec.mean_format_reward = sum.format / completions;
    rec.mean_bleu_vs_prompt = sum.bleu / completions;
    rec.mean_kl = sum.tokens > 0 ? sum.kl / static_cast<double>(sum.tokens) : 0.0;
    rec.accuracy = options.evaluator ? options.evaluator(policy) : greedy_accuracy(env, policy, cfg.parallel);
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (options.on_step && update) options.on_step(diag);
    if (options.on_record) options.on_record(rec);
    records.push_back(rec);
  }
  return records;
}

}  // namespace vrft
