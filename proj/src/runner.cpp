#include "vrft/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "vrft/batch_scoring.hpp"
#include "vrft/errors.hpp"
#include "vrft/reward_json.hpp"

namespace vrft {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Reads optional fields of one JSON object into typed targets and rejects the rest.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  void get(const char* key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) throw ConfigError(at(key), "expected an integer");
      const auto x = v->get<long long>();
      if (x < -(1LL << 31) || x >= (1LL << 31)) throw ConfigError(at(key), "out of range");
      out = static_cast<int>(x);
    }
  }
  void get(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) throw ConfigError(at(key), "expected a number");
      out = v->get<double>();
      if (!std::isfinite(out)) throw ConfigError(at(key), "must be finite");
    }
  }
  void get(const char* key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) throw ConfigError(at(key), "expected a boolean");
      out = v->get<bool>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) throw ConfigError(at(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  const json* take(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string at(const std::string& key) const { return path_ + "." + key; }
  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(at(key), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_env(const json& j, OrdinalEnvConfig& c) {
  Fields f(j, "env");
  f.get("num_grades", c.num_grades);
  f.get("noise_sigma", c.noise_sigma);
  f.get("feature_dim", c.feature_dim);
  f.get("grade_spacing", c.grade_spacing);
  f.get("samples_per_grade", c.samples_per_grade);
  f.get("answer_range", c.answer_range);
  f.get("shots_per_class", c.shots_per_class);
  f.get("test_per_class", c.test_per_class);
  f.get("imbalance_ratio", c.imbalance_ratio);
  f.finish();
}

void read_env(const json& j, RecitationEnvConfig& c) {
  Fields f(j, "env");
  f.get("knowledge_text", c.knowledge_text);
  f.get("vocab_size", c.vocab_size);
  f.get("answer_classes", c.answer_classes);
  f.get("think_len", c.think_len);
  f.get("signal", c.signal);
  f.get("noise_sigma", c.noise_sigma);
  f.get("recite_bias", c.recite_bias);
  f.get("prompt_knowledge", c.prompt_knowledge);
  f.get("samples_per_class", c.samples_per_class);
  f.get("test_per_class", c.test_per_class);
  f.get("shots_per_class", c.shots_per_class);
  f.finish();
}

void read_env(const json& j, DetectionEnvConfig& c) {
  Fields f(j, "env");
  f.get("grid", c.grid);
  f.get("cell", c.cell);
  f.get("distractor_overlap", c.distractor_overlap);
  f.get("classes", c.classes);
  f.get("descriptor_dim", c.descriptor_dim);
  f.get("descriptor_signal", c.descriptor_signal);
  f.get("descriptor_noise", c.descriptor_noise);
  f.get("evidence_signal", c.evidence_signal);
  f.get("evidence_noise", c.evidence_noise);
  f.get("train_size", c.train_size);
  f.get("test_size", c.test_size);
  f.finish();
}

void read_grpo(const json& j, GrpoConfig& c) {
  Fields f(j, "grpo");
  f.get("group_size", c.group_size);
  f.get("beta", c.beta);
  f.get("clip_eps", c.clip_eps);
  f.get("temperature", c.temperature);
  f.get("learning_rate", c.learning_rate);
  f.get("adv_std_floor", c.adv_std_floor);
  f.get("prompts_per_step", c.prompts_per_step);
  f.get("parallel", c.parallel);
  std::string opt = c.optimizer == OptimizerKind::adam ? "adam" : "sgd";
  f.get("optimizer", opt);
  if (opt == "adam") {
    c.optimizer = OptimizerKind::adam;
  } else if (opt == "sgd") {
    c.optimizer = OptimizerKind::sgd;
  } else {
    throw ConfigError("grpo.optimizer", "expected \"adam\" or \"sgd\"");
  }
  f.finish();
}

json env_json(const OrdinalEnvConfig& c) {
  return {{"num_grades", c.num_grades},           {"noise_sigma", c.noise_sigma},
          {"feature_dim", c.feature_dim},         {"grade_spacing", c.grade_spacing},
          {"samples_per_grade", c.samples_per_grade}, {"answer_range", c.answer_range},
          {"shots_per_class", c.shots_per_class}, {"test_per_class", c.test_per_class},
          {"imbalance_ratio", c.imbalance_ratio}};
}

json env_json(const RecitationEnvConfig& c) {
  return {{"knowledge_text", c.knowledge_text}, {"vocab_size", c.vocab_size},
          {"answer_classes", c.answer_classes}, {"think_len", c.think_len},
          {"signal", c.signal},                 {"noise_sigma", c.noise_sigma},
          {"recite_bias", c.recite_bias},       {"prompt_knowledge", c.prompt_knowledge},
          {"samples_per_class", c.samples_per_class}, {"test_per_class", c.test_per_class},
          {"shots_per_class", c.shots_per_class}};
}

json env_json(const DetectionEnvConfig& c) {
  return {{"grid", c.grid},
          {"cell", c.cell},
          {"distractor_overlap", c.distractor_overlap},
          {"classes", c.classes},
          {"descriptor_dim", c.descriptor_dim},
          {"descriptor_signal", c.descriptor_signal},
          {"descriptor_noise", c.descriptor_noise},
          {"evidence_signal", c.evidence_signal},
          {"evidence_noise", c.evidence_noise},
          {"train_size", c.train_size},
          {"test_size", c.test_size}};
}

enum class EnvKind { ordinal, recitation, detection };

EnvKind env_kind(Experiment e) {
  switch (e) {
    case Experiment::pa_prompt:
    case Experiment::recite_pos:
    case Experiment::recite_neg:
      return EnvKind::recitation;
    case Experiment::pa_policy:
      return EnvKind::detection;
    case Experiment::mfrs_vs_exact:
    case Experiment::sft_baseline:
      return EnvKind::ordinal;
  }
  return EnvKind::ordinal;
}

TaskMode env_mode(EnvKind k) {
  switch (k) {
    case EnvKind::ordinal:
      return TaskMode::grading;
    case EnvKind::recitation:
      return TaskMode::classification;
    case EnvKind::detection:
      return TaskMode::detection;
  }
  return TaskMode::grading;
}

const char* default_preset(Experiment e) {
  switch (e) {
    case Experiment::pa_prompt:
      return "paper_default";
    case Experiment::pa_policy:
      return "detection_default";
    case Experiment::recite_pos:
      return "recite_pos";
    case Experiment::recite_neg:
      return "recite_neg";
    case Experiment::mfrs_vs_exact:
    case Experiment::sft_baseline:
      return "mfrs_default";
  }
  return "paper_default";
}

bool paired(const RunConfig& cfg) { return arm_names(cfg).size() > 1; }

std::string csv_row(const RunRecord& r) {
  return std::to_string(r.step) + "," + format_double(r.mean_total_reward) + "," +
         format_double(r.mean_format_reward) + "," + format_double(r.accuracy) + "," +
         format_double(r.mean_bleu_vs_prompt) + "," + format_double(r.mean_kl);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// One arm's training run for one seed.
ArmResult run_arm(const RunConfig& cfg, const std::string& arm, std::uint64_t seed,
                  const std::function<void(const std::string&, const RunRecord&)>& on_record) {
  GrpoConfig grpo = cfg.grpo;
  grpo.seed = seed;
  TrainOptions opts;
  opts.record_initial = true;
  if (on_record) opts.on_record = [&](const RunRecord& r) { on_record(arm, r); };

  RewardSpec spec = cfg.reward;
  std::unique_ptr<Environment> env;
  switch (cfg.experiment) {
    case Experiment::mfrs_vs_exact:
      if (arm == "exact") spec.mfrs_weights = {1.0};
      env = std::make_unique<OrdinalEnv>(cfg.ordinal, seed);
      break;
    case Experiment::sft_baseline:
      env = std::make_unique<OrdinalEnv>(cfg.ordinal, seed);
      break;
    case Experiment::pa_prompt: {
      RecitationEnvConfig rc = cfg.recitation;
      rc.prompt_knowledge = arm == "prompt_knowledge";
      env = std::make_unique<RecitationEnv>(rc, seed);
      break;
    }
    case Experiment::recite_pos:
    case Experiment::recite_neg:
      env = std::make_unique<RecitationEnv>(cfg.recitation, seed);
      break;
    case Experiment::pa_policy: {
      DetectionEnvConfig dc = cfg.detection;
      dc.train_size = std::stoi(arm.substr(1));
      auto det = std::make_unique<DetectionEnv>(dc, seed);
      const DetectionEnv* raw = det.get();
      opts.evaluator = [raw](const Policy& p) { return zero_shot_accuracy(*raw, p); };
      env = std::move(det);
      break;
    }
  }

  ArmResult out;
  out.arm = arm;
  out.seed = seed;
  Dataset all{env->mode(), env->train_set().samples};
  all.samples.insert(all.samples.end(), env->test_set().samples.begin(), env->test_set().samples.end());
  out.dataset_hash = dataset_hash(all);
  auto policy = env->make_policy();
  if (cfg.experiment == Experiment::sft_baseline) {
    out.records = sft_baseline(*env, *policy, spec, grpo, cfg.steps, opts);
  } else {
    out.records = train(*env, *policy, spec, grpo, cfg.steps, opts);
  }
  return out;
}

}  // namespace

std::string_view to_string(Experiment e) {
  switch (e) {
    case Experiment::pa_prompt:
      return "pa_prompt";
    case Experiment::pa_policy:
      return "pa_policy";
    case Experiment::recite_pos:
      return "recite_pos";
    case Experiment::recite_neg:
      return "recite_neg";
    case Experiment::mfrs_vs_exact:
      return "mfrs_vs_exact";
    case Experiment::sft_baseline:
      return "sft_baseline";
  }
  return "?";
}

Experiment experiment_from_string(const std::string& s) {
  for (auto e : {Experiment::pa_prompt, Experiment::pa_policy, Experiment::recite_pos, Experiment::recite_neg,
                 Experiment::mfrs_vs_exact, Experiment::sft_baseline}) {
    if (s == to_string(e)) return e;
  }
  throw ConfigError("experiment", "unknown experiment '" + s +
                                      "' (expected pa_prompt, pa_policy, recite_pos, recite_neg, "
                                      "mfrs_vs_exact or sft_baseline)");
}

void RunConfig::validate() const {
  const auto kind = env_kind(experiment);
  switch (kind) {
    case EnvKind::ordinal:
      ordinal.validate("env");
      break;
    case EnvKind::recitation:
      recitation.validate("env");
      break;
    case EnvKind::detection:
      detection.validate("env");
      break;
  }
  reward.validate("reward");
  if (reward.mode != env_mode(kind)) {
    throw ConfigError("reward.mode", std::string(to_string(experiment)) + " needs a " +
                                         std::string(to_string(env_mode(kind))) + " spec, got " +
                                         std::string(to_string(reward.mode)));
  }
  grpo.validate("grpo");
  if (steps < 0) throw ConfigError("steps", "must be >= 0");
  if (seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds", "seeds must be distinct");
  }
  if (output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
  if (experiment == Experiment::pa_policy) {
    if (sweep.empty()) throw ConfigError("sweep", "at least one train size is required");
    for (std::size_t i = 0; i < sweep.size(); ++i) {
      if (sweep[i] < 1) throw ConfigError("sweep[" + std::to_string(i) + "]", "must be >= 1");
      if (i && sweep[i] <= sweep[i - 1]) throw ConfigError("sweep", "sizes must be strictly increasing");
    }
  }
}

RunConfig run_config_from_json(const json& j, const std::map<std::string, RewardSpec>& presets) {
  if (!j.is_object()) throw ConfigError("", "config must be a JSON object");
  if (!j.contains("experiment")) throw ConfigError("experiment", "missing");
  if (!j["experiment"].is_string()) throw ConfigError("experiment", "expected a string");
  RunConfig cfg;
  cfg.experiment = experiment_from_string(j["experiment"].get<std::string>());

  Fields f(j, "config");
  f.take("experiment");
  if (const json* env = f.take("env")) {
    switch (env_kind(cfg.experiment)) {
      case EnvKind::ordinal:
        read_env(*env, cfg.ordinal);
        break;
      case EnvKind::recitation:
        read_env(*env, cfg.recitation);
        break;
      case EnvKind::detection:
        read_env(*env, cfg.detection);
        break;
    }
  }
  const json* reward = f.take("reward");
  cfg.reward = resolve_spec(reward ? *reward : json(default_preset(cfg.experiment)), presets, "reward");
  if (const json* g = f.take("grpo")) read_grpo(*g, cfg.grpo);
  f.get("steps", cfg.steps);
  f.get("output_dir", cfg.output_dir);
  if (const json* s = f.take("seeds")) {
    if (!s->is_array()) throw ConfigError("seeds", "expected an array of non-negative integers");
    cfg.seeds.clear();
    for (std::size_t i = 0; i < s->size(); ++i) {
      const auto& v = (*s)[i];
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) throw ConfigError("seeds[" + std::to_string(i) + "]", "expected a non-negative integer");
      cfg.seeds.push_back(v.get<std::uint64_t>());
    }
  }
  if (const json* s = f.take("sweep")) {
    if (!s->is_array()) throw ConfigError("sweep", "expected an array of integers");
    cfg.sweep.clear();
    for (std::size_t i = 0; i < s->size(); ++i) {
      if (!(*s)[i].is_number_integer()) throw ConfigError("sweep[" + std::to_string(i) + "]", "expected an integer");
      cfg.sweep.push_back((*s)[i].get<int>());
    }
  }
  f.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path, const std::map<std::string, RewardSpec>& presets) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("not valid JSON: ") + e.what());
  }
  return run_config_from_json(j, presets);
}

json to_json(const RunConfig& cfg) {
  json env;
  switch (env_kind(cfg.experiment)) {
    case EnvKind::ordinal:
      env = env_json(cfg.ordinal);
      break;
    case EnvKind::recitation:
      env = env_json(cfg.recitation);
      break;
    case EnvKind::detection:
      env = env_json(cfg.detection);
      break;
  }
  const auto& g = cfg.grpo;
  json j = {{"experiment", std::string(to_string(cfg.experiment))},
            {"env", env},
            {"reward", to_json(cfg.reward)},
            {"grpo",
             {{"group_size", g.group_size},
              {"beta", g.beta},
              {"clip_eps", g.clip_eps},
              {"temperature", g.temperature},
              {"learning_rate", g.learning_rate},
              {"adv_std_floor", g.adv_std_floor},
              {"prompts_per_step", g.prompts_per_step},
              {"optimizer", g.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
              {"parallel", g.parallel}}},
            {"steps", cfg.steps},
            {"seeds", cfg.seeds},
            {"output_dir", cfg.output_dir}};
  if (cfg.experiment == Experiment::pa_policy) j["sweep"] = cfg.sweep;
  return j;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto b = part.find_first_not_of(" \t");
    const auto e = part.find_last_not_of(" \t");
    if (b == std::string::npos) throw ConfigError("VRFT_SEED", "empty entry in '" + text + "'");
    part = part.substr(b, e - b + 1);
    if (part.find_first_not_of("0123456789") != std::string::npos || part.size() > 19) {
      throw ConfigError("VRFT_SEED", "'" + part + "' is not a non-negative integer");
    }
    seeds.push_back(std::stoull(part));
  }
  if (seeds.empty()) throw ConfigError("VRFT_SEED", "no seeds given");
  return seeds;
}

std::vector<std::string> arm_names(const RunConfig& cfg) {
  switch (cfg.experiment) {
    case Experiment::mfrs_vs_exact:
      return {"mfrs", "exact"};
    case Experiment::pa_prompt:
      return {"baseline", "prompt_knowledge"};
    case Experiment::pa_policy: {
      std::vector<std::string> names;
      for (int m : cfg.sweep) names.push_back("m" + std::to_string(m));
      return names;
    }
    case Experiment::recite_pos:
      return {"recite_pos"};
    case Experiment::recite_neg:
      return {"recite_neg"};
    case Experiment::sft_baseline:
      return {"sft"};
  }
  return {};
}

std::vector<ArmResult> run_seed(const RunConfig& cfg, std::uint64_t seed,
                                const std::function<void(const std::string&, const RunRecord&)>& on_record) {
  cfg.validate();
  std::vector<ArmResult> out;
  for (const auto& arm : arm_names(cfg)) out.push_back(run_arm(cfg, arm, seed, on_record));
  return out;
}

std::vector<RunRecord> sft_baseline(const Environment& env, Policy& policy, const RewardSpec& spec,
                                    const GrpoConfig& cfg, int steps, const TrainOptions& options) {
  cfg.validate();
  check_setup(env, policy, spec);
  if (steps < 0) throw ConfigError("steps", "must be >= 0");
  const auto& train_samples = env.train_set().samples;
  if (train_samples.empty()) throw ConfigError("env", "empty training split");
  std::vector<std::vector<int>> targets;
  for (const auto& s : train_samples) {
    auto t = env.supervised_tokens(s);
    if (!t) throw ConfigError("env", "environment has no supervised labels");
    targets.push_back(std::move(*t));
  }

  const auto reference = policy.clone();
  Optimizer opt(cfg.optimizer, cfg.learning_rate, policy.dim());
  const auto n = static_cast<std::ptrdiff_t>(train_samples.size());
  std::vector<RunRecord> records;
  for (int step = options.record_initial ? 0 : 1; step <= steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    if (step > 0) {
      std::vector<std::vector<double>> grads(train_samples.size());
      const double scale = -1.0 / static_cast<double>(n);
#pragma omp parallel for schedule(static) if (cfg.parallel)
      for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        grads[k].assign(policy.dim(), 0.0);
        for (std::size_t t = 0; t < targets[k].size(); ++t) {
          add_token_log_prob_grad(policy, train_samples[k].obs, t, targets[k], 1.0, scale, grads[k]);
        }
      }
      std::vector<double> grad(policy.dim(), 0.0);
      for (const auto& g : grads) {
        for (std::size_t d = 0; d < grad.size(); ++d) grad[d] += g[d];
      }
      opt.step(policy.params(), grad);
    }

    std::vector<RewardBreakdown> rewards(train_samples.size());
    std::vector<double> bleus(train_samples.size()), kls(train_samples.size());
    std::vector<long> token_counts(train_samples.size());
#pragma omp parallel for schedule(static) if (cfg.parallel)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const Sample& s = train_samples[k];
      const auto tokens = greedy(policy, s.obs);
      const auto parsed = parse_completion(env.render(s, tokens), env.mode());
      rewards[k] = score(parsed, s.truth, env.prompt(s), spec);
      bleus[k] = bleu(parsed.think_text, env.prompt(s), spec.bleu);
      const auto lp = token_log_probs(policy, s.obs, targets[k], 1.0);
      const auto lr = token_log_probs(*reference, s.obs, targets[k], 1.0);
      for (std::size_t t = 0; t < lp.size(); ++t) kls[k] += kl_estimate(lp[t], lr[t]);
      token_counts[k] = static_cast<long>(lp.size());
    }
    RunRecord rec;
    rec.step = step;
    long tokens = 0;
    for (std::size_t k = 0; k < train_samples.size(); ++k) {
      rec.mean_total_reward += rewards[k].total;
      rec.mean_format_reward += rewards[k].format;
      rec.mean_bleu_vs_prompt += bleus[k];
      rec.mean_kl += kls[k];
      tokens += token_counts[k];
    }
    const double inv = 1.0 / static_cast<double>(n);
    rec.mean_total_reward *= inv;
    rec.mean_format_reward *= inv;
    rec.mean_bleu_vs_prompt *= inv;
    rec.mean_kl = tokens > 0 ? rec.mean_kl / static_cast<double>(tokens) : 0.0;
    rec.accuracy = options.evaluator ? options.evaluator(policy) : greedy_accuracy(env, policy, cfg.parallel);
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (options.on_record) options.on_record(rec);
    records.push_back(rec);
  }
  return records;
}

RunRecord final_window(const std::vector<RunRecord>& records) {
  if (records.empty()) throw ConfigError("records", "no records");
  std::vector<const RunRecord*> rows;
  for (const auto& r : records) {
    if (r.step > 0) rows.push_back(&r);
  }
  if (rows.empty()) return records.front();
  const auto w = std::max<std::size_t>(1, (rows.size() + 9) / 10);
  RunRecord out;
  out.step = rows.back()->step;
  for (std::size_t i = rows.size() - w; i < rows.size(); ++i) {
    out.mean_total_reward += rows[i]->mean_total_reward;
    out.mean_format_reward += rows[i]->mean_format_reward;
    out.accuracy += rows[i]->accuracy;
    out.mean_bleu_vs_prompt += rows[i]->mean_bleu_vs_prompt;
    out.mean_kl += rows[i]->mean_kl;
  }
  const double inv = 1.0 / static_cast<double>(w);
  out.mean_total_reward *= inv;
  out.mean_format_reward *= inv;
  out.accuracy *= inv;
  out.mean_bleu_vs_prompt *= inv;
  out.mean_kl *= inv;
  return out;
}

int steps_to_plateau(const std::vector<RunRecord>& records, double fraction) {
  if (records.empty() || records.front().step != 0) throw ConfigError("records", "expected a step-0 row first");
  const double start = records.front().mean_total_reward;
  const double plateau = final_window(records).mean_total_reward;
  const double rise = plateau - start;
  if (rise == 0.0 || records.size() < 2) return 0;
  const double target = start + fraction * rise;
  constexpr std::size_t window = 5;
  double acc = 0.0;
  for (std::size_t i = 1; i < records.size(); ++i) {
    acc += records[i].mean_total_reward;
    if (i > window) acc -= records[i - window].mean_total_reward;
    const double smooth = acc / static_cast<double>(std::min(i, window));
    if ((rise > 0 && smooth >= target) || (rise < 0 && smooth <= target)) return records[i].step;
  }
  return records.back().step;
}

std::string records_csv(const std::vector<RunRecord>& records) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : records) out += csv_row(r) + "\n";
  return out;
}

std::vector<RunRecord> parse_records_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw ConfigError("records", "unexpected CSV header");
  std::vector<RunRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw ConfigError("records:" + std::to_string(lineno), "expected 6 columns");
    RunRecord r;
    try {
      r.step = std::stoi(cells[0]);
      r.mean_total_reward = std::stod(cells[1]);
      r.mean_format_reward = std::stod(cells[2]);
      r.accuracy = std::stod(cells[3]);
      r.mean_bleu_vs_prompt = std::stod(cells[4]);
      r.mean_kl = std::stod(cells[5]);
    } catch (const std::exception&) {
      throw ConfigError("records:" + std::to_string(lineno), "malformed number");
    }
    out.push_back(r);
  }
  return out;
}

json summarize(const RunConfig& cfg, const std::vector<ArmResult>& results) {
  json arms = json::object();
  std::map<std::string, std::map<std::uint64_t, const ArmResult*>> by_arm;
  for (const auto& r : results) by_arm[r.arm][r.seed] = &r;
  const auto names = arm_names(cfg);
  for (const auto& name : names) {
    json per_seed = json::array();
    std::vector<double> init_acc, final_acc;
    for (const auto& [seed, r] : by_arm[name]) {
      const auto fin = final_window(r->records);
      init_acc.push_back(r->records.front().accuracy);
      final_acc.push_back(fin.accuracy);
      per_seed.push_back({{"seed", seed},
                          {"dataset_hash", r->dataset_hash},
                          {"steps", r->records.back().step},
                          {"init_accuracy", r->records.front().accuracy},
                          {"init_total_reward", r->records.front().mean_total_reward},
                          {"final_accuracy", fin.accuracy},
                          {"final_total_reward", fin.mean_total_reward},
                          {"final_format_reward", fin.mean_format_reward},
                          {"final_bleu_vs_prompt", fin.mean_bleu_vs_prompt},
                          {"final_kl", fin.mean_kl},
                          {"steps_to_plateau", steps_to_plateau(r->records)}});
    }
    arms[name] = {{"per_seed", per_seed},
                  {"mean_init_accuracy", mean_of(init_acc)},
                  {"mean_final_accuracy", mean_of(final_acc)}};
  }

  json summary = {{"csv_schema", kCsvSchema},
                  {"experiment", std::string(to_string(cfg.experiment))},
                  {"seeds", cfg.seeds},
                  {"arms", arms}};

  auto final_acc = [&](const std::string& arm, std::uint64_t seed) {
    return final_window(by_arm.at(arm).at(seed)->records).accuracy;
  };
  if (cfg.experiment == Experiment::mfrs_vs_exact || cfg.experiment == Experiment::pa_prompt) {
    const std::string a = cfg.experiment == Experiment::mfrs_vs_exact ? "mfrs" : "prompt_knowledge";
    const std::string b = cfg.experiment == Experiment::mfrs_vs_exact ? "exact" : "baseline";
    int wins = 0, n = 0;
    std::vector<double> diffs;
    bool same_data = true;
    for (const auto& [seed, ra] : by_arm[a]) {
      if (!by_arm[b].count(seed)) continue;
      ++n;
      const double d = final_acc(a, seed) - final_acc(b, seed);
      diffs.push_back(d);
      if (d > 0) ++wins;
      same_data = same_data && ra->dataset_hash == by_arm[b].at(seed)->dataset_hash;
    }
    summary["comparison"] = {{"arm_a", a},
                             {"arm_b", b},
                             {"seeds", n},
                             {"seeds_a_better", wins},
                             {"mean_accuracy_diff", mean_of(diffs)},
                             {"datasets_match", same_data}};
  } else if (cfg.experiment == Experiment::pa_policy) {
    int monotone = 0, n = 0;
    std::vector<double> gains;
    for (auto seed : cfg.seeds) {
      bool ok = true, complete = true;
      double prev = -1.0;
      for (const auto& name : names) {
        if (!by_arm[name].count(seed)) {
          complete = false;
          break;
        }
        const double acc = final_acc(name, seed);
        ok = ok && acc >= prev;
        prev = acc;
      }
      if (!complete) continue;
      ++n;
      if (ok) ++monotone;
      const auto& largest = by_arm[names.back()].at(seed)->records;
      gains.push_back(final_window(largest).accuracy - largest.front().accuracy);
    }
    summary["comparison"] = {{"sweep", cfg.sweep},
                             {"seeds", n},
                             {"monotone_seeds", monotone},
                             {"mean_gain_over_untrained", mean_of(gains)}};
  }
  return summary;
}

int run(const RunConfig& cfg, std::ostream& log) {
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  const fs::path root(cfg.output_dir);
  const bool many = paired(cfg);
  std::vector<ArmResult> results;
  try {
    fs::create_directories(root);
    {
      std::ofstream out(root / "config.resolved.json");
      out << to_json(cfg).dump(2) << "\n";
    }
    for (auto seed : cfg.seeds) {
      std::map<std::string, std::ofstream> records_out, timing_out;
      for (const auto& arm : arm_names(cfg)) {
        const fs::path dir = many ? root / arm : root;
        fs::create_directories(dir);
        auto& rec = records_out[arm];
        rec.open(dir / ("records_" + std::to_string(seed) + ".csv"));
        rec << kCsvHeader << "\n" << std::flush;
        auto& tim = timing_out[arm];
        tim.open(dir / ("timing_" + std::to_string(seed) + ".csv"));
        tim << "step,wall_ms\n" << std::flush;
      }
      auto sink = [&](const std::string& arm, const RunRecord& r) {
        records_out[arm] << csv_row(r) << "\n" << std::flush;
        timing_out[arm] << r.step << "," << format_double(r.wall_ms) << "\n" << std::flush;
      };
      for (auto& r : run_seed(cfg, seed, sink)) results.push_back(std::move(r));
      log << "seed " << seed << " done\n";
    }
  } catch (const NumericalError& e) {
    log << "numerical failure: " << e.what() << " (partial records kept)\n";
    return kExitNumerical;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    log << "i/o error: " << e.what() << "\n";
    return kExitFailure;
  }
  std::ofstream out(root / "summary.json");
  out << summarize(cfg, results).dump(2) << "\n";
  if (!out) {
    log << "i/o error: cannot write summary.json\n";
    return kExitFailure;
  }
  return kExitOk;
}

int run_file(const std::string& config_path, std::ostream& log) {
  RunConfig cfg;
  try {
    cfg = load_run_config(config_path, builtin_presets());
    if (const char* env = std::getenv("VRFT_SEED")) cfg.seeds = parse_seed_list(env);
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  return run(cfg, log);
}

ScoreFileResult score_stream(std::istream& in, const RewardSpec& spec, std::ostream& out, bool parallel) {
  spec.validate();
  struct Line {
    std::size_t number = 0;
    json record;
    std::string error;
    std::size_t item = 0;
  };
  std::vector<Line> lines;
  std::vector<ScoreItem> items;
  std::string text;
  std::size_t number = 0;
  while (std::getline(in, text)) {
    ++number;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    Line line;
    line.number = number;
    try {
      line.record = json::parse(text);
      auto item = score_item_from_json(line.record, "record");
      check_compatible(item.task, item.truth, spec);
      line.item = items.size();
      items.push_back(std::move(item));
    } catch (const json::parse_error& e) {
      line.error = std::string("not valid JSON: ") + e.what();
    } catch (const ConfigError& e) {
      line.error = e.what();
    }
    lines.push_back(std::move(line));
  }

  const auto scores = score_batch(items, spec, parallel);
  ScoreFileResult result;
  for (const auto& line : lines) {
    if (!line.error.empty()) {
      out << json{{"line", line.number}, {"error", line.error}}.dump() << "\n";
      ++result.failed;
      continue;
    }
    std::string record = line.record.dump();
    record.pop_back();
    out << record << ",\"reward\":" << breakdown_json_text(scores[line.item]) << "}\n";
    ++result.scored;
  }
  return result;
}

ScoreFileResult score_file(const std::string& input, const RewardSpec& spec, const std::string& output) {
  std::ifstream in(input);
  if (!in) throw ConfigError("input", "cannot open '" + input + "'");
  std::ofstream out(output);
  if (!out) throw ConfigError("output", "cannot open '" + output + "'");
  return score_stream(in, spec, out);
}

}  // namespace vrft
