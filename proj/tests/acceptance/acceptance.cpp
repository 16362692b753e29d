// Acceptance run: prints one PASS/FAIL line per criterion A1..A8 and exits non-zero
// if any of them fails. Experiment settings come from configs/*.json next to this file.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "oracles.hpp"
#include "vrft/batch_scoring.hpp"
#include "vrft/bleu.hpp"
#include "vrft/envs.hpp"
#include "vrft/errors.hpp"
#include "vrft/grpo.hpp"
#include "vrft/policy.hpp"
#include "vrft/prompt_builder.hpp"
#include "vrft/reward_engine.hpp"
#include "vrft/reward_json.hpp"
#include "vrft/runner.hpp"
#include "vrft/service.hpp"
#include "vrft/structured_output.hpp"

using namespace vrft;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kSourceDir = VRFT_ACCEPTANCE_DIR;
const fs::path kWorkDir = "acceptance_runs";

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool near(double a, double b, double tol = 1e-12) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

// --- A1 -----------------------------------------------------------------------

class Suite {
 public:
  void check(bool ok, const std::string& what) {
    ++total_;
    if (!ok) failures_.push_back(what);
  }
  int total() const { return total_; }
  const std::vector<std::string>& failures() const { return failures_; }

 private:
  int total_ = 0;
  std::vector<std::string> failures_;
};

ParsedOutput parse(const std::string& raw, TaskMode mode) { return parse_completion(raw, mode); }

GroundTruth label_gt(const std::string& s) {
  GroundTruth g;
  g.label = s;
  return g;
}

void oracle_parsing(Suite& s) {
  auto p = parse("<think>round lesion</think>\\boxed{melanoma}", TaskMode::classification);
  s.check(p.format_ok && p.label == "melanoma", "parse classification example");
  p = parse("\\boxed{melanoma}", TaskMode::classification);
  s.check(!p.format_ok && p.label == "melanoma", "parse missing think");
  p = parse("<think>t</think><answer>{\"bbox\":[1,2,3,4]}</answer>", TaskMode::detection);
  s.check(p.format_ok && p.bbox && *p.bbox == BBox{1, 2, 3, 4}, "parse detection example");
  s.check(format_reward(parse("<think>a</think>\\boxed{x}", TaskMode::classification)) == 1.0, "format 1");
  s.check(format_reward(parse("\\boxed{x}", TaskMode::classification)) == 0.0, "format 0");
  s.check(format_reward(parse("<think>a</think><think>b</think>\\boxed{x}", TaskMode::classification)) == 0.0,
          "duplicate think blocks");
  // Tag-count rule enumerated against the grammar.
  for (int n_open = 0; n_open < 3; ++n_open) {
    for (int n_close = 0; n_close < 3; ++n_close) {
      std::string raw;
      for (int i = 0; i < n_open; ++i) raw += "<think>";
      raw += "r";
      for (int i = 0; i < n_close; ++i) raw += "</think>";
      raw += "\\boxed{x}";
      s.check(parse(raw, TaskMode::classification).format_ok == (n_open == 1 && n_close == 1),
              "tag-count rule " + raw);
    }
  }
}

void oracle_bleu(Suite& s) {
  s.check(near(bleu("a b c d", "a b c d"), 1.0), "bleu identical");
  s.check(bleu("x y z", "a b c") == 0.0, "bleu disjoint");
  const double expected = std::pow(4.0 / 5 * 3.0 / 4 * 2.0 / 3 * 1.0 / 2, 0.25);
  s.check(near(bleu("a b c d e", "a b c d f"), expected) && std::abs(expected - 0.6687) < 5e-5, "bleu 0.6687");
  s.check(near(oracle::bleu({"a", "b", "c", "d", "e"}, {"a", "b", "c", "d", "f"}, 4), expected),
          "bleu hand-count oracle");
  std::mt19937_64 rng(17);
  const std::vector<std::string> words{"a", "b", "c", "d"};
  int agree = 0;
  for (int i = 0; i < 500; ++i) {
    std::vector<std::string> c(1 + rng() % 8), r(1 + rng() % 8);
    for (auto& w : c) w = words[rng() % words.size()];
    for (auto& w : r) w = words[rng() % words.size()];
    agree += near(bleu_tokens(c, r), oracle::bleu(c, r, 4), 1e-12);
  }
  s.check(agree == 500, "bleu vs hand-count oracle on 500 random pairs");
}

void oracle_rewards(Suite& s) {
  s.check(accuracy_reward(parse("<think>t</think>\\boxed{Melanoma}", TaskMode::classification),
                          label_gt("melanoma")) == 1.0,
          "accuracy case-insensitive");
  s.check(accuracy_reward(parse("<think>t</think>\\boxed{nevus}", TaskMode::classification), label_gt("melanoma")) ==
              0.0,
          "accuracy mismatch");
  s.check(accuracy_reward(parse("<think>t</think>", TaskMode::classification), label_gt("melanoma")) == 0.0,
          "accuracy absent");

  s.check(iou({0, 0, 10, 10}, {0, 0, 10, 10}) == 1.0, "iou identity");
  s.check(iou({0, 0, 10, 10}, {20, 20, 30, 30}) == 0.0, "iou disjoint");
  s.check(near(iou({0, 0, 10, 10}, {5, 0, 15, 10}), 1.0 / 3.0) &&
              near(oracle::pixel_iou(0, 0, 10, 10, 5, 0, 15, 10), 1.0 / 3.0),
          "iou 1/3 with pixel oracle");
  std::mt19937_64 rng(23);
  int agree = 0;
  for (int i = 0; i < 200; ++i) {
    int v[8];
    for (int& x : v) x = static_cast<int>(rng() % 40);
    const BBox a = BBox{double(v[0]), double(v[1]), double(v[2]), double(v[3])}.normalized();
    const BBox b = BBox{double(v[4]), double(v[5]), double(v[6]), double(v[7])}.normalized();
    agree += near(iou(a, b), oracle::pixel_iou(int(a.x1), int(a.y1), int(a.x2), int(a.y2), int(b.x1), int(b.y1),
                                               int(b.x2), int(b.y2)));
  }
  s.check(agree == 200, "iou vs pixel oracle on 200 random boxes");

  RewardSpec det;
  det.mode = TaskMode::detection;
  GroundTruth box;
  box.bbox = BBox{0, 0, 10, 10};
  auto det_out = [](const std::string& a) {
    return parse("<think>t</think><answer>" + a + "</answer>", TaskMode::detection);
  };
  s.check(detection_reward(det_out("[0,0,10,10]"), box, det) == 1.0, "detection iou 1");
  s.check(detection_reward(det_out("[5,0,15,10]"), box, det) == 0.0, "detection iou 1/3");
  s.check(detection_reward(parse("<think>t</think>", TaskMode::detection), box, det) == 0.0, "detection absent");

  RewardSpec grading;
  grading.mode = TaskMode::grading;
  s.check(mfrs_reward(3, 3, grading) == 1.0, "mfrs exact");
  s.check(mfrs_reward(2, 3, grading) == 0.25, "mfrs distance 1");
  s.check(mfrs_reward(0, 4, grading) == 0.0, "mfrs otherwise");

  RewardSpec rec;
  rec.delta = 0.2;
  const auto same = parse("<think>a b c d</think>\\boxed{x}", TaskMode::classification);
  s.check(near(recitation_reward(same, "a b c d", rec), 0.2), "recite delta 0.2, bleu 1");
  rec.delta = -2.0;
  s.check(recitation_reward(same, "w x y z", rec) == 0.0, "recite delta -2, bleu 0");
  const auto sub = parse("<think>a b c d e</think>\\boxed{x}", TaskMode::classification);
  const double r = recitation_reward(sub, "a b c d f", rec);
  s.check(std::abs(r - -1.3374) < 1e-4, "recite -1.3374 unclamped");

  GroundTruth g3;
  g3.grade = 3;
  s.check(near(score(parse("<think>t</think>\\boxed{2}", TaskMode::grading), g3, "", grading).total, 0.325),
          "score grading 0.325");
  RewardSpec cls;
  cls.delta = 0.2;
  s.check(near(score(parse("<think>a b</think>\\boxed{melanoma}", TaskMode::classification), label_gt("melanoma"),
                     "a b", cls)
                   .total,
               1.2),
          "score classification 1.2");
  s.check(score(parse("\\boxed{nevus}", TaskMode::classification), label_gt("melanoma"), "", RewardSpec{}).total ==
              0.0,
          "score 0");
  bool mismatch = false;
  try {
    score(parse("<think>t</think>\\boxed{1}", TaskMode::classification), g3, "", grading);
  } catch (const ConfigError&) {
    mismatch = true;
  }
  s.check(mismatch, "score spec/mode mismatch is a configuration error");
}

// Bernoulli policy with logits (theta, 0).
class Bernoulli final : public Policy {
 public:
  Bernoulli() : Policy(1) {}
  Arch arch() const override { return Arch::softmax_bandit; }
  std::size_t num_positions() const override { return 1; }
  std::size_t vocab_size(std::size_t) const override { return 2; }
  void logits(std::span<const double>, std::size_t, std::span<const int>, std::span<double> out) const override {
    out[0] = theta_[0];
    out[1] = 0.0;
  }
  void add_logit_grad(std::span<const double>, std::size_t, std::span<const int>, std::span<const double> coeff,
                      std::span<double> grad) const override {
    grad[0] += coeff[0];
  }
  std::unique_ptr<Policy> clone() const override { return std::make_unique<Bernoulli>(*this); }
  std::string shape() const override { return "bernoulli"; }
};

void oracle_grpo(Suite& s) {
  const auto a = group_advantages(std::vector<double>{1, 0, 0, 0}, 0.0);
  s.check(near(a[0], std::sqrt(3.0)) && near(a[1], -1 / std::sqrt(3.0)) && near(a[3], -1 / std::sqrt(3.0)),
          "advantages [1,0,0,0]");
  const auto z = group_advantages(std::vector<double>{0.5, 0.5, 0.5, 0.5}, 1e-4);
  s.check(std::all_of(z.begin(), z.end(), [](double v) { return v == 0.0; }), "advantages equal group");
  const auto b = group_advantages(std::vector<double>{1, 0}, 0.0);
  s.check(near(b[0], 1.0) && near(b[1], -1.0), "advantages [1,0]");
  s.check(kl_estimate(-0.4, -0.4) == 0.0, "kl identical");
  s.check(std::abs(kl_estimate(0.0, std::log(2.0)) - 0.3069) < 5e-5, "kl rho 2");
  s.check(std::abs(kl_estimate(0.0, std::log(0.5)) - 0.1931) < 5e-5, "kl rho 0.5");

  GrpoConfig cfg;
  cfg.beta = 0.0;
  Bernoulli p;
  p.params()[0] = 0.3;
  GroupBatch batch;
  for (int t : {0, 1, 1, 0}) {
    Completion c;
    c.tokens = {t};
    c.logp_old = token_log_probs(p, batch.obs, c.tokens, cfg.temperature);
    c.logp_ref = c.logp_old;
    batch.completions.push_back(c);
  }
  batch.advantages = {0, 0, 0, 0};
  auto lg = grpo_loss(p, batch, cfg);
  s.check(lg.loss == 0.0 && lg.grad[0] == 0.0, "loss zero advantages");
  batch.advantages = {1.0, -0.5, 0.25, -1.5};
  lg = grpo_loss(p, batch, cfg);
  const double p0 = 1 / (1 + std::exp(-0.3 / cfg.temperature));
  double reinforce = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    reinforce += batch.advantages[i] * (batch.completions[i].tokens[0] == 0 ? 1 - p0 : -p0) / cfg.temperature;
  }
  s.check(near(lg.loss, -(1.0 - 0.5 + 0.25 - 1.5) / 4, 1e-12) && near(lg.grad[0], -reinforce / 4, 1e-10),
          "loss on-policy equals REINFORCE");
  cfg.beta = 0.2;
  for (auto& c : batch.completions) c.logp_ref = token_log_probs(Bernoulli(), batch.obs, c.tokens, cfg.temperature);
  for (double theta : {-0.2, 0.1, 0.45}) {
    p.params()[0] = theta;
    const auto g = grpo_loss(p, batch, cfg).grad;
    const auto fd = oracle::central_diff(
        [&](const std::vector<double>& x) {
          Bernoulli q;
          q.params()[0] = x[0];
          return grpo_loss(q, batch, cfg).loss;
        },
        {theta});
    s.check(oracle::relative_error(g, fd) < 1e-6, "Bernoulli loss gradient vs finite differences");
  }
}

void oracle_policy(Suite& s) {
  SoftmaxBandit single(1, 2);
  const std::vector<double> obs2{0.4, -1.0};
  const std::vector<int> tok0{0};
  const auto lg1 = log_prob_and_grad(single, obs2, tok0);
  s.check(lg1.logp == 0.0 && std::all_of(lg1.grad.begin(), lg1.grad.end(), [](double g) { return g == 0.0; }),
          "single-class vocabulary");
  SoftmaxBandit two(2, 2);
  s.check(near(log_prob_and_grad(two, obs2, tok0).logp, std::log(0.5)), "bandit symmetry");

  SoftmaxBandit five(5, 1);
  const std::vector<double> obs1{0.0};
  Rng rng(31);
  std::vector<int> counts(5, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) counts[static_cast<std::size_t>(sample(five, obs1, 1.0, rng).tokens[0])]++;
  const double sd = std::sqrt(n * 0.2 * 0.8);
  s.check(std::all_of(counts.begin(), counts.end(), [&](int c) { return std::abs(c - n / 5.0) <= 3 * sd; }),
          "uniform sampling within 3 sigma");
  five.row(3)[1] = 0.01;
  bool greedy_ok = true;
  for (int i = 0; i < 50; ++i) greedy_ok = greedy_ok && sample(five, obs1, 1e-6, rng).tokens[0] == 3;
  s.check(greedy_ok, "temperature 1e-6 picks argmax");
  Rng r1(5), r2(5);
  s.check(sample(five, obs1, 0.9, r1).tokens == sample(five, obs1, 0.9, r2).tokens, "seeded sampling repeats");

  // Random-parameter gradient vs finite differences.
  SoftmaxBandit bandit(4, 3);
  std::normal_distribution<double> nd(0, 0.5);
  for (double& x : bandit.params()) x = nd(rng);
  const std::vector<double> obs3{0.2, -0.7, 1.1};
  const std::vector<int> tok2{2};
  const auto lg = log_prob_and_grad(bandit, obs3, tok2, 0.8);
  const auto fd = oracle::central_diff(
      [&](const std::vector<double>& x) {
        SoftmaxBandit q(4, 3);
        std::copy(x.begin(), x.end(), q.params().begin());
        return token_log_probs(q, obs3, tok2, 0.8)[0];
      },
      std::vector<double>(bandit.params().begin(), bandit.params().end()));
  s.check(oracle::relative_error(lg.grad, fd) < 1e-6, "log-prob gradient vs finite differences");

  // Shared backbone attention collapse.
  SharedBackbone sb(3, 2, 2, SharedBackbone::Head::classify);
  std::vector<double> obs(sb.observation_size(), 0.0);
  for (std::size_t i = 0; i < 6; ++i) obs[i] = static_cast<double>(i);
  auto logits = shared_backbone_forward(sb, obs, SharedBackbone::Head::classify);
  s.check(near(logits[0], 2.0) && near(logits[1], 3.0), "uniform attention averages evidence");
  obs[6 + 2 * 2] = 1.0;
  sb.params()[0] = 500.0;
  logits = shared_backbone_forward(sb, obs, SharedBackbone::Head::classify);
  s.check(near(logits[0], 4.0) && near(logits[1], 5.0), "one-hot attention picks the region's evidence");
}

void oracle_envs(Suite& s) {
  OrdinalEnvConfig cfg;
  cfg.noise_sigma = 0.0;
  s.check(ordinal_bayes_accuracy(cfg, 2000, 1) == 1.0, "sigma 0 separable");
  cfg.noise_sigma = 1e4;
  s.check(std::abs(ordinal_bayes_accuracy(cfg, 50000, 1) - 0.2) < 0.01, "sigma large -> 1/G");
  cfg.noise_sigma = 0.8;
  cfg.answer_range = 5;
  s.check(near(sparse_reward_probe(cfg, RewardKind::exact, 8), std::pow(0.8, 8) + std::pow(0.2, 8)),
          "probe exact (0.8)^8 + (0.2)^8");
  s.check(near(sparse_reward_probe(cfg, RewardKind::exact, 4), oracle::degenerate_fraction(5, 5, 4, {1.0})),
          "probe exact vs enumeration");
  s.check(near(sparse_reward_probe(cfg, RewardKind::mfrs, 4),
               oracle::degenerate_fraction(5, 5, 4, {1.0, 0.25, 0.0625})),
          "probe mfrs vs enumeration");
  s.check(sparse_reward_probe(cfg, RewardKind::mfrs, 8) < sparse_reward_probe(cfg, RewardKind::exact, 8),
          "mfrs less degenerate");
  cfg.num_grades = 1;
  cfg.answer_range = 1;
  s.check(sparse_reward_probe(cfg, RewardKind::exact) == 1.0 && sparse_reward_probe(cfg, RewardKind::mfrs) == 1.0,
          "G = 1 all degenerate");

  std::vector<Sample> all;
  for (int c = 0; c < 2; ++c) {
    for (int i = 0; i < (c == 0 ? 7 : 40); ++i) {
      Sample smp;
      smp.id = std::to_string(c) + "/" + std::to_string(i);
      smp.cls = c;
      all.push_back(smp);
    }
  }
  const auto [train10, test10] = few_shot_split(all, 2, {10, 3}, 2);
  const auto [train20, test20] = few_shot_split(all, 2, {20, 3}, 2);
  s.check(std::count_if(train10.begin(), train10.end(), [](const Sample& x) { return x.cls == 0; }) == 5,
          "few-shot takes what is left after the test split");
  std::set<std::string> ids20;
  for (const auto& x : train20) ids20.insert(x.id);
  s.check(std::all_of(train10.begin(), train10.end(), [&](const Sample& x) { return ids20.count(x.id) > 0; }),
          "10-shot subset of 20-shot");
}

void oracle_prompts(Suite& s) {
  s.check(parse_knowledge(R"({"melanoma": "irregular borders, dark pigment"})").entries.size() == 1, "kb 1 entry");
  bool dup = false, empty = false;
  try {
    parse_knowledge(R"({"a": "x", "a": "y"})");
  } catch (const ConfigError& e) {
    dup = e.path() == "knowledge.a";
  }
  try {
    parse_knowledge("");
  } catch (const ConfigError&) {
    empty = true;
  }
  s.check(dup, "kb duplicate key");
  s.check(empty, "kb empty file");
  PromptTemplate t;
  t.classes = {"a", "b"};
  const auto base = build_prompt(t);
  s.check(base.find("a; b") != std::string::npos && base.find("a:") == std::string::npos, "prompt class names");
  KnowledgeBase kb;
  kb.entries["melanoma"] = "irregular borders, dark pigment";
  t.classes = {"melanoma"};
  s.check(build_prompt(t, kb).find("melanoma: irregular borders, dark pigment") != std::string::npos,
          "prompt with knowledge");
  PromptTemplate det;
  det.kind = PromptTemplate::Kind::detection;
  s.check(build_prompt(det).find("Output the bounding box in the format [x1, y1, x2, y2]") != std::string::npos,
          "detection template sentence");
}

void oracle_runner(Suite& s) {
  OrdinalEnvConfig ec;
  ec.noise_sigma = 0.0;
  ec.samples_per_grade = 40;
  ec.test_per_class = 20;
  OrdinalEnv env(ec, 1);
  RewardSpec spec;
  spec.mode = TaskMode::grading;
  GrpoConfig g;
  g.learning_rate = 0.1;
  auto policy = env.make_policy();
  TrainOptions opt;
  opt.record_initial = true;
  const auto recs = sft_baseline(env, *policy, spec, g, 400, opt);
  s.check(recs.back().accuracy == 1.0, "sft separable -> 1.0");
  s.check(std::abs(recs.front().accuracy - 0.2) <= 3 * std::sqrt(0.2 * 0.8 / 100), "sft 0 steps ~ 1/G");

  const auto dir = kWorkDir / "a1";
  fs::create_directories(dir);
  std::ofstream(dir / "unknown.json") << R"({"experiment": "warp_drive"})";
  std::ostringstream log;
  s.check(run_file((dir / "unknown.json").string(), log) == kExitConfig, "unknown experiment exits 2");
  auto cfg = run_config_from_json(json{{"experiment", "mfrs_vs_exact"},
                                       {"env", {{"samples_per_grade", 30}, {"test_per_class", 10}}},
                                       {"steps", 0},
                                       {"seeds", {1}},
                                       {"output_dir", (dir / "zero").string()}},
                                  builtin_presets());
  s.check(run(cfg, log) == kExitOk &&
              parse_records_csv(slurp(dir / "zero" / "mfrs" / "records_1.csv")).size() == 1 &&
              json::parse(slurp(dir / "zero" / "summary.json"))["arms"]["mfrs"]["per_seed"][0].contains(
                  "init_accuracy"),
          "steps = 0 run");

  const auto& paper = builtin_presets().at("paper_default");
  auto line = [](const std::string& id) {
    return json{{"id", id},
                {"completion", "<think>t</think>\\boxed{melanoma}"},
                {"ground_truth", {{"label", "melanoma"}}},
                {"task", "classification"}}
        .dump();
  };
  std::istringstream empty_in("");
  std::ostringstream empty_out;
  s.check(score_stream(empty_in, paper, empty_out).scored == 0, "score empty file");
  const std::string mixed = line("a") + "\n" + line("b") + "\n{oops\n" + line("c") + "\n";
  std::istringstream in1(mixed), in2(mixed);
  std::ostringstream out1, out2;
  const auto r1 = score_stream(in1, paper, out1);
  score_stream(in2, paper, out2);
  s.check(r1.scored == 3 && r1.failed == 1, "score 3 valid + 1 malformed");
  s.check(out1.str() == out2.str(), "score twice byte-identical");
}

void oracle_service(Suite& s) {
  const auto& presets = builtin_presets();
  auto item = [](const std::string& label) {
    return json{{"id", "a"},
                {"completion", "<think>t</think>\\boxed{" + label + "}"},
                {"ground_truth", {{"label", "melanoma"}}},
                {"task", "classification"}};
  };
  auto reply = handle_score(json{{"spec", "paper_default"}, {"items", {item("melanoma")}}}.dump(), presets);
  s.check(reply.status == 200 && near(json::parse(reply.body)["items"][0]["total"].get<double>(), 1.0),
          "service 1-item total 1.0");
  reply = handle_score(json{{"spec", "paper_default"}, {"items", json::array()}}.dump(), presets);
  s.check(reply.status == 200 && json::parse(reply.body)["items"].empty(), "service empty items");
  const json grade = {{"id", "g"},
                      {"completion", "<think>t</think>\\boxed{2}"},
                      {"ground_truth", {{"grade", 3}}},
                      {"task", "grading"}};
  reply = handle_score(json{{"spec", "mfrs_default"}, {"items", {grade}}}.dump(), presets);
  s.check(reply.status == 200 && json::parse(reply.body)["items"][0]["task_reward"].get<double>() == 0.25,
          "service mfrs distance 1");
  s.check(handle_score(json{{"spec", "paper_default"}, {"items", {grade}}}.dump(), presets).status == 422,
          "service mode mismatch 422");
  s.check(json::parse(handle_healthz(presets).body)["status"] == "ok", "healthz ok");
  std::vector<ScoreItem> items{score_item_from_json(grade)};
  s.check(score_batch(items, presets.at("mfrs_default"))[0].task == 0.25, "batch mfrs_default distance 1");
}

Verdict a1() {
  const auto t0 = std::chrono::steady_clock::now();
  Suite s;
  oracle_parsing(s);
  oracle_bleu(s);
  oracle_rewards(s);
  oracle_grpo(s);
  oracle_policy(s);
  oracle_envs(s);
  oracle_prompts(s);
  oracle_runner(s);
  oracle_service(s);
  const double secs = seconds_since(t0);
  std::string detail = std::to_string(s.total() - static_cast<int>(s.failures().size())) + "/" +
                       std::to_string(s.total()) + " oracle checks in " + fmt("%.2f", secs) + " s (limit 10 s)";
  for (const auto& f : s.failures()) detail += "; failed: " + f;
  return {s.failures().empty() && secs < 10.0, detail};
}

// --- A2 -----------------------------------------------------------------------

SeqSoftmax make_seq_policy() {
  std::vector<SeqSoftmax::Position> pos{{3, 3}, {4, 6}};
  return SeqSoftmax(pos, [](std::span<const double> obs, std::size_t t, std::span<const int> prefix,
                            std::span<double> phi) {
    std::fill(phi.begin(), phi.end(), 0.0);
    if (t == 0) {
      phi[0] = obs[0];
      phi[1] = obs[1];
      phi[2] = 1.0;
    } else {
      phi[static_cast<std::size_t>(prefix[0])] = 1.0;
      phi[3] = obs[0];
      phi[4] = obs[1];
      phi[5] = 1.0;
    }
  });
}

// Max relative error of grpo_loss gradients over `points` random configurations.
double max_loss_grad_error(const Policy& proto, std::size_t obs_dim, int points, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  double worst = 0.0;
  for (int k = 0; k < points; ++k) {
    auto theta = proto.clone();
    auto old = proto.clone();
    auto ref = proto.clone();
    for (std::size_t i = 0; i < theta->dim(); ++i) {
      theta->params()[i] = 0.7 * nd(rng);
      old->params()[i] = theta->params()[i] + 0.15 * nd(rng);
      ref->params()[i] = theta->params()[i] + 0.3 * nd(rng);
    }
    GrpoConfig cfg;
    cfg.beta = 0.5 * ud(rng);
    cfg.temperature = 0.5 + ud(rng);
    cfg.clip_eps = 0.1 + 0.2 * ud(rng);
    GroupBatch batch;
    batch.obs.resize(obs_dim);
    for (double& x : batch.obs) x = nd(rng);
    const int n = 4;
    for (int i = 0; i < n; ++i) {
      Completion c = sample(*old, batch.obs, cfg.temperature, rng);
      c.logp_old = token_log_probs(*old, batch.obs, c.tokens, cfg.temperature);
      c.logp_ref = token_log_probs(*ref, batch.obs, c.tokens, cfg.temperature);
      batch.completions.push_back(std::move(c));
      batch.advantages.push_back(nd(rng));
    }
    const auto analytic = grpo_loss(*theta, batch, cfg).grad;
    auto probe = proto.clone();
    const auto fd = oracle::central_diff(
        [&](const std::vector<double>& x) {
          std::copy(x.begin(), x.end(), probe->params().begin());
          return grpo_loss(*probe, batch, cfg).loss;
        },
        std::vector<double>(theta->params().begin(), theta->params().end()));
    worst = std::max(worst, oracle::relative_error(analytic, fd));
  }
  return worst;
}

Verdict a2() {
  const auto t0 = std::chrono::steady_clock::now();
  struct Arm {
    std::string name;
    std::unique_ptr<Policy> policy;
    std::size_t obs_dim;
  };
  std::vector<Arm> arms;
  arms.push_back({"softmax_bandit", std::make_unique<SoftmaxBandit>(5, 3), 3});
  arms.push_back({"seq_softmax", std::make_unique<SeqSoftmax>(make_seq_policy()), 2});
  auto loc = std::make_unique<SharedBackbone>(4, 3, 5, SharedBackbone::Head::localize);
  const std::size_t sb_obs = loc->observation_size();
  arms.push_back({"shared_backbone/localize", std::move(loc), sb_obs});
  arms.push_back(
      {"shared_backbone/classify", std::make_unique<SharedBackbone>(4, 3, 5, SharedBackbone::Head::classify), sb_obs});
  bool ok = true;
  std::string detail = "100 random points per architecture, h = 1e-5:";
  for (std::size_t i = 0; i < arms.size(); ++i) {
    const double err = max_loss_grad_error(*arms[i].policy, arms[i].obs_dim, 100, 1000 + i);
    ok = ok && err < 1e-4;
    detail += " " + arms[i].name + " max rel err " + fmt("%.2e", err) + ";";
  }
  const double secs = seconds_since(t0);
  detail += " " + fmt("%.2f", secs) + " s (limit 60 s)";
  return {ok && secs < 60.0, detail};
}

// --- A3 -----------------------------------------------------------------------

// Every reward drawn here is dyadic, so integer shifts stay exactly representable.
constexpr double kMfrsLevels[] = {1.0, 0.25, 0.0625, 0.0};

Verdict a3() {
  Rng rng(77);
  std::uniform_int_distribution<int> size(2, 64);
  std::uniform_int_distribution<int> kind(0, 2);
  std::uniform_int_distribution<int> dyadic(-1024, 1024);
  std::uniform_int_distribution<int> shift(-1000, 1000);
  int mean_ok = 0, shift_ok = 0, equal_ok = 0;
  const int groups = 10000;
  for (int k = 0; k < groups; ++k) {
    const int n = size(rng);
    std::vector<double> r(static_cast<std::size_t>(n));
    const int type = kind(rng);
    for (double& x : r) {
      if (type == 0) x = static_cast<double>(rng() % 2);                       // exact-match style
      if (type == 1) x = kMfrsLevels[rng() % 4];                               // MFRS style
      if (type == 2) x = std::ldexp(static_cast<double>(dyadic(rng)), -10);    // dense
    }
    const double floor = k % 2 ? 1e-4 : 0.0;
    const auto a = group_advantages(r, floor);
    const double mean = std::accumulate(a.begin(), a.end(), 0.0) / n;
    mean_ok += std::abs(mean) < 1e-9 * n;

    const double c = shift(rng);
    std::vector<double> shifted(r);
    for (double& x : shifted) x += c;
    shift_ok += group_advantages(shifted, floor) == a;

    std::vector<double> same(static_cast<std::size_t>(n), r[0] + 0.1 * type);
    const auto za = group_advantages(same, floor);
    equal_ok += std::all_of(za.begin(), za.end(), [](double v) { return v == 0.0; });
  }
  const bool pass = mean_ok == groups && shift_ok == groups && equal_ok == groups;
  return {pass, std::to_string(groups) + " random groups: |mean(A)| < 1e-9 N in " + std::to_string(mean_ok) +
                    ", exact shift invariance in " + std::to_string(shift_ok) + ", all-equal -> zeros in " +
                    std::to_string(equal_ok)};
}

// --- experiments ----------------------------------------------------------------

struct ExperimentRun {
  RunConfig cfg;
  json summary;
  double seconds = 0;
  int code = 0;
};

ExperimentRun run_experiment(const std::string& config_name, const fs::path& out_dir,
                             const std::function<void(RunConfig&)>& tweak = {}) {
  ExperimentRun r;
  r.cfg = load_run_config((kSourceDir / "configs" / config_name).string(), builtin_presets());
  r.cfg.output_dir = out_dir.string();
  if (tweak) tweak(r.cfg);
  fs::remove_all(out_dir);
  std::ostringstream log;
  const auto t0 = std::chrono::steady_clock::now();
  r.code = run(r.cfg, log);
  r.seconds = seconds_since(t0);
  if (r.code == kExitOk) r.summary = json::parse(slurp(out_dir / "summary.json"));
  return r;
}

Verdict a4(const ExperimentRun& e) {
  if (e.code != kExitOk) return {false, "run failed with exit code " + std::to_string(e.code)};
  const double degenerate = sparse_reward_probe(e.cfg.ordinal, RewardKind::exact, e.cfg.grpo.group_size);
  const auto& cmp = e.summary["comparison"];
  const int wins = cmp["seeds_a_better"];
  const int seeds = cmp["seeds"];
  const double diff = cmp["mean_accuracy_diff"];
  const bool pass = seeds == 10 && degenerate >= 0.6 && wins >= 8 && diff > 0.05 && e.seconds < 300;
  return {pass, "exact-reward degenerate groups at init " + fmt("%.3f", degenerate) + " (need >= 0.6); MFRS wins " +
                    std::to_string(wins) + "/" + std::to_string(seeds) + " seeds (need >= 8); mean accuracy gain " +
                    fmt("%+.2f", 100 * diff) + " pp (need > 5); " + fmt("%.1f", e.seconds) + " s (limit 300 s)"};
}

Verdict a5(const ExperimentRun& pos, const ExperimentRun& neg) {
  if (pos.code != kExitOk || neg.code != kExitOk) return {false, "run failed"};
  const auto& p = pos.summary["arms"]["recite_pos"]["per_seed"];
  const auto& n = neg.summary["arms"]["recite_neg"]["per_seed"];
  int faster = 0, bleu_acc = 0;
  const int seeds = static_cast<int>(std::min(p.size(), n.size()));
  for (int i = 0; i < seeds; ++i) {
    faster += p[i]["steps_to_plateau"].get<int>() < n[i]["steps_to_plateau"].get<int>();
    bleu_acc += n[i]["final_bleu_vs_prompt"].get<double>() < p[i]["final_bleu_vs_prompt"].get<double>() &&
                n[i]["final_accuracy"].get<double>() >= p[i]["final_accuracy"].get<double>();
  }
  const double secs = pos.seconds + neg.seconds;
  const bool pass = seeds == 10 && faster >= 8 && bleu_acc >= 7 && secs < 300;
  return {pass, "delta = +0.2 reaches 90% of its plateau first in " + std::to_string(faster) + "/" +
                    std::to_string(seeds) + " seeds (need >= 8); delta = -2 has lower BLEU and accuracy >= in " +
                    std::to_string(bleu_acc) + "/" + std::to_string(seeds) + " (need >= 7); " + fmt("%.1f", secs) +
                    " s (limit 300 s)"};
}

Verdict a6(const ExperimentRun& e) {
  if (e.code != kExitOk) return {false, "run failed with exit code " + std::to_string(e.code)};
  const auto& cmp = e.summary["comparison"];
  const double gain = cmp["mean_gain_over_untrained"];
  const int mono = cmp["monotone_seeds"];
  const int seeds = cmp["seeds"];
  const bool pass = seeds == 10 && gain > 0.10 && mono >= 8 && e.seconds < 300;
  return {pass, "zero-shot classification gain after localization training " + fmt("%+.2f", 100 * gain) +
                    " pp (need > 10); monotone in M over " + cmp["sweep"].dump() + " in " + std::to_string(mono) +
                    "/" + std::to_string(seeds) + " seeds (need >= 8); " + fmt("%.1f", e.seconds) +
                    " s (limit 300 s)"};
}

// --- A7 -----------------------------------------------------------------------

Verdict a7() {
  std::ifstream in(kSourceDir / "parse_corpus.jsonl");
  if (!in) return {false, "cannot open parse_corpus.jsonl"};
  int cases = 0, agree = 0;
  std::vector<std::string> mismatches;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto c = json::parse(line);
    ++cases;
    const auto p = parse_completion(c["raw"].get<std::string>(), task_mode_from_string(c["mode"].get<std::string>()));
    bool ok = p.format_ok == c["format_ok"].get<bool>();
    if (c["label"].is_null()) {
      ok = ok && !p.label;
    } else {
      ok = ok && p.label && *p.label == c["label"].get<std::string>();
    }
    if (c["bbox"].is_null()) {
      ok = ok && !p.bbox;
    } else {
      const auto b = c["bbox"].get<std::vector<double>>();
      ok = ok && p.bbox && *p.bbox == BBox{b[0], b[1], b[2], b[3]};
    }
    const std::string think = c["think"].is_null() ? "" : c["think"].get<std::string>();
    ok = ok && p.think_text == think;
    if (ok) {
      ++agree;
    } else if (mismatches.size() < 5) {
      mismatches.push_back(c["family"].get<std::string>() + ": " + c["raw"].dump());
    }
  }
  std::string detail = std::to_string(agree) + "/" + std::to_string(cases) + " hand-labeled cases agree";
  for (const auto& m : mismatches) detail += "; mismatch " + m;
  return {cases == 200 && agree == cases, detail};
}

// --- A8 -----------------------------------------------------------------------

// Reruns the first two seeds of each experiment on the serial path and compares
// every records CSV byte for byte with the first run.
Verdict a8(const std::vector<std::pair<std::string, ExperimentRun*>>& runs) {
  int files = 0, identical = 0;
  for (const auto& [config, first] : runs) {
    if (first->code != kExitOk) return {false, "first run of " + config + " failed"};
    const auto dir = kWorkDir / ("rerun_" + fs::path(config).stem().string());
    const auto again = run_experiment(config, dir, [](RunConfig& c) {
      c.seeds.resize(std::min<std::size_t>(2, c.seeds.size()));
      c.grpo.parallel = false;
    });
    if (again.code != kExitOk) return {false, "rerun of " + config + " failed"};
    const fs::path first_dir = first->cfg.output_dir;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
      const auto name = entry.path().filename().string();
      if (name.rfind("records_", 0) != 0) continue;
      ++files;
      identical += slurp(entry.path()) == slurp(first_dir / fs::relative(entry.path(), dir));
    }
  }
  return {files > 0 && identical == files,
          std::to_string(identical) + "/" + std::to_string(files) +
              " records CSVs byte-identical on rerun (same seeds, serial path)"};
}

}  // namespace

int main() {
  fs::create_directories(kWorkDir);
  std::vector<std::pair<std::string, Verdict>> verdicts;
  auto report = [&](const std::string& id, const std::string& title, const Verdict& v) {
    std::cout << id << " " << (v.pass ? "PASS" : "FAIL") << " " << title << ": " << v.detail << std::endl;
    verdicts.emplace_back(id, v);
  };
  auto guarded = [](const std::function<Verdict()>& f) -> Verdict {
    try {
      return f();
    } catch (const std::exception& e) {
      return {false, std::string("exception: ") + e.what()};
    }
  };

  report("A1", "reward-oracle suite", guarded(a1));
  report("A2", "gradient correctness", guarded(a2));
  report("A3", "advantage invariants", guarded(a3));

  ExperimentRun e4, e5p, e5n, e6;
  report("A4", "MFRS vs exact-match", guarded([&] {
           e4 = run_experiment("a4_mfrs_vs_exact.json", kWorkDir / "a4");
           return a4(e4);
         }));
  report("A5", "recitation dynamics", guarded([&] {
           e5p = run_experiment("a5_recite_pos.json", kWorkDir / "a5_pos");
           e5n = run_experiment("a5_recite_neg.json", kWorkDir / "a5_neg");
           return a5(e5p, e5n);
         }));
  report("A6", "cross-task transfer", guarded([&] {
           e6 = run_experiment("a6_pa_policy.json", kWorkDir / "a6");
           return a6(e6);
         }));
  report("A7", "format/parse conformance", guarded(a7));
  report("A8", "determinism", guarded([&] {
           return a8({{"a4_mfrs_vs_exact.json", &e4},
                      {"a5_recite_pos.json", &e5p},
                      {"a5_recite_neg.json", &e5n},
                      {"a6_pa_policy.json", &e6}});
         }));

  const auto failed = std::count_if(verdicts.begin(), verdicts.end(), [](const auto& v) { return !v.second.pass; });
  std::cout << (verdicts.size() - static_cast<std::size_t>(failed)) << "/" << verdicts.size()
            << " acceptance criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
