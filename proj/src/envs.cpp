#include "vrft/envs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vrft/bleu.hpp"
#include "vrft/errors.hpp"
#include "vrft/prompt_builder.hpp"
#include "vrft/reward_json.hpp"

namespace vrft {

namespace {

constexpr std::uint64_t kTestStream = 0x7e57000000000000ULL;

void require(bool ok, const std::string& path, const std::string& message) {
  if (!ok) throw ConfigError(path, message);
}

Observation gaussian(std::size_t n, double sigma, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Observation out(n);
  for (double& v : out) v = sigma * normal(rng);
  return out;
}

const char* const kClassNames[] = {"melanoma", "nevus", "keratosis", "carcinoma",
                                   "dermatofibroma", "lentigo", "angioma", "psoriasis"};

}  // namespace

// --- datasets ---------------------------------------------------------------

void export_jsonl(const Dataset& data, std::ostream& out) {
  for (const auto& s : data.samples) {
    out << "{\"id\":" << nlohmann::json(s.id).dump() << ",\"task\":\"" << to_string(data.mode)
        << "\",\"observation\":[";
    for (std::size_t i = 0; i < s.obs.size(); ++i) {
      if (i) out << ',';
      out << format_double(s.obs[i]);
    }
    out << "],\"ground_truth\":" << to_json(s.truth).dump() << ",\"target\":" << s.target
        << ",\"class\":" << s.cls << "}\n";
  }
}

Dataset import_jsonl(std::istream& in) {
  Dataset data;
  std::string line;
  int lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string path = "line " + std::to_string(lineno);
    auto j = nlohmann::json::parse(line, nullptr, false);
    require(!j.is_discarded() && j.is_object(), path, "not a JSON object");
    require(j.contains("id") && j["id"].is_string(), path + ".id", "expected a string");
    require(j.contains("task") && j["task"].is_string(), path + ".task", "expected a string");
    require(j.contains("observation") && j["observation"].is_array(), path + ".observation", "expected an array");
    require(j.contains("ground_truth"), path + ".ground_truth", "missing");
    TaskMode mode;
    try {
      mode = task_mode_from_string(j["task"].get<std::string>());
    } catch (const ConfigError& e) {
      throw ConfigError(path + ".task", e.what());
    }
    if (first) {
      data.mode = mode;
      first = false;
    }
    require(mode == data.mode, path + ".task", "mixed tasks in one dataset");
    Sample s;
    s.id = j["id"].get<std::string>();
    for (const auto& v : j["observation"]) {
      require(v.is_number(), path + ".observation", "expected numbers");
      s.obs.push_back(v.get<double>());
    }
    s.truth = ground_truth_from_json(j["ground_truth"], path + ".ground_truth");
    if (j.contains("target")) {
      require(j["target"].is_number_integer(), path + ".target", "expected an integer");
      s.target = j["target"].get<int>();
    }
    s.cls = s.target;
    if (j.contains("class")) {
      require(j["class"].is_number_integer(), path + ".class", "expected an integer");
      s.cls = j["class"].get<int>();
    }
    data.samples.push_back(std::move(s));
  }
  return data;
}

std::string dataset_hash(const Dataset& data) {
  std::ostringstream ss;
  export_jsonl(data, ss);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : ss.str()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

double greedy_accuracy(const Environment& env, const Policy& policy, bool parallel) {
  const auto& samples = env.test_set().samples;
  const auto n = static_cast<std::ptrdiff_t>(samples.size());
  if (n == 0) return 0.0;
  long hits = 0;
#pragma omp parallel for reduction(+ : hits) schedule(static) if (parallel)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    if (env.correct(s, greedy(policy, s.obs))) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

// --- few-shot ---------------------------------------------------------------

void FewShotSampler::validate(const std::string& path) const {
  require(shots_per_class == 10 || shots_per_class == 20 || shots_per_class == 256, path + ".shots_per_class",
          "must be 10, 20 or 256");
}

std::pair<std::vector<Sample>, std::vector<Sample>> few_shot_split(const std::vector<Sample>& samples,
                                                                   int num_classes, const FewShotSampler& sampler,
                                                                   int test_per_class) {
  sampler.validate();
  require(num_classes >= 1, "num_classes", "must be >= 1");
  require(test_per_class >= 0, "test_per_class", "must be >= 0");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int c = samples[i].cls;
    require(c >= 0 && c < num_classes, "samples[" + std::to_string(i) + "].class", "outside [0, num_classes)");
    by_class[static_cast<std::size_t>(c)].push_back(i);
  }
  std::vector<Sample> train;
  std::vector<Sample> test;
  for (int c = 0; c < num_classes; ++c) {
    auto& idx = by_class[static_cast<std::size_t>(c)];
    require(!idx.empty(), "class " + std::to_string(c), "empty class");
    Rng rng = make_rng(sampler.seed, {0xf5u, static_cast<std::uint64_t>(c)});
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n_test = std::min(idx.size(), static_cast<std::size_t>(test_per_class));
    const std::size_t n_train =
        std::min(idx.size() - n_test, static_cast<std::size_t>(sampler.shots_per_class));
    for (std::size_t k = 0; k < n_test; ++k) test.push_back(samples[idx[k]]);
    for (std::size_t k = n_test; k < n_test + n_train; ++k) train.push_back(samples[idx[k]]);
  }
  return {std::move(train), std::move(test)};
}

// --- ordinal ----------------------------------------------------------------

void OrdinalEnvConfig::validate(const std::string& path) const {
  require(num_grades >= 3, path + ".num_grades", "must be >= 3");
  require(std::isfinite(noise_sigma) && noise_sigma >= 0.0, path + ".noise_sigma", "must be finite and >= 0");
  require(feature_dim >= 1, path + ".feature_dim", "must be >= 1");
  require(std::isfinite(grade_spacing) && grade_spacing > 0.0, path + ".grade_spacing", "must be > 0");
  require(samples_per_grade >= 1, path + ".samples_per_grade", "must be >= 1");
  require(answer_range >= num_grades, path + ".answer_range", "must be >= num_grades");
  require(test_per_class >= 0, path + ".test_per_class", "must be >= 0");
  require(std::isfinite(imbalance_ratio) && imbalance_ratio >= 1.0, path + ".imbalance_ratio", "must be >= 1");
  FewShotSampler{shots_per_class, 0}.validate(path);
}

namespace {

std::vector<double> ordinal_direction(int dim) {
  return std::vector<double>(static_cast<std::size_t>(dim), 1.0 / std::sqrt(static_cast<double>(dim)));
}

}  // namespace

Observation ordinal_observe(const OrdinalEnvConfig& cfg, int grade, Rng& rng) {
  require(grade >= 0 && grade < cfg.num_grades, "grade", "outside [0, num_grades)");
  Observation x = gaussian(static_cast<std::size_t>(cfg.feature_dim), cfg.noise_sigma, rng);
  const auto u = ordinal_direction(cfg.feature_dim);
  const double c = (grade - 0.5 * (cfg.num_grades - 1)) * cfg.grade_spacing;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += c * u[i];
  return x;
}

OrdinalEnv::OrdinalEnv(OrdinalEnvConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::vector<Sample> all;
  for (int g = 0; g < cfg_.num_grades; ++g) {
    const double frac = static_cast<double>(g) / static_cast<double>(cfg_.num_grades - 1);
    const auto count = std::max<long>(
        1, std::lround(cfg_.samples_per_grade * std::pow(cfg_.imbalance_ratio, -frac)));
    for (long k = 0; k < count; ++k) {
      Rng rng = make_rng(seed, {static_cast<std::uint64_t>(g), static_cast<std::uint64_t>(k)});
      Sample s;
      s.id = "ord-g" + std::to_string(g) + "-" + std::to_string(k);
      s.obs = ordinal_observe(cfg_, g, rng);
      s.truth.grade = g;
      s.target = g;
      s.cls = g;
      all.push_back(std::move(s));
    }
  }
  auto [train, test] = few_shot_split(all, cfg_.num_grades, {cfg_.shots_per_class, seed}, cfg_.test_per_class);
  train_ = {TaskMode::grading, std::move(train)};
  test_ = {TaskMode::grading, std::move(test)};

  PromptTemplate t;
  t.modality = "fundus photography";
  t.target = "retina";
  for (int g = 0; g < cfg_.num_grades; ++g) t.classes.push_back(std::to_string(g));
  prompt_ = build_prompt(t);
}

std::vector<double> OrdinalEnv::embed(int grade) const {
  auto u = ordinal_direction(cfg_.feature_dim);
  for (double& v : u) v *= (grade - 0.5 * (cfg_.num_grades - 1)) * cfg_.grade_spacing;
  return u;
}

std::unique_ptr<Policy> OrdinalEnv::make_policy() const {
  return std::make_unique<SoftmaxBandit>(static_cast<std::size_t>(cfg_.answer_range),
                                         static_cast<std::size_t>(cfg_.feature_dim));
}

std::string OrdinalEnv::render(const Sample&, std::span<const int> tokens) const {
  const int k = tokens[0];
  return render_boxed("the lesion pattern is most consistent with grade " + std::to_string(k), std::to_string(k));
}

bool OrdinalEnv::correct(const Sample& s, std::span<const int> tokens) const { return tokens[0] == s.target; }

std::optional<std::vector<int>> OrdinalEnv::supervised_tokens(const Sample& s) const {
  return std::vector<int>{s.target};
}

double ordinal_bayes_accuracy(const OrdinalEnvConfig& cfg, int samples, std::uint64_t seed, bool parallel) {
  cfg.validate();
  require(samples >= 1, "samples", "must be >= 1");
  std::vector<std::vector<double>> centroids;
  const auto u = ordinal_direction(cfg.feature_dim);
  for (int g = 0; g < cfg.num_grades; ++g) {
    std::vector<double> c(u);
    for (double& v : c) v *= (g - 0.5 * (cfg.num_grades - 1)) * cfg.grade_spacing;
    centroids.push_back(std::move(c));
  }
  long hits = 0;
#pragma omp parallel for reduction(+ : hits) schedule(static) if (parallel)
  for (int i = 0; i < samples; ++i) {
    Rng rng = make_rng(seed, {0xba7e5u, static_cast<std::uint64_t>(i)});
    const int grade = static_cast<int>(rng() % static_cast<std::uint64_t>(cfg.num_grades));
    const auto x = ordinal_observe(cfg, grade, rng);
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int g = 0; g < cfg.num_grades; ++g) {
      double d = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) d += (x[k] - centroids[static_cast<std::size_t>(g)][k]) * (x[k] - centroids[static_cast<std::size_t>(g)][k]);
      if (d < best_d) {
        best_d = d;
        best = g;
      }
    }
    if (best == grade) ++hits;
  }
  return static_cast<double>(hits) / samples;
}

double sparse_reward_probe(const OrdinalEnvConfig& cfg, RewardKind kind, int group_size) {
  require(cfg.num_grades >= 1, "env.num_grades", "must be >= 1");
  require(cfg.answer_range >= cfg.num_grades, "env.answer_range", "must be >= num_grades");
  require(group_size >= 1, "group_size", "must be >= 1");
  RewardSpec spec;
  spec.mode = TaskMode::grading;
  if (kind == RewardKind::exact) spec.mfrs_weights = {1.0};

  double degenerate = 0.0;
  for (int g = 0; g < cfg.num_grades; ++g) {
    GroundTruth gt;
    gt.grade = g;
    // Distribution of the total reward of one uniformly drawn answer.
    std::map<double, double> dist;
    for (int k = 0; k < cfg.answer_range; ++k) {
      const auto text = render_boxed("grade " + std::to_string(k), std::to_string(k));
      const double total = score(parse_completion(text, TaskMode::grading), gt, "", spec).total;
      dist[total] += 1.0 / cfg.answer_range;
    }
    double p_same = 0.0;
    for (const auto& [value, p] : dist) p_same += std::pow(p, group_size);
    degenerate += p_same / cfg.num_grades;
  }
  return degenerate;
}

// --- recitation -------------------------------------------------------------

void RecitationEnvConfig::validate(const std::string& path) const {
  const auto tokens = tokenize_lower(knowledge_text);
  require(!tokens.empty(), path + ".knowledge_text", "must contain at least one token");
  const std::set<std::string> distinct(tokens.begin(), tokens.end());
  require(vocab_size == 0 || vocab_size >= static_cast<int>(distinct.size()) + 1, path + ".vocab_size",
          "must cover the knowledge tokens plus at least one observation token");
  require(answer_classes >= 2, path + ".answer_classes", "must be >= 2");
  require(think_len >= 0, path + ".think_len", "must be >= 0");
  require(std::isfinite(signal), path + ".signal", "must be finite");
  require(std::isfinite(noise_sigma) && noise_sigma >= 0.0, path + ".noise_sigma", "must be >= 0");
  require(std::isfinite(recite_bias), path + ".recite_bias", "must be finite");
  require(samples_per_class >= 1, path + ".samples_per_class", "must be >= 1");
  require(test_per_class >= 0, path + ".test_per_class", "must be >= 0");
  FewShotSampler{shots_per_class, 0}.validate(path);
}

RecitationEnv::RecitationEnv(RecitationEnvConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto tokens = tokenize_lower(cfg_.knowledge_text);
  std::map<std::string, int> ids;
  for (const auto& t : tokens) {
    if (ids.emplace(t, static_cast<int>(vocab_.size())).second) vocab_.push_back(t);
  }
  knowledge_vocab_ = static_cast<int>(vocab_.size());
  const int vocab = cfg_.vocab_size == 0 ? knowledge_vocab_ + 1 : cfg_.vocab_size;
  const char* const fillers[] = {"inspect", "observe", "examine", "compare", "measure", "trace", "scan", "probe"};
  for (int j = 0; static_cast<int>(vocab_.size()) < vocab; ++j) {
    std::string w = j < 8 ? fillers[j] : "look" + std::to_string(j);
    while (ids.count(w)) w += "_";
    ids.emplace(w, static_cast<int>(vocab_.size()));
    vocab_.push_back(w);
  }
  think_len_ = cfg_.think_len == 0 ? static_cast<int>(tokens.size()) : cfg_.think_len;
  for (int t = 0; t < think_len_; ++t) recite_ids_.push_back(ids[tokens[static_cast<std::size_t>(t) % tokens.size()]]);

  const auto k = static_cast<std::size_t>(cfg_.answer_classes);
  // One channel per think slot, then the direct view and the attribute channel.
  const auto channels = static_cast<std::size_t>(think_len_) + 2;
  std::vector<Sample> all;
  for (int c = 0; c < cfg_.answer_classes; ++c) {
    for (int i = 0; i < cfg_.samples_per_class; ++i) {
      Rng rng = make_rng(seed, {static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)});
      Sample s;
      s.id = "rec-c" + std::to_string(c) + "-" + std::to_string(i);
      s.obs = gaussian(channels * k, cfg_.noise_sigma, rng);
      for (std::size_t ch = 0; ch < channels; ++ch) s.obs[ch * k + static_cast<std::size_t>(c)] += cfg_.signal;
      s.truth.label = class_name(c);
      s.target = c;
      s.cls = c;
      all.push_back(std::move(s));
    }
  }
  auto [train, test] = few_shot_split(all, cfg_.answer_classes, {cfg_.shots_per_class, seed}, cfg_.test_per_class);
  train_ = {TaskMode::classification, std::move(train)};
  test_ = {TaskMode::classification, std::move(test)};
}

std::string RecitationEnv::class_name(int k) const {
  if (k >= 0 && k < 8) return kClassNames[k];
  return "class_" + std::to_string(k);
}

std::unique_ptr<Policy> RecitationEnv::make_policy() const {
  const auto k = static_cast<std::size_t>(cfg_.answer_classes);
  const auto think = static_cast<std::size_t>(think_len_);
  const int observe_from = knowledge_vocab_;
  const bool with_knowledge = cfg_.prompt_knowledge;
  std::vector<SeqSoftmax::Position> positions(think, {vocab_.size(), 1});
  positions.push_back({k, 2 * k + 1});
  auto features = [k, think, observe_from, with_knowledge](std::span<const double> obs, std::size_t pos,
                                                           std::span<const int> prefix, std::span<double> phi) {
    if (pos < think) {
      phi[0] = 1.0;
      return;
    }
    std::fill(phi.begin(), phi.end(), 0.0);
    for (std::size_t c = 0; c < k; ++c) phi[c] = obs[think * k + c];
    for (std::size_t t = 0; t < think; ++t) {
      if (prefix[t] < observe_from) continue;
      for (std::size_t c = 0; c < k; ++c) phi[c] += obs[t * k + c];
    }
    if (with_knowledge) {
      for (std::size_t c = 0; c < k; ++c) phi[k + c] = obs[(think + 1) * k + c];
    }
    phi[2 * k] = 1.0;
  };
  auto policy = std::make_unique<SeqSoftmax>(std::move(positions), std::move(features));
  for (std::size_t t = 0; t < think; ++t) {
    policy->weights(t, static_cast<std::size_t>(recite_ids_[t]))[0] = cfg_.recite_bias;
  }
  return policy;
}

std::string RecitationEnv::render(const Sample&, std::span<const int> tokens) const {
  std::string think;
  for (int t = 0; t < think_len_; ++t) {
    if (t) think += ' ';
    think += vocab_[static_cast<std::size_t>(tokens[static_cast<std::size_t>(t)])];
  }
  return render_boxed(think, class_name(tokens[static_cast<std::size_t>(think_len_)]));
}

bool RecitationEnv::correct(const Sample& s, std::span<const int> tokens) const {
  return tokens[static_cast<std::size_t>(think_len_)] == s.target;
}

// --- localization -----------------------------------------------------------

void DetectionEnvConfig::validate(const std::string& path) const {
  require(grid >= 2, path + ".grid", "must be >= 2");
  require(std::isfinite(cell) && cell > 0.0, path + ".cell", "must be > 0");
  require(std::isfinite(distractor_overlap) && distractor_overlap >= 0.0 && distractor_overlap < 1.0,
          path + ".distractor_overlap", "must lie in [0, 1)");
  require(classes >= 2, path + ".classes", "must be >= 2");
  require(descriptor_dim >= 1, path + ".descriptor_dim", "must be >= 1");
  for (auto [v, name] : {std::pair{descriptor_signal, "descriptor_signal"}, {descriptor_noise, "descriptor_noise"},
                         {evidence_signal, "evidence_signal"}, {evidence_noise, "evidence_noise"}}) {
    require(std::isfinite(v) && v >= 0.0, path + "." + name, "must be finite and >= 0");
  }
  require(train_size >= 1, path + ".train_size", "must be >= 1");
  require(test_size >= 0, path + ".test_size", "must be >= 0");
}

namespace {

Sample detection_sample(const DetectionEnvConfig& cfg, Rng& rng, std::string id) {
  const auto regions = static_cast<std::size_t>(cfg.grid * cfg.grid);
  const auto classes = static_cast<std::size_t>(cfg.classes);
  const auto f = static_cast<std::size_t>(cfg.descriptor_dim);
  const int informative = static_cast<int>(rng() % regions);
  const int cls = static_cast<int>(rng() % classes);
  Sample s;
  s.id = std::move(id);
  s.obs = gaussian(regions * classes, cfg.evidence_noise, rng);
  auto desc = gaussian(regions * f, cfg.descriptor_noise, rng);
  s.obs.insert(s.obs.end(), desc.begin(), desc.end());
  const auto r = static_cast<std::size_t>(informative);
  s.obs[r * classes + static_cast<std::size_t>(cls)] += cfg.evidence_signal;
  const double per_dim = cfg.descriptor_signal / std::sqrt(static_cast<double>(f));
  for (std::size_t i = 0; i < f; ++i) s.obs[regions * classes + r * f + i] += per_dim;
  s.target = informative;
  s.cls = cls;
  return s;
}

}  // namespace

DetectionEnv::DetectionEnv(DetectionEnvConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  for (int i = 0; i < cfg_.train_size; ++i) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(i)});
    train_.samples.push_back(detection_sample(cfg_, rng, "loc-train-" + std::to_string(i)));
  }
  for (int i = 0; i < cfg_.test_size; ++i) {
    Rng rng = make_rng(seed, {kTestStream + static_cast<std::uint64_t>(i)});
    test_.samples.push_back(detection_sample(cfg_, rng, "loc-test-" + std::to_string(i)));
  }
  for (auto* set : {&train_, &test_}) {
    set->mode = TaskMode::detection;
    for (auto& s : set->samples) s.truth.bbox = candidate_box(s.target);
  }
  PromptTemplate t;
  t.kind = PromptTemplate::Kind::detection;
  t.modality = "dermoscopy";
  t.target = "lesion region";
  prompt_ = build_prompt(t);
}

BBox DetectionEnv::candidate_box(int region) const {
  const double stride = cfg_.cell * (1.0 - cfg_.distractor_overlap);
  const double x = (region % cfg_.grid) * stride;
  const double y = (region / cfg_.grid) * stride;
  return {x, y, x + cfg_.cell, y + cfg_.cell};
}

std::unique_ptr<Policy> DetectionEnv::make_policy() const {
  return std::make_unique<SharedBackbone>(static_cast<std::size_t>(regions()),
                                          static_cast<std::size_t>(cfg_.classes),
                                          static_cast<std::size_t>(cfg_.descriptor_dim));
}

std::string DetectionEnv::render(const Sample&, std::span<const int> tokens) const {
  const int r = tokens[0];
  return render_detection("the most salient region is cell " + std::to_string(r), candidate_box(r));
}

bool DetectionEnv::correct(const Sample& s, std::span<const int> tokens) const { return tokens[0] == s.target; }

std::optional<std::vector<int>> DetectionEnv::supervised_tokens(const Sample& s) const {
  return std::vector<int>{s.target};
}

double zero_shot_accuracy(const DetectionEnv& env, const Policy& policy) {
  if (policy.arch() != Arch::shared_backbone) throw ConfigError("policy.arch", "zero-shot evaluation needs shared_backbone");
  const auto& samples = env.test_set().samples;
  const auto n = static_cast<std::ptrdiff_t>(samples.size());
  if (n == 0) return 0.0;
  long hits = 0;
#pragma omp parallel for reduction(+ : hits) schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    const auto z = shared_backbone_forward(policy, s.obs, SharedBackbone::Head::classify);
    if (std::max_element(z.begin(), z.end()) - z.begin() == s.cls) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace vrft
