#include "vrft/bleu.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_map>

#include "vrft/errors.hpp"

namespace vrft {

namespace {

// n-grams are keyed by their tokens joined with a unit separator.
std::unordered_map<std::string, int> ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
  std::unordered_map<std::string, int> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t k = 1; k < n; ++k) {
      key.push_back('\x1f');
      key += tokens[i + k];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace

void BleuConfig::validate(const std::string& path) const {
  if (max_n < 1 || max_n > 8) throw ConfigError(path + ".max_n", "must be in [1, 8]");
}

std::vector<std::string> tokenize_lower(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

double bleu_tokens(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
                   const BleuConfig& cfg) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const std::size_t orders = std::min<std::size_t>(static_cast<std::size_t>(cfg.max_n), candidate.size());

  double log_sum = 0.0;
  for (std::size_t n = 1; n <= orders; ++n) {
    const auto cand = ngram_counts(candidate, n);
    const auto ref = ngram_counts(reference, n);
    long matched = 0;
    for (const auto& [gram, count] : cand) {
      auto it = ref.find(gram);
      if (it != ref.end()) matched += std::min(count, it->second);
    }
    if (matched == 0) return 0.0;
    const auto total = static_cast<double>(candidate.size() - n + 1);
    log_sum += std::log(static_cast<double>(matched) / total);
  }

  const auto c = static_cast<double>(candidate.size());
  const auto r = static_cast<double>(reference.size());
  const double log_bp = c >= r ? 0.0 : 1.0 - r / c;
  return std::exp(log_sum / static_cast<double>(orders) + log_bp);
}

double bleu(std::string_view candidate, std::string_view reference, const BleuConfig& cfg) {
  return bleu_tokens(tokenize_lower(candidate), tokenize_lower(reference), cfg);
}

}  // namespace vrft
