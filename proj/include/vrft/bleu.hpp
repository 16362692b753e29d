#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace vrft {

struct BleuConfig {
  int max_n = 4;  // 1..8

  /// Throws ConfigError (field path prefixed with `path`) on an invalid setting.
  void validate(const std::string& path = "bleu") const;
};

/// Lowercased whitespace tokenization.
std::vector<std::string> tokenize_lower(std::string_view text);

/// Sentence BLEU without smoothing: geometric mean of clipped n-gram precisions for
/// n = 1..min(max_n, |candidate|), times the brevity penalty. Returns 0 when either side
/// has no tokens or any precision is zero.
double bleu(std::string_view candidate, std::string_view reference, const BleuConfig& cfg = {});

/// Same metric over pre-tokenized input.
double bleu_tokens(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
                   const BleuConfig& cfg = {});

}  // namespace vrft
