#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace vrft {

enum class TaskMode { classification, detection, grading };

std::string_view to_string(TaskMode mode);
/// Throws ConfigError on an unknown name.
TaskMode task_mode_from_string(std::string_view name);

struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  /// Reorders corners so that x1 <= x2 and y1 <= y2.
  BBox normalized() const;
  double area() const;
  bool operator==(const BBox&) const = default;
};

enum class AnswerKind { none, label, bbox };

struct ParsedOutput {
  TaskMode mode = TaskMode::classification;
  std::string think_text;
  AnswerKind answer_kind = AnswerKind::none;
  std::optional<std::string> label;
  std::optional<BBox> bbox;
  bool format_ok = false;
  std::string raw;
};

/// Decomposes a model completion. Total: malformed text yields format_ok = false
/// with whatever payload could still be recovered.
///
/// Compliance rules:
///   - exactly one `<think>` and one `</think>`, open before close;
///   - classification/grading: at least one `\boxed{...}` after `</think>`, the last
///     one non-empty (grading: an integer);
///   - detection: exactly one `<answer>...</answer>` after `</think>` holding a
///     4-number array (JSON object, JSON array or bare `[a, b, c, d]`).
/// Text outside these constructs is ignored. Tags are case-sensitive.
ParsedOutput parse_completion(std::string_view raw, TaskMode mode);

/// 1.0 iff the completion complied with the output grammar.
double format_reward(const ParsedOutput& p);

/// Canonical renderings used by the toy policies; parse_completion inverts them.
std::string render_boxed(std::string_view think, std::string_view label);
std::string render_detection(std::string_view think, const BBox& box);

/// Parses a decimal integer with optional sign and surrounding whitespace.
std::optional<long long> parse_integer(std::string_view text);

}  // namespace vrft
