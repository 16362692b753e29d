#include "vrft/structured_output.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <string>
#include <vector>

#include <json.hpp>

#include "vrft/errors.hpp"

namespace vrft {

namespace {

constexpr std::string_view kThinkOpen = "<think>";
constexpr std::string_view kThinkClose = "</think>";
constexpr std::string_view kAnswerOpen = "<answer>";
constexpr std::string_view kAnswerClose = "</answer>";
constexpr std::string_view kBoxed = "\\boxed{";

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::size_t> find_all(std::string_view hay, std::string_view needle) {
  std::vector<std::size_t> out;
  for (std::size_t pos = hay.find(needle); pos != std::string_view::npos;
       pos = hay.find(needle, pos + needle.size())) {
    out.push_back(pos);
  }
  return out;
}

struct Boxed {
  std::size_t begin;  // position of the backslash
  std::string_view content;
};

// All brace-balanced \boxed{...} occurrences, in order. Brace matching is done once
// for the whole text so adversarial nesting stays linear.
std::vector<Boxed> find_boxed(std::string_view raw) {
  std::vector<std::size_t> match(raw.size(), std::string_view::npos);
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] == '{') {
      stack.push_back(i);
    } else if (raw[i] == '}' && !stack.empty()) {
      match[stack.back()] = i;
      stack.pop_back();
    }
  }
  std::vector<Boxed> out;
  for (std::size_t pos : find_all(raw, kBoxed)) {
    const std::size_t open = pos + kBoxed.size() - 1;
    const std::size_t close = match[open];
    if (close == std::string_view::npos) continue;
    out.push_back({pos, raw.substr(open + 1, close - open - 1)});
  }
  return out;
}

bool finite_box(const BBox& b) {
  return std::isfinite(b.x1) && std::isfinite(b.y1) && std::isfinite(b.x2) && std::isfinite(b.y2);
}

// Depth-first search for the first array of exactly four numbers.
std::optional<BBox> first_box_in_json(const nlohmann::json& j, int depth = 0) {
  if (depth > 64) return std::nullopt;
  if (j.is_array()) {
    if (j.size() == 4 && std::all_of(j.begin(), j.end(), [](const auto& v) { return v.is_number(); })) {
      BBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
      if (finite_box(b)) return b;
    }
    for (const auto& v : j) {
      if (auto b = first_box_in_json(v, depth + 1)) return b;
    }
  } else if (j.is_object()) {
    for (const auto& [key, v] : j.items()) {
      if (auto b = first_box_in_json(v, depth + 1)) return b;
    }
  }
  return std::nullopt;
}

// Skips whitespace, then reads one floating-point number.
bool read_number(std::string_view s, std::size_t& pos, double& out) {
  while (pos < s.size() && is_space(s[pos])) ++pos;
  if (pos >= s.size()) return false;
  std::size_t start = pos;
  if (s[pos] == '+') ++start;
  const auto [ptr, ec] = std::from_chars(s.data() + start, s.data() + s.size(), out);
  if (ec != std::errc{}) return false;
  pos = static_cast<std::size_t>(ptr - s.data());
  return std::isfinite(out);
}

bool expect(std::string_view s, std::size_t& pos, char c) {
  while (pos < s.size() && is_space(s[pos])) ++pos;
  if (pos < s.size() && s[pos] == c) {
    ++pos;
    return true;
  }
  return false;
}

// Fallback for non-JSON answers: the first "[a, b, c, d]" in the text.
std::optional<BBox> first_bare_array(std::string_view s) {
  for (std::size_t open = s.find('['); open != std::string_view::npos; open = s.find('[', open + 1)) {
    std::size_t pos = open + 1;
    double v[4];
    bool ok = true;
    for (int k = 0; k < 4 && ok; ++k) {
      ok = read_number(s, pos, v[k]) && expect(s, pos, k < 3 ? ',' : ']');
    }
    if (ok) return BBox{v[0], v[1], v[2], v[3]};
  }
  return std::nullopt;
}

std::optional<BBox> extract_box(std::string_view content) {
  auto j = nlohmann::json::parse(content.begin(), content.end(), nullptr, /*allow_exceptions=*/false);
  if (!j.is_discarded()) {
    if (auto b = first_box_in_json(j)) return b->normalized();
  }
  if (auto b = first_bare_array(content)) return b->normalized();
  return std::nullopt;
}

}  // namespace

std::string_view to_string(TaskMode mode) {
  switch (mode) {
    case TaskMode::classification: return "classification";
    case TaskMode::detection: return "detection";
    case TaskMode::grading: return "grading";
  }
  return "classification";
}

TaskMode task_mode_from_string(std::string_view name) {
  if (name == "classification") return TaskMode::classification;
  if (name == "detection") return TaskMode::detection;
  if (name == "grading") return TaskMode::grading;
  throw ConfigError("", "unknown task mode '" + std::string(name) + "'");
}

BBox BBox::normalized() const {
  return {std::min(x1, x2), std::min(y1, y2), std::max(x1, x2), std::max(y1, y2)};
}

double BBox::area() const {
  const BBox n = normalized();
  return (n.x2 - n.x1) * (n.y2 - n.y1);
}

std::optional<long long> parse_integer(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return std::nullopt;
  long long value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

ParsedOutput parse_completion(std::string_view raw, TaskMode mode) {
  ParsedOutput out;
  out.mode = mode;
  out.raw = std::string(raw);

  const auto opens = find_all(raw, kThinkOpen);
  const auto closes = find_all(raw, kThinkClose);
  const bool think_ok = opens.size() == 1 && closes.size() == 1 && opens[0] < closes[0];
  std::size_t body_start = 0;
  if (!opens.empty()) {
    const std::size_t content_start = opens[0] + kThinkOpen.size();
    auto close_it = std::lower_bound(closes.begin(), closes.end(), content_start);
    if (close_it != closes.end()) {
      out.think_text = std::string(trim(raw.substr(content_start, *close_it - content_start)));
      body_start = *close_it + kThinkClose.size();
    }
  }

  bool payload_ok = false;
  if (mode == TaskMode::detection) {
    const auto a_open = find_all(raw, kAnswerOpen);
    const auto a_close = find_all(raw, kAnswerClose);
    if (!a_open.empty()) {
      const std::size_t content_start = a_open[0] + kAnswerOpen.size();
      const std::size_t content_end = raw.find(kAnswerClose, content_start);
      const std::string_view content =
          raw.substr(content_start, content_end == std::string_view::npos ? std::string_view::npos
                                                                          : content_end - content_start);
      out.bbox = extract_box(content);
      payload_ok = out.bbox.has_value() && a_open.size() == 1 && a_close.size() == 1 &&
                   a_open[0] < a_close[0] && think_ok && a_open[0] >= body_start;
    }
    if (out.bbox) out.answer_kind = AnswerKind::bbox;
  } else {
    const auto boxes = find_boxed(raw);
    if (!boxes.empty()) {
      const Boxed& last = boxes.back();
      out.label = std::string(trim(last.content));
      out.answer_kind = AnswerKind::label;
      payload_ok = think_ok && last.begin >= body_start && !out.label->empty();
      if (mode == TaskMode::grading) payload_ok = payload_ok && parse_integer(*out.label).has_value();
    }
  }
  out.format_ok = think_ok && payload_ok;
  return out;
}

double format_reward(const ParsedOutput& p) { return p.format_ok ? 1.0 : 0.0; }

std::string render_boxed(std::string_view think, std::string_view label) {
  std::string s;
  s.reserve(think.size() + label.size() + 32);
  s.append(kThinkOpen).append(think).append(kThinkClose).append(kBoxed).append(label).append("}");
  return s;
}

std::string render_detection(std::string_view think, const BBox& box) {
  nlohmann::json answer = {{"bbox", {box.x1, box.y1, box.x2, box.y2}}};
  std::string s;
  s.append(kThinkOpen).append(think).append(kThinkClose);
  s.append(kAnswerOpen).append(answer.dump()).append(kAnswerClose);
  return s;
}

}  // namespace vrft
