#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace vrft {

/// Class name -> visual attribute description. Iteration order is sorted by name.
struct KnowledgeBase {
  std::map<std::string, std::string> entries;
};

/// Reads a JSON object of string -> string. Throws ConfigError on an unreadable or empty
/// file, duplicate keys, empty names or empty attribute text (the offending key is named).
KnowledgeBase load_knowledge(const std::string& path);
/// Same validation over in-memory text.
KnowledgeBase parse_knowledge(const std::string& text);

struct PromptTemplate {
  enum class Kind { classification, detection };
  Kind kind = Kind::classification;
  std::string modality = "medical";
  std::string target = "lesion";
  /// Class names; merged with the knowledge base's classes when one is given.
  std::vector<std::string> classes;
};

/// Renders the task prompt. Classes are listed once each in sorted order, as
/// "name: attributes" when the knowledge base describes them and "name" otherwise.
/// Throws ConfigError for a classification prompt with no classes.
std::string build_prompt(const PromptTemplate& tmpl, const std::optional<KnowledgeBase>& kb = std::nullopt);

/// The knowledge section alone ("name: attributes; ..."), the text recitation is measured against.
std::string knowledge_text(const KnowledgeBase& kb);

}  // namespace vrft
