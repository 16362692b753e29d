#include "vrft/prompt_builder.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vrft/errors.hpp"

namespace vrft {

namespace {

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

std::vector<std::string> merged_classes(const PromptTemplate& tmpl, const std::optional<KnowledgeBase>& kb) {
  std::set<std::string> names(tmpl.classes.begin(), tmpl.classes.end());
  if (kb) {
    for (const auto& [name, attrs] : kb->entries) names.insert(name);
  }
  return {names.begin(), names.end()};
}

std::string class_list(const std::vector<std::string>& classes, const std::optional<KnowledgeBase>& kb) {
  std::string out;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (i) out += "; ";
    out += classes[i];
    if (kb) {
      auto it = kb->entries.find(classes[i]);
      if (it != kb->entries.end()) out += ": " + it->second;
    }
  }
  return out;
}

}  // namespace

KnowledgeBase parse_knowledge(const std::string& text) {
  using nlohmann::json;
  if (blank(text)) throw ConfigError("knowledge", "empty knowledge file: a knowledge base must describe at least one class");

  // Duplicate keys are detected while parsing; json objects would silently keep the last one.
  std::set<std::string> seen;
  std::string duplicate;
  json::parser_callback_t cb = [&](int d, json::parse_event_t event, json& parsed) {
    if (event == json::parse_event_t::key && d == 1 && duplicate.empty()) {
      const auto key = parsed.get<std::string>();
      if (!seen.insert(key).second) duplicate = key;
    }
    return true;
  };
  json j;
  try {
    j = json::parse(text, cb);
  } catch (const json::parse_error& e) {
    throw ConfigError("knowledge", std::string("not valid JSON: ") + e.what());
  }
  if (!duplicate.empty()) throw ConfigError("knowledge." + duplicate, "duplicate class '" + duplicate + "'");
  if (!j.is_object()) throw ConfigError("knowledge", "expected a JSON object of class name -> attributes");
  if (j.empty()) throw ConfigError("knowledge", "a knowledge base must describe at least one class");

  KnowledgeBase kb;
  for (const auto& [name, value] : j.items()) {
    if (blank(name)) throw ConfigError("knowledge", "empty class name");
    if (!value.is_string()) throw ConfigError("knowledge." + name, "attributes must be a string");
    const auto attrs = value.get<std::string>();
    if (blank(attrs)) throw ConfigError("knowledge." + name, "empty attribute text");
    kb.entries.emplace(name, attrs);
  }
  return kb;
}

KnowledgeBase load_knowledge(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("knowledge", "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_knowledge(ss.str());
}

std::string knowledge_text(const KnowledgeBase& kb) {
  std::vector<std::string> names;
  for (const auto& [name, attrs] : kb.entries) names.push_back(name);
  return class_list(names, kb);
}

std::string build_prompt(const PromptTemplate& tmpl, const std::optional<KnowledgeBase>& kb) {
  const auto classes = merged_classes(tmpl, kb);
  std::string p;
  if (tmpl.kind == PromptTemplate::Kind::classification) {
    if (classes.empty()) throw ConfigError("template.classes", "a classification prompt needs at least one class");
    p += "This is a " + tmpl.modality + " image of " + tmpl.target + ". ";
    p += "Please identify the category of the " + tmpl.target + " based on the image. ";
    p += "Categories and their typical descriptions are as follows: " + class_list(classes, kb) + ". ";
    p += "You FIRST think about the reasoning process as an internal monologue and then provide the final answer. ";
    p += "The reasoning process MUST BE enclosed within <think> </think> tags. ";
    p += "The final answer MUST BE put in \\boxed{...}.";
    return p;
  }
  p += "Analyze the image and provide the bounding box for the " + tmpl.target + ". ";
  p += "Ensure the bounding box accurately covers it and does not include too much unrelated areas. ";
  p += "Output the bounding box in the format [x1, y1, x2, y2]. ";
  p += "Generate your thinking process on how you determined the box. ";
  p += "First output the thinking process in <think> </think> tags and then output the final answer in "
       "<answer> </answer> tags. ";
  p += "Output the final answer in JSON format.";
  if (!classes.empty()) p += " Reference knowledge: " + class_list(classes, kb) + ".";
  return p;
}

}  // namespace vrft
