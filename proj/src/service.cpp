#include "vrft/service.hpp"

#include <set>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "vrft/batch_scoring.hpp"
#include "vrft/errors.hpp"
#include "vrft/reward_json.hpp"
#include "vrft/version.hpp"

namespace vrft {

namespace {

using nlohmann::json;

HttpReply error_reply(int status, const std::string& path, const std::string& message) {
  json j = {{"error", message}};
  if (!path.empty()) j["path"] = path;
  return {status, j.dump()};
}

// The spec echo is rebuilt by hand so every double keeps 17 significant digits.
std::string spec_json_text(const RewardSpec& spec) {
  json j = to_json(spec);
  std::string out = "{";
  bool first = true;
  for (const auto& [key, value] : j.items()) {
    if (!first) out += ",";
    first = false;
    out += json(key).dump() + ":";
    if (value.is_number_float()) {
      out += format_double(value.get<double>());
    } else if (value.is_array() && key == "mfrs_weights") {
      out += "[";
      for (std::size_t i = 0; i < value.size(); ++i) {
        if (i) out += ",";
        out += format_double(value[i].get<double>());
      }
      out += "]";
    } else {
      out += value.dump();
    }
  }
  return out + "}";
}

}  // namespace

HttpReply handle_score(const std::string& body, const std::map<std::string, RewardSpec>& presets, bool parallel) {
  json req;
  try {
    req = json::parse(body);
  } catch (const json::parse_error& e) {
    return error_reply(400, "", std::string("body is not valid JSON: ") + e.what());
  }
  if (!req.is_object()) return error_reply(400, "", "body must be a JSON object");
  for (const auto& [key, value] : req.items()) {
    if (key != "spec" && key != "items") return error_reply(400, key, "unknown field");
  }
  if (!req.contains("spec")) return error_reply(400, "spec", "missing");
  if (!req.contains("items")) return error_reply(400, "items", "missing");
  if (!req["items"].is_array()) return error_reply(400, "items", "expected an array");
  if (req["items"].size() > kMaxScoreItems) {
    return error_reply(413, "items", "at most " + std::to_string(kMaxScoreItems) + " items per request");
  }

  RewardSpec spec;
  std::vector<ScoreItem> items;
  try {
    spec = resolve_spec(req["spec"], presets, "spec");
    std::set<std::string> ids;
    for (std::size_t i = 0; i < req["items"].size(); ++i) {
      const auto path = "items[" + std::to_string(i) + "]";
      items.push_back(score_item_from_json(req["items"][i], path));
      if (!ids.insert(items.back().id).second) throw ConfigError(path + ".id", "duplicate id '" + items.back().id + "'");
    }
  } catch (const ConfigError& e) {
    return error_reply(400, e.path(), e.what());
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto path = "items[" + std::to_string(i) + "]";
    if (items[i].task != spec.mode) {
      return error_reply(422, path + ".task",
                         "task '" + std::string(to_string(items[i].task)) + "' does not match spec mode '" +
                             std::string(to_string(spec.mode)) + "'");
    }
    try {
      check_compatible(items[i].task, items[i].truth, spec);
    } catch (const ConfigError& e) {
      return error_reply(400, path + "." + e.path(), e.what());
    }
  }

  const auto scores = score_batch(items, spec, parallel);
  std::string out = "{\"items\":[";
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    const auto& b = scores[i];
    out += "{\"id\":" + json(items[i].id).dump() + ",\"format_reward\":" + format_double(b.format) +
           ",\"task_reward\":" + format_double(b.task) + ",\"recite_reward\":" + format_double(b.recite) +
           ",\"total\":" + format_double(b.total) + "}";
  }
  out += "],\"spec_echo\":" + spec_json_text(spec) + "}";
  return {200, out};
}

HttpReply handle_healthz(const std::map<std::string, RewardSpec>& presets) {
  json names = json::array();
  for (const auto& [name, spec] : presets) names.push_back(name);
  return {200, json{{"status", "ok"}, {"version", kVersion}, {"presets", names}}.dump()};
}

struct Server::Impl {
  std::map<std::string, RewardSpec> presets;
  httplib::Server http;
  bool bound = false;
};

Server::Server(std::map<std::string, RewardSpec> presets) : impl_(std::make_unique<Impl>()) {
  impl_->presets = std::move(presets);
  const auto* p = &impl_->presets;
  impl_->http.Post("/v1/score", [p](const httplib::Request& req, httplib::Response& res) {
    const auto reply = handle_score(req.body, *p);
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  });
  impl_->http.Get("/healthz", [p](const httplib::Request&, httplib::Response& res) {
    const auto reply = handle_healthz(*p);
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  });
}

Server::~Server() = default;

int Server::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->http.bind_to_any_port(host);
    impl_->bound = bound > 0;
    return impl_->bound ? bound : -1;
  }
  impl_->bound = impl_->http.bind_to_port(host, port);
  return impl_->bound ? port : -1;
}

bool Server::listen() { return impl_->bound && impl_->http.listen_after_bind(); }

void Server::stop() { impl_->http.stop(); }

bool serve(const std::string& host, int port, const std::map<std::string, RewardSpec>& presets) {
  Server server(presets);
  if (server.bind(host, port) < 0) return false;
  return server.listen();
}

}  // namespace vrft
