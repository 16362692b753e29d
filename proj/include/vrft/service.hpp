#pragma once

#include <map>
#include <memory>
#include <string>

#include "vrft/reward_engine.hpp"

namespace vrft {

inline constexpr std::size_t kMaxScoreItems = 4096;

struct HttpReply {
  int status = 200;
  std::string body;
};

/// POST /v1/score. Pure: the reply depends only on the body and the presets.
/// 400 for schema violations (body names the field path), 413 for more than
/// kMaxScoreItems items, 422 when an item's task differs from the spec mode.
HttpReply handle_score(const std::string& body, const std::map<std::string, RewardSpec>& presets,
                       bool parallel = true);

/// GET /healthz: {"status":"ok","version":..,"presets":[..]}.
HttpReply handle_healthz(const std::map<std::string, RewardSpec>& presets);

/// HTTP server for both routes. Usable from tests: bind to port 0, listen on a
/// worker thread, stop from another.
class Server {
 public:
  explicit Server(std::map<std::string, RewardSpec> presets);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds host:port (port 0 picks a free one) and returns the bound port, or -1.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Returns false if the server was not bound.
  bool listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Blocks serving both routes on host:port until the process exits.
/// Returns false if the socket could not be bound.
bool serve(const std::string& host, int port, const std::map<std::string, RewardSpec>& presets);

}  // namespace vrft
