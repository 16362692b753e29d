#pragma once

#include <stdexcept>
#include <string>

namespace vrft {

/// Invalid configuration. `path` names the offending field (e.g. "reward.lambda").
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string path, const std::string& message)
      : std::invalid_argument(path.empty() ? message : path + ": " + message),
        path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// A NaN/Inf reached a place where it cannot be tolerated (rewards, log-probs, parameters).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vrft
