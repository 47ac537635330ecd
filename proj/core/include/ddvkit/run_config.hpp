#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "ddvkit/probe.hpp"

namespace ddv {

/// Everything a CLI invocation depends on. The hash covers every field that
/// can change a numeric result (threads and the output format do not).
struct RunConfig {
  std::string command;
  GenConfig gen;
  std::uint64_t seed = 2021;
  std::size_t threads = 1;
  std::string method;
  std::map<std::string, std::string> paths;     // role -> path
  nlohmann::json params = nlohmann::json::object();  // command-specific extras

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  std::uint64_t hash() const;
  std::string hash_hex() const;
};

/// DDVKIT_SEED and DDVKIT_THREADS override the corresponding fields.
/// Malformed values raise ConfigError.
void apply_env_overrides(RunConfig& config);

}  // namespace ddv
