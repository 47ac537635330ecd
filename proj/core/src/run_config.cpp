#include "ddvkit/run_config.hpp"

#include <charconv>
#include <cstdlib>

#include "ddvkit/error.hpp"
#include "ddvkit/rng.hpp"

namespace ddv {

using json = nlohmann::json;

json RunConfig::to_json() const {
  return json{{"command", command}, {"gen", gen.to_json()}, {"seed", seed},     {"threads", threads},
              {"method", method},   {"paths", paths},       {"params", params}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  try {
    c.command = j.at("command").get<std::string>();
    c.gen = GenConfig::from_json(j.at("gen"));
    c.seed = j.at("seed").get<std::uint64_t>();
    c.threads = j.value("threads", std::size_t{1});
    c.method = j.value("method", std::string{});
    c.paths = j.value("paths", std::map<std::string, std::string>{});
    c.params = j.value("params", json::object());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad run config: ") + e.what());
  }
  return c;
}

std::uint64_t RunConfig::hash() const {
  json j = to_json();
  j.erase("threads");
  return fnv1a(j.dump());
}

std::string RunConfig::hash_hex() const { return hex64(hash()); }

namespace {
template <typename T>
T parse_env(const char* name, const char* text) {
  T v{};
  const std::string_view s(text);
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw ConfigError(std::string(name) + "='" + text + "' is not a non-negative integer");
  }
  return v;
}
}  // namespace

void apply_env_overrides(RunConfig& c) {
  if (const char* s = std::getenv("DDVKIT_SEED"); s && *s) c.seed = parse_env<std::uint64_t>("DDVKIT_SEED", s);
  if (const char* t = std::getenv("DDVKIT_THREADS"); t && *t) {
    c.threads = parse_env<std::size_t>("DDVKIT_THREADS", t);
    if (c.threads == 0) throw ConfigError("DDVKIT_THREADS must be at least 1");
  }
}

}  // namespace ddv
