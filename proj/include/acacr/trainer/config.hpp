#pragma once

#include <cmath>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>

#include "acacr/data/dataset.hpp"
#include "acacr/network/network.hpp"

namespace acacr {

struct TrainConfig {
  double lr = 7e-5;
  std::size_t batch_size = 12;
  std::size_t steps = 500;
  std::uint64_t seed = 7;
  std::size_t crop = 0;                 // 0 = full sample
  std::size_t checkpoint_interval = 0;  // 0 = final checkpoint only
  std::size_t eval_interval = 0;        // 0 = no periodic eval
  std::size_t threads = 1;

  void validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be a finite value >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (steps < 1) throw ConfigError("train: steps must be >= 1");
    if (threads < 1) throw ConfigError("train: threads must be >= 1");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Reads `key` into `out` when present.
template <class U>
void read_optional(const nlohmann::json& j, const char* key, U& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<U>();
}

inline nlohmann::json to_json(const NetworkConfig& c) {
  nlohmann::json j{{"c_in", c.c_in},
                   {"channels", c.channels},
                   {"alpha", c.alpha},
                   {"patch_size", c.patch_size},
                   {"variant", to_string(c.variant)}};
  j["attention_alpha"] = c.attention_alpha ? nlohmann::json(*c.attention_alpha) : nlohmann::json(nullptr);
  return j;
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline NetworkConfig network_config_from_json(const nlohmann::json& j, NetworkConfig c = {}) {
  require_known_keys(j, {"c_in", "channels", "alpha", "attention_alpha", "patch_size", "variant"}, "network config");
  try {
    read_optional(j, "c_in", c.c_in);
    read_optional(j, "channels", c.channels);
    read_optional(j, "alpha", c.alpha);
    read_optional(j, "patch_size", c.patch_size);
    if (auto it = j.find("attention_alpha"); it != j.end()) {
      c.attention_alpha = it->is_null() ? std::nullopt : std::optional<double>(it->get<double>());
    }
    if (auto it = j.find("variant"); it != j.end()) c.variant = parse_network_variant(it->get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("network config: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"batch_size", c.batch_size},
          {"steps", c.steps},
          {"seed", c.seed},
          {"crop", c.crop},
          {"checkpoint_interval", c.checkpoint_interval},
          {"eval_interval", c.eval_interval},
          {"threads", c.threads}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  require_known_keys(j, {"lr", "batch_size", "steps", "seed", "crop", "checkpoint_interval", "eval_interval", "threads"},
                     "train config");
  try {
    read_optional(j, "lr", c.lr);
    read_optional(j, "batch_size", c.batch_size);
    read_optional(j, "steps", c.steps);
    read_optional(j, "seed", c.seed);
    read_optional(j, "crop", c.crop);
    read_optional(j, "checkpoint_interval", c.checkpoint_interval);
    read_optional(j, "eval_interval", c.eval_interval);
    read_optional(j, "threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace acacr
