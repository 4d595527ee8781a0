#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "hybridseg/data.hpp"
#include "hybridseg/network.hpp"
#include "hybridseg/training.hpp"

namespace hybridseg {

/// Thrown for malformed configuration documents; field() names the offending key path.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

nlohmann::json to_json(const SynthConfig& cfg);
nlohmann::json to_json(const NetConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);

/// Missing keys keep the defaults of `base`; unknown keys and wrong types are rejected.
SynthConfig synth_config_from_json(const nlohmann::json& j, const SynthConfig& base = {});
NetConfig net_config_from_json(const nlohmann::json& j, const NetConfig& base = {});
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base = desk_train_config());

nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace hybridseg
