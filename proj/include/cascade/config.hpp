#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cascade/event.hpp"
#include "cascade/model.hpp"

namespace cascade {

struct EmSettings {
  int max_iters = 100;
  double tol = 1e-6;
  std::optional<double> epsilon;   // overrides every model's value when set
  std::optional<bool> normalize;
};

/// A run configuration: one or more named models, EM settings, the seed and
/// an optional mark schema (needed to simulate without data).
struct RunConfig {
  std::vector<ModelSpec> models;
  EmSettings em;
  std::uint64_t seed = 0;
  std::uint64_t max_events = 10'000'000;  // simulation cap
  std::optional<MarkSchema> schema;
};

/// Throws ConfigError on unknown keys, missing fields or bad values.
[[nodiscard]] RunConfig parse_config(const nlohmann::json& j);
[[nodiscard]] RunConfig load_config(const std::filesystem::path& path);

[[nodiscard]] ModelSpec model_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json to_json(const ModelSpec& model);
[[nodiscard]] MarkSchema schema_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json to_json(const MarkSchema& schema);

}  // namespace cascade
