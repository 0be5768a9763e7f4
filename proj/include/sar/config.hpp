#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sar/train.hpp"

namespace sar {

// Run configuration as JSON. Keys are camelCase and grouped:
//
//   { "lambda": 0.01, "epochs": 30, ...,
//     "model":   { "embedDim": 64, "lastBlock": "C", ... },
//     "dataset": { "samples": 2000, "classes": ["rectangle", ...], ... },
//     "loss":    { "epsilon": 1e-9, "detachMean": false } }
//
// A user file only needs the keys it changes. Unknown keys and values of the
// wrong type are schema violations.

/// One leaf of the config schema.
struct SchemaEntry {
  std::string key;  // dotted path, e.g. "model.embedDim"
  std::string type;
  std::string help;
};

const std::vector<SchemaEntry>& config_schema();

/// Canonical JSON text for cfg (sorted keys, every field present).
std::string config_to_json(const TrainConfig& cfg, int indent = 2);

/// Parse and validate. Missing keys keep their defaults.
TrainConfig config_from_json(std::string_view text);

/// Apply "a.b=value" on top of a JSON document. The value is read as JSON
/// when it parses, otherwise as a bare string ("lastBlock=C").
std::string apply_overrides(std::string_view json_text, std::span<const std::string> overrides);

/// Defaults, then the file (if any), then the overrides.
TrainConfig load_config(const std::optional<std::filesystem::path>& path,
                        std::span<const std::string> overrides = {});

/// SHA-1 of the canonical JSON.
std::string config_hash(const TrainConfig& cfg);

}  // namespace sar
