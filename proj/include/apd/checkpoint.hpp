#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "apd/feature_map.hpp"

namespace apd {

/// Versioned binary container: magic + JSON header (config echo, metadata,
/// array directory) + raw little-endian doubles. Stable across releases.
struct Checkpoint {
  nlohmann::json config;  // RunConfig echo
  nlohmann::json meta;    // iteration, rng states, best val F1, ...
  std::vector<std::pair<std::string, Matrix>> arrays;

  const Matrix* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace apd
