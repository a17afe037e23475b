#pragma once

#include <filesystem>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "daml/parameters.hpp"

namespace daml {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ParameterSet<float> params;
  nlohmann::json manifest;  // hyperparameters, vocabulary and anything else the writer stored
};

// Layout: 8-byte magic "DAMLCKP1", u64 little-endian manifest length, manifest
// JSON (with a "tensors" array of {name, rows, cols}), then each tensor as
// row-major little-endian float32 in manifest order.
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<float>& params,
                     const nlohmann::json& manifest);

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace daml
