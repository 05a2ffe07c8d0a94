#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "ofakd/nn.hpp"

namespace ofakd {

// A checkpoint is a directory holding manifest.json (config, seed, dtype and
// the ordered parameter list with shapes) plus one OFAT file per parameter.
// Loading with the same scalar type round-trips bit-exactly.
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const StagedModel<T>& model,
                     const nlohmann::json& extra = nlohmann::json::object());

template <typename T>
StagedModel<T> load_checkpoint(const std::filesystem::path& dir);

nlohmann::json read_checkpoint_manifest(const std::filesystem::path& dir);
ModelConfig read_checkpoint_config(const std::filesystem::path& dir);

// Copies parameter values from src into dst; names and shapes must agree.
template <typename T, typename U>
void copy_parameters(const ParameterList<T>& src, const ParameterList<U>& dst);

}  // namespace ofakd
