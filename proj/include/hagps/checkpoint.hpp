#pragma once

#include "hagps/groups.hpp"
#include "hagps/policy.hpp"

#include <json.hpp>

#include <filesystem>

namespace hagps {

/// Binary container: magic, version, a JSON metadata block (sizes, group
/// topology, controller state, optimizer step counts) and named tensors
/// (value plus both Adam moments, raw little-endian f64). Reloading
/// reproduces forward outputs bit for bit.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  PolicyModel model;
  ControllerState controller;
  nlohmann::json extra;  // caller metadata (config, epoch, ...)
};

void save_checkpoint(const std::filesystem::path& path, const PolicyModel& model, const ControllerState& controller,
                     const nlohmann::json& extra = nlohmann::json::object());

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hagps
