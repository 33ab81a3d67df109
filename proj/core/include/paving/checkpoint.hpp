// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "paving/backbone.hpp"
#include "paving/controller.hpp"
#include "paving/veto.hpp"

namespace paving {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Unified checkpoint: "PAVECKPT", u32 version, u64 header length, JSON header,
/// float64 little-endian payload in header order, then 32 raw SHA-256 bytes over
/// everything before them. Non-finite scalars live in the payload, never in JSON.
struct Checkpoint {
  std::string section;  // backbone | controller | veto
  std::string stage;    // stage tag, e.g. "gate", "fit", "calibrated"
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, num::Array> arrays;
};

std::string encode_checkpoint(const Checkpoint& ck);
/// Throws ConfigError on bad magic, version, truncation or digest mismatch.
Checkpoint decode_checkpoint(const std::string& bytes);

/// Writes the file and returns its SHA-256.
std::string write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::filesystem::path& path);

Checkpoint backbone_checkpoint(const Backbone& backbone);
Backbone backbone_from_checkpoint(const Checkpoint& ck);

Checkpoint controller_checkpoint(const ControllerParams& params, const ControllerConfig& cfg, int width,
                                 const std::string& stage);
ControllerParams controller_from_checkpoint(const Checkpoint& ck);

Checkpoint veto_checkpoint(const VetoModel& veto);
VetoModel veto_from_checkpoint(const Checkpoint& ck);

}  // namespace paving
