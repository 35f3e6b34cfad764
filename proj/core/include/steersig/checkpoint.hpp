#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>

#include <nlohmann/json.hpp>

#include "steersig/model.hpp"

namespace steersig {

inline constexpr std::string_view kCheckpointMagic = "STEERSIG1\n";

// Checkpoint layout: magic, one line of JSON header
//   {"config": {...}, "tensors": [{"name", "shape", "offset"}...], "payload_bytes": n}
// then float32 little-endian values, row-major, in header order. Offsets are
// relative to the first payload byte.
std::string save_checkpoint(const Model& model);
Model load_checkpoint(std::string_view bytes);

void save_checkpoint_file(const Model& model, const std::filesystem::path& path);
Model load_checkpoint_file(const std::filesystem::path& path);

// Shared container: magic + newline-terminated JSON header + raw payload.
std::string encode_container(std::string_view magic, const nlohmann::json& header,
                             std::span<const std::byte> payload);
// Returns the parsed header and a view of the payload inside `bytes`.
std::pair<nlohmann::json, std::string_view> decode_container(std::string_view magic,
                                                             std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace steersig
