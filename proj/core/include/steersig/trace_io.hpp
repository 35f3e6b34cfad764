#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "steersig/generation.hpp"

namespace steersig {

inline constexpr std::string_view kTraceMagic = "STEERTRC1\n";

// Container with a JSON header (prompt, generated ids, policy, dimensions)
// and a float64 little-endian payload. Per step, in order: residual_pre,
// residual_post ((L+1) x d each), contribution (L x d), attention rows
// (L x heads x context length), logits (|V|).
std::string save_trace(const GenerationTrace& trace);
GenerationTrace load_trace(std::string_view bytes);

void save_trace_file(const GenerationTrace& trace, const std::filesystem::path& path);
GenerationTrace load_trace_file(const std::filesystem::path& path);

}  // namespace steersig
