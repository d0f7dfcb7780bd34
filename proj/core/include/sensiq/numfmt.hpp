#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace sensiq {

// Shortest decimal representation that round-trips the exact 64-bit value.
std::string format_double(double v);

// Strict parse of a full token; ParseError on empty, trailing junk, or
// out-of-range input.
double parse_double(std::string_view token);

std::uint64_t parse_u64(std::string_view token);

std::int64_t parse_i64(std::string_view token);

// FNV-1a 64-bit over raw bytes; used for content digests and seed mixing.
std::uint64_t fnv1a64(std::string_view bytes);

// 16-hex-digit rendering of a 64-bit hash.
std::string hex64(std::uint64_t v);

}  // namespace sensiq
