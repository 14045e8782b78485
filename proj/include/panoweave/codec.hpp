#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace panoweave {

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::span<const std::uint8_t> bytes);

/// Pack floats as little-endian IEEE-754 binary32.
std::vector<std::uint8_t> pack_f32le(std::span<const float> values);
std::vector<float> unpack_f32le(std::span<const std::uint8_t> bytes);

}  // namespace panoweave
