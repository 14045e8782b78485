#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "panoweave/image.hpp"

namespace panoweave {

// 8-bit PNG codec. Samples map linearly between [0,1] and [0,255].
// Colour images always come back as 3 channels (alpha is dropped, grey is
// expanded); masks are single-channel with 0 = unknown and 255 = known.

std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_png(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_mask_png(const Mask& mask);
Mask decode_mask_png(std::span<const std::uint8_t> bytes);

Image load_png(const std::filesystem::path& path);
void save_png(const std::filesystem::path& path, const Image& img);
Mask load_mask_png(const std::filesystem::path& path);
void save_mask_png(const std::filesystem::path& path, const Mask& mask);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace panoweave
