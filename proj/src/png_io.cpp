#include "panoweave/png_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <png.h>

#include "panoweave/error.hpp"

namespace panoweave {
namespace {

std::uint8_t to_byte(float v)
{
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

std::vector<std::uint8_t> write_png(std::vector<std::uint8_t>& pixels, int width, int height,
                                    png_uint_32 format)
{
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(width);
    image.height = static_cast<png_uint_32>(height);
    image.format = format;

    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr))
        throw IoError(std::string("png encode failed: ") + image.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr))
        throw IoError(std::string("png encode failed: ") + image.message);
    out.resize(size);
    return out;
}

std::vector<std::uint8_t> read_png(std::span<const std::uint8_t> bytes, png_uint_32 format,
                                   int& width, int& height)
{
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
        throw IoError(std::string("png decode failed: ") + image.message);
    image.format = format;
    std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
        png_image_free(&image);
        throw IoError(std::string("png decode failed: ") + image.message);
    }
    width = static_cast<int>(image.width);
    height = static_cast<int>(image.height);
    return pixels;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& img)
{
    if (img.channels != 1 && img.channels != 3)
        throw DimensionError("encode_png: only 1 or 3 channel images are supported");
    std::vector<std::uint8_t> pixels(img.data.size());
    std::transform(img.data.begin(), img.data.end(), pixels.begin(), to_byte);
    return write_png(pixels, img.width, img.height,
                     img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY);
}

Image decode_png(std::span<const std::uint8_t> bytes)
{
    int w = 0;
    int h = 0;
    const auto rgba = read_png(bytes, PNG_FORMAT_RGBA, w, h);
    Image img(w, h, 3);
    for (std::size_t p = 0, n = img.pixel_count(); p < n; ++p) {
        for (std::size_t c = 0; c < 3; ++c)
            img.data[3 * p + c] = static_cast<float>(rgba[4 * p + c]) / 255.0f;
    }
    return img;
}

std::vector<std::uint8_t> encode_mask_png(const Mask& mask)
{
    std::vector<std::uint8_t> pixels(mask.data.size());
    std::transform(mask.data.begin(), mask.data.end(), pixels.begin(),
                   [](std::uint8_t k) { return k ? std::uint8_t{255} : std::uint8_t{0}; });
    return write_png(pixels, mask.width, mask.height, PNG_FORMAT_GRAY);
}

Mask decode_mask_png(std::span<const std::uint8_t> bytes)
{
    int w = 0;
    int h = 0;
    const auto grey = read_png(bytes, PNG_FORMAT_GRAY, w, h);
    Mask mask(w, h);
    std::transform(grey.begin(), grey.end(), mask.data.begin(),
                   [](std::uint8_t g) { return g >= 128 ? std::uint8_t{1} : std::uint8_t{0}; });
    return mask;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Image load_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }

void save_png(const std::filesystem::path& path, const Image& img)
{
    write_file(path, encode_png(img));
}

Mask load_mask_png(const std::filesystem::path& path)
{
    return decode_mask_png(read_file(path));
}

void save_mask_png(const std::filesystem::path& path, const Mask& mask)
{
    write_file(path, encode_mask_png(mask));
}

}  // namespace panoweave
