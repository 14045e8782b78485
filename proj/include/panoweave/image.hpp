#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace panoweave {

/// Row-major, channel-interleaved float raster. Samples are nominally in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, int c, float fill = 0.0f);

    [[nodiscard]] bool empty() const { return data.empty(); }
    [[nodiscard]] std::size_t pixel_count() const
    {
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    }
    [[nodiscard]] std::size_t index(int x, int y, int c = 0) const
    {
        return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                static_cast<std::size_t>(x)) * static_cast<std::size_t>(channels) +
               static_cast<std::size_t>(c);
    }
    float& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
    [[nodiscard]] float at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

    std::span<float> pixel(int x, int y)
    {
        return {data.data() + index(x, y), static_cast<std::size_t>(channels)};
    }
    [[nodiscard]] std::span<const float> pixel(int x, int y) const
    {
        return {data.data() + index(x, y), static_cast<std::size_t>(channels)};
    }

    bool operator==(const Image&) const = default;
};

/// Per-pixel known/unknown flags (1 = known).
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(int w, int h, bool known = false);

    [[nodiscard]] std::size_t index(int x, int y) const
    {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
               static_cast<std::size_t>(x);
    }
    [[nodiscard]] bool known(int x, int y) const { return data[index(x, y)] != 0; }
    void set(int x, int y, bool k) { data[index(x, y)] = k ? 1 : 0; }

    [[nodiscard]] std::size_t count_known() const;
    [[nodiscard]] bool all_known() const { return count_known() == data.size(); }
    [[nodiscard]] bool none_known() const { return count_known() == 0; }

    bool operator==(const Mask&) const = default;
};

/// A raster paired with its known-pixel mask.
struct MaskedImage {
    Image image;
    Mask mask;
};

/// Snap every sample to the nearest k/255 level (clamped to [0,1]).
void quantize_8bit(Image& img);

/// Peak signal-to-noise ratio in dB for signals in [0,1].
double psnr(const Image& a, const Image& b);

/// Largest absolute per-sample difference over pixels where `where` is known
/// (all pixels if `where` is empty).
double max_abs_diff(const Image& a, const Image& b, const Mask* where = nullptr);

}  // namespace panoweave
