#include "panoweave/image.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "panoweave/error.hpp"

namespace panoweave {

Image::Image(int w, int h, int c, float fill)
    : width(w), height(h), channels(c)
{
    if (w < 0 || h < 0 || c < 0) throw DimensionError("negative image dimensions");
    data.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) *
                    static_cast<std::size_t>(c),
                fill);
}

Mask::Mask(int w, int h, bool known) : width(w), height(h)
{
    if (w < 0 || h < 0) throw DimensionError("negative mask dimensions");
    data.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), known ? 1 : 0);
}

std::size_t Mask::count_known() const
{
    return static_cast<std::size_t>(std::count_if(
        data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

void quantize_8bit(Image& img)
{
    for (float& v : img.data) {
        const float c = std::clamp(v, 0.0f, 1.0f);
        v = static_cast<float>(std::lround(c * 255.0f)) / 255.0f;
    }
}

double psnr(const Image& a, const Image& b)
{
    if (a.width != b.width || a.height != b.height || a.channels != b.channels)
        throw DimensionError("psnr: image shapes differ");
    double se = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        se += d * d;
    }
    if (se == 0.0) return std::numeric_limits<double>::infinity();
    const double mse = se / static_cast<double>(a.data.size());
    return 10.0 * std::log10(1.0 / mse);
}

double max_abs_diff(const Image& a, const Image& b, const Mask* where)
{
    if (a.width != b.width || a.height != b.height || a.channels != b.channels)
        throw DimensionError("max_abs_diff: image shapes differ");
    double worst = 0.0;
    for (int y = 0; y < a.height; ++y) {
        for (int x = 0; x < a.width; ++x) {
            if (where != nullptr && !where->known(x, y)) continue;
            for (int c = 0; c < a.channels; ++c) {
                worst = std::max(worst, std::abs(static_cast<double>(a.at(x, y, c)) -
                                                 static_cast<double>(b.at(x, y, c))));
            }
        }
    }
    return worst;
}

}  // namespace panoweave
