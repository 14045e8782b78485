#include "panoweave/canvas.hpp"

#include <cmath>
#include <string>

#include "json.hpp"

#include "panoweave/error.hpp"
#include "panoweave/png_io.hpp"

namespace panoweave {
namespace {

std::vector<double> row_weights(int height)
{
    std::vector<double> w(static_cast<std::size_t>(height));
    for (int v = 0; v < height; ++v)
        w[static_cast<std::size_t>(v)] =
            std::cos((90.0 - (v + 0.5) / height * 180.0) * kDegToRad);
    return w;
}

// The compositing algebra needs no geometry, so toy rasters below the 8 px
// projection minimum are accepted here.
void require_canvas_shape(int width, int height)
{
    if (width < 2 || width != 2 * height)
        throw DimensionError("not an equirect raster: " + std::to_string(width) + "x" +
                             std::to_string(height));
}

void require_same_shape(const Mask& a, const Mask& b)
{
    if (a.width != b.width || a.height != b.height)
        throw DimensionError("mask dimensions differ");
}

}  // namespace

double known_fraction(const Mask& mask)
{
    require_canvas_shape(mask.width, mask.height);
    const auto weights = row_weights(mask.height);
    double known = 0.0;
    double total = 0.0;
    std::size_t known_px = 0;
    for (int v = 0; v < mask.height; ++v) {
        std::size_t row = 0;
        for (int u = 0; u < mask.width; ++u) row += mask.known(u, v) ? 1 : 0;
        known_px += row;
        known += weights[static_cast<std::size_t>(v)] * static_cast<double>(row);
        total += weights[static_cast<std::size_t>(v)] * mask.width;
    }
    if (known_px == mask.data.size()) return 1.0;
    return known / total;
}

double intersection_fraction(const Mask& a, const Mask& b)
{
    require_canvas_shape(a.width, a.height);
    require_same_shape(a, b);
    const auto weights = row_weights(a.height);
    double both = 0.0;
    double total = 0.0;
    for (int v = 0; v < a.height; ++v) {
        std::size_t row = 0;
        for (int u = 0; u < a.width; ++u) row += (a.known(u, v) && b.known(u, v)) ? 1 : 0;
        both += weights[static_cast<std::size_t>(v)] * static_cast<double>(row);
        total += weights[static_cast<std::size_t>(v)] * a.width;
    }
    return both / total;
}

Panorama::Panorama(Image image, Mask mask) : image_(std::move(image)), mask_(std::move(mask))
{
    require_canvas_shape(image_.width, image_.height);
    if (image_.channels < 1) throw DimensionError("panorama needs at least one channel");
    if (mask_.width != image_.width || mask_.height != image_.height)
        throw DimensionError("panorama image and mask dimensions differ");
    const int ch = image_.channels;
    for (std::size_t p = 0; p < mask_.data.size(); ++p) {
        if (mask_.data[p] != 0) {
            mask_.data[p] = 1;
            continue;
        }
        for (int c = 0; c < ch; ++c) image_.data[p * ch + c] = 0.0f;
    }
    known_fraction_ = panoweave::known_fraction(mask_);
}

Panorama Panorama::empty(int width, int channels)
{
    return {Image(width, width / 2, channels), Mask(width, width / 2)};
}

Panorama Panorama::quantized() const
{
    Image img = image_;
    quantize_8bit(img);
    return {std::move(img), mask_};
}

Panorama compose(const Panorama& alpha, const Panorama& beta)
{
    if (alpha.width() != beta.width() || alpha.height() != beta.height() ||
        alpha.image().channels != beta.image().channels)
        throw DimensionError("compose: panorama dimensions differ");
    Image img = beta.image();
    Mask mask = beta.mask();
    const int ch = img.channels;
    for (std::size_t p = 0; p < mask.data.size(); ++p) {
        if (alpha.mask().data[p] == 0) continue;
        mask.data[p] = 1;
        for (int c = 0; c < ch; ++c) img.data[p * ch + c] = alpha.image().data[p * ch + c];
    }
    return {std::move(img), std::move(mask)};
}

Panorama attach_view(const Panorama& state, const Image& nfov, const ViewSpec& view)
{
    MaskedImage back = backproject_view(nfov, view, state.width());
    return compose(state, Panorama(std::move(back.image), std::move(back.mask)));
}

Panorama init_from_nfov(const Image& nfov, const ViewSpec& view, int pano_width)
{
    MaskedImage back = backproject_view(nfov, view, pano_width);
    return {std::move(back.image), std::move(back.mask)};
}

Panorama rotate_horizontal(const Panorama& pano, double delta_lon)
{
    return {rotate_horizontal(pano.image(), delta_lon), rotate_horizontal(pano.mask(), delta_lon)};
}

PanoramaFiles encode_panorama(const Panorama& pano)
{
    PanoramaFiles files;
    files.state_png = encode_png(pano.image());
    files.mask_png = encode_mask_png(pano.mask());
    nlohmann::json sidecar{{"width", pano.width()},
                           {"height", pano.height()},
                           {"known_fraction", pano.known_fraction()}};
    files.sidecar_json = sidecar.dump(2) + "\n";
    return files;
}

Panorama decode_panorama(const std::vector<std::uint8_t>& state_png,
                         const std::vector<std::uint8_t>& mask_png)
{
    return {decode_png(state_png), decode_mask_png(mask_png)};
}

}  // namespace panoweave
