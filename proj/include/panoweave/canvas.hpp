#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "panoweave/geometry.hpp"
#include "panoweave/image.hpp"

namespace panoweave {

/// Fraction of the sphere covered by the known pixels of an equirect mask,
/// weighting each row by cos(latitude). Exactly 1.0 iff every pixel is known.
double known_fraction(const Mask& mask);

/// Solid-angle weighted area (fraction of the sphere) of `a AND b`.
double intersection_fraction(const Mask& a, const Mask& b);

/// The incomplete panorama: an equirect raster plus its known mask.
/// Values under unknown pixels are normalised to 0.
class Panorama {
public:
    Panorama() = default;
    Panorama(Image image, Mask mask);

    /// Fully unknown panorama of the given width (height = width / 2).
    static Panorama empty(int width, int channels = 3);

    [[nodiscard]] const Image& image() const { return image_; }
    [[nodiscard]] const Mask& mask() const { return mask_; }
    [[nodiscard]] double known_fraction() const { return known_fraction_; }
    [[nodiscard]] int width() const { return image_.width; }
    [[nodiscard]] int height() const { return image_.height; }
    [[nodiscard]] bool complete() const { return known_fraction_ == 1.0; }
    [[nodiscard]] MaskedImage masked() const { return {image_, mask_}; }

    /// Copy with every known sample snapped to the 8-bit lattice.
    [[nodiscard]] Panorama quantized() const;

    bool operator==(const Panorama& other) const
    {
        return image_ == other.image_ && mask_ == other.mask_;
    }

private:
    Image image_;
    Mask mask_;
    double known_fraction_ = 0.0;
};

/// Hard per-pixel selection: alpha where alpha is known, otherwise beta.
Panorama compose(const Panorama& alpha, const Panorama& beta);

/// Backprojects a completed view and fills only pixels that were unknown,
/// i.e. compose(state, backprojection). Known pixels are never overwritten.
Panorama attach_view(const Panorama& state, const Image& nfov, const ViewSpec& view);

/// Starting state: the backprojection of the input view.
Panorama init_from_nfov(const Image& nfov, const ViewSpec& view, int pano_width);

/// Yaw rotation of image and mask together, see rotate_horizontal(Image).
Panorama rotate_horizontal(const Panorama& pano, double delta_lon);

/// state.png / mask.png / sidecar JSON encoding of a panorama.
struct PanoramaFiles {
    std::vector<std::uint8_t> state_png;
    std::vector<std::uint8_t> mask_png;
    std::string sidecar_json;
};

PanoramaFiles encode_panorama(const Panorama& pano);
Panorama decode_panorama(const std::vector<std::uint8_t>& state_png,
                         const std::vector<std::uint8_t>& mask_png);

}  // namespace panoweave
