#pragma once

#include <array>
#include <string_view>

#include "panoweave/image.hpp"

namespace panoweave {

// Sphere conventions used everywhere in the engine:
//   +Z points at (lon 0, lat 0), +X at (lon 90, lat 0), +Y at lat +90.
//   Equirect pixel (u, v) has its centre at
//     lon = (u + 0.5) / W * 360 - 180,   lat = 90 - (v + 0.5) / H * 180.
// Longitude grows with u (eastwards), latitude shrinks with v.

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kDegToRad = kPi / 180.0;
inline constexpr double kRadToDeg = 180.0 / kPi;

/// Wraps any longitude into [-180, 180).
double wrap_longitude(double lon_deg);

struct SphereCoord {
    double lon = 0.0;  ///< degrees, [-180, 180)
    double lat = 0.0;  ///< degrees, [-90, 90]

    /// Wraps lon and clamps lat.
    static SphereCoord normalized(double lon_deg, double lat_deg);

    bool operator==(const SphereCoord&) const = default;
};

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

Vec3 direction_of(SphereCoord c);

/// Spherical coordinates of a (not necessarily unit) direction. At the poles
/// the azimuth is undefined and `pole_lon` is returned instead.
SphereCoord coord_of(const Vec3& d, double pole_lon = 0.0);

/// Centre longitude/latitude of pixel (u, v) on a width x height equirect grid.
SphereCoord equirect_pixel_center(int u, int v, int width, int height);

/// Throws DimensionError unless the image is a valid equirect raster
/// (width == 2 * height, width >= 8, at least one channel).
void require_equirect(const Image& img);
void require_equirect(const Mask& mask);

// ---------------------------------------------------------------------------
// Local views

/// One narrow-field-of-view camera looking at `center`. `fov_deg` is the
/// horizontal field of view; the vertical one follows from the aspect ratio.
struct ViewSpec {
    SphereCoord center;
    double fov_deg = 90.0;
    int width = 512;
    int height = 512;

    /// Throws GeometryError for fov outside (0, 120] and DimensionError for
    /// rasters smaller than 8 px.
    void validate() const;

    [[nodiscard]] double tan_half_h() const;
    [[nodiscard]] double tan_half_v() const;

    bool operator==(const ViewSpec&) const = default;
};

/// Gnomonic sampling of `img` through `view` (bilinear, horizontal wrap,
/// pole clamp).
Image project_view(const Image& img, const ViewSpec& view);

/// As above, also projecting the mask. A view pixel is known only if every
/// source tap with non-zero bilinear weight is known; unknown pixels are 0.
MaskedImage project_view(const MaskedImage& pano, const ViewSpec& view);

/// Inverse gnomonic projection onto a pano_width x pano_width/2 equirect
/// grid. Pixels outside the view frustum are unknown (value 0).
MaskedImage backproject_view(const Image& nfov, const ViewSpec& view, int pano_width);
MaskedImage backproject_view(const MaskedImage& nfov, const ViewSpec& view, int pano_width);

/// Frustum membership of every equirect pixel centre. Identical to the mask
/// returned by backproject_view for a fully known view raster.
Mask view_footprint(const ViewSpec& view, int pano_width);

// ---------------------------------------------------------------------------
// Cubemap

enum class Face : int { F = 0, L = 1, B = 2, R = 3, U = 4, D = 5 };

inline constexpr std::array<Face, 6> kFaces{Face::F, Face::L, Face::B,
                                            Face::R, Face::U, Face::D};

std::string_view face_name(Face f);
SphereCoord face_center(Face f);
ViewSpec face_view(Face f, int face_size);

struct CubemapImage {
    int face_size = 0;
    std::array<Image, 6> faces;

    Image& face(Face f) { return faces[static_cast<int>(f)]; }
    [[nodiscard]] const Image& face(Face f) const { return faces[static_cast<int>(f)]; }

    /// Throws DimensionError if faces disagree in size/channels or are < 8 px.
    void validate() const;
};

CubemapImage equirect_to_cubemap(const Image& img, int face_size);
std::array<MaskedImage, 6> equirect_to_cubemap(const MaskedImage& pano, int face_size);

/// Each output ray is assigned to the face of its largest absolute component
/// and sampled bilinearly (clamped at the face border).
Image cubemap_to_equirect(const CubemapImage& cube, int width);

// ---------------------------------------------------------------------------
// Horizontal cyclicity

/// out(lon) = in(lon + delta_lon). Exact column permutation when delta_lon is
/// a multiple of 360 / width, linear interpolation in longitude otherwise.
Image rotate_horizontal(const Image& img, double delta_lon);

/// Mask counterpart: a pixel stays known only if both interpolation taps are.
Mask rotate_horizontal(const Mask& mask, double delta_lon);

// ---------------------------------------------------------------------------
// Geometry maps

enum class GeometryEncoding {
    FourChannel,  ///< (cos lon, sin lon, sin lat, cos lat)
    TwoChannel,   ///< (cos lon, sin lat)
};

int geometry_channels(GeometryEncoding enc);

Image geometry_map_for(const ViewSpec& view,
                       GeometryEncoding enc = GeometryEncoding::FourChannel);
Image geometry_map_for(Face f, int face_size,
                       GeometryEncoding enc = GeometryEncoding::FourChannel);

}  // namespace panoweave
