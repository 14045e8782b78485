#include "panoweave/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "panoweave/error.hpp"

namespace panoweave {
namespace {

// A longitude expressed on the equirect column grid. Centres that fall on a
// grid line become a pure integer shift so that yaw rotations by whole
// columns permute samples bit-exactly.
struct ColumnShift {
    long whole = 0;
    double frac = 0.0;
};

ColumnShift column_shift(double lon_deg, int width)
{
    const double offset = wrap_longitude(lon_deg) / 360.0 * static_cast<double>(width);
    const double r = std::round(offset);
    if (std::abs(offset - r) < 1e-9) return {static_cast<long>(r), 0.0};
    return {0, offset};
}

int wrap_index(long i, int n)
{
    long m = i % n;
    if (m < 0) m += n;
    return static_cast<int>(m);
}

// Bilinear source position.
struct Tap {
    int x0 = 0, x1 = 0, y0 = 0, y1 = 0;
    double fx = 0.0, fy = 0.0;
};

Tap equirect_tap(double lon_rel, double lat, int width, int height, const ColumnShift& cs)
{
    Tap t;
    const double u = (lon_rel + 180.0) / 360.0 * width - 0.5 + cs.frac;
    const double fu = std::floor(u);
    t.fx = u - fu;
    const long x0 = static_cast<long>(fu) + cs.whole;
    t.x0 = wrap_index(x0, width);
    t.x1 = wrap_index(x0 + 1, width);

    double v = (90.0 - lat) / 180.0 * height - 0.5;
    v = std::clamp(v, 0.0, static_cast<double>(height - 1));
    const double fv = std::floor(v);
    t.y0 = static_cast<int>(fv);
    t.fy = v - fv;
    t.y1 = std::min(t.y0 + 1, height - 1);
    return t;
}

Tap raster_tap(double x, double y, int width, int height)
{
    Tap t;
    x = std::clamp(x, 0.0, static_cast<double>(width - 1));
    y = std::clamp(y, 0.0, static_cast<double>(height - 1));
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    t.x0 = static_cast<int>(fx);
    t.y0 = static_cast<int>(fy);
    t.fx = x - fx;
    t.fy = y - fy;
    t.x1 = std::min(t.x0 + 1, width - 1);
    t.y1 = std::min(t.y0 + 1, height - 1);
    return t;
}

float bilinear(const Image& img, const Tap& t, int c)
{
    const double w00 = (1.0 - t.fx) * (1.0 - t.fy);
    const double w10 = t.fx * (1.0 - t.fy);
    const double w01 = (1.0 - t.fx) * t.fy;
    const double w11 = t.fx * t.fy;
    return static_cast<float>(w00 * img.at(t.x0, t.y0, c) + w10 * img.at(t.x1, t.y0, c) +
                              w01 * img.at(t.x0, t.y1, c) + w11 * img.at(t.x1, t.y1, c));
}

// Known iff every tap carrying weight is known.
bool taps_known(const Mask& m, const Tap& t)
{
    const bool use_x0 = t.fx < 1.0;
    const bool use_x1 = t.fx > 0.0;
    const bool use_y0 = t.fy < 1.0;
    const bool use_y1 = t.fy > 0.0;
    if (use_y0 && use_x0 && !m.known(t.x0, t.y0)) return false;
    if (use_y0 && use_x1 && !m.known(t.x1, t.y0)) return false;
    if (use_y1 && use_x0 && !m.known(t.x0, t.y1)) return false;
    if (use_y1 && use_x1 && !m.known(t.x1, t.y1)) return false;
    return true;
}

// Camera frame of a view whose centre has been rotated to lon 0:
//   forward = (0, sin lat, cos lat), right = (1, 0, 0), up = (0, cos lat, -sin lat).
struct LocalFrame {
    double sin_lat = 0.0;
    double cos_lat = 1.0;

    explicit LocalFrame(double lat_deg)
    {
        if (lat_deg == 90.0) {
            sin_lat = 1.0;
            cos_lat = 0.0;
        } else if (lat_deg == -90.0) {
            sin_lat = -1.0;
            cos_lat = 0.0;
        } else {
            sin_lat = std::sin(lat_deg * kDegToRad);
            cos_lat = std::cos(lat_deg * kDegToRad);
        }
    }

    [[nodiscard]] Vec3 ray(double a, double b) const
    {
        return {a, sin_lat + b * cos_lat, cos_lat - b * sin_lat};
    }
};

// Relative longitude and latitude (degrees) of a local-frame ray.
void ray_angles(const Vec3& r, double& lon_rel, double& lat)
{
    const double h = std::hypot(r.x, r.z);
    lon_rel = h > 0.0 ? std::atan2(r.x, r.z) * kRadToDeg : 0.0;
    lat = std::atan2(r.y, h) * kRadToDeg;
}

double tangent_coord(int i, int n, double tan_half)
{
    return (2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n) - 1.0) * tan_half;
}

// Equirect source taps for every pixel of a view raster.
std::vector<Tap> view_taps(const ViewSpec& view, int pano_w, int pano_h)
{
    const LocalFrame frame(view.center.lat);
    const ColumnShift cs = column_shift(view.center.lon, pano_w);
    const double ta = view.tan_half_h();
    const double tb = view.tan_half_v();
    const int w = view.width;
    const int h = view.height;
    std::vector<Tap> taps(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));

    auto direct = [&](int x, int y) {
        const double a = tangent_coord(x, w, ta);
        const double b = -tangent_coord(y, h, tb);
        double lon_rel = 0.0;
        double lat = 0.0;
        ray_angles(frame.ray(a, b), lon_rel, lat);
        return equirect_tap(lon_rel, lat, pano_w, pano_h, cs);
    };

    const bool pole_symmetric =
        std::abs(view.center.lat) == 90.0 && w == h && pano_w % 4 == 0;
    if (!pole_symmetric) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) taps[static_cast<std::size_t>(y) * w + x] = direct(x, y);
        return taps;
    }

    // A pole-centred square raster is invariant under 90 degree in-plane
    // rotations, which correspond to quarter-turn longitude shifts. Sample one
    // quadrant and derive the rest by integer column shifts so that the four
    // rotated copies of a pixel read exactly the same bilinear weights.
    const double c = (w - 1) / 2.0;
    const long quarter = pano_w / 4;
    const long dir = view.center.lat > 0 ? -1 : 1;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int qx = x;
            int qy = y;
            long k = 0;
            if (!(x == y && x == c)) {
                while (!(qx > c && qy <= c)) {
                    const int nx = qy;
                    const int ny = w - 1 - qx;
                    qx = nx;
                    qy = ny;
                    ++k;
                }
            }
            Tap t = direct(qx, qy);
            if (k != 0) {
                t.x0 = wrap_index(t.x0 + dir * k * quarter, pano_w);
                t.x1 = wrap_index(t.x1 + dir * k * quarter, pano_w);
            }
            taps[static_cast<std::size_t>(y) * w + x] = t;
        }
    }
    return taps;
}

// Shared frustum walk used by backprojection and footprints. Calls
// fn(u, v, a, b) for every equirect pixel inside the view frustum. A frustum
// narrower than the pixel pitch that catches no pixel centre falls back to the
// pixel containing the view centre, so a footprint is never empty.
template <typename Fn>
void for_each_in_frustum(const ViewSpec& view, int pano_w, Fn&& fn)
{
    const int pano_h = pano_w / 2;
    const LocalFrame frame(view.center.lat);
    const ColumnShift cs = column_shift(view.center.lon, pano_w);
    const double ta = view.tan_half_h();
    const double tb = view.tan_half_v();
    long hits = 0;

    std::vector<double> sin_lon(static_cast<std::size_t>(pano_w));
    std::vector<double> cos_lon(static_cast<std::size_t>(pano_w));
    for (int u = 0; u < pano_w; ++u) {
        double d = static_cast<double>(static_cast<long>(u) - cs.whole) - cs.frac;
        d = std::fmod(d, static_cast<double>(pano_w));
        if (d < 0.0) d += pano_w;
        const double lon_rel = ((d + 0.5) / pano_w * 360.0 - 180.0) * kDegToRad;
        sin_lon[static_cast<std::size_t>(u)] = std::sin(lon_rel);
        cos_lon[static_cast<std::size_t>(u)] = std::cos(lon_rel);
    }

    for (int v = 0; v < pano_h; ++v) {
        const double lat = (90.0 - (v + 0.5) / pano_h * 180.0) * kDegToRad;
        const double sl = std::sin(lat);
        const double cl = std::cos(lat);
        // Rows entirely behind the camera plane cannot contain hits.
        if (sl * frame.sin_lat + cl * std::abs(frame.cos_lat) <= 0.0) continue;
        for (int u = 0; u < pano_w; ++u) {
            const double x = cl * sin_lon[static_cast<std::size_t>(u)];
            const double z = cl * cos_lon[static_cast<std::size_t>(u)];
            const double f = sl * frame.sin_lat + z * frame.cos_lat;
            if (!(f > 0.0)) continue;
            const double w = sl * frame.cos_lat - z * frame.sin_lat;
            if (std::abs(x) > ta * f || std::abs(w) > tb * f) continue;
            fn(u, v, x / f, w / f);
            ++hits;
        }
    }
    if (hits == 0) {
        const double uc = (wrap_longitude(view.center.lon) + 180.0) / 360.0 * pano_w;
        const double vc = (90.0 - view.center.lat) / 180.0 * pano_h;
        fn(wrap_index(static_cast<long>(std::floor(uc)), pano_w),
           std::clamp(static_cast<int>(std::floor(vc)), 0, pano_h - 1), 0.0, 0.0);
    }
}

void require_view_raster(const Image& nfov, const ViewSpec& view)
{
    if (nfov.width != view.width || nfov.height != view.height || nfov.channels < 1)
        throw DimensionError("view raster is " + std::to_string(nfov.width) + "x" +
                             std::to_string(nfov.height) + ", view expects " +
                             std::to_string(view.width) + "x" + std::to_string(view.height));
}

void require_pano_width(int pano_width)
{
    if (pano_width < 8 || pano_width % 2 != 0)
        throw DimensionError("panorama width must be even and >= 8, got " +
                             std::to_string(pano_width));
}

}  // namespace

double wrap_longitude(double lon_deg)
{
    double l = std::fmod(lon_deg + 180.0, 360.0);
    if (l < 0.0) l += 360.0;
    l -= 180.0;
    return l >= 180.0 ? -180.0 : l;
}

SphereCoord SphereCoord::normalized(double lon_deg, double lat_deg)
{
    return {wrap_longitude(lon_deg), std::clamp(lat_deg, -90.0, 90.0)};
}

Vec3 direction_of(SphereCoord c)
{
    const double lon = c.lon * kDegToRad;
    const double lat = c.lat * kDegToRad;
    return {std::cos(lat) * std::sin(lon), std::sin(lat), std::cos(lat) * std::cos(lon)};
}

SphereCoord coord_of(const Vec3& d, double pole_lon)
{
    const double h = std::hypot(d.x, d.z);
    const double lon = h > 0.0 ? std::atan2(d.x, d.z) * kRadToDeg : pole_lon;
    return SphereCoord::normalized(lon, std::atan2(d.y, h) * kRadToDeg);
}

SphereCoord equirect_pixel_center(int u, int v, int width, int height)
{
    return {(u + 0.5) / width * 360.0 - 180.0, 90.0 - (v + 0.5) / height * 180.0};
}

void require_equirect(const Image& img)
{
    if (img.width < 8 || img.width != 2 * img.height || img.channels < 1)
        throw DimensionError("not an equirect raster: " + std::to_string(img.width) + "x" +
                             std::to_string(img.height));
}

void require_equirect(const Mask& mask)
{
    if (mask.width < 8 || mask.width != 2 * mask.height)
        throw DimensionError("not an equirect mask: " + std::to_string(mask.width) + "x" +
                             std::to_string(mask.height));
}

void ViewSpec::validate() const
{
    if (!(fov_deg > 0.0) || fov_deg > 120.0)
        throw GeometryError("view fov must lie in (0, 120] degrees, got " + std::to_string(fov_deg));
    if (width < 8 || height < 8)
        throw DimensionError("view raster must be at least 8x8");
    if (!std::isfinite(center.lon) || !std::isfinite(center.lat) || center.lat < -90.0 ||
        center.lat > 90.0)
        throw GeometryError("view centre is not a valid sphere coordinate");
}

double ViewSpec::tan_half_h() const { return std::tan(fov_deg * 0.5 * kDegToRad); }

double ViewSpec::tan_half_v() const
{
    return tan_half_h() * static_cast<double>(height) / static_cast<double>(width);
}

Image project_view(const Image& img, const ViewSpec& view)
{
    require_equirect(img);
    view.validate();
    const auto taps = view_taps(view, img.width, img.height);
    Image out(view.width, view.height, img.channels);
    for (std::size_t p = 0; p < taps.size(); ++p)
        for (int c = 0; c < img.channels; ++c)
            out.data[p * img.channels + c] = bilinear(img, taps[p], c);
    return out;
}

MaskedImage project_view(const MaskedImage& pano, const ViewSpec& view)
{
    require_equirect(pano.image);
    if (pano.mask.width != pano.image.width || pano.mask.height != pano.image.height)
        throw DimensionError("panorama mask does not match its image");
    view.validate();
    const auto taps = view_taps(view, pano.image.width, pano.image.height);
    const int ch = pano.image.channels;
    MaskedImage out{Image(view.width, view.height, ch), Mask(view.width, view.height)};
    for (std::size_t p = 0; p < taps.size(); ++p) {
        if (!taps_known(pano.mask, taps[p])) continue;
        out.mask.data[p] = 1;
        for (int c = 0; c < ch; ++c) out.image.data[p * ch + c] = bilinear(pano.image, taps[p], c);
    }
    return out;
}

MaskedImage backproject_view(const Image& nfov, const ViewSpec& view, int pano_width)
{
    return backproject_view(MaskedImage{nfov, Mask(nfov.width, nfov.height, true)}, view,
                            pano_width);
}

MaskedImage backproject_view(const MaskedImage& nfov, const ViewSpec& view, int pano_width)
{
    view.validate();
    require_view_raster(nfov.image, view);
    if (nfov.mask.width != nfov.image.width || nfov.mask.height != nfov.image.height)
        throw DimensionError("view mask does not match its raster");
    require_pano_width(pano_width);

    const int ch = nfov.image.channels;
    const double ta = view.tan_half_h();
    const double tb = view.tan_half_v();
    MaskedImage out{Image(pano_width, pano_width / 2, ch), Mask(pano_width, pano_width / 2)};
    for_each_in_frustum(view, pano_width, [&](int u, int v, double a, double b) {
        const double x = (a / ta + 1.0) * 0.5 * view.width - 0.5;
        const double y = (1.0 - b / tb) * 0.5 * view.height - 0.5;
        const Tap t = raster_tap(x, y, view.width, view.height);
        if (!taps_known(nfov.mask, t)) return;
        out.mask.set(u, v, true);
        for (int c = 0; c < ch; ++c) out.image.at(u, v, c) = bilinear(nfov.image, t, c);
    });
    return out;
}

Mask view_footprint(const ViewSpec& view, int pano_width)
{
    view.validate();
    require_pano_width(pano_width);
    Mask out(pano_width, pano_width / 2);
    for_each_in_frustum(view, pano_width,
                        [&](int u, int v, double, double) { out.set(u, v, true); });
    return out;
}

std::string_view face_name(Face f)
{
    static constexpr std::array<std::string_view, 6> kNames{"F", "L", "B", "R", "U", "D"};
    return kNames[static_cast<int>(f)];
}

SphereCoord face_center(Face f)
{
    switch (f) {
    case Face::F: return {0.0, 0.0};
    case Face::L: return {-90.0, 0.0};
    case Face::B: return {-180.0, 0.0};
    case Face::R: return {90.0, 0.0};
    case Face::U: return {0.0, 90.0};
    case Face::D: return {0.0, -90.0};
    }
    return {};
}

ViewSpec face_view(Face f, int face_size)
{
    return ViewSpec{face_center(f), 90.0, face_size, face_size};
}

void CubemapImage::validate() const
{
    if (face_size < 8) throw DimensionError("cubemap face size must be >= 8");
    const int ch = faces[0].channels;
    for (const Image& f : faces) {
        if (f.width != face_size || f.height != face_size || f.channels != ch || ch < 1)
            throw DimensionError("cubemap faces disagree in size or channels");
    }
}

CubemapImage equirect_to_cubemap(const Image& img, int face_size)
{
    require_equirect(img);
    if (face_size < 8) throw DimensionError("cubemap face size must be >= 8");
    CubemapImage cube;
    cube.face_size = face_size;
    for (Face f : kFaces) cube.face(f) = project_view(img, face_view(f, face_size));
    return cube;
}

std::array<MaskedImage, 6> equirect_to_cubemap(const MaskedImage& pano, int face_size)
{
    if (face_size < 8) throw DimensionError("cubemap face size must be >= 8");
    std::array<MaskedImage, 6> faces;
    for (Face f : kFaces) faces[static_cast<int>(f)] = project_view(pano, face_view(f, face_size));
    return faces;
}

Image cubemap_to_equirect(const CubemapImage& cube, int width)
{
    cube.validate();
    require_pano_width(width);
    const int height = width / 2;
    const int s = cube.face_size;
    const int ch = cube.faces[0].channels;

    struct Frame {
        Vec3 fwd, right, up;
    };
    // Same orientation as face_view(): right = d(forward)/d(lon), up = d(forward)/d(lat).
    static const std::array<Frame, 6> kFrames{{
        {{0, 0, 1}, {1, 0, 0}, {0, 1, 0}},    // F
        {{-1, 0, 0}, {0, 0, 1}, {0, 1, 0}},   // L
        {{0, 0, -1}, {-1, 0, 0}, {0, 1, 0}},  // B
        {{1, 0, 0}, {0, 0, -1}, {0, 1, 0}},   // R
        {{0, 1, 0}, {1, 0, 0}, {0, 0, -1}},   // U
        {{0, -1, 0}, {1, 0, 0}, {0, 0, 1}},   // D
    }};
    auto dot = [](const Vec3& p, const Vec3& q) { return p.x * q.x + p.y * q.y + p.z * q.z; };

    Image out(width, height, ch);
    for (int v = 0; v < height; ++v) {
        for (int u = 0; u < width; ++u) {
            const Vec3 d = direction_of(equirect_pixel_center(u, v, width, height));
            const double ax = std::abs(d.x);
            const double ay = std::abs(d.y);
            const double az = std::abs(d.z);
            Face f;
            if (ax >= ay && ax >= az) {
                f = d.x > 0 ? Face::R : Face::L;
            } else if (ay >= az) {
                f = d.y > 0 ? Face::U : Face::D;
            } else {
                f = d.z > 0 ? Face::F : Face::B;
            }
            const Frame& fr = kFrames[static_cast<int>(f)];
            const double depth = dot(d, fr.fwd);
            const double a = dot(d, fr.right) / depth;
            const double b = dot(d, fr.up) / depth;
            const Tap t = raster_tap((a + 1.0) * 0.5 * s - 0.5, (1.0 - b) * 0.5 * s - 0.5, s, s);
            for (int c = 0; c < ch; ++c) out.at(u, v, c) = bilinear(cube.face(f), t, c);
        }
    }
    return out;
}

Image rotate_horizontal(const Image& img, double delta_lon)
{
    require_equirect(img);
    const int w = img.width;
    const double s = delta_lon / 360.0 * w;
    const double r = std::round(s);
    Image out(img.width, img.height, img.channels);
    const auto row_bytes = static_cast<std::size_t>(img.channels);
    if (std::abs(s - r) < 1e-9) {
        const long k = static_cast<long>(r);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < w; ++x) {
                const int src = wrap_index(static_cast<long>(x) + k, w);
                std::copy_n(&img.data[img.index(src, y)], row_bytes, &out.data[out.index(x, y)]);
            }
        return out;
    }
    const double fs = std::floor(s);
    const double f = s - fs;
    const long k = static_cast<long>(fs);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < w; ++x) {
            const int x0 = wrap_index(static_cast<long>(x) + k, w);
            const int x1 = wrap_index(static_cast<long>(x) + k + 1, w);
            for (int c = 0; c < img.channels; ++c)
                out.at(x, y, c) = static_cast<float>((1.0 - f) * img.at(x0, y, c) +
                                                     f * img.at(x1, y, c));
        }
    return out;
}

Mask rotate_horizontal(const Mask& mask, double delta_lon)
{
    require_equirect(mask);
    const int w = mask.width;
    const double s = delta_lon / 360.0 * w;
    const double r = std::round(s);
    const bool exact = std::abs(s - r) < 1e-9;
    const long k = static_cast<long>(exact ? r : std::floor(s));
    Mask out(mask.width, mask.height);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < w; ++x) {
            bool known = mask.known(wrap_index(static_cast<long>(x) + k, w), y);
            if (!exact) known = known && mask.known(wrap_index(static_cast<long>(x) + k + 1, w), y);
            out.set(x, y, known);
        }
    return out;
}

int geometry_channels(GeometryEncoding enc)
{
    return enc == GeometryEncoding::FourChannel ? 4 : 2;
}

Image geometry_map_for(const ViewSpec& view, GeometryEncoding enc)
{
    view.validate();
    const LocalFrame frame(view.center.lat);
    const double ta = view.tan_half_h();
    const double tb = view.tan_half_v();
    Image out(view.width, view.height, geometry_channels(enc));
    for (int y = 0; y < view.height; ++y) {
        for (int x = 0; x < view.width; ++x) {
            const Vec3 r = frame.ray(tangent_coord(x, view.width, ta),
                                     -tangent_coord(y, view.height, tb));
            double lon_rel = 0.0;
            double lat_deg = 0.0;
            ray_angles(r, lon_rel, lat_deg);
            const double lon = (lon_rel + view.center.lon) * kDegToRad;
            const double norm = std::sqrt(r.x * r.x + r.y * r.y + r.z * r.z);
            const double sin_lat = r.y / norm;
            const double cos_lat = std::hypot(r.x, r.z) / norm;
            auto px = out.pixel(x, y);
            if (enc == GeometryEncoding::FourChannel) {
                px[0] = static_cast<float>(std::cos(lon));
                px[1] = static_cast<float>(std::sin(lon));
                px[2] = static_cast<float>(sin_lat);
                px[3] = static_cast<float>(cos_lat);
            } else {
                px[0] = static_cast<float>(std::cos(lon));
                px[1] = static_cast<float>(sin_lat);
            }
        }
    }
    return out;
}

Image geometry_map_for(Face f, int face_size, GeometryEncoding enc)
{
    return geometry_map_for(face_view(f, face_size), enc);
}

}  // namespace panoweave
