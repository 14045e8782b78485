#pragma once

// Synthetic images and independent oracles shared by the test binaries.
// Nothing in here calls into the projection code it is used to check.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "panoweave/geometry.hpp"
#include "panoweave/image.hpp"

namespace pwtest {

using panoweave::Image;
using panoweave::Mask;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kDeg = kPi / 180.0;

struct Dir {
    double x, y, z;
};

inline Dir dir_from(double lon_deg, double lat_deg)
{
    const double lo = lon_deg * kDeg;
    const double la = lat_deg * kDeg;
    return {std::cos(la) * std::sin(lo), std::sin(la), std::cos(la) * std::cos(lo)};
}

inline double dot(const Dir& a, const Dir& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

inline Dir cross(const Dir& a, const Dir& b)
{
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

/// Band-limited test signal defined on the sphere (smooth through the poles).
inline double smooth_signal(const Dir& d, int channel)
{
    const double ph = 0.9 * channel;
    return 0.5 + 0.22 * std::sin(1.7 * d.x + 1.1 * d.y + ph) * std::cos(1.3 * d.z - 0.4 * ph) +
           0.12 * d.y * d.z + 0.08 * std::cos(2.0 * d.x - ph);
}

inline Image smooth_equirect(int width, int channels = 3)
{
    const int height = width / 2;
    Image img(width, height, channels);
    for (int v = 0; v < height; ++v)
        for (int u = 0; u < width; ++u) {
            const double lon = (u + 0.5) / width * 360.0 - 180.0;
            const double lat = 90.0 - (v + 0.5) / height * 180.0;
            const Dir d = dir_from(lon, lat);
            for (int c = 0; c < channels; ++c)
                img.at(u, v, c) = static_cast<float>(smooth_signal(d, c));
        }
    return img;
}

/// Sum of `waves` random plane waves cos(k . d + phase) restricted to the
/// sphere, |k| <= max_freq, so the signal has no content above about degree
/// max_freq. Values stay in [0.1, 0.9].
inline Image bandlimited_equirect(int width, double max_freq, std::uint32_t seed, int waves = 48)
{
    std::mt19937 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    struct Wave {
        Dir k;
        double phase;
        int channel;
    };
    std::vector<Wave> ws;
    for (int i = 0; i < waves; ++i) {
        Dir k{n(rng), n(rng), n(rng)};
        const double len = std::sqrt(dot(k, k));
        const double f = max_freq * std::sqrt(u(rng));
        ws.push_back({{k.x / len * f, k.y / len * f, k.z / len * f}, 2.0 * kPi * u(rng), i % 3});
    }
    Image img(width, width / 2, 3);
    const double amp = 0.4 / (waves / 3.0);
    for (int v = 0; v < img.height; ++v)
        for (int x = 0; x < width; ++x) {
            const Dir d = dir_from((x + 0.5) / width * 360.0 - 180.0, 90.0 - (v + 0.5) / img.height * 180.0);
            double acc[3] = {0.5, 0.5, 0.5};
            for (const Wave& w : ws) acc[w.channel] += amp * std::cos(dot(w.k, d) + w.phase);
            for (int c = 0; c < 3; ++c) img.at(x, v, c) = static_cast<float>(acc[c]);
        }
    return img;
}

/// Value encodes longitude linearly: (lon + 180) / 360.
inline Image lon_gradient(int width)
{
    Image img(width, width / 2, 1);
    for (int v = 0; v < img.height; ++v)
        for (int u = 0; u < width; ++u)
            img.at(u, v) = static_cast<float>((u + 0.5) / width);
    return img;
}

/// Value encodes latitude linearly: (lat + 90) / 180.
inline Image lat_gradient(int width)
{
    Image img(width, width / 2, 1);
    for (int v = 0; v < img.height; ++v)
        for (int u = 0; u < width; ++u)
            img.at(u, v) = static_cast<float>(1.0 - (v + 0.5) / img.height);
    return img;
}

inline Image random_image(int w, int h, int c, std::mt19937& rng)
{
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    Image img(w, h, c);
    for (float& v : img.data) v = dist(rng);
    return img;
}

/// Independent bilinear equirect sampler at an absolute (lon, lat), with
/// horizontal wrap and vertical clamp.
inline double sample_equirect(const Image& img, double lon, double lat, int channel)
{
    const int w = img.width;
    const int h = img.height;
    double u = (lon + 180.0) / 360.0 * w - 0.5;
    double v = (90.0 - lat) / 180.0 * h - 0.5;
    v = std::min(std::max(v, 0.0), static_cast<double>(h - 1));
    const double u0 = std::floor(u);
    const double v0 = std::floor(v);
    const double fu = u - u0;
    const double fv = v - v0;
    auto col = [w](long i) { return static_cast<int>(((i % w) + w) % w); };
    const int x0 = col(static_cast<long>(u0));
    const int x1 = col(static_cast<long>(u0) + 1);
    const int y0 = static_cast<int>(v0);
    const int y1 = std::min(y0 + 1, h - 1);
    return (1 - fu) * (1 - fv) * img.at(x0, y0, channel) + fu * (1 - fv) * img.at(x1, y0, channel) +
           (1 - fu) * fv * img.at(x0, y1, channel) + fu * fv * img.at(x1, y1, channel);
}

/// Camera basis from absolute centre angles: forward, right = d(forward)/d(lon)
/// normalised, up = forward x right.
struct Basis {
    Dir fwd, right, up;
};

inline Basis basis_for(double lon_deg, double lat_deg)
{
    Basis b;
    b.fwd = dir_from(lon_deg, lat_deg);
    b.right = {std::cos(lon_deg * kDeg), 0.0, -std::sin(lon_deg * kDeg)};
    b.up = cross(b.fwd, b.right);
    return b;
}

/// Brute-force frustum membership of every equirect pixel centre.
inline Mask frustum_oracle(double lon_c, double lat_c, double fov_deg, int vw, int vh, int width)
{
    const int height = width / 2;
    const Basis b = basis_for(lon_c, lat_c);
    const double ta = std::tan(fov_deg * 0.5 * kDeg);
    const double tb = ta * vh / vw;
    Mask m(width, height);
    for (int v = 0; v < height; ++v)
        for (int u = 0; u < width; ++u) {
            const Dir d = dir_from((u + 0.5) / width * 360.0 - 180.0, 90.0 - (v + 0.5) / height * 180.0);
            const double f = dot(d, b.fwd);
            if (f <= 0) continue;
            const double a = dot(d, b.right) / f;
            const double c = dot(d, b.up) / f;
            m.set(u, v, std::abs(a) <= ta && std::abs(c) <= tb);
        }
    return m;
}

/// Solid angle (steradians) of a gnomonic frustum with half-extents ta, tb on
/// the tangent plane, by midpoint quadrature of dA / (1 + a^2 + b^2)^(3/2).
inline double frustum_solid_angle(double ta, double tb, int n = 2000)
{
    double sum = 0.0;
    const double da = 2 * ta / n;
    const double db = 2 * tb / n;
    for (int i = 0; i < n; ++i) {
        const double a = -ta + (i + 0.5) * da;
        for (int j = 0; j < n; ++j) {
            const double b = -tb + (j + 0.5) * db;
            sum += 1.0 / std::pow(1 + a * a + b * b, 1.5);
        }
    }
    return sum * da * db;
}

/// Solid-angle weighted fraction of a mask, brute force.
inline double mask_fraction(const Mask& m)
{
    double k = 0;
    double t = 0;
    for (int v = 0; v < m.height; ++v) {
        const double w = std::cos((90.0 - (v + 0.5) / m.height * 180.0) * kDeg);
        for (int u = 0; u < m.width; ++u) {
            t += w;
            if (m.known(u, v)) k += w;
        }
    }
    return k / t;
}

}  // namespace pwtest
