#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace panoweave {

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt)
{
    return splitmix64(base ^ splitmix64(salt));
}

inline std::uint64_t fnv1a64(std::string_view s)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// std::mt19937_64 is specified bit-for-bit; the std distributions are not,
/// so floats are derived from the raw bits here.
class SeededStream {
public:
    explicit SeededStream(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1).
    double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform in [-a, a).
    double symmetric(double a) { return (2.0 * unit() - 1.0) * a; }

private:
    std::mt19937_64 engine_;
};

}  // namespace panoweave
