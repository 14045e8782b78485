#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "panoweave/canvas.hpp"
#include "panoweave/error.hpp"

using namespace panoweave;

namespace {

Panorama toy(int w, unsigned bits, std::mt19937& rng)
{
    Image img = pwtest::random_image(w, w / 2, 3, rng);
    Mask m(w, w / 2);
    for (std::size_t p = 0; p < m.data.size(); ++p) m.data[p] = (bits >> p) & 1u;
    return {img, m};
}

// Per-pixel hard selection, written out longhand.
bool matches_selection_oracle(const Panorama& a, const Panorama& b, const Panorama& out)
{
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x) {
            const bool ka = a.mask().known(x, y);
            const bool kb = b.mask().known(x, y);
            if (out.mask().known(x, y) != (ka || kb)) return false;
            for (int c = 0; c < 3; ++c) {
                const float want = ka ? a.image().at(x, y, c) : (kb ? b.image().at(x, y, c) : 0.0f);
                if (out.image().at(x, y, c) != want) return false;
            }
        }
    return true;
}

}  // namespace

TEST_CASE("compose: exhaustive over every 2x4 mask pair")
{
    std::mt19937 rng(1);
    bool all_ok = true;
    for (unsigned ma = 0; ma < 256; ++ma) {
        const Panorama a = toy(4, ma, rng);
        for (unsigned mb = 0; mb < 256; ++mb) {
            const Panorama b = toy(4, mb, rng);
            all_ok = all_ok && matches_selection_oracle(a, b, compose(a, b));
        }
    }
    CHECK(all_ok);
}

TEST_CASE("compose: random 4x8 panoramas, identities, idempotence, associativity")
{
    std::mt19937 rng(2);
    std::uniform_int_distribution<unsigned> bits(0, 0xffffffffu);
    for (int i = 0; i < 500; ++i) {
        const Panorama a = toy(8, bits(rng), rng);
        const Panorama b = toy(8, bits(rng), rng);
        const Panorama c = toy(8, bits(rng), rng);
        CHECK(matches_selection_oracle(a, b, compose(a, b)));
        CHECK(compose(a, a) == a);
        CHECK(compose(compose(a, b), c) == compose(a, compose(b, c)));
    }
    const Panorama full = toy(8, 0xffffffffu, rng);
    const Panorama other = toy(8, bits(rng), rng);
    CHECK(compose(full, other) == full);
    const Panorama none = toy(8, 0u, rng);
    CHECK(compose(none, other) == other);
}

TEST_CASE("compose: dimension mismatch")
{
    CHECK_THROWS_AS(compose(Panorama::empty(8), Panorama::empty(16)), DimensionError);
    CHECK_THROWS_AS(Panorama(Image(8, 4, 3), Mask(8, 3)), DimensionError);
    CHECK_THROWS_AS(Panorama(Image(9, 4, 3), Mask(9, 4)), DimensionError);
}

TEST_CASE("panorama normalises unknown pixels to 0")
{
    Image img(8, 4, 3, 0.7f);
    Mask m(8, 4);
    m.set(1, 1, true);
    const Panorama p(img, m);
    CHECK(p.image().at(1, 1, 0) == 0.7f);
    CHECK(p.image().at(0, 0, 0) == 0.0f);
}

TEST_CASE("known_fraction bounds")
{
    CHECK(known_fraction(Mask(64, 32, false)) == 0.0);
    CHECK(known_fraction(Mask(64, 32, true)) == 1.0);
    Mask m(64, 32, true);
    m.set(0, 0, false);
    CHECK(known_fraction(m) < 1.0);
    CHECK(known_fraction(m) > 0.99);
    // Pole-row pixels weigh less than equator pixels.
    Mask pole(64, 32);
    pole.set(0, 0, true);
    Mask eq(64, 32);
    eq.set(0, 15, true);
    CHECK(known_fraction(pole) < known_fraction(eq));
    CHECK(known_fraction(eq) == doctest::Approx(pwtest::mask_fraction(eq)).epsilon(1e-12));
}

TEST_CASE("attach_view: preserved known pixels and monotone coverage")
{
    std::mt19937 rng(4);
    std::uniform_real_distribution<double> lon(-180, 180);
    std::uniform_real_distribution<double> lat(-90, 90);
    std::uniform_real_distribution<double> fov(30, 120);
    Panorama state = Panorama::empty(64);
    for (int i = 0; i < 200; ++i) {
        const ViewSpec v{SphereCoord::normalized(lon(rng), lat(rng)), fov(rng), 16, 16};
        const Image nfov = pwtest::random_image(16, 16, 3, rng);
        const Panorama next = attach_view(state, nfov, v);
        CHECK(next.known_fraction() >= state.known_fraction());
        bool preserved = true;
        for (std::size_t p = 0; p < state.mask().data.size(); ++p) {
            if (!state.mask().data[p]) continue;
            preserved = preserved && next.mask().data[p] &&
                        next.image().data[p * 3] == state.image().data[p * 3] &&
                        next.image().data[p * 3 + 1] == state.image().data[p * 3 + 1] &&
                        next.image().data[p * 3 + 2] == state.image().data[p * 3 + 2];
        }
        CHECK(preserved);
        CHECK(compose(next, next) == next);
        state = next;
    }
}

TEST_CASE("attach_view: inside known region and onto empty panorama")
{
    std::mt19937 rng(6);
    const ViewSpec v{{0, 0}, 90, 32, 32};
    const Image nfov = pwtest::random_image(32, 32, 3, rng);
    const Panorama empty = Panorama::empty(128);
    const Panorama once = attach_view(empty, nfov, v);
    const MaskedImage back = backproject_view(nfov, v, 128);
    CHECK(once == Panorama(back.image, back.mask));

    const Panorama full(pwtest::random_image(128, 64, 3, rng), Mask(128, 64, true));
    CHECK(attach_view(full, nfov, v) == full);
    // A narrower view entirely inside the first footprint changes nothing.
    CHECK(attach_view(once, pwtest::random_image(16, 16, 3, rng), ViewSpec{{0, 0}, 40, 16, 16}) == once);
}

TEST_CASE("init_from_nfov")
{
    const Image pano = pwtest::smooth_equirect(1024);
    const ViewSpec v{{0, 0}, 90, 256, 256};
    const Image nfov = project_view(pano, v);
    const Panorama init = init_from_nfov(nfov, v, 1024);
    CHECK(init.known_fraction() < 0.25);
    CHECK(init.known_fraction() ==
          doctest::Approx(pwtest::frustum_solid_angle(1, 1) / (4 * pwtest::kPi)).epsilon(5e-3));
    CHECK(init.mask() == view_footprint(v, 1024));
    CHECK(max_abs_diff(init.image(), pano, &init.mask()) <= 2.0 / 255.0);
    CHECK_THROWS_AS(init_from_nfov(nfov, v, 1023), DimensionError);
}

TEST_CASE("panorama file encoding round trip")
{
    std::mt19937 rng(8);
    Mask m(32, 16);
    for (auto& b : m.data) b = rng() & 1u;
    const Panorama p = Panorama(pwtest::random_image(32, 16, 3, rng), m).quantized();
    const PanoramaFiles files = encode_panorama(p);
    CHECK(decode_panorama(files.state_png, files.mask_png) == p);
    CHECK(files.sidecar_json.find("known_fraction") != std::string::npos);
}
