#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "panoweave/conditioning.hpp"
#include "panoweave/error.hpp"

using namespace panoweave;

namespace {

// Independent token oracle: FNV-1a 64 of the token seeds mt19937_64, raw
// bits mapped to [-1, 1), then normalised.
std::vector<double> token_oracle(const std::string& tok, int dim)
{
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : tok) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::mt19937_64 eng(h);
    std::vector<double> v(static_cast<std::size_t>(dim));
    double n = 0;
    for (double& x : v) {
        x = static_cast<double>(eng() >> 11) / 9007199254740992.0 * 2.0 - 1.0;
        n += x * x;
    }
    for (double& x : v) x /= std::sqrt(n);
    return v;
}

Matrix random_matrix(int r, int c, std::mt19937& rng)
{
    std::normal_distribution<float> d(0.0f, 1.0f);
    Matrix m(r, c);
    for (float& v : m.data) v = d(rng);
    return m;
}

Panorama partial_state(int width, std::uint32_t seed)
{
    std::mt19937 rng(seed);
    Image img = pwtest::smooth_equirect(width);
    Mask m = view_footprint(ViewSpec{{0, 0}, 90, 32, 32}, width);
    const Mask m2 = view_footprint(ViewSpec{{45, 30}, 90, 32, 32}, width);
    for (std::size_t p = 0; p < m.data.size(); ++p) m.data[p] |= m2.data[p];
    return Panorama(img, m).quantized();
}

double max_diff(const Matrix& a, const Matrix& b)
{
    REQUIRE(a.rows == b.rows);
    REQUIRE(a.cols == b.cols);
    double d = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) d = std::max(d, std::abs(double(a.data[i]) - b.data[i]));
    return d;
}

}  // namespace

TEST_CASE("encode_text")
{
    const TextGuidance blank = encode_text("");
    CHECK(blank.embedding.rows == 1);
    CHECK(blank.embedding.cols == 64);
    for (float v : blank.embedding.data) CHECK(v == 0.0f);
    CHECK(encode_text("   \t\n").embedding.rows == 1);

    CHECK(encode_text("a misty forest").embedding == encode_text("a misty forest").embedding);

    const TextGuidance ab = encode_text("a b");
    const TextGuidance ba = encode_text("b a");
    REQUIRE(ab.embedding.rows == 2);
    const auto oa = token_oracle("a", 64);
    const auto ob = token_oracle("b", 64);
    for (int c = 0; c < 64; ++c) {
        CHECK(ab.embedding.at(0, c) == doctest::Approx(oa[static_cast<std::size_t>(c)]).epsilon(1e-6));
        CHECK(ab.embedding.at(1, c) == doctest::Approx(ob[static_cast<std::size_t>(c)]).epsilon(1e-6));
        CHECK(ba.embedding.at(0, c) == ab.embedding.at(1, c));
        CHECK(ba.embedding.at(1, c) == ab.embedding.at(0, c));
    }
    CHECK_FALSE(ab.embedding == ba.embedding);

    CHECK_NOTHROW(encode_text(std::string(4096, 'x')));
    CHECK_THROWS_AS(encode_text(std::string(4097, 'x')), ConfigError);
}

TEST_CASE("encode_omni")
{
    const ConditioningConfig cfg;
    const OmniVisualGuidance empty = encode_omni(Panorama::empty(128), cfg);
    for (int f = 1; f < 6; ++f) CHECK(empty.faces[static_cast<std::size_t>(f)] == empty.faces[0]);

    const Panorama state = partial_state(256, 1);
    const OmniVisualGuidance a = encode_omni(state, cfg);
    CHECK(a.faces == encode_omni(state, cfg).faces);
    for (const auto& v : a.faces) {
        REQUIRE(v.size() == 64);
        double n = 0;
        for (float x : v) {
            CHECK(std::isfinite(x));
            n += double(x) * x;
        }
        CHECK(n > 0);
    }

    // 90 degree yaw: side faces permute, pole faces unchanged.
    const OmniVisualGuidance b = encode_omni(rotate_horizontal(state, 90.0), cfg);
    auto face = [](const OmniVisualGuidance& g, Face f) { return g.faces[static_cast<std::size_t>(f)]; };
    CHECK(face(b, Face::F) == face(a, Face::R));
    CHECK(face(b, Face::R) == face(a, Face::B));
    CHECK(face(b, Face::B) == face(a, Face::L));
    CHECK(face(b, Face::L) == face(a, Face::F));
    CHECK(face(b, Face::U) == face(a, Face::U));
    CHECK(face(b, Face::D) == face(a, Face::D));
    CHECK_FALSE(face(a, Face::F) == face(a, Face::B));
}

TEST_CASE("attention rows are stochastic")
{
    std::mt19937 rng(2);
    const AttentionStack stack = AttentionStack::seeded(64, 3, 99);
    AttentionTrace trace;
    const Matrix out = stack.forward(random_matrix(10, 64, rng), random_matrix(7, 64, rng), &trace);
    CHECK(out.rows == 10);
    REQUIRE(trace.weights.size() == 3);
    for (const Matrix& w : trace.weights) {
        CHECK(w.rows == 10);
        CHECK(w.cols == 7);
        for (int i = 0; i < w.rows; ++i) {
            double s = 0;
            for (int j = 0; j < w.cols; ++j) {
                CHECK(w.at(i, j) >= 0.0f);
                s += w.at(i, j);
            }
            CHECK(std::abs(s - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("single key token: attention output is that token's value projection")
{
    std::mt19937 rng(3);
    const int d = 16;
    AttentionBlock blk{random_matrix(d, d, rng), random_matrix(d, d, rng), random_matrix(d, d, rng), true};
    const AttentionStack stack({blk});
    const Matrix ctx = random_matrix(1, d, rng);
    AttentionTrace trace;
    (void)stack.forward(random_matrix(5, d, rng), ctx, &trace);
    for (int c = 0; c < d; ++c) {
        double vc = 0;
        for (int k = 0; k < d; ++k) vc += double(ctx.at(0, k)) * blk.wv.at(k, c);
        for (int i = 0; i < 5; ++i) CHECK(trace.attended[0].at(i, c) == doctest::Approx(vc).epsilon(1e-5));
    }
}

TEST_CASE("key/value permutation invariance")
{
    std::mt19937 rng(4);
    const TextGuidance text = encode_text("bright alpine lake under clouds at dawn");
    TextGuidance shuffled = text;
    std::vector<int> order(static_cast<std::size_t>(text.embedding.rows));
    for (int i = 0; i < text.embedding.rows; ++i) order[static_cast<std::size_t>(i)] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (int i = 0; i < text.embedding.rows; ++i)
        for (int c = 0; c < 64; ++c)
            shuffled.embedding.at(i, c) = text.embedding.at(order[static_cast<std::size_t>(i)], c);
    const OmniVisualGuidance omni = encode_omni(partial_state(128, 2), ConditioningConfig{});
    const AttentionStack stack = AttentionStack::seeded(64, 2, 7);
    CHECK(max_diff(fuse_global(text, omni, stack), fuse_global(shuffled, omni, stack)) <= 1e-6);
}

TEST_CASE("fuse_local shapes and geometry ablation")
{
    ConditioningConfig cfg;
    const Panorama state = partial_state(128, 3);
    const ViewSpec view{{45, 0}, 90, 48, 40};
    const MaskedImage nfov = project_view(state.masked(), view);
    const LocalGuidance local = encode_local(nfov, view, cfg);
    CHECK(local.nfov_tokens.rows == 64);
    CHECK(local.geometry_tokens.rows == 64);
    CHECK(local.face_geometry_tokens.rows == 6);
    const OmniVisualGuidance omni = encode_omni(state, cfg);
    const AttentionStack stack = AttentionStack::seeded(64, 2, 11);

    const Matrix out = fuse_local(local, omni, stack);
    CHECK(out.rows == local.nfov_tokens.rows);
    CHECK(out.cols == 64);

    LocalGuidance zeroed = local;
    std::fill(zeroed.geometry_tokens.data.begin(), zeroed.geometry_tokens.data.end(), 0.0f);
    std::fill(zeroed.face_geometry_tokens.data.begin(), zeroed.face_geometry_tokens.data.end(), 0.0f);
    CHECK(fuse_local(local, omni, stack, false) == fuse_local(zeroed, omni, stack, true));
    CHECK_FALSE(fuse_local(local, omni, stack, false) == out);

    cfg.geometry = GeometryEncoding::TwoChannel;
    CHECK(encode_local(nfov, view, cfg).geometry_tokens.rows == 64);
}

TEST_CASE("identity projections on self-attention double the input")
{
    // Scaled orthonormal tokens: each query attends (almost) only to itself.
    const int d = 64;
    Matrix x(6, d);
    for (int i = 0; i < 6; ++i) x.at(i, i * 3) = 10.0f;
    const Matrix out = AttentionStack::identity(d, 1, false).forward(x, x);
    for (std::size_t i = 0; i < x.data.size(); ++i)
        CHECK(out.data[i] == doctest::Approx(2.0 * x.data[i]).epsilon(1e-3).scale(1.0));
}

TEST_CASE("non-finite inputs are rejected")
{
    Matrix x(2, 8);
    Matrix c(3, 8);
    x.at(1, 1) = std::numeric_limits<float>::quiet_NaN();
    const AttentionStack stack = AttentionStack::seeded(8, 1, 1);
    CHECK_THROWS_AS((void)stack.forward(x, c), NumericError);
    CHECK_THROWS_AS((void)stack.forward(c, x), NumericError);
    x.at(1, 1) = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS((void)stack.forward(x, c), NumericError);
}

TEST_CASE("bundle wiring and determinism")
{
    const Panorama state = partial_state(128, 5);
    const ViewSpec view{{45, 0}, 90, 32, 32};
    const MaskedImage nfov = project_view(state.masked(), view);
    ConditioningConfig cfg;
    const GuidanceBundle full = build_bundle("stormy coast", state, nfov, view, cfg);
    const GuidanceBundle again = build_bundle("stormy coast", state, nfov, view, cfg);
    CHECK(full.global_stream == again.global_stream);
    REQUIRE(full.local_stream.has_value());
    CHECK(*full.local_stream == *again.local_stream);
    CHECK(full.global_stream.rows == 6);
    CHECK(full.local_stream->rows == 64);

    cfg.global_on = false;
    const GuidanceBundle no_global = build_bundle("stormy coast", state, nfov, view, cfg);
    CHECK(no_global.global_stream == encode_text("stormy coast").embedding);
    CHECK(*no_global.local_stream == *full.local_stream);

    cfg = ConditioningConfig{};
    cfg.local_on = false;
    CHECK_FALSE(build_bundle("stormy coast", state, nfov, view, cfg).local_stream.has_value());

    cfg = ConditioningConfig{};
    cfg.geometry_on = false;
    const GuidanceBundle no_geom = build_bundle("stormy coast", state, nfov, view, cfg);
    CHECK(no_geom.global_stream == full.global_stream);
    CHECK_FALSE(*no_geom.local_stream == *full.local_stream);

    cfg = ConditioningConfig{};
    cfg.layers = 16;
    const GuidanceBundle deep = build_bundle("stormy coast", state, nfov, view, cfg);
    CHECK(deep.global_stream.all_finite());
}
