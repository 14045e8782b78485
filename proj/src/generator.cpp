#include "panoweave/generator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "panoweave/error.hpp"
#include "panoweave/rng.hpp"

namespace panoweave {
namespace {

constexpr std::uint64_t kTintSeed = 0x7e57ab1e;

// 1D squared distance transform (Felzenszwalb-Huttenlocher) that also
// reports the arg-min sample for every output position.
void dt1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& arg,
          std::vector<int>& v, std::vector<double>& z)
{
    const int n = static_cast<int>(f.size());
    constexpr double inf = std::numeric_limits<double>::infinity();
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[static_cast<std::size_t>(q)] == inf) continue;
        double s = -inf;
        while (k >= 0) {
            const int p = v[static_cast<std::size_t>(k)];
            s = ((f[static_cast<std::size_t>(q)] + double(q) * q) - (f[static_cast<std::size_t>(p)] + double(p) * p)) /
                (2.0 * (q - p));
            if (s > z[static_cast<std::size_t>(k)]) break;
            --k;
        }
        ++k;
        v[static_cast<std::size_t>(k)] = q;
        z[static_cast<std::size_t>(k)] = k == 0 ? -inf : s;
        z[static_cast<std::size_t>(k) + 1] = inf;
    }
    if (k < 0) {
        std::fill(d.begin(), d.end(), inf);
        std::fill(arg.begin(), arg.end(), -1);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[static_cast<std::size_t>(j) + 1] < q) ++j;
        const int p = v[static_cast<std::size_t>(j)];
        d[static_cast<std::size_t>(q)] = double(q - p) * (q - p) + f[static_cast<std::size_t>(p)];
        arg[static_cast<std::size_t>(q)] = p;
    }
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

double lattice(std::uint64_t seed, std::int64_t i, std::int64_t j, int c)
{
    const std::uint64_t key = splitmix64(static_cast<std::uint64_t>(i) * 0x9e3779b97f4a7c15ULL ^
                                         splitmix64(static_cast<std::uint64_t>(j) * 0xc2b2ae3d27d4eb4fULL ^
                                                    static_cast<std::uint64_t>(c)));
    return static_cast<double>(splitmix64(seed ^ key) >> 11) * 0x1.0p-53;
}

void check_request(const OutpaintRequest& req)
{
    const MaskedImage& x = req.nfov;
    if (x.image.width != req.view.width || x.image.height != req.view.height || x.image.channels != 3 ||
        x.mask.width != x.image.width || x.mask.height != x.image.height)
        throw DimensionError("outpaint request raster does not match its view");
}

}  // namespace

std::vector<int> nearest_known(const Mask& m)
{
    const int w = m.width;
    const int h = m.height;
    constexpr double inf = std::numeric_limits<double>::infinity();
    const int n = std::max(w, h);
    std::vector<double> f;
    std::vector<double> d(static_cast<std::size_t>(n));
    std::vector<int> arg(static_cast<std::size_t>(n));
    std::vector<int> v(static_cast<std::size_t>(n));
    std::vector<double> z(static_cast<std::size_t>(n) + 1);

    // Columns: distance to the nearest known row in the same column.
    std::vector<double> col_d(static_cast<std::size_t>(w) * h);
    std::vector<int> col_arg(static_cast<std::size_t>(w) * h);
    f.resize(static_cast<std::size_t>(h));
    d.resize(static_cast<std::size_t>(h));
    arg.resize(static_cast<std::size_t>(h));
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) f[static_cast<std::size_t>(y)] = m.known(x, y) ? 0.0 : inf;
        dt1d(f, d, arg, v, z);
        for (int y = 0; y < h; ++y) {
            col_d[m.index(x, y)] = d[static_cast<std::size_t>(y)];
            col_arg[m.index(x, y)] = arg[static_cast<std::size_t>(y)];
        }
    }
    // Rows over the column result.
    std::vector<int> out(static_cast<std::size_t>(w) * h, -1);
    f.resize(static_cast<std::size_t>(w));
    d.resize(static_cast<std::size_t>(w));
    arg.resize(static_cast<std::size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) f[static_cast<std::size_t>(x)] = col_d[m.index(x, y)];
        dt1d(f, d, arg, v, z);
        for (int x = 0; x < w; ++x) {
            const int sx = arg[static_cast<std::size_t>(x)];
            if (sx < 0) continue;
            out[m.index(x, y)] = static_cast<int>(m.index(sx, col_arg[m.index(sx, y)]));
        }
    }
    return out;
}

std::array<double, 3> guidance_tint(const Matrix& g)
{
    std::vector<int> order(static_cast<std::size_t>(g.rows));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const auto ra = g.row(a);
        const auto rb = g.row(b);
        return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
    });
    std::vector<double> pooled(static_cast<std::size_t>(g.cols), 0.0);
    for (int r : order)
        for (int c = 0; c < g.cols; ++c) pooled[static_cast<std::size_t>(c)] += g.at(r, c);

    SeededStream s(kTintSeed);
    const double a = std::sqrt(3.0 / std::max(1, g.cols));
    std::array<double, 3> tint{};
    for (double& t : tint) {
        double acc = 0.0;
        for (double p : pooled) acc += s.symmetric(a) * p;
        t = 0.5 + 0.5 * std::tanh(acc);
    }
    return tint;
}

double value_noise(std::uint64_t seed, int x, int y, int channel, int cell)
{
    const double gx = (x + 0.5) / cell;
    const double gy = (y + 0.5) / cell;
    const double fx0 = std::floor(gx);
    const double fy0 = std::floor(gy);
    const auto i = static_cast<std::int64_t>(fx0);
    const auto j = static_cast<std::int64_t>(fy0);
    const double tx = smoothstep(gx - fx0);
    const double ty = smoothstep(gy - fy0);
    const double top = (1 - tx) * lattice(seed, i, j, channel) + tx * lattice(seed, i + 1, j, channel);
    const double bot = (1 - tx) * lattice(seed, i, j + 1, channel) + tx * lattice(seed, i + 1, j + 1, channel);
    return (1 - ty) * top + ty * bot;
}

OutpaintResult ReferenceGenerator::outpaint(const OutpaintRequest& req)
{
    const auto t0 = std::chrono::steady_clock::now();
    check_request(req);
    const Image& src = req.nfov.image;
    const Mask& mask = req.nfov.mask;
    if (mask.none_known() || mask.all_known())
        throw ContractError("outpaint needs both known and unknown pixels in the view");

    const auto nearest = nearest_known(mask);
    double mean[3] = {0, 0, 0};
    std::size_t count = 0;
    for (std::size_t p = 0; p < mask.data.size(); ++p) {
        if (!mask.data[p]) continue;
        ++count;
        for (int c = 0; c < 3; ++c) mean[c] += src.data[p * 3 + static_cast<std::size_t>(c)];
    }
    for (double& m : mean) m /= static_cast<double>(count);
    const auto tint = guidance_tint(req.bundle.global_stream);

    Image out = src;
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
            const std::size_t p = mask.index(x, y);
            if (mask.data[p]) continue;
            const auto q = static_cast<std::size_t>(nearest[p]);
            for (int c = 0; c < 3; ++c) {
                const double v = kNearestWeight * src.data[q * 3 + static_cast<std::size_t>(c)] +
                                 kMeanWeight * mean[c] + kTintWeight * tint[static_cast<std::size_t>(c)] +
                                 kNoiseWeight * value_noise(req.seed, x, y, c, kNoiseCell);
                out.at(x, y, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    const auto t1 = std::chrono::steady_clock::now();
    return {std::move(out), id(), std::chrono::duration<double, std::milli>(t1 - t0).count()};
}

OutpaintResult ReferenceGenerator::synthesize_seed(const OutpaintRequest& req)
{
    const auto t0 = std::chrono::steady_clock::now();
    check_request(req);
    if (!req.nfov.mask.none_known()) throw ContractError("seed synthesis expects an all-unknown view");
    const auto tint = guidance_tint(req.bundle.global_stream);
    Image out(req.view.width, req.view.height, 3);
    // Coarser noise than the outpainting term so the seed carries some structure.
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = 0.6 * tint[static_cast<std::size_t>(c)] +
                                 0.4 * value_noise(req.seed, x, y, c, 4 * kNoiseCell);
                out.at(x, y, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
    const auto t1 = std::chrono::steady_clock::now();
    return {std::move(out), id(), std::chrono::duration<double, std::milli>(t1 - t0).count()};
}

void reimpose_known(Image& out, const MaskedImage& src)
{
    if (out.width != src.image.width || out.height != src.image.height || out.channels != src.image.channels)
        throw ProtocolError("generator returned a raster of the wrong shape");
    const auto ch = static_cast<std::size_t>(out.channels);
    for (std::size_t p = 0; p < src.mask.data.size(); ++p) {
        if (!src.mask.data[p]) continue;
        std::copy_n(&src.image.data[p * ch], ch, &out.data[p * ch]);
    }
}

nlohmann::json to_json(const StepRecord& r)
{
    return {{"index", r.index},
            {"view",
             {{"lon", r.view.center.lon},
              {"lat", r.view.center.lat},
              {"fov", r.view.fov_deg},
              {"width", r.view.width},
              {"height", r.view.height}}},
            {"prompt_in_force", r.prompt},
            {"seed", r.seed},
            {"generator_id", r.generator_id},
            {"known_fraction_after", r.known_fraction_after},
            {"duration_ms", r.duration_ms},
            {"status", r.status}};
}

StepRecord step_record_from_json(const nlohmann::json& j)
{
    StepRecord r;
    r.index = j.at("index").get<int>();
    const auto& v = j.at("view");
    r.view.center = SphereCoord::normalized(v.at("lon").get<double>(), v.at("lat").get<double>());
    r.view.fov_deg = v.at("fov").get<double>();
    r.view.width = v.at("width").get<int>();
    r.view.height = v.at("height").get<int>();
    r.prompt = j.at("prompt_in_force").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.generator_id = j.at("generator_id").get<std::string>();
    r.known_fraction_after = j.at("known_fraction_after").get<double>();
    r.duration_ms = j.at("duration_ms").get<double>();
    r.status = j.at("status").get<std::string>();
    return r;
}

StepOutcome step(const Panorama& state, const ViewSpec& view, const std::string& prompt, std::uint64_t seed,
                 Generator& generator, const ConditioningConfig& cfg, int index)
{
    const auto t0 = std::chrono::steady_clock::now();
    view.validate();
    const Mask fp = view_footprint(view, state.width());
    bool adds = false;
    for (std::size_t p = 0; p < fp.data.size() && !adds; ++p) adds = fp.data[p] && !state.mask().data[p];
    if (!adds) throw ContractError("view has no unknown pixel to outpaint");

    OutpaintRequest req;
    req.nfov = project_view(state.masked(), view);
    if (req.nfov.mask.none_known()) throw ContractError("view has no known pixel to condition on");
    req.bundle = build_bundle(prompt, state, req.nfov, view, cfg);
    req.prompt = prompt;
    req.seed = seed;
    req.view = view;

    OutpaintResult res = generator.outpaint(req);
    if (res.nfov.channels != 3) throw ProtocolError("generator returned a non-RGB raster");
    for (float& v : res.nfov.data) v = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
    reimpose_known(res.nfov, req.nfov);

    StepOutcome out{attach_view(state, res.nfov, view).quantized(), {}, std::move(res.nfov)};
    const auto t1 = std::chrono::steady_clock::now();
    out.record.index = index;
    out.record.view = view;
    out.record.prompt = prompt;
    out.record.seed = seed;
    out.record.generator_id = res.generator_id.empty() ? generator.id() : res.generator_id;
    out.record.known_fraction_after = out.state.known_fraction();
    out.record.duration_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    out.record.status = "ok";
    return out;
}

}  // namespace panoweave
