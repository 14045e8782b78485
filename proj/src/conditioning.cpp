#include "panoweave/conditioning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "panoweave/error.hpp"
#include "panoweave/rng.hpp"

namespace panoweave {
namespace {

constexpr int kFaceSize = 64;
constexpr int kFaceGrid = 8;
constexpr double kFixedScale = 16777216.0;  // 2^24

Matrix seeded_matrix(int rows, int cols, std::uint64_t seed)
{
    SeededStream s(seed);
    const double a = std::sqrt(3.0 / rows);
    Matrix m(rows, cols);
    for (float& v : m.data) v = static_cast<float>(s.symmetric(a));
    return m;
}

// x (1 x n) times w (n x m), accumulated in double in index order.
void project_row(std::span<const double> x, const Matrix& w, std::span<float> out)
{
    for (int j = 0; j < w.cols; ++j) {
        double acc = 0.0;
        for (int i = 0; i < w.rows; ++i) acc += x[static_cast<std::size_t>(i)] * w.at(i, j);
        out[static_cast<std::size_t>(j)] = static_cast<float>(acc);
    }
}

Matrix matmul(const Matrix& a, const Matrix& w)
{
    Matrix out(a.rows, w.cols);
    std::vector<double> x(static_cast<std::size_t>(a.cols));
    for (int r = 0; r < a.rows; ++r) {
        for (int c = 0; c < a.cols; ++c) x[static_cast<std::size_t>(c)] = a.at(r, c);
        project_row(x, w, out.row(r));
    }
    return out;
}

void require_finite(const Matrix& m, const char* what)
{
    if (!m.all_finite()) throw NumericError(std::string(what) + " contains NaN or Inf");
}

// Fixed-point 8x8 block sums of one face: gray then known count.
struct FaceGrid {
    std::array<std::int64_t, kFaceGrid * kFaceGrid> gray{};
    std::array<std::int64_t, kFaceGrid * kFaceGrid> known{};

    auto operator<=>(const FaceGrid&) const = default;
};

FaceGrid reduce_face(const MaskedImage& face)
{
    FaceGrid g;
    const int block = kFaceSize / kFaceGrid;
    const int ch = face.image.channels;
    for (int y = 0; y < kFaceSize; ++y)
        for (int x = 0; x < kFaceSize; ++x) {
            const std::size_t cell = static_cast<std::size_t>((y / block) * kFaceGrid + x / block);
            if (!face.mask.known(x, y)) continue;
            double sum = 0.0;
            for (int c = 0; c < ch; ++c) sum += face.image.at(x, y, c);
            g.gray[cell] += std::llround(sum / ch * kFixedScale);
            g.known[cell] += 1;
        }
    return g;
}

// out(x, y) = in(y, n-1-x) on the cell grid.
FaceGrid rotate_grid(const FaceGrid& in)
{
    FaceGrid out;
    for (int y = 0; y < kFaceGrid; ++y)
        for (int x = 0; x < kFaceGrid; ++x) {
            const auto dst = static_cast<std::size_t>(y * kFaceGrid + x);
            const auto src = static_cast<std::size_t>((kFaceGrid - 1 - x) * kFaceGrid + y);
            out.gray[dst] = in.gray[src];
            out.known[dst] = in.known[src];
        }
    return out;
}

FaceGrid canonical_orientation(FaceGrid g)
{
    FaceGrid best = g;
    for (int k = 1; k < 4; ++k) {
        g = rotate_grid(g);
        best = std::min(best, g);
    }
    return best;
}

}  // namespace

Matrix::Matrix(int r, int c, float fill)
    : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill)
{
}

bool Matrix::all_finite() const
{
    return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
}

Matrix vstack(const Matrix& a, const Matrix& b)
{
    if (a.cols != b.cols) throw DimensionError("vstack: column counts differ");
    Matrix out(a.rows + b.rows, a.cols);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
    return out;
}

void ConditioningConfig::validate() const
{
    if (dim < 1 || grid < 1 || layers < 0)
        throw ConfigError("conditioning sizes must be positive (dim, grid) and layers >= 0");
}

TextGuidance encode_text(std::string_view prompt, int dim)
{
    if (prompt.size() > kMaxPromptChars)
        throw ConfigError("prompt longer than " + std::to_string(kMaxPromptChars) + " characters");
    if (dim < 1) throw ConfigError("text embedding dim must be positive");

    std::vector<std::string_view> tokens;
    std::size_t i = 0;
    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
    while (i < prompt.size()) {
        while (i < prompt.size() && is_space(prompt[i])) ++i;
        const std::size_t start = i;
        while (i < prompt.size() && !is_space(prompt[i])) ++i;
        if (i > start) tokens.push_back(prompt.substr(start, i - start));
    }

    TextGuidance out;
    out.prompt = std::string(prompt);
    if (tokens.empty()) {
        out.embedding = Matrix(1, dim);
        return out;
    }
    out.embedding = Matrix(static_cast<int>(tokens.size()), dim);
    std::vector<double> v(static_cast<std::size_t>(dim));
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        SeededStream s(fnv1a64(tokens[t]));
        double norm = 0.0;
        for (double& x : v) {
            x = s.symmetric(1.0);
            norm += x * x;
        }
        norm = std::sqrt(norm);
        for (int c = 0; c < dim; ++c)
            out.embedding.at(static_cast<int>(t), c) = static_cast<float>(v[static_cast<std::size_t>(c)] / norm);
    }
    return out;
}

Matrix OmniVisualGuidance::tokens() const
{
    const int dim = static_cast<int>(faces[0].size());
    Matrix m(6, dim);
    for (int f = 0; f < 6; ++f)
        std::copy(faces[static_cast<std::size_t>(f)].begin(), faces[static_cast<std::size_t>(f)].end(),
                  m.row(f).begin());
    return m;
}

OmniVisualGuidance encode_omni(const Panorama& state, const ConditioningConfig& cfg)
{
    cfg.validate();
    const auto faces = equirect_to_cubemap(state.masked(), kFaceSize);
    constexpr int cells = kFaceGrid * kFaceGrid;
    const Matrix proj = seeded_matrix(2 * cells + 1, cfg.dim, mix_seed(cfg.seed, 0x0e1));

    OmniVisualGuidance out;
    std::vector<double> feat(static_cast<std::size_t>(2 * cells + 1));
    for (Face f : kFaces) {
        FaceGrid g = reduce_face(faces[static_cast<int>(f)]);
        if (f == Face::U || f == Face::D) g = canonical_orientation(g);
        const double per_cell = static_cast<double>((kFaceSize / kFaceGrid) * (kFaceSize / kFaceGrid));
        for (int i = 0; i < cells; ++i) {
            feat[static_cast<std::size_t>(i)] = static_cast<double>(g.gray[static_cast<std::size_t>(i)]) / (per_cell * kFixedScale);
            feat[static_cast<std::size_t>(cells + i)] = static_cast<double>(g.known[static_cast<std::size_t>(i)]) / per_cell;
        }
        feat.back() = 1.0;
        auto& vec = out.faces[static_cast<std::size_t>(f)];
        vec.assign(static_cast<std::size_t>(cfg.dim), 0.0f);
        project_row(feat, proj, vec);
    }
    return out;
}

LocalGuidance encode_local(const MaskedImage& nfov, const ViewSpec& view, const ConditioningConfig& cfg)
{
    cfg.validate();
    view.validate();
    const Image& img = nfov.image;
    if (img.width != view.width || img.height != view.height || nfov.mask.width != img.width ||
        nfov.mask.height != img.height)
        throw DimensionError("encode_local: raster does not match the view");
    if (img.channels != 3) throw DimensionError("encode_local: expected an RGB raster");

    const int g = cfg.grid;
    const int gc = geometry_channels(cfg.geometry);
    const Matrix p_nfov = seeded_matrix(6, cfg.dim, mix_seed(cfg.seed, 0x1f0));
    const Matrix p_geom = seeded_matrix(gc + 1, cfg.dim, mix_seed(cfg.seed, 0x6e0));
    const Matrix p_face = seeded_matrix(4 * gc + 1, cfg.dim, mix_seed(cfg.seed, 0xfa6));
    const Image gmap = geometry_map_for(view, cfg.geometry);

    LocalGuidance out{Matrix(g * g, cfg.dim), Matrix(g * g, cfg.dim), Matrix(6, cfg.dim)};
    std::vector<double> feat(6);
    std::vector<double> gfeat(static_cast<std::size_t>(gc + 1));
    for (int py = 0; py < g; ++py) {
        for (int px = 0; px < g; ++px) {
            const int x0 = px * img.width / g;
            const int x1 = std::max(x0 + 1, (px + 1) * img.width / g);
            const int y0 = py * img.height / g;
            const int y1 = std::max(y0 + 1, (py + 1) * img.height / g);
            double rgb[3] = {0, 0, 0};
            double lum = 0.0;
            double lum2 = 0.0;
            std::fill(gfeat.begin(), gfeat.end(), 0.0);
            int known = 0;
            int total = 0;
            for (int y = y0; y < std::min(y1, img.height); ++y)
                for (int x = x0; x < std::min(x1, img.width); ++x) {
                    ++total;
                    for (int c = 0; c < gc; ++c) gfeat[static_cast<std::size_t>(c)] += gmap.at(x, y, c);
                    if (!nfov.mask.known(x, y)) continue;
                    ++known;
                    const double l = 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
                    for (int c = 0; c < 3; ++c) rgb[c] += img.at(x, y, c);
                    lum += l;
                    lum2 += l * l;
                }
            const int token = py * g + px;
            const double kn = known > 0 ? known : 1;
            const double mean_l = lum / kn;
            feat = {rgb[0] / kn, rgb[1] / kn, rgb[2] / kn, std::max(0.0, lum2 / kn - mean_l * mean_l),
                    static_cast<double>(known) / total, 1.0};
            project_row(feat, p_nfov, out.nfov_tokens.row(token));
            for (int c = 0; c < gc; ++c) gfeat[static_cast<std::size_t>(c)] /= total;
            gfeat.back() = 1.0;
            project_row(gfeat, p_geom, out.geometry_tokens.row(token));
        }
    }

    constexpr int kGeomFace = 16;
    std::vector<double> ffeat(static_cast<std::size_t>(4 * gc + 1));
    for (Face f : kFaces) {
        const Image fm = geometry_map_for(f, kGeomFace, cfg.geometry);
        std::fill(ffeat.begin(), ffeat.end(), 0.0);
        for (int y = 0; y < kGeomFace; ++y)
            for (int x = 0; x < kGeomFace; ++x) {
                const int q = (y >= kGeomFace / 2 ? 2 : 0) + (x >= kGeomFace / 2 ? 1 : 0);
                for (int c = 0; c < gc; ++c) ffeat[static_cast<std::size_t>(q * gc + c)] += fm.at(x, y, c);
            }
        const double per_q = (kGeomFace / 2) * (kGeomFace / 2);
        for (int i = 0; i < 4 * gc; ++i) ffeat[static_cast<std::size_t>(i)] /= per_q;
        ffeat.back() = 1.0;
        project_row(ffeat, p_face, out.face_geometry_tokens.row(static_cast<int>(f)));
    }
    return out;
}

AttentionStack::AttentionStack(std::vector<AttentionBlock> blocks) : blocks_(std::move(blocks))
{
    for (const AttentionBlock& b : blocks_) {
        const int d = b.wq.rows;
        for (const Matrix* w : {&b.wq, &b.wk, &b.wv})
            if (w->rows != d || w->cols != d) throw DimensionError("attention weights must be square and equal");
    }
}

AttentionStack AttentionStack::seeded(int dim, int layers, std::uint64_t seed)
{
    std::vector<AttentionBlock> blocks;
    for (int l = 0; l < layers; ++l) {
        const std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(l));
        blocks.push_back({seeded_matrix(dim, dim, mix_seed(s, 'q')), seeded_matrix(dim, dim, mix_seed(s, 'k')),
                          seeded_matrix(dim, dim, mix_seed(s, 'v')), true});
    }
    return AttentionStack(std::move(blocks));
}

AttentionStack AttentionStack::identity(int dim, int layers, bool normalize)
{
    Matrix eye(dim, dim);
    for (int i = 0; i < dim; ++i) eye.at(i, i) = 1.0f;
    std::vector<AttentionBlock> blocks(static_cast<std::size_t>(layers), AttentionBlock{eye, eye, eye, normalize});
    return AttentionStack(std::move(blocks));
}

Matrix AttentionStack::forward(const Matrix& queries, const Matrix& context, AttentionTrace* trace) const
{
    require_finite(queries, "attention queries");
    require_finite(context, "attention context");
    if (context.rows < 1) throw DimensionError("attention needs at least one key token");
    Matrix x = queries;
    for (const AttentionBlock& b : blocks_) {
        const int d = b.wq.rows;
        if (x.cols != d || context.cols != d) throw DimensionError("attention input dims do not match weights");
        const Matrix q = matmul(x, b.wq);
        const Matrix k = matmul(context, b.wk);
        const Matrix v = matmul(context, b.wv);
        const double scale = 1.0 / std::sqrt(static_cast<double>(d));

        Matrix weights(x.rows, context.rows);
        Matrix attended(x.rows, d);
        std::vector<double> s(static_cast<std::size_t>(context.rows));
        std::vector<double> acc(static_cast<std::size_t>(d));
        for (int i = 0; i < x.rows; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < context.rows; ++j) {
                double dot = 0.0;
                for (int c = 0; c < d; ++c) dot += static_cast<double>(q.at(i, c)) * k.at(j, c);
                s[static_cast<std::size_t>(j)] = dot * scale;
                mx = std::max(mx, dot * scale);
            }
            double z = 0.0;
            for (double& e : s) {
                e = std::exp(e - mx);
                z += e;
            }
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int j = 0; j < context.rows; ++j) {
                const double a = s[static_cast<std::size_t>(j)] / z;
                weights.at(i, j) = static_cast<float>(a);
                for (int c = 0; c < d; ++c) acc[static_cast<std::size_t>(c)] += a * v.at(j, c);
            }
            for (int c = 0; c < d; ++c) attended.at(i, c) = static_cast<float>(acc[static_cast<std::size_t>(c)]);
        }

        for (int i = 0; i < x.rows; ++i) {
            auto row = x.row(i);
            for (int c = 0; c < d; ++c) row[static_cast<std::size_t>(c)] += attended.at(i, c);
            if (!b.normalize) continue;
            double mean = 0.0;
            for (float f : row) mean += f;
            mean /= d;
            double var = 0.0;
            for (float f : row) var += (f - mean) * (f - mean);
            var /= d;
            const double inv = 1.0 / std::sqrt(var + 1e-5);
            for (float& f : row) f = static_cast<float>((f - mean) * inv);
        }
        if (trace) {
            trace->weights.push_back(std::move(weights));
            trace->attended.push_back(std::move(attended));
        }
        require_finite(x, "attention output");
    }
    return x;
}

Matrix fuse_global(const TextGuidance& text, const OmniVisualGuidance& omni, const AttentionStack& stack,
                   AttentionTrace* trace)
{
    return stack.forward(omni.tokens(), text.embedding, trace);
}

Matrix fuse_local(const LocalGuidance& local, const OmniVisualGuidance& omni, const AttentionStack& stack,
                  bool use_geometry, AttentionTrace* trace)
{
    Matrix q = local.nfov_tokens;
    Matrix kv = omni.tokens();
    if (q.cols != local.geometry_tokens.cols || kv.rows != local.face_geometry_tokens.rows ||
        kv.cols != local.face_geometry_tokens.cols || q.rows != local.geometry_tokens.rows)
        throw DimensionError("fuse_local: token shapes disagree");
    if (use_geometry) {
        for (std::size_t i = 0; i < q.data.size(); ++i) q.data[i] += local.geometry_tokens.data[i];
        for (std::size_t i = 0; i < kv.data.size(); ++i) kv.data[i] += local.face_geometry_tokens.data[i];
    }
    return stack.forward(q, kv, trace);
}

GuidanceBundle build_bundle(std::string_view prompt, const Panorama& state, const MaskedImage& nfov,
                            const ViewSpec& view, const ConditioningConfig& cfg)
{
    cfg.validate();
    GuidanceBundle b;
    b.global_on = cfg.global_on;
    b.local_on = cfg.local_on;
    b.geometry_on = cfg.geometry_on;

    const TextGuidance text = encode_text(prompt, cfg.dim);
    const OmniVisualGuidance omni = encode_omni(state, cfg);
    if (cfg.global_on) {
        b.global_stream = fuse_global(text, omni, AttentionStack::seeded(cfg.dim, cfg.layers, mix_seed(cfg.seed, 0x610b)));
    } else {
        b.global_stream = text.embedding;
    }
    if (cfg.local_on) {
        const LocalGuidance local = encode_local(nfov, view, cfg);
        b.local_stream = fuse_local(local, omni, AttentionStack::seeded(cfg.dim, cfg.layers, mix_seed(cfg.seed, 0x10ca1)),
                                    cfg.geometry_on);
    }
    require_finite(b.global_stream, "global stream");
    if (b.local_stream) require_finite(*b.local_stream, "local stream");
    return b;
}

}  // namespace panoweave
