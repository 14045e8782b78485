#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "panoweave/canvas.hpp"
#include "panoweave/geometry.hpp"

namespace panoweave {

/// Dense row-major float matrix; one row per token.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(int r, int c, float fill = 0.0f);

    float& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    [[nodiscard]] float at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
    std::span<float> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
    [[nodiscard]] std::span<const float> row(int r) const
    {
        return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
    }

    [[nodiscard]] bool all_finite() const;
    bool operator==(const Matrix&) const = default;
};

/// Stacks rows of `a` then `b` (same column count).
Matrix vstack(const Matrix& a, const Matrix& b);

struct ConditioningConfig {
    int dim = 64;
    int grid = 8;        ///< NFoV patch grid per side
    int layers = 2;      ///< cross-attention blocks per stream
    std::uint64_t seed = 0x5eedc0de;
    bool global_on = true;
    bool local_on = true;
    bool geometry_on = true;
    GeometryEncoding geometry = GeometryEncoding::FourChannel;

    /// Throws ConfigError on non-positive sizes.
    void validate() const;
};

inline constexpr std::size_t kMaxPromptChars = 4096;

struct TextGuidance {
    std::string prompt;
    Matrix embedding;  ///< tokens x dim
};

/// Whitespace tokens, each hashed to a fixed unit vector. The empty prompt
/// yields one zero token. Throws ConfigError above kMaxPromptChars.
TextGuidance encode_text(std::string_view prompt, int dim = 64);

struct OmniVisualGuidance {
    std::array<std::vector<float>, 6> faces;  ///< F, L, B, R, U, D

    [[nodiscard]] Matrix tokens() const;
};

/// Cubemap faces of the state, reduced to an 8x8 gray + known-fraction grid
/// and projected to `dim` by a fixed matrix. Pole faces are taken in a
/// canonical in-plane orientation.
OmniVisualGuidance encode_omni(const Panorama& state, const ConditioningConfig& cfg);

struct LocalGuidance {
    Matrix nfov_tokens;           ///< grid^2 x dim
    Matrix geometry_tokens;       ///< grid^2 x dim, encoded view geometry map
    Matrix face_geometry_tokens;  ///< 6 x dim, encoded face geometry maps
};

LocalGuidance encode_local(const MaskedImage& nfov, const ViewSpec& view,
                           const ConditioningConfig& cfg);

/// One cross-attention block: X + softmax(XWq (CWk)^T / sqrt(d)) CWv,
/// followed by per-token normalisation (zero mean, unit variance) when
/// `normalize` is set.
struct AttentionBlock {
    Matrix wq, wk, wv;  ///< dim x dim
    bool normalize = true;
};

struct AttentionTrace {
    std::vector<Matrix> weights;   ///< per block: queries x keys
    std::vector<Matrix> attended;  ///< per block, before the residual add
};

class AttentionStack {
public:
    AttentionStack() = default;
    explicit AttentionStack(std::vector<AttentionBlock> blocks);

    /// Weights uniform in +-sqrt(3 / dim), fixed by seed.
    static AttentionStack seeded(int dim, int layers, std::uint64_t seed);
    static AttentionStack identity(int dim, int layers, bool normalize);

    [[nodiscard]] Matrix forward(const Matrix& queries, const Matrix& context,
                                 AttentionTrace* trace = nullptr) const;
    [[nodiscard]] int layers() const { return static_cast<int>(blocks_.size()); }

private:
    std::vector<AttentionBlock> blocks_;
};

/// Face tokens (queries) attend to text tokens (keys/values).
Matrix fuse_global(const TextGuidance& text, const OmniVisualGuidance& omni,
                   const AttentionStack& stack, AttentionTrace* trace = nullptr);

/// NFoV + geometry tokens (queries) attend to face + face-geometry tokens.
/// With `use_geometry` false the geometry tokens are zeroed.
Matrix fuse_local(const LocalGuidance& local, const OmniVisualGuidance& omni,
                  const AttentionStack& stack, bool use_geometry = true,
                  AttentionTrace* trace = nullptr);

struct GuidanceBundle {
    Matrix global_stream;
    std::optional<Matrix> local_stream;
    bool global_on = true;
    bool local_on = true;
    bool geometry_on = true;
};

/// Global stream: fused when enabled, otherwise the raw text embedding.
/// Local stream: absent when disabled.
GuidanceBundle build_bundle(std::string_view prompt, const Panorama& state,
                            const MaskedImage& nfov, const ViewSpec& view,
                            const ConditioningConfig& cfg);

}  // namespace panoweave
