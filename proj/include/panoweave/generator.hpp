#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>

#include "json.hpp"
#include "panoweave/canvas.hpp"
#include "panoweave/conditioning.hpp"
#include "panoweave/geometry.hpp"

namespace panoweave {

struct OutpaintRequest {
    MaskedImage nfov;  ///< projected view X and its known mask
    GuidanceBundle bundle;
    std::string prompt;
    std::uint64_t seed = 0;
    ViewSpec view;
};

struct OutpaintResult {
    Image nfov;
    std::string generator_id;
    double latency_ms = 0.0;
};

/// Single-step conditioned outpainting. Implementations may ignore known
/// pixels; the engine re-imposes them after every call.
class Generator {
public:
    virtual ~Generator() = default;

    [[nodiscard]] virtual std::string id() const = 0;

    /// Fills the unknown pixels of req.nfov. Throws ContractError unless the
    /// mask has both known and unknown pixels.
    virtual OutpaintResult outpaint(const OutpaintRequest& req) = 0;

    /// Text-only seed image: req.nfov is entirely unknown.
    virtual OutpaintResult synthesize_seed(const OutpaintRequest& req) = 0;

    /// Aborts in-flight and future calls with CancelledError. Default no-op.
    virtual void cancel() {}
};

/// Deterministic stand-in for a diffusion backbone. Each unknown pixel is
///   0.55 * nearest known pixel + 0.3 * known mean + 0.05 * tint + 0.1 * noise
/// clamped to [0,1]. The tint is a fixed projection of the pooled global
/// stream squashed into [0,1]; the noise is smooth value noise keyed by seed.
class ReferenceGenerator final : public Generator {
public:
    static constexpr double kNearestWeight = 0.55;
    static constexpr double kMeanWeight = 0.3;
    static constexpr double kTintWeight = 0.05;
    static constexpr double kNoiseWeight = 0.1;
    static constexpr int kNoiseCell = 16;

    [[nodiscard]] std::string id() const override { return "reference-v1"; }
    OutpaintResult outpaint(const OutpaintRequest& req) override;
    OutpaintResult synthesize_seed(const OutpaintRequest& req) override;
};

/// For every pixel, the flat index of a nearest known pixel (exact
/// Euclidean distance); -1 everywhere when nothing is known.
std::vector<int> nearest_known(const Mask& mask);

/// RGB tint in [0,1] derived from a global stream (row-order independent).
std::array<double, 3> guidance_tint(const Matrix& global_stream);

/// Smooth value noise in [0,1] on a `cell`-pixel lattice.
double value_noise(std::uint64_t seed, int x, int y, int channel, int cell);

struct RemoteOptions {
    std::string url;  ///< http://host[:port][/path]
    std::chrono::milliseconds timeout{60000};
    int max_retries = 3;
    std::chrono::milliseconds backoff{250};  ///< doubled after every retry
    std::size_t max_bytes = std::size_t{64} << 20;
};

/// Client for an external inpainting server speaking the JSON wire format
/// (see encode_wire_request).
class RemoteGenerator final : public Generator {
public:
    explicit RemoteGenerator(RemoteOptions opts);

    [[nodiscard]] std::string id() const override;
    OutpaintResult outpaint(const OutpaintRequest& req) override;
    OutpaintResult synthesize_seed(const OutpaintRequest& req) override;
    void cancel() override { cancelled_ = true; }

    /// Number of HTTP attempts made by the last call.
    [[nodiscard]] int last_attempts() const { return last_attempts_; }

private:
    OutpaintResult call(const OutpaintRequest& req);

    RemoteOptions opts_;
    std::string scheme_host_port_;
    std::string path_;
    std::atomic<bool> cancelled_{false};
    std::atomic<int> last_attempts_{0};
};

/// {image, mask, prompt, seed, view, guidance: {global, local}} with PNG
/// payloads in base64 and matrices as {data: base64 f32le, shape: [rows, cols]}.
nlohmann::json encode_wire_request(const OutpaintRequest& req);

/// Parses {image: base64 PNG}; throws ProtocolError on malformed payloads or
/// a raster that is not width x height RGB.
Image decode_wire_response(const std::string& body, int width, int height);

nlohmann::json encode_matrix(const Matrix& m);
Matrix decode_matrix(const nlohmann::json& j);

/// Copies the known pixels of `src` over `out` (same raster size).
void reimpose_known(Image& out, const MaskedImage& src);

struct StepRecord {
    int index = 0;
    ViewSpec view;
    std::string prompt;
    std::uint64_t seed = 0;
    std::string generator_id;
    double known_fraction_after = 0.0;
    double duration_ms = 0.0;
    std::string status = "ok";  ///< "ok" or "failed:<reason>"

    [[nodiscard]] bool ok() const { return status == "ok"; }
};

nlohmann::json to_json(const StepRecord& r);
StepRecord step_record_from_json(const nlohmann::json& j);

struct StepOutcome {
    Panorama state;
    StepRecord record;
    Image nfov;  ///< the completed view as attached
};

/// One autoregressive step: project, condition, generate, re-impose known
/// pixels, attach, snap to the 8-bit lattice. Throws ContractError when the
/// view has no unknown or no known pixel; generator errors propagate.
StepOutcome step(const Panorama& state, const ViewSpec& view, const std::string& prompt,
                 std::uint64_t seed, Generator& generator, const ConditioningConfig& cfg,
                 int index = 0);

}  // namespace panoweave
