#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "panoweave/canvas.hpp"
#include "panoweave/conditioning.hpp"
#include "panoweave/generator.hpp"
#include "panoweave/scheduler.hpp"

namespace panoweave {

inline constexpr const char* kGeneratorUrlEnv = "PANOWEAVE_GENERATOR_URL";

struct RunConfig {
    int pano_width = 1024;
    double fov_deg = 90.0;
    double stride_lon = 45.0;
    double stride_lat = 45.0;
    double min_overlap = kDefaultMinOverlap;
    std::uint64_t base_seed = 0;
    int seed_view_size = 256;  ///< NFoV raster side for text-only runs
    ConditioningConfig conditioning;
    std::string generator_endpoint;  ///< empty: built-in reference generator

    /// Throws ConfigError (odd or tiny width, bad strides, ...).
    void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);

struct PromptChange {
    int step = 0;  ///< 0 = the prompt given at init
    std::string prompt;

    bool operator==(const PromptChange&) const = default;
};

struct RunManifest {
    std::string run_id;
    std::string created_at;
    RunConfig config;
    ViewSpec initial_view;
    std::string input_sha256;
    bool text_only = false;
    TraversalPlan plan;
    std::size_t plan_cursor = 0;
    std::vector<StepRecord> steps;
    std::vector<PromptChange> prompt_history;
    std::string status = "active";  ///< active | complete | aborted

    [[nodiscard]] const std::string& prompt() const { return prompt_history.back().prompt; }
    [[nodiscard]] int ok_steps() const;
    /// Throws StateError when indices are not 1..n or coverage decreases.
    void check() const;
};

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

/// Endpoint from the environment if set, else cfg.generator_endpoint; an
/// empty endpoint gives the reference generator.
std::unique_ptr<Generator> make_generator(const RunConfig& cfg);

/// Default seed of step k.
std::uint64_t step_seed(std::uint64_t base_seed, int k);

struct StepOverrides {
    std::optional<std::string> prompt;
    std::optional<SphereCoord> center;  ///< fov and raster size come from the run
    std::optional<std::uint64_t> seed;
};

/// A run directory:
///   manifest.json  state.png  mask.png  input.png  steps/<k>.png
/// Every mutation is committed through a redo journal so a crash leaves
/// either the previous or the next consistent state.
class Run {
public:
    /// Creates `dir` (must not exist or be empty). Without an input image the
    /// generator synthesizes the initial view from the prompt.
    static Run create(const std::filesystem::path& dir, const std::optional<Image>& input,
                      const ViewSpec& view, const std::string& prompt, const RunConfig& cfg,
                      Generator& generator);

    /// Loads a run, completing or discarding an interrupted commit first.
    static Run open(const std::filesystem::path& dir);

    [[nodiscard]] const std::filesystem::path& dir() const { return dir_; }
    [[nodiscard]] const RunManifest& manifest() const { return manifest_; }
    [[nodiscard]] const Panorama& state() const { return state_; }
    [[nodiscard]] bool complete() const { return state_.complete(); }

    /// Executes one step. A generator failure is recorded (status
    /// "failed:...") with the state left unchanged and returned, not thrown.
    /// Throws ContractError on a complete run, SteeringError for a view
    /// override that does not pass replan_from, ConfigError for bad prompts.
    StepRecord step(Generator& generator, const StepOverrides& overrides = {});

    /// Steps until complete, `max_steps` attempts, a failure, or cancel.
    std::vector<StepRecord> run_auto(Generator& generator, int max_steps,
                                     const std::function<void(const StepRecord&)>& on_step = {},
                                     const std::atomic<bool>* cancel = nullptr);

    /// Marks the run aborted; later steps throw ContractError.
    void abort();

private:
    Run(std::filesystem::path dir, RunManifest m, Panorama state);

    void commit(const std::vector<std::pair<std::string, std::vector<std::uint8_t>>>& files);

    std::filesystem::path dir_;
    RunManifest manifest_;
    Panorama state_;
};

/// Re-executes the manifest's ok steps from input.png.
Panorama replay(const std::filesystem::path& dir, Generator& generator);

struct ExportPaths {
    std::filesystem::path equirect;
    std::array<std::filesystem::path, 6> faces;
    std::filesystem::path manifest;
};

/// Writes `out` (equirect PNG), `<stem>_<face>.png` cube faces of side
/// width/2 and `<stem>_manifest.json` next to it. Throws ContractError
/// unless the run is complete.
ExportPaths export_run(const Run& run, const std::filesystem::path& out);

// Journal primitives, exposed for tests.
void journal_commit(const std::filesystem::path& dir,
                    const std::vector<std::pair<std::string, std::vector<std::uint8_t>>>& files);
/// Returns true when an interrupted commit was rolled forward.
bool journal_recover(const std::filesystem::path& dir);

/// Test fault injection: when the environment variable
/// PANOWEAVE_FAULT_POINT names a journal phase (files-written,
/// marker-written, renamed-one) the process SIGKILLs itself there.
inline constexpr const char* kFaultPointEnv = "PANOWEAVE_FAULT_POINT";

}  // namespace panoweave
