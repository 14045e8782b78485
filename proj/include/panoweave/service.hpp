#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>

#include "panoweave/pipeline.hpp"

namespace httplib {
class Server;
}

namespace panoweave {

using GeneratorFactory = std::function<std::unique_ptr<Generator>(const RunConfig&)>;

/// Equirect preview at most `max_width` wide (integer box downsampling);
/// a preview pixel is known only if its whole block is, unknown pixels are
/// drawn as an 8 px grey checkerboard.
Image render_preview(const Panorama& state, int max_width = 1024);
/// Mask of the preview pixels that render_preview draws as known.
Mask preview_mask(const Panorama& state, int max_width = 1024);

/// HTTP API over a directory of runs (one sub-directory per run id):
///   POST   /runs                 multipart: image (optional PNG), config (JSON)
///   GET    /runs                 run ids
///   GET    /runs/{id}            manifest
///   GET    /runs/{id}/preview.png
///   GET    /runs/{id}/mask.png
///   POST   /runs/{id}/step       {prompt?, view?: {lon, lat}, seed?} -> StepRecord
///   POST   /runs/{id}/auto       {steps: N | "all"} -> NDJSON StepRecords
///   DELETE /runs/{id}            abort
/// One step executes per run at a time; a second one gets 409. Reads are
/// served from the last committed snapshot and never wait on a step.
class Service {
public:
    explicit Service(std::filesystem::path data_dir, GeneratorFactory factory = make_generator);
    ~Service();

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds to host:port (port 0 picks a free one) and returns the port.
    int bind(const std::string& host, int port);
    /// Blocks until stop().
    void listen();
    void stop();
    void wait_until_ready();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace panoweave
