// panoweave: command-line front end for runs.
//
//   panoweave init --input view.png --yaw 0 --pitch 0 --fov 90 --pano-width 1024 --prompt "..." --out run/
//   panoweave step run/ [--prompt STR] [--yaw DEG --pitch DEG] [--seed N]
//   panoweave auto run/ --steps N|all
//   panoweave export run/ --out pano.png
//   panoweave serve --port 8080 --data runs/
//
// Exit codes: 0 ok, 2 config error, 3 generator error, 4 state error.

#include <csignal>
#include <iostream>

#include "CLI11.hpp"
#include "panoweave/error.hpp"
#include "panoweave/pipeline.hpp"
#include "panoweave/png_io.hpp"
#include "panoweave/service.hpp"

using namespace panoweave;

namespace {

int print_record(const StepRecord& r)
{
    std::cout << to_json(r).dump() << std::endl;
    return r.ok() ? 0 : 3;
}

panoweave::Service* g_service = nullptr;

void on_signal(int)
{
    if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Autoregressive 360-degree panorama outpainting"};
    app.require_subcommand(1);

    // init
    auto* init = app.add_subcommand("init", "Create a run from an NFoV image (or from the prompt alone)");
    std::string input, out_dir, prompt;
    double yaw = 0.0, pitch = 0.0;
    RunConfig cfg;
    std::string generator_url;
    bool no_global = false, no_local = false, no_geometry = false, two_channel = false;
    init->add_option("--input", input, "NFoV PNG; omit for text-only generation")->check(CLI::ExistingFile);
    init->add_option("--yaw", yaw, "View centre longitude (deg)");
    init->add_option("--pitch", pitch, "View centre latitude (deg)")->check(CLI::Range(-90.0, 90.0));
    init->add_option("--fov", cfg.fov_deg, "Horizontal field of view (deg)")->capture_default_str();
    init->add_option("--pano-width", cfg.pano_width, "Equirect width (height = width/2)")->capture_default_str();
    init->add_option("--prompt", prompt, "Text prompt");
    init->add_option("--out", out_dir, "Run directory")->required();
    init->add_option("--seed", cfg.base_seed, "Base seed")->capture_default_str();
    init->add_option("--stride-lon", cfg.stride_lon, "Longitude stride (deg)")->capture_default_str();
    init->add_option("--stride-lat", cfg.stride_lat, "Latitude stride (deg)")->capture_default_str();
    init->add_option("--min-overlap", cfg.min_overlap, "Minimum known overlap per view")->capture_default_str();
    init->add_option("--layers", cfg.conditioning.layers, "Cross-attention layers per stream")->capture_default_str();
    init->add_option("--generator", generator_url, "Remote generator endpoint (http://host:port/path)");
    init->add_flag("--no-global", no_global, "Disable the global (text x omni) stream fusion");
    init->add_flag("--no-local", no_local, "Disable the local (view) stream");
    init->add_flag("--no-geometry", no_geometry, "Disable geometry tokens in the local stream");
    init->add_flag("--two-channel-geometry", two_channel, "Use (cos lon, sin lat) geometry encoding");

    // step
    auto* stepc = app.add_subcommand("step", "Run one step");
    std::string run_dir;
    std::optional<std::string> step_prompt;
    std::optional<double> step_yaw, step_pitch;
    std::optional<std::uint64_t> step_seed_opt;
    stepc->add_option("dir", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
    stepc->add_option("--prompt", step_prompt, "New prompt for this and later steps");
    auto* oyaw = stepc->add_option("--yaw", step_yaw, "Steer: view centre longitude (deg)");
    auto* opitch = stepc->add_option("--pitch", step_pitch, "Steer: view centre latitude (deg)");
    oyaw->needs(opitch);
    opitch->needs(oyaw);
    stepc->add_option("--seed", step_seed_opt, "Seed override");

    // auto
    auto* autoc = app.add_subcommand("auto", "Run steps until complete");
    std::string steps_arg;
    autoc->add_option("dir", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
    autoc->add_option("--steps", steps_arg, "Number of steps or 'all'")->required();

    // export
    auto* exportc = app.add_subcommand("export", "Write the equirect, cube faces and manifest");
    std::string export_out;
    exportc->add_option("dir", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
    exportc->add_option("--out", export_out, "Output PNG path")->required();

    // serve
    auto* serve = app.add_subcommand("serve", "HTTP API");
    int port = 8080;
    std::string data_dir = "runs";
    std::string host = "127.0.0.1";
    serve->add_option("--port", port)->capture_default_str();
    serve->add_option("--data", data_dir, "Directory holding the runs")->capture_default_str();
    serve->add_option("--host", host)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*init) {
            cfg.generator_endpoint = generator_url;
            cfg.conditioning.global_on = !no_global;
            cfg.conditioning.local_on = !no_local;
            cfg.conditioning.geometry_on = !no_geometry;
            if (two_channel) cfg.conditioning.geometry = GeometryEncoding::TwoChannel;
            cfg.validate();
            std::optional<Image> img;
            if (!input.empty()) img = load_png(input);
            const ViewSpec view{SphereCoord::normalized(yaw, pitch), cfg.fov_deg, 0, 0};
            auto gen = make_generator(cfg);
            const Run run = Run::create(out_dir, img, view, prompt, cfg, *gen);
            std::cout << nlohmann::json{{"run_id", run.manifest().run_id},
                                        {"dir", run.dir().string()},
                                        {"plan_length", run.manifest().plan.views.size()},
                                        {"known_fraction", run.state().known_fraction()}}
                             .dump()
                      << std::endl;
            return 0;
        }
        if (*stepc) {
            Run run = Run::open(run_dir);
            auto gen = make_generator(run.manifest().config);
            StepOverrides ov;
            ov.prompt = step_prompt;
            ov.seed = step_seed_opt;
            if (step_yaw) ov.center = SphereCoord::normalized(*step_yaw, *step_pitch);
            return print_record(run.step(*gen, ov));
        }
        if (*autoc) {
            int n = -1;
            if (steps_arg != "all") {
                try {
                    std::size_t used = 0;
                    n = std::stoi(steps_arg, &used);
                    if (used != steps_arg.size() || n < 0) throw std::invalid_argument(steps_arg);
                } catch (const std::logic_error&) {
                    throw ConfigError("--steps must be a non-negative integer or 'all'");
                }
            }
            Run run = Run::open(run_dir);
            if (run.complete()) return 0;
            auto gen = make_generator(run.manifest().config);
            int rc = 0;
            run.run_auto(*gen, n, [&](const StepRecord& r) { rc = std::max(rc, print_record(r)); });
            return rc;
        }
        if (*exportc) {
            const Run run = Run::open(run_dir);
            const ExportPaths paths = export_run(run, export_out);
            nlohmann::json faces = nlohmann::json::array();
            for (const auto& f : paths.faces) faces.push_back(f.string());
            std::cout << nlohmann::json{{"equirect", paths.equirect.string()},
                                        {"faces", faces},
                                        {"manifest", paths.manifest.string()}}
                             .dump()
                      << std::endl;
            return 0;
        }
        if (*serve) {
            Service service(data_dir);
            const int bound = service.bind(host, port);
            g_service = &service;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cerr << "listening on http://" << host << ":" << bound << "\n";
            service.listen();
            g_service = nullptr;
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
