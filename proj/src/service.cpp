#include "panoweave/service.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <map>
#include <mutex>
#include <shared_mutex>

#include "httplib.h"
#include "panoweave/error.hpp"
#include "panoweave/png_io.hpp"

namespace fs = std::filesystem;

namespace panoweave {
namespace {

constexpr const char* kIdPattern = "([0-9a-f]{16})";

int preview_factor(int width, int max_width) { return (width + max_width - 1) / max_width; }

struct Snapshot {
    std::string manifest_json;
    std::vector<std::uint8_t> preview_png;
    std::vector<std::uint8_t> mask_png;
};

struct Entry {
    std::atomic<bool> busy{false};
    std::atomic<bool> cancel{false};
    std::unique_ptr<Run> run;  // mutated only by the holder of `busy`
    std::unique_ptr<Generator> generator;

    std::mutex snap_mu;
    std::shared_ptr<const Snapshot> snap;

    std::shared_ptr<const Snapshot> snapshot()
    {
        std::lock_guard lock(snap_mu);
        return snap;
    }

    void publish()
    {
        auto s = std::make_shared<Snapshot>();
        s->manifest_json = to_json(run->manifest()).dump(2);
        s->preview_png = encode_png(render_preview(run->state()));
        s->mask_png = encode_mask_png(run->state().mask());
        std::lock_guard lock(snap_mu);
        snap = std::move(s);
    }

    void finish_if_cancelled()
    {
        if (cancel && run->manifest().status != "aborted") {
            run->abort();
            publish();
        }
    }
};

// Exclusive right to mutate one run; released on destruction.
class BusyGuard {
public:
    explicit BusyGuard(std::shared_ptr<Entry> e) : entry_(std::move(e))
    {
        bool expected = false;
        held_ = entry_->busy.compare_exchange_strong(expected, true);
    }
    ~BusyGuard() { release(); }
    BusyGuard(const BusyGuard&) = delete;
    BusyGuard& operator=(const BusyGuard&) = delete;

    [[nodiscard]] bool held() const { return held_; }
    void release()
    {
        if (held_) entry_->busy = false;
        held_ = false;
    }

private:
    std::shared_ptr<Entry> entry_;
    bool held_ = false;
};

void send_json(httplib::Response& res, int status, const nlohmann::json& body)
{
    res.status = status;
    res.set_content(body.dump(2), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& msg)
{
    send_json(res, status, {{"error", msg}});
}

// Maps engine errors onto HTTP status codes.
int status_for(const Error& e)
{
    if (dynamic_cast<const ConfigError*>(&e)) return 422;
    if (dynamic_cast<const GeneratorError*>(&e)) return 502;
    if (dynamic_cast<const ContractError*>(&e)) return 409;
    return 500;
}

StepOverrides parse_overrides(const std::string& body)
{
    StepOverrides ov;
    if (body.empty()) return ov;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("body is not JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("step body must be a JSON object");
    try {
        for (const auto& item : j.items()) {
            const std::string& key = item.key();
            if (key == "prompt") {
                if (!item.value().is_null()) ov.prompt = item.value().get<std::string>();
            } else if (key == "view") {
                if (item.value().is_null()) continue;
                const auto& v = item.value();
                const double lon = v.at("lon").get<double>();
                const double lat = v.at("lat").get<double>();
                if (!std::isfinite(lon) || !std::isfinite(lat) || std::abs(lat) > 90.0)
                    throw SteeringError("view centre out of range");
                ov.center = SphereCoord::normalized(lon, lat);
            } else if (key == "seed") {
                if (!item.value().is_null()) ov.seed = item.value().get<std::uint64_t>();
            } else {
                throw ConfigError("unknown step override '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad step override: ") + e.what());
    }
    return ov;
}

int parse_steps(const std::string& body)
{
    try {
        const auto j = body.empty() ? nlohmann::json::object() : nlohmann::json::parse(body);
        if (!j.is_object() || !j.contains("steps")) throw ConfigError("auto body needs {\"steps\": N | \"all\"}");
        const auto& s = j.at("steps");
        if (s.is_string() && s.get<std::string>() == "all") return -1;
        if (!s.is_number_integer() || s.get<long long>() < 0) throw ConfigError("steps must be a non-negative integer or \"all\"");
        return static_cast<int>(std::min<long long>(s.get<long long>(), 1 << 30));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad auto body: ") + e.what());
    }
}

}  // namespace

Image render_preview(const Panorama& state, int max_width)
{
    const int f = preview_factor(state.width(), max_width);
    const int w = state.width() / f;
    const int h = state.height() / f;
    const Mask known = preview_mask(state, max_width);
    Image out(w, h, 3);
    const double inv = 1.0 / (f * f);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!known.known(x, y)) {
                const float g = ((x / 8 + y / 8) % 2) ? 0.8f : 0.6f;
                for (int c = 0; c < 3; ++c) out.at(x, y, c) = g;
                continue;
            }
            for (int c = 0; c < 3; ++c) {
                double sum = 0.0;
                for (int dy = 0; dy < f; ++dy)
                    for (int dx = 0; dx < f; ++dx) sum += state.image().at(x * f + dx, y * f + dy, c);
                out.at(x, y, c) = static_cast<float>(sum * inv);
            }
        }
    return out;
}

Mask preview_mask(const Panorama& state, int max_width)
{
    const int f = preview_factor(state.width(), max_width);
    const int w = state.width() / f;
    const int h = state.height() / f;
    Mask out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            bool all = true;
            for (int dy = 0; dy < f && all; ++dy)
                for (int dx = 0; dx < f && all; ++dx) all = state.mask().known(x * f + dx, y * f + dy);
            out.set(x, y, all);
        }
    return out;
}

struct Service::Impl {
    fs::path data;
    GeneratorFactory factory;
    httplib::Server server;

    std::shared_mutex runs_mu;
    std::map<std::string, std::shared_ptr<Entry>> runs;
    std::atomic<int> staging_counter{0};

    Impl(fs::path d, GeneratorFactory f) : data(std::move(d)), factory(std::move(f))
    {
        fs::create_directories(data);
        std::vector<fs::path> dirs;
        for (const auto& dirent : fs::directory_iterator(data))
            if (dirent.is_directory()) dirs.push_back(dirent.path());
        for (const auto& dir : dirs) {
            if (dir.filename().string().rfind(".incoming-", 0) == 0) {
                fs::remove_all(dir);
                continue;
            }
            try {
                add(std::make_unique<Run>(Run::open(dir)));
            } catch (const std::exception& e) {
                std::cerr << "skipping run " << dir << ": " << e.what() << "\n";
            }
        }
        routes();
    }

    std::shared_ptr<Entry> add(std::unique_ptr<Run> run)
    {
        auto e = std::make_shared<Entry>();
        e->generator = factory(run->manifest().config);
        const std::string id = run->dir().filename().string();
        e->run = std::move(run);
        e->publish();
        std::unique_lock lock(runs_mu);
        runs[id] = e;
        return e;
    }

    std::shared_ptr<Entry> find(const std::string& id)
    {
        std::shared_lock lock(runs_mu);
        const auto it = runs.find(id);
        return it == runs.end() ? nullptr : it->second;
    }

    void routes()
    {
        server.set_payload_max_length(std::size_t{64} << 20);
        server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            try {
                std::rethrow_exception(ep);
            } catch (const Error& e) {
                send_error(res, status_for(e), e.what());
            } catch (const std::exception& e) {
                send_error(res, 500, e.what());
            }
        });

        server.Post("/runs", [this](const httplib::Request& req, httplib::Response& res) { create(req, res); });

        server.Get("/runs", [this](const httplib::Request&, httplib::Response& res) {
            nlohmann::json ids = nlohmann::json::array();
            std::shared_lock lock(runs_mu);
            for (const auto& [id, _] : runs) ids.push_back(id);
            send_json(res, 200, {{"runs", ids}});
        });

        const std::string run_path = std::string("/runs/") + kIdPattern;
        server.Get(run_path, [this](const httplib::Request& req, httplib::Response& res) {
            with_snapshot(req, res, [&](const Snapshot& s) { res.set_content(s.manifest_json, "application/json"); });
        });
        server.Get(run_path + R"(/preview\.png)", [this](const httplib::Request& req, httplib::Response& res) {
            with_snapshot(req, res, [&](const Snapshot& s) {
                res.set_content(reinterpret_cast<const char*>(s.preview_png.data()), s.preview_png.size(), "image/png");
            });
        });
        server.Get(run_path + R"(/mask\.png)", [this](const httplib::Request& req, httplib::Response& res) {
            with_snapshot(req, res, [&](const Snapshot& s) {
                res.set_content(reinterpret_cast<const char*>(s.mask_png.data()), s.mask_png.size(), "image/png");
            });
        });
        server.Post(run_path + "/step", [this](const httplib::Request& req, httplib::Response& res) { step(req, res); });
        server.Post(run_path + "/auto", [this](const httplib::Request& req, httplib::Response& res) { autorun(req, res); });
        server.Delete(run_path, [this](const httplib::Request& req, httplib::Response& res) { remove(req, res); });
    }

    template <class Fn>
    void with_snapshot(const httplib::Request& req, httplib::Response& res, Fn&& fn)
    {
        const auto e = find(req.matches[1]);
        if (!e) return send_error(res, 404, "unknown run");
        fn(*e->snapshot());
    }

    void create(const httplib::Request& req, httplib::Response& res)
    {
        if (!req.is_multipart_form_data()) return send_error(res, 422, "expected multipart/form-data");
        nlohmann::json cfg_json = nlohmann::json::object();
        if (req.has_file("config")) {
            try {
                cfg_json = nlohmann::json::parse(req.get_file_value("config").content);
            } catch (const nlohmann::json::exception& e) {
                return send_error(res, 422, std::string("config is not JSON: ") + e.what());
            }
        }
        if (!cfg_json.is_object()) return send_error(res, 422, "config must be a JSON object");

        std::string prompt;
        ViewSpec view;
        std::optional<Image> input;
        RunConfig cfg;
        try {
            if (cfg_json.contains("prompt")) prompt = cfg_json.at("prompt").get<std::string>();
            if (cfg_json.contains("view")) {
                const auto& v = cfg_json.at("view");
                view.center = SphereCoord::normalized(v.at("lon").get<double>(), v.at("lat").get<double>());
            }
        } catch (const nlohmann::json::exception& e) {
            return send_error(res, 422, std::string("bad prompt or view: ") + e.what());
        }
        cfg_json.erase("prompt");
        cfg_json.erase("view");
        cfg = run_config_from_json(cfg_json);
        if (req.has_file("image")) {
            const auto& content = req.get_file_value("image").content;
            try {
                input = decode_png(std::span(reinterpret_cast<const std::uint8_t*>(content.data()), content.size()));
            } catch (const IoError& e) {
                return send_error(res, 422, std::string("image: ") + e.what());
            }
        }

        // Build in a hidden directory, then publish under the run id.
        const fs::path staging = data / (".incoming-" + std::to_string(staging_counter++));
        auto gen = factory(cfg);
        std::unique_ptr<Run> run;
        try {
            run = std::make_unique<Run>(Run::create(staging, input, view, prompt, cfg, *gen));
        } catch (...) {
            fs::remove_all(staging);
            throw;
        }
        const std::string id = run->manifest().run_id;
        fs::rename(staging, data / id);
        run = std::make_unique<Run>(Run::open(data / id));
        const auto e = add(std::move(run));
        res.status = 201;
        res.set_content(e->snapshot()->manifest_json, "application/json");
    }

    void step(const httplib::Request& req, httplib::Response& res)
    {
        const auto e = find(req.matches[1]);
        if (!e) return send_error(res, 404, "unknown run");
        const StepOverrides ov = parse_overrides(req.body);
        BusyGuard guard(e);
        if (!guard.held()) return send_error(res, 409, "a step is already in flight for this run");
        const StepRecord rec = e->run->step(*e->generator, ov);
        e->publish();
        e->finish_if_cancelled();
        send_json(res, rec.ok() ? 200 : 502, to_json(rec));
    }

    void autorun(const httplib::Request& req, httplib::Response& res)
    {
        const auto e = find(req.matches[1]);
        if (!e) return send_error(res, 404, "unknown run");
        const int n = parse_steps(req.body);
        auto guard = std::make_shared<BusyGuard>(e);
        if (!guard->held()) return send_error(res, 409, "a step is already in flight for this run");
        if (e->run->complete()) return send_error(res, 409, "run is already complete");
        if (e->run->manifest().status == "aborted") return send_error(res, 409, "run was aborted");

        res.status = 200;
        res.set_chunked_content_provider("application/x-ndjson", [e, guard, n](std::size_t, httplib::DataSink& sink) {
            for (int i = 0; n < 0 || i < n; ++i) {
                if (e->run->complete() || e->cancel) break;
                std::string line;
                bool stop = false;
                try {
                    const StepRecord rec = e->run->step(*e->generator);
                    e->publish();
                    line = to_json(rec).dump() + "\n";
                    stop = !rec.ok();
                } catch (const std::exception& ex) {
                    line = nlohmann::json{{"error", ex.what()}}.dump() + "\n";
                    stop = true;
                }
                if (!sink.write(line.data(), line.size()) || stop) break;
            }
            e->finish_if_cancelled();
            guard->release();
            sink.done();
            return true;
        });
    }

    void remove(const httplib::Request& req, httplib::Response& res)
    {
        const auto e = find(req.matches[1]);
        if (!e) return send_error(res, 404, "unknown run");
        e->cancel = true;
        e->generator->cancel();
        BusyGuard guard(e);
        // Otherwise the step in flight aborts the run when it returns.
        if (guard.held()) e->finish_if_cancelled();
        send_json(res, 202, {{"run_id", std::string(req.matches[1])}, {"status", "aborted"}});
    }
};

Service::Service(fs::path data_dir, GeneratorFactory factory)
    : impl_(std::make_unique<Impl>(std::move(data_dir), std::move(factory)))
{
}

Service::~Service() { stop(); }

int Service::bind(const std::string& host, int port)
{
    if (port == 0) return impl_->server.bind_to_any_port(host);
    if (!impl_->server.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void Service::listen() { impl_->server.listen_after_bind(); }

void Service::stop() { impl_->server.stop(); }

void Service::wait_until_ready() { impl_->server.wait_until_ready(); }

}  // namespace panoweave
