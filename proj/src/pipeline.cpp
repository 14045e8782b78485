#include "panoweave/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <random>
#include <set>

#include "panoweave/codec.hpp"
#include "panoweave/error.hpp"
#include "panoweave/png_io.hpp"
#include "panoweave/rng.hpp"

namespace fs = std::filesystem;

namespace panoweave {
namespace {

constexpr const char* kMarker = "COMMIT";
constexpr std::size_t kMaxReasonChars = 500;

void fault_point(std::string_view phase)
{
    const char* want = std::getenv(kFaultPointEnv);
    if (want && phase == want) std::raise(SIGKILL);
}

[[noreturn]] void throw_errno(const std::string& what, const fs::path& p)
{
    throw IoError(what + " " + p.string() + ": " + std::strerror(errno));
}

void write_durable(const fs::path& p, const std::vector<std::uint8_t>& bytes)
{
    const int fd = ::open(p.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw_errno("cannot create", p);
    std::size_t off = 0;
    while (off < bytes.size()) {
        const ssize_t n = ::write(fd, bytes.data() + off, bytes.size() - off);
        if (n < 0) {
            if (errno == EINTR) continue;
            ::close(fd);
            throw_errno("cannot write", p);
        }
        off += static_cast<std::size_t>(n);
    }
    if (::fsync(fd) != 0) {
        ::close(fd);
        throw_errno("cannot fsync", p);
    }
    if (::close(fd) != 0) throw_errno("cannot close", p);
}

void fsync_dir(const fs::path& dir)
{
    const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
    if (fd < 0) throw_errno("cannot open directory", dir);
    ::fsync(fd);
    ::close(fd);
}

void rename_or_throw(const fs::path& from, const fs::path& to)
{
    if (::rename(from.c_str(), to.c_str()) != 0) throw_errno("cannot rename", from);
}

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

fs::path tmp_of(const fs::path& p) { return p.string() + ".tmp"; }

void roll_forward(const fs::path& dir, const std::vector<std::string>& names)
{
    std::set<fs::path> parents;
    bool first = true;
    for (const auto& name : names) {
        const fs::path target = dir / name;
        if (fs::exists(tmp_of(target))) {
            rename_or_throw(tmp_of(target), target);
            if (first) fault_point("renamed-one");
            first = false;
        }
        parents.insert(target.parent_path());
    }
    for (const auto& p : parents) fsync_dir(p);
    fs::remove(dir / kMarker);
    fsync_dir(dir);
}

void write_atomic(const fs::path& p, const std::vector<std::uint8_t>& bytes)
{
    write_durable(tmp_of(p), bytes);
    rename_or_throw(tmp_of(p), p);
}

std::string utc_now()
{
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string random_id()
{
    std::random_device rd;
    const std::uint64_t v = (std::uint64_t{rd()} << 32) ^ rd();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void check_prompt(const std::string& prompt)
{
    if (prompt.size() > kMaxPromptChars)
        throw ConfigError("prompt longer than " + std::to_string(kMaxPromptChars) + " characters");
}

std::string step_file(int k) { return "steps/" + std::to_string(k) + ".png"; }

std::string manifest_text(const RunManifest& m) { return to_json(m).dump(2) + "\n"; }

}  // namespace

// ---------------------------------------------------------------------------
// Config and manifest

void RunConfig::validate() const
{
    if (pano_width < 8 || pano_width % 2 != 0)
        throw ConfigError("pano width must be even and >= 8, got " + std::to_string(pano_width));
    if (!(fov_deg > 0.0 && fov_deg < 180.0)) throw ConfigError("fov must be in (0, 180) degrees");
    if (!(stride_lon > 0.0 && stride_lon <= 180.0) || !(stride_lat > 0.0 && stride_lat <= 90.0))
        throw ConfigError("strides must be in (0, 180] (lon) and (0, 90] (lat)");
    if (!(min_overlap >= 0.0 && min_overlap < 1.0)) throw ConfigError("min_overlap must be in [0, 1)");
    if (seed_view_size < 8) throw ConfigError("seed view size must be >= 8");
    conditioning.validate();
}

nlohmann::json to_json(const RunConfig& c)
{
    const auto& k = c.conditioning;
    return {{"pano_width", c.pano_width},
            {"fov", c.fov_deg},
            {"stride_lon", c.stride_lon},
            {"stride_lat", c.stride_lat},
            {"min_overlap", c.min_overlap},
            {"base_seed", c.base_seed},
            {"seed_view_size", c.seed_view_size},
            {"generator_endpoint", c.generator_endpoint},
            {"conditioning",
             {{"dim", k.dim},
              {"grid", k.grid},
              {"layers", k.layers},
              {"seed", k.seed},
              {"global", k.global_on},
              {"local", k.local_on},
              {"geometry", k.geometry_on},
              {"geometry_channels", geometry_channels(k.geometry)}}}};
}

RunConfig run_config_from_json(const nlohmann::json& j)
{
    static const std::set<std::string> top{"pano_width", "fov", "stride_lon", "stride_lat", "min_overlap",
                                           "base_seed", "seed_view_size", "generator_endpoint", "conditioning"};
    static const std::set<std::string> cond{"dim", "grid", "layers", "seed", "global", "local", "geometry",
                                            "geometry_channels"};
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (!top.count(key)) throw ConfigError("unknown config key '" + key + "'");

    RunConfig c;
    try {
        c.pano_width = j.value("pano_width", c.pano_width);
        c.fov_deg = j.value("fov", c.fov_deg);
        c.stride_lon = j.value("stride_lon", c.stride_lon);
        c.stride_lat = j.value("stride_lat", c.stride_lat);
        c.min_overlap = j.value("min_overlap", c.min_overlap);
        c.base_seed = j.value("base_seed", c.base_seed);
        c.seed_view_size = j.value("seed_view_size", c.seed_view_size);
        c.generator_endpoint = j.value("generator_endpoint", c.generator_endpoint);
        if (j.contains("conditioning")) {
            const auto& k = j.at("conditioning");
            if (!k.is_object()) throw ConfigError("conditioning must be a JSON object");
            for (const auto& [key, _] : k.items())
                if (!cond.count(key)) throw ConfigError("unknown conditioning key '" + key + "'");
            auto& cc = c.conditioning;
            cc.dim = k.value("dim", cc.dim);
            cc.grid = k.value("grid", cc.grid);
            cc.layers = k.value("layers", cc.layers);
            cc.seed = k.value("seed", cc.seed);
            cc.global_on = k.value("global", cc.global_on);
            cc.local_on = k.value("local", cc.local_on);
            cc.geometry_on = k.value("geometry", cc.geometry_on);
            const int ch = k.value("geometry_channels", 4);
            if (ch != 2 && ch != 4) throw ConfigError("geometry_channels must be 2 or 4");
            cc.geometry = ch == 2 ? GeometryEncoding::TwoChannel : GeometryEncoding::FourChannel;
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    c.validate();
    return c;
}

int RunManifest::ok_steps() const
{
    int n = 0;
    for (const auto& s : steps) n += s.ok();
    return n;
}

void RunManifest::check() const
{
    double kf = 0.0;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (steps[i].index != static_cast<int>(i) + 1) throw StateError("step indices are not contiguous from 1");
        if (steps[i].known_fraction_after < kf) throw StateError("known fraction decreases at step " + std::to_string(i + 1));
        kf = steps[i].known_fraction_after;
    }
    if (prompt_history.empty() || prompt_history.front().step != 0)
        throw StateError("prompt history must start at step 0");
    if (plan.views.empty() || plan_cursor > plan.views.size()) throw StateError("plan cursor out of range");
}

nlohmann::json to_json(const RunManifest& m)
{
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : m.steps) steps.push_back(to_json(s));
    nlohmann::json history = nlohmann::json::array();
    for (const auto& p : m.prompt_history) history.push_back({{"step", p.step}, {"prompt", p.prompt}});
    return {{"run_id", m.run_id},
            {"created_at", m.created_at},
            {"status", m.status},
            {"config", to_json(m.config)},
            {"initial", {{"view", to_json(m.initial_view)}, {"input_sha256", m.input_sha256}, {"text_only", m.text_only}}},
            {"plan", to_json(m.plan)},
            {"plan_cursor", m.plan_cursor},
            {"steps", std::move(steps)},
            {"prompt_history", std::move(history)}};
}

RunManifest manifest_from_json(const nlohmann::json& j)
{
    RunManifest m;
    try {
        m.run_id = j.at("run_id").get<std::string>();
        m.created_at = j.at("created_at").get<std::string>();
        m.status = j.at("status").get<std::string>();
        m.config = run_config_from_json(j.at("config"));
        const auto& init = j.at("initial");
        m.initial_view = view_from_json(init.at("view"));
        m.input_sha256 = init.at("input_sha256").get<std::string>();
        m.text_only = init.at("text_only").get<bool>();
        m.plan = plan_from_json(j.at("plan"));
        m.plan_cursor = j.at("plan_cursor").get<std::size_t>();
        for (const auto& s : j.at("steps")) m.steps.push_back(step_record_from_json(s));
        for (const auto& p : j.at("prompt_history"))
            m.prompt_history.push_back({p.at("step").get<int>(), p.at("prompt").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
        throw StateError(std::string("malformed manifest: ") + e.what());
    } catch (const ConfigError& e) {
        throw StateError(std::string("manifest config: ") + e.what());
    }
    m.check();
    return m;
}

std::unique_ptr<Generator> make_generator(const RunConfig& cfg)
{
    std::string url = cfg.generator_endpoint;
    if (const char* env = std::getenv(kGeneratorUrlEnv); env && *env) url = env;
    if (url.empty()) return std::make_unique<ReferenceGenerator>();
    return std::make_unique<RemoteGenerator>(RemoteOptions{url});
}

std::uint64_t step_seed(std::uint64_t base_seed, int k) { return mix_seed(base_seed, static_cast<std::uint64_t>(k)); }

// ---------------------------------------------------------------------------
// Journal

void journal_commit(const fs::path& dir, const std::vector<std::pair<std::string, std::vector<std::uint8_t>>>& files)
{
    std::set<fs::path> parents;
    nlohmann::json names = nlohmann::json::array();
    for (const auto& [name, bytes] : files) {
        write_durable(tmp_of(dir / name), bytes);
        parents.insert((dir / name).parent_path());
        names.push_back(name);
    }
    for (const auto& p : parents) fsync_dir(p);
    fault_point("files-written");

    write_durable(tmp_of(dir / kMarker), bytes_of(names.dump()));
    rename_or_throw(tmp_of(dir / kMarker), dir / kMarker);
    fsync_dir(dir);
    fault_point("marker-written");

    roll_forward(dir, names.get<std::vector<std::string>>());
}

bool journal_recover(const fs::path& dir)
{
    bool rolled = false;
    if (fs::exists(dir / kMarker)) {
        std::vector<std::string> names;
        try {
            const auto bytes = read_file(dir / kMarker);
            names = nlohmann::json::parse(bytes.begin(), bytes.end()).get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& e) {
            throw StateError("corrupt commit marker in " + dir.string() + ": " + e.what());
        }
        roll_forward(dir, names);
        rolled = true;
    }
    for (const fs::path& sub : {dir, dir / "steps"}) {
        if (!fs::is_directory(sub)) continue;
        for (const auto& entry : fs::directory_iterator(sub))
            if (entry.is_regular_file() && entry.path().extension() == ".tmp") fs::remove(entry.path());
    }
    return rolled;
}

// ---------------------------------------------------------------------------
// Run

Run::Run(fs::path dir, RunManifest m, Panorama state)
    : dir_(std::move(dir)), manifest_(std::move(m)), state_(std::move(state))
{
}

void Run::commit(const std::vector<std::pair<std::string, std::vector<std::uint8_t>>>& files)
{
    journal_commit(dir_, files);
}

Run Run::create(const fs::path& dir, const std::optional<Image>& input, const ViewSpec& view_in,
                const std::string& prompt, const RunConfig& cfg, Generator& generator)
{
    cfg.validate();
    check_prompt(prompt);
    ViewSpec view = view_in;
    view.fov_deg = cfg.fov_deg;
    if (input) {
        view.width = input->width;
        view.height = input->height;
    } else {
        view.width = view.height = cfg.seed_view_size;
    }
    view.validate();

    if (fs::exists(dir) && !(fs::is_directory(dir) && fs::is_empty(dir)))
        throw IoError("run directory " + dir.string() + " already exists and is not empty");
    std::error_code ec;
    fs::create_directories(dir / "steps", ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    Image nfov;
    if (input) {
        if (input->channels != 3) throw DimensionError("input image must be RGB");
        nfov = *input;
        quantize_8bit(nfov);
    } else {
        OutpaintRequest req;
        req.view = view;
        req.nfov = {Image(view.width, view.height, 3), Mask(view.width, view.height)};
        req.bundle = build_bundle(prompt, Panorama::empty(cfg.pano_width), req.nfov, view, cfg.conditioning);
        req.prompt = prompt;
        req.seed = step_seed(cfg.base_seed, 0);
        OutpaintResult res = generator.synthesize_seed(req);
        if (res.nfov.width != view.width || res.nfov.height != view.height || res.nfov.channels != 3)
            throw ProtocolError("seed image has the wrong shape");
        for (float& v : res.nfov.data) v = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
        nfov = std::move(res.nfov);
        quantize_8bit(nfov);
    }

    const auto input_png = encode_png(nfov);
    Panorama state = init_from_nfov(nfov, view, cfg.pano_width).quantized();

    RunManifest m;
    m.run_id = random_id();
    m.created_at = utc_now();
    m.config = cfg;
    m.initial_view = view;
    m.input_sha256 = sha256_hex(input_png);
    m.text_only = !input.has_value();
    m.plan = plan_traversal(view, cfg.pano_width, cfg.stride_lon, cfg.stride_lat, cfg.min_overlap);
    m.prompt_history.push_back({0, prompt});
    m.status = state.complete() ? "complete" : "active";

    Run run(dir, std::move(m), std::move(state));
    const PanoramaFiles files = encode_panorama(run.state_);
    run.commit({{"input.png", input_png},
                {"state.png", files.state_png},
                {"mask.png", files.mask_png},
                {"manifest.json", bytes_of(manifest_text(run.manifest_))}});
    return run;
}

Run Run::open(const fs::path& dir)
{
    if (!fs::is_directory(dir)) throw IoError("no run directory at " + dir.string());
    journal_recover(dir);
    if (!fs::exists(dir / "manifest.json")) throw IoError("no manifest.json in " + dir.string());
    const auto text = read_file(dir / "manifest.json");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::exception& e) {
        throw StateError("manifest.json is not valid JSON: " + std::string(e.what()));
    }
    RunManifest m = manifest_from_json(j);
    Panorama state = decode_panorama(read_file(dir / "state.png"), read_file(dir / "mask.png"));
    if (state.width() != m.config.pano_width) throw StateError("state.png width does not match the manifest");

    double expected = -1.0;
    for (const auto& s : m.steps)
        if (s.ok()) expected = s.known_fraction_after;
    if (expected >= 0.0 && std::abs(state.known_fraction() - expected) > 1e-12)
        throw StateError("mask.png disagrees with the last committed step");
    return {dir, std::move(m), std::move(state)};
}

StepRecord Run::step(Generator& generator, const StepOverrides& ov)
{
    if (manifest_.status == "aborted") throw ContractError("run was aborted");
    if (complete()) throw ContractError("run is already complete");
    if (ov.prompt) check_prompt(*ov.prompt);

    RunManifest next = manifest_;
    const int k = static_cast<int>(next.steps.size()) + 1;

    NextView chosen;
    if (ov.center) {
        const ViewSpec uv{SphereCoord::normalized(ov.center->lon, ov.center->lat), next.config.fov_deg,
                          next.initial_view.width, next.initial_view.height};
        uv.validate();
        next.plan = replan_from(state_, uv, next.plan);
        next.plan_cursor = 0;
        chosen = {0, next.plan.views.front()};
    } else {
        auto nv = next_view(next.plan, state_, next.plan_cursor);
        if (!nv) throw SchedulingError("plan exhausted before the panorama is complete");
        chosen = *nv;
    }
    const std::uint64_t seed = ov.seed ? *ov.seed : step_seed(next.config.base_seed, k);
    if (ov.prompt && *ov.prompt != next.prompt()) next.prompt_history.push_back({k, *ov.prompt});
    const std::string prompt = next.prompt();

    const auto t0 = std::chrono::steady_clock::now();
    try {
        StepOutcome out = panoweave::step(state_, chosen.view, prompt, seed, generator, next.config.conditioning, k);
        next.plan_cursor = chosen.index + 1;
        next.steps.push_back(out.record);
        if (out.state.complete()) next.status = "complete";

        const PanoramaFiles files = encode_panorama(out.state);
        commit({{step_file(k), encode_png(out.nfov)},
                {"state.png", files.state_png},
                {"mask.png", files.mask_png},
                {"manifest.json", bytes_of(manifest_text(next))}});
        manifest_ = std::move(next);
        state_ = std::move(out.state);
        return manifest_.steps.back();
    } catch (const GeneratorError& e) {
        StepRecord rec;
        rec.index = k;
        rec.view = chosen.view;
        rec.prompt = prompt;
        rec.seed = seed;
        rec.generator_id = generator.id();
        rec.known_fraction_after = state_.known_fraction();
        rec.duration_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        std::string reason = e.what();
        if (reason.size() > kMaxReasonChars) reason.resize(kMaxReasonChars);
        rec.status = "failed:" + reason;

        // The plan change from a view override is kept only when the step succeeds.
        next.plan = manifest_.plan;
        next.plan_cursor = manifest_.plan_cursor;
        next.steps.push_back(rec);
        commit({{"manifest.json", bytes_of(manifest_text(next))}});
        manifest_ = std::move(next);
        return rec;
    }
}

std::vector<StepRecord> Run::run_auto(Generator& generator, int max_steps,
                                      const std::function<void(const StepRecord&)>& on_step,
                                      const std::atomic<bool>* cancel)
{
    std::vector<StepRecord> out;
    for (int i = 0; max_steps < 0 || i < max_steps; ++i) {
        if (complete() || manifest_.status == "aborted") break;
        if (cancel && cancel->load()) break;
        out.push_back(step(generator));
        if (on_step) on_step(out.back());
        if (!out.back().ok()) break;
    }
    return out;
}

void Run::abort()
{
    if (manifest_.status == "aborted") return;
    RunManifest next = manifest_;
    next.status = "aborted";
    commit({{"manifest.json", bytes_of(manifest_text(next))}});
    manifest_ = std::move(next);
}

Panorama replay(const fs::path& dir, Generator& generator)
{
    const Run run = Run::open(dir);
    const RunManifest& m = run.manifest();
    const Image input = load_png(dir / "input.png");
    if (sha256_hex(read_file(dir / "input.png")) != m.input_sha256) throw StateError("input.png hash mismatch");
    Panorama state = init_from_nfov(input, m.initial_view, m.config.pano_width).quantized();
    for (const auto& rec : m.steps) {
        if (!rec.ok()) continue;
        state = step(state, rec.view, rec.prompt, rec.seed, generator, m.config.conditioning, rec.index).state;
    }
    return state;
}

ExportPaths export_run(const Run& run, const fs::path& out)
{
    if (!run.complete()) throw ContractError("run is not complete; export needs a fully known panorama");
    const fs::path parent = out.has_parent_path() ? out.parent_path() : fs::path(".");
    std::error_code ec;
    fs::create_directories(parent, ec);
    if (ec) throw IoError("cannot create " + parent.string() + ": " + ec.message());

    const std::string stem = out.stem().string();
    ExportPaths paths;
    paths.equirect = out;
    write_atomic(out, encode_png(run.state().image()));

    const CubemapImage cube = equirect_to_cubemap(run.state().image(), run.state().width() / 2);
    for (Face f : kFaces) {
        const auto i = static_cast<std::size_t>(f);
        paths.faces[i] = parent / (stem + "_" + std::string(face_name(f)) + ".png");
        write_atomic(paths.faces[i], encode_png(cube.face(f)));
    }
    paths.manifest = parent / (stem + "_manifest.json");
    write_atomic(paths.manifest, bytes_of(manifest_text(run.manifest())));
    return paths;
}

}  // namespace panoweave
