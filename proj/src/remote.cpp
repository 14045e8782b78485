#include <chrono>
#include <regex>
#include <thread>

#include "httplib.h"
#include "panoweave/codec.hpp"
#include "panoweave/error.hpp"
#include "panoweave/generator.hpp"
#include "panoweave/png_io.hpp"

namespace panoweave {
namespace {

bool retryable(httplib::Error e)
{
    switch (e) {
    case httplib::Error::Connection:
    case httplib::Error::ConnectionTimeout:
    case httplib::Error::Read:
    case httplib::Error::Write:
        return true;
    default:
        return false;
    }
}

}  // namespace

nlohmann::json encode_matrix(const Matrix& m)
{
    const auto bytes = pack_f32le(m.data);
    return {{"data", base64_encode(bytes)}, {"shape", {m.rows, m.cols}}, {"dtype", "float32"}};
}

Matrix decode_matrix(const nlohmann::json& j)
{
    const auto shape = j.at("shape").get<std::vector<int>>();
    if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0) throw ProtocolError("matrix shape must be [rows, cols]");
    const auto bytes = base64_decode(j.at("data").get<std::string>());
    Matrix m(shape[0], shape[1]);
    auto values = unpack_f32le(bytes);
    if (values.size() != m.data.size()) throw ProtocolError("matrix payload does not match its shape");
    m.data = std::move(values);
    return m;
}

nlohmann::json encode_wire_request(const OutpaintRequest& req)
{
    nlohmann::json guidance{{"global", encode_matrix(req.bundle.global_stream)},
                            {"local", req.bundle.local_stream ? encode_matrix(*req.bundle.local_stream) : nlohmann::json()},
                            {"flags",
                             {{"global", req.bundle.global_on},
                              {"local", req.bundle.local_on},
                              {"geometry", req.bundle.geometry_on}}}};
    return {{"image", base64_encode(encode_png(req.nfov.image))},
            {"mask", base64_encode(encode_mask_png(req.nfov.mask))},
            {"prompt", req.prompt},
            {"seed", req.seed},
            {"width", req.nfov.image.width},
            {"height", req.nfov.image.height},
            {"view", {{"lon", req.view.center.lon}, {"lat", req.view.center.lat}, {"fov", req.view.fov_deg}}},
            {"guidance", std::move(guidance)}};
}

Image decode_wire_response(const std::string& body, int width, int height)
{
    Image img;
    try {
        const auto j = nlohmann::json::parse(body);
        img = decode_png(base64_decode(j.at("image").get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("malformed generator response: ") + e.what());
    } catch (const IoError& e) {
        throw ProtocolError(std::string("generator response image: ") + e.what());
    }
    if (img.width != width || img.height != height)
        throw ProtocolError("generator returned " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                            ", expected " + std::to_string(width) + "x" + std::to_string(height));
    return img;
}

RemoteGenerator::RemoteGenerator(RemoteOptions opts) : opts_(std::move(opts))
{
    static const std::regex re(R"(^(http://[^/\s]+)(/[^\s]*)?$)");
    std::smatch m;
    if (!std::regex_match(opts_.url, m, re))
        throw ConfigError("generator endpoint must look like http://host[:port][/path], got '" + opts_.url + "'");
    scheme_host_port_ = m[1].str();
    path_ = m[2].matched ? m[2].str() : "/";
    if (opts_.max_retries < 0) throw ConfigError("max_retries must be >= 0");
}

std::string RemoteGenerator::id() const { return "remote:" + opts_.url; }

OutpaintResult RemoteGenerator::outpaint(const OutpaintRequest& req)
{
    if (req.nfov.mask.none_known() || req.nfov.mask.all_known())
        throw ContractError("outpaint needs both known and unknown pixels in the view");
    return call(req);
}

OutpaintResult RemoteGenerator::synthesize_seed(const OutpaintRequest& req)
{
    if (!req.nfov.mask.none_known()) throw ContractError("seed synthesis expects an all-unknown view");
    return call(req);
}

OutpaintResult RemoteGenerator::call(const OutpaintRequest& req)
{
    const auto t0 = std::chrono::steady_clock::now();
    const std::string payload = encode_wire_request(req).dump();
    if (payload.size() > opts_.max_bytes) throw ProtocolError("request exceeds the size limit");

    auto backoff = opts_.backoff;
    last_attempts_ = 0;
    std::string last_error;
    for (int attempt = 0; attempt <= opts_.max_retries; ++attempt) {
        if (cancelled_) throw CancelledError("generator call cancelled");
        ++last_attempts_;

        httplib::Client cli(scheme_host_port_);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(opts_.timeout);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(opts_.timeout - secs);
        cli.set_connection_timeout(secs.count(), usecs.count());
        cli.set_read_timeout(secs.count(), usecs.count());
        cli.set_write_timeout(secs.count(), usecs.count());

        std::string body;
        bool too_big = false;
        httplib::Request hreq;
        hreq.method = "POST";
        hreq.path = path_;
        hreq.headers.emplace("Content-Type", "application/json");
        hreq.body = payload;
        hreq.content_receiver = [&](const char* data, std::size_t n, std::uint64_t, std::uint64_t) {
            if (body.size() + n > opts_.max_bytes) {
                too_big = true;
                return false;
            }
            body.append(data, n);
            return !cancelled_.load();
        };
        hreq.progress = [&](std::uint64_t, std::uint64_t) { return !cancelled_.load(); };

        const httplib::Result res = cli.send(hreq);
        if (!res) {
            if (too_big) throw ProtocolError("generator response exceeds the size limit");
            if (cancelled_) throw CancelledError("generator call cancelled");
            last_error = httplib::to_string(res.error());
            if (!retryable(res.error())) throw TransportError("generator request failed: " + last_error);
            if (attempt == opts_.max_retries) break;
            // Interruptible sleep so cancel() takes effect during backoff.
            const auto until = std::chrono::steady_clock::now() + backoff;
            while (std::chrono::steady_clock::now() < until) {
                if (cancelled_) throw CancelledError("generator call cancelled");
                std::this_thread::sleep_for(std::chrono::milliseconds(10));
            }
            backoff *= 2;
            continue;
        }
        if (res->status < 200 || res->status >= 300)
            throw GeneratorError("generator returned HTTP " + std::to_string(res->status) + ": " + body);
        Image img = decode_wire_response(body, req.view.width, req.view.height);
        const auto t1 = std::chrono::steady_clock::now();
        return {std::move(img), id(), std::chrono::duration<double, std::milli>(t1 - t0).count()};
    }
    throw TransportError("generator unreachable after " + std::to_string(last_attempts_.load()) +
                         " attempts: " + last_error);
}

}  // namespace panoweave
