#pragma once

// HTTP client for an external diffusion service speaking the JSON guidance
// protocol. Images travel as base64 PNG, float arrays as base64 little-endian
// float32 with an explicit shape.

#include "gaussedit/encoding.hpp"
#include "gaussedit/error.hpp"
#include "gaussedit/guidance.hpp"
#include "gaussedit/image.hpp"

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <string>
#include <thread>
#include <vector>

namespace gaussedit {

struct RemoteOptions {
    int max_attempts = 3;
    std::chrono::milliseconds retry_backoff{200};
    std::chrono::seconds connect_timeout{5};
    std::chrono::seconds read_timeout{300};
};

struct HealthStatus {
    std::string status;
    std::vector<std::string> backends;
};

namespace wire {

using nlohmann::json;

inline std::string image_to_b64(const Image& img) { return base64_encode(encode_png(img)); }

inline Image image_from_b64(const std::string& b64) {
    try {
        return decode_png(base64_decode(b64));
    } catch (const Error& e) {
        fail(ErrorKind::Protocol, std::string("malformed image payload: ") + e.what());
    }
}

inline json residual_request(const GuidanceRequest& req) {
    json body = {{"backend", to_string(req.backend)},
                 {"prompt", req.prompt_text},
                 {"negative_prompt", req.negative_prompt},
                 {"timestep", req.timestep},
                 {"cfg_scale", req.cfg_scale},
                 {"seed", req.seed}};
    json images = json::array();
    for (const Image& img : req.images) images.push_back(image_to_b64(img));
    body["images"] = std::move(images);
    if (!req.view_poses.empty()) {
        json views = json::array();
        for (const auto& p : req.view_poses)
            views.push_back({{"azimuth", p.azimuth_deg}, {"elevation", p.elevation_deg}, {"radius", p.radius}});
        body["views"] = std::move(views);
    }
    return body;
}

/// Decodes {data_b64, shape:[H,W,3]} into an image.
inline Image float_image(const json& item) {
    const auto& shape = item.at("shape");
    if (!shape.is_array() || shape.size() != 3 || shape[2].get<int>() != 3)
        fail(ErrorKind::Protocol, "residual shape must be [H, W, 3]");
    const int h = shape[0].get<int>(), w = shape[1].get<int>();
    if (h <= 0 || w <= 0) fail(ErrorKind::Protocol, "residual shape has a non-positive extent");
    auto values = decode_float32_b64(item.at("data_b64").get<std::string>());
    if (values.size() != static_cast<std::size_t>(h) * w * 3)
        fail(ErrorKind::Protocol, "residual payload holds " + std::to_string(values.size()) +
                                      " floats, shape says " + std::to_string(static_cast<std::size_t>(h) * w * 3));
    Image out(w, h);
    out.data() = std::move(values);
    return out;
}

inline json float_image_json(const Image& img) {
    return {{"data_b64", encode_float32_b64(img.data())}, {"shape", {img.height(), img.width(), 3}}};
}

} // namespace wire

class RemoteGuidance : public GuidanceProvider {
public:
    explicit RemoteGuidance(std::string endpoint, RemoteOptions options = {})
        : endpoint_(std::move(endpoint)), options_(options) {
        require(endpoint_.rfind("http://", 0) == 0, ErrorKind::Validation,
                "remote guidance: endpoint must start with http:// (got \"" + endpoint_ + "\")");
        require(options_.max_attempts >= 1, ErrorKind::Validation, "remote guidance: max_attempts must be >= 1");
    }

    const std::string& endpoint() const { return endpoint_; }

    GuidanceResponse residual(const GuidanceRequest& req) override {
        req.validate();
        const auto body = call("/v1/residual", wire::residual_request(req));
        GuidanceResponse out;
        try {
            for (const auto& item : body.at("residuals")) out.residuals.push_back(wire::float_image(item));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::Protocol, std::string("/v1/residual: ") + e.what());
        }
        out.check_against(req);
        return out;
    }

    Image img2img(const Image& image, const std::string& prompt, double strength, std::uint64_t seed) override {
        const auto body = call("/v1/img2img", {{"prompt", prompt},
                                               {"image", wire::image_to_b64(image)},
                                               {"strength", strength},
                                               {"seed", seed}});
        Image out;
        try {
            out = wire::image_from_b64(body.at("image").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::Protocol, std::string("/v1/img2img: ") + e.what());
        }
        require(out.same_shape(image), ErrorKind::Protocol, "/v1/img2img: returned image has a different shape");
        return out;
    }

    Embedding embed_text(const std::string& text) override {
        return parse_embedding(EmbedKind::ClipText, call("/v1/embed", {{"kind", "clip_text"}, {"text", text}}));
    }

    Embedding embed_image(EmbedKind kind, const Image& image) override {
        require(kind != EmbedKind::ClipText, ErrorKind::Argument, "embed_image: text kind requested for an image");
        return parse_embedding(kind,
                               call("/v1/embed", {{"kind", to_string(kind)}, {"image", wire::image_to_b64(image)}}));
    }

    Personalization personalize(std::span<const Image> references, const std::string& category) override {
        require(!references.empty(), ErrorKind::Validation, "personalize: at least one reference image required");
        nlohmann::json images = nlohmann::json::array();
        for (const Image& img : references) images.push_back(wire::image_to_b64(img));
        const auto body = call("/v1/personalize", {{"images", images}, {"category", category}, {"steps", 250}});
        try {
            return {body.at("token").get<std::string>(), body.at("adapter_id").get<std::string>()};
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::Protocol, std::string("/v1/personalize: ") + e.what());
        }
    }

    HealthStatus health() {
        const auto body = send("/healthz", nullptr);
        try {
            return {body.at("status").get<std::string>(), body.value("backends", std::vector<std::string>{})};
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::Protocol, std::string("/healthz: ") + e.what());
        }
    }

private:
    nlohmann::json call(const std::string& path, const nlohmann::json& body) { return send(path, &body); }

    // GET when body is null, POST otherwise. Only transport failures are retried.
    nlohmann::json send(const std::string& path, const nlohmann::json* body) {
        const std::string payload = body ? body->dump() : std::string();
        std::string last;
        for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
            httplib::Client client(endpoint_);
            client.set_connection_timeout(options_.connect_timeout);
            client.set_read_timeout(options_.read_timeout);
            auto res = body ? client.Post(path, payload, "application/json") : client.Get(path);
            if (!res) {
                last = httplib::to_string(res.error());
                if (attempt < options_.max_attempts) std::this_thread::sleep_for(options_.retry_backoff * attempt);
                continue;
            }
            return decode_reply(path, res->status, res->body);
        }
        fail(ErrorKind::Transport, path + ": " + last + " after " + std::to_string(options_.max_attempts) + " attempts");
    }

    static nlohmann::json decode_reply(const std::string& path, int status, const std::string& text) {
        nlohmann::json parsed = nlohmann::json::parse(text, nullptr, false);
        if (status >= 500) {
            // Model errors are passed through as the service reported them.
            if (!parsed.is_discarded() && parsed.is_object() && parsed.contains("error"))
                fail(ErrorKind::Model, parsed["error"].is_string() ? parsed["error"].get<std::string>()
                                                                   : parsed["error"].dump());
            fail(ErrorKind::Model, text);
        }
        if (status != 200) fail(ErrorKind::Protocol, path + ": HTTP " + std::to_string(status) + ": " + text);
        if (parsed.is_discarded() || !parsed.is_object()) fail(ErrorKind::Protocol, path + ": reply is not a JSON object");
        return parsed;
    }

    static Embedding parse_embedding(EmbedKind kind, const nlohmann::json& body) {
        Embedding e{kind, {}};
        try {
            e.values = body.at("embedding").get<std::vector<double>>();
            if (body.contains("dim") && body["dim"].get<std::size_t>() != e.values.size())
                fail(ErrorKind::Protocol, "/v1/embed: dim does not match the embedding length");
        } catch (const nlohmann::json::exception& ex) {
            fail(ErrorKind::Protocol, std::string("/v1/embed: ") + ex.what());
        }
        require(!e.values.empty(), ErrorKind::Protocol, "/v1/embed: empty embedding");
        for (double v : e.values) require(std::isfinite(v), ErrorKind::Protocol, "/v1/embed: non-finite embedding");
        return e;
    }

    std::string endpoint_;
    RemoteOptions options_;
};

} // namespace gaussedit
