#pragma once

// Embedding-space edit metrics: CLIP text-image directional similarity and
// DINO similarity to a reference image, averaged over rendered views.

#include "gaussedit/camera.hpp"
#include "gaussedit/encoding.hpp"
#include "gaussedit/error.hpp"
#include "gaussedit/guidance.hpp"
#include "gaussedit/renderer.hpp"
#include "gaussedit/scene.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gaussedit {

inline void validate(const Embedding& e, const char* what) {
    require(!e.values.empty(), ErrorKind::Argument, std::string(what) + ": empty embedding");
    for (double v : e.values) require(std::isfinite(v), ErrorKind::Argument, std::string(what) + ": non-finite embedding");
}

/// Cosine of the angle between two vectors, clamped to [-1, 1].
inline double cosine_similarity(std::span<const double> a, std::span<const double> b, const char* what) {
    require(a.size() == b.size(), ErrorKind::Argument,
            std::string(what) + ": dimension mismatch (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                ")");
    double dot = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    require(aa > 0.0 && bb > 0.0, ErrorKind::Degeneracy, std::string(what) + ": zero-length direction");
    return std::clamp(dot / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

struct ClipDirectional {
    // 1 - cos; lower is better.
    double clip_dir = 0.0;
    // 100 * cos; higher is better.
    double reported_score = 0.0;
};

/// Compares the caption direction (edited - original text) with the image
/// direction (edited - original image).
inline ClipDirectional clip_directional(const Embedding& e_po, const Embedding& e_pe, const Embedding& e_io,
                                        const Embedding& e_ie) {
    for (const Embedding* e : {&e_po, &e_pe, &e_io, &e_ie}) validate(*e, "clip_directional");
    require(e_po.dim() == e_pe.dim() && e_io.dim() == e_ie.dim(), ErrorKind::Argument,
            "clip_directional: paired embeddings differ in dimension");
    std::vector<double> dp(e_po.dim()), di(e_io.dim());
    for (std::size_t i = 0; i < dp.size(); ++i) dp[i] = e_pe.values[i] - e_po.values[i];
    for (std::size_t i = 0; i < di.size(); ++i) di[i] = e_ie.values[i] - e_io.values[i];
    const double c = cosine_similarity(dp, di, "clip_directional");
    return {1.0 - c, 100.0 * c};
}

/// Cosine similarity mapped to [0, 1].
inline double dino_similarity(const Embedding& a, const Embedding& b) {
    validate(a, "dino_similarity");
    validate(b, "dino_similarity");
    return (cosine_similarity(a.values, b.values, "dino_similarity") + 1.0) / 2.0;
}

/// Wraps a provider and stores embeddings on disk under the sha256 of the
/// request. Other calls pass through.
class EmbeddingCache : public GuidanceProvider {
public:
    EmbeddingCache(GuidanceProvider& inner, std::filesystem::path dir) : inner_(inner), dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    GuidanceResponse residual(const GuidanceRequest& req) override { return inner_.residual(req); }
    Image img2img(const Image& image, const std::string& prompt, double strength, std::uint64_t seed) override {
        return inner_.img2img(image, prompt, strength, seed);
    }
    Personalization personalize(std::span<const Image> references, const std::string& category) override {
        return inner_.personalize(references, category);
    }

    Embedding embed_text(const std::string& text) override {
        return cached(sha256_hex("clip_text\n" + text), [&] { return inner_.embed_text(text); });
    }

    Embedding embed_image(EmbedKind kind, const Image& image) override {
        std::string key = std::string(to_string(kind)) + "\n" + std::to_string(image.width()) + "x" +
                          std::to_string(image.height()) + "\n";
        key += sha256_hex(image.data().data(), image.data().size() * sizeof(double));
        return cached(sha256_hex(key), [&] { return inner_.embed_image(kind, image); });
    }

    std::size_t hits() const { return hits_; }
    std::size_t misses() const { return misses_; }

private:
    template <class Fetch>
    Embedding cached(const std::string& key, Fetch&& fetch) {
        const auto path = dir_ / (key + ".json");
        if (std::filesystem::exists(path)) {
            std::ifstream in(path);
            const auto j = nlohmann::json::parse(in, nullptr, false);
            if (j.is_object() && j.contains("kind") && j.contains("values")) {
                ++hits_;
                return {embed_kind_from_string(j["kind"].get<std::string>()), j["values"].get<std::vector<double>>()};
            }
        }
        ++misses_;
        Embedding e = fetch();
        std::ofstream out(path, std::ios::trunc);
        out << nlohmann::json{{"kind", to_string(e.kind)}, {"values", e.values}}.dump();
        return e;
    }

    GuidanceProvider& inner_;
    std::filesystem::path dir_;
    std::size_t hits_ = 0;
    std::size_t misses_ = 0;
};

enum class EvalMode { Text, Image };

inline const char* to_string(EvalMode m) { return m == EvalMode::Text ? "text" : "image"; }

struct EvalInputs {
    EvalMode mode = EvalMode::Text;
    std::optional<std::string> caption_original;
    std::optional<std::string> caption_edited;
    std::optional<Image> reference;

    void validate() const {
        if (mode == EvalMode::Text)
            require(caption_original && caption_edited && !caption_original->empty() && !caption_edited->empty(),
                    ErrorKind::Validation, "eval: text mode needs both the original and the edited caption");
        else
            require(reference.has_value(), ErrorKind::Validation, "eval: image mode needs a reference image");
    }
};

struct ViewMetric {
    std::size_t camera_id = 0;
    // Text mode: 1 - cos. Image mode: DINO similarity.
    double value = 0.0;
    // Text mode only: 100 * cos.
    std::optional<double> reported_score;
};

struct DroppedView {
    std::size_t camera_id = 0;
    std::string reason;
};

struct MetricsReport {
    EvalMode mode = EvalMode::Text;
    std::vector<ViewMetric> views;
    std::vector<DroppedView> dropped;
    double mean_value = 0.0;
    std::optional<double> mean_reported_score;
    std::optional<std::string> caption_original;
    std::optional<std::string> caption_edited;
};

inline nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["mode"] = to_string(r.mode);
    j["metric"] = r.mode == EvalMode::Text ? "clip_directional" : "dino_similarity";
    j["views"] = nlohmann::json::array();
    for (const ViewMetric& v : r.views) {
        nlohmann::json jv = {{"camera", v.camera_id}};
        if (r.mode == EvalMode::Text) {
            jv["clip_dir"] = v.value;
            jv["reported_score"] = *v.reported_score;
        } else {
            jv["dino_sim"] = v.value;
        }
        j["views"].push_back(jv);
    }
    j["dropped"] = nlohmann::json::array();
    for (const DroppedView& d : r.dropped) j["dropped"].push_back({{"camera", d.camera_id}, {"reason", d.reason}});
    j["view_count"] = r.views.size();
    if (r.mode == EvalMode::Text) {
        j["mean"] = {{"clip_dir", r.mean_value}, {"reported_score", *r.mean_reported_score}};
        j["captions"] = {{"original", *r.caption_original}, {"edited", *r.caption_edited}};
    } else {
        j["mean"] = {{"dino_sim", r.mean_value}};
    }
    return j;
}

namespace metrics_detail {

inline bool is_service_failure(ErrorKind k) {
    return k == ErrorKind::Transport || k == ErrorKind::Protocol || k == ErrorKind::Model;
}

} // namespace metrics_detail

/// Renders both scenes from every camera and averages the per-view metric.
/// A view whose embedding request fails is dropped; a degenerate direction is
/// an error.
inline MetricsReport evaluate_scene(const GaussianScene& before, const GaussianScene& after,
                                    std::span<const Camera> cameras, const EvalInputs& inputs,
                                    GuidanceProvider& provider, std::ostream* log = &std::clog) {
    require(!cameras.empty(), ErrorKind::Argument, "eval: no cameras");
    inputs.validate();
    MetricsReport report;
    report.mode = inputs.mode;

    Embedding e_po, e_pe, e_ir;
    if (inputs.mode == EvalMode::Text) {
        report.caption_original = inputs.caption_original;
        report.caption_edited = inputs.caption_edited;
        e_po = provider.embed_text(*inputs.caption_original);
        e_pe = provider.embed_text(*inputs.caption_edited);
    } else {
        e_ir = provider.embed_image(EmbedKind::DinoImage, *inputs.reference);
    }

    for (std::size_t id = 0; id < cameras.size(); ++id) {
        ViewMetric view;
        view.camera_id = id;
        Embedding e_io, e_ie;
        try {
            if (inputs.mode == EvalMode::Text) {
                e_io = provider.embed_image(EmbedKind::ClipImage, render(before, cameras[id], RenderSubset::All));
                e_ie = provider.embed_image(EmbedKind::ClipImage, render(after, cameras[id], RenderSubset::All));
            } else {
                e_ie = provider.embed_image(EmbedKind::DinoImage, render(after, cameras[id], RenderSubset::All));
            }
        } catch (const Error& e) {
            if (!metrics_detail::is_service_failure(e.kind())) throw;
            report.dropped.push_back({id, std::string(to_string(e.kind())) + ": " + e.what()});
            if (log) *log << "eval: dropping view " << id << " (" << report.dropped.back().reason << ")\n";
            continue;
        }
        if (inputs.mode == EvalMode::Text) {
            const ClipDirectional c = clip_directional(e_po, e_pe, e_io, e_ie);
            view.value = c.clip_dir;
            view.reported_score = c.reported_score;
        } else {
            view.value = dino_similarity(e_ie, e_ir);
        }
        report.views.push_back(view);
    }
    require(!report.views.empty(), ErrorKind::Model,
            "eval: every view failed to embed (" + std::to_string(report.dropped.size()) + " dropped)");

    double sum = 0.0, sum_score = 0.0;
    for (const ViewMetric& v : report.views) {
        sum += v.value;
        if (v.reported_score) sum_score += *v.reported_score;
    }
    const double n = static_cast<double>(report.views.size());
    report.mean_value = sum / n;
    if (inputs.mode == EvalMode::Text) report.mean_reported_score = sum_score / n;
    return report;
}

} // namespace gaussedit
