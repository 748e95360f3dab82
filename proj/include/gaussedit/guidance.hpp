#pragma once

// Guidance contract: prompts, backend alternation, and the providers that turn
// rendered views into score-distillation residuals, denoised images, and
// embeddings.

#include "gaussedit/camera.hpp"
#include "gaussedit/encoding.hpp"
#include "gaussedit/error.hpp"
#include "gaussedit/image.hpp"
#include "gaussedit/math.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gaussedit {

inline constexpr std::string_view kObjectPlaceholder = "OBJECT";

enum class TermMode { ObjectTerm, CategoryTerm };

/// A prompt template with one OBJECT placeholder and the two terms that may
/// fill it: the personalized object term ("V* horse") and its plain category.
class Prompt {
public:
    Prompt() = default;
    Prompt(std::string templ, std::string object_term, std::string category_term, std::string negative = {})
        : template_(std::move(templ)), object_term_(std::move(object_term)),
          category_term_(std::move(category_term)), negative_(std::move(negative)) {
        const auto first = template_.find(kObjectPlaceholder);
        require(first != std::string::npos, ErrorKind::Validation,
                "prompt: template \"" + template_ + "\" has no OBJECT placeholder");
        require(template_.find(kObjectPlaceholder, first + 1) == std::string::npos, ErrorKind::Validation,
                "prompt: template must contain OBJECT exactly once");
        require(!object_term_.empty() && !category_term_.empty(), ErrorKind::Validation,
                "prompt: object and category terms must be non-empty");
    }

    const std::string& templ() const { return template_; }
    const std::string& object_term() const { return object_term_; }
    const std::string& category_term() const { return category_term_; }
    const std::string& negative() const { return negative_; }

    void set_object_term(std::string term) {
        require(!term.empty(), ErrorKind::Validation, "prompt: object term must be non-empty");
        object_term_ = std::move(term);
    }

    bool operator==(const Prompt&) const = default;

private:
    std::string template_;
    std::string object_term_;
    std::string category_term_;
    std::string negative_;
};

inline std::string substitute(const Prompt& prompt, TermMode mode) {
    std::string out = prompt.templ();
    const auto at = out.find(kObjectPlaceholder);
    require(at != std::string::npos, ErrorKind::Validation, "prompt: empty or invalid prompt");
    out.replace(at, kObjectPlaceholder.size(),
                mode == TermMode::ObjectTerm ? prompt.object_term() : prompt.category_term());
    return out;
}

enum class Backend { SingleView, MultiView };

inline const char* to_string(Backend b) { return b == Backend::SingleView ? "sv" : "mv"; }

/// Repeating pattern of `single_view` SingleView iterations followed by
/// `multi_view` MultiView iterations.
struct AlternationSchedule {
    std::uint32_t single_view = 1;
    std::uint32_t multi_view = 1;

    void validate() const {
        require(single_view + multi_view > 0, ErrorKind::Validation, "alternation: ratio 0:0 selects no backend");
    }
};

inline Backend select_backend(std::uint64_t iteration, const AlternationSchedule& schedule) {
    schedule.validate();
    const std::uint64_t period = std::uint64_t{schedule.single_view} + schedule.multi_view;
    return iteration % period < schedule.single_view ? Backend::SingleView : Backend::MultiView;
}

/// Number of views the backend consumes per request.
inline std::size_t backend_arity(Backend b) { return b == Backend::SingleView ? 1 : 4; }

struct GuidanceRequest {
    Backend backend = Backend::SingleView;
    std::vector<Image> images;
    std::string prompt_text;
    std::string negative_prompt;
    double timestep = 0.5;
    double cfg_scale = 7.5;
    std::uint64_t seed = 0;
    std::vector<OrbitPose> view_poses;

    void validate() const {
        require(timestep > 0.0 && timestep < 1.0, ErrorKind::Argument, "guidance: timestep must lie in (0, 1)");
        require(images.size() == backend_arity(backend), ErrorKind::Argument,
                "guidance: backend " + std::string(to_string(backend)) + " expects " +
                    std::to_string(backend_arity(backend)) + " images, got " + std::to_string(images.size()));
        require(view_poses.empty() || view_poses.size() == images.size(), ErrorKind::Argument,
                "guidance: one view pose per image");
        for (const auto& img : images)
            require(img.width() > 0 && img.height() > 0, ErrorKind::Argument, "guidance: empty image");
    }
};

/// Residuals (predicted minus injected noise) decoded to image space, one per
/// request image.
struct GuidanceResponse {
    std::vector<Image> residuals;

    void check_against(const GuidanceRequest& req, ErrorKind kind = ErrorKind::Protocol) const {
        require(residuals.size() == req.images.size(), kind,
                "guidance: expected " + std::to_string(req.images.size()) + " residuals, got " +
                    std::to_string(residuals.size()));
        for (std::size_t i = 0; i < residuals.size(); ++i) {
            require(residuals[i].same_shape(req.images[i]), kind, "guidance: residual " + std::to_string(i) +
                                                                      " does not match its image shape");
            require(residuals[i].all_finite(), kind, "guidance: non-finite residual");
        }
    }
};

enum class EmbedKind { ClipText, ClipImage, DinoImage };

inline const char* to_string(EmbedKind k) {
    switch (k) {
    case EmbedKind::ClipText: return "clip_text";
    case EmbedKind::ClipImage: return "clip_image";
    case EmbedKind::DinoImage: return "dino_image";
    }
    return "unknown";
}

inline EmbedKind embed_kind_from_string(std::string_view s) {
    if (s == "clip_text") return EmbedKind::ClipText;
    if (s == "clip_image") return EmbedKind::ClipImage;
    if (s == "dino_image") return EmbedKind::DinoImage;
    fail(ErrorKind::Protocol, "unknown embedding kind \"" + std::string(s) + "\"");
}

struct Embedding {
    EmbedKind kind = EmbedKind::ClipText;
    std::vector<double> values;

    std::size_t dim() const { return values.size(); }
    bool operator==(const Embedding&) const = default;
};

struct Personalization {
    std::string token;
    std::string adapter_id;
};

class GuidanceProvider {
public:
    virtual ~GuidanceProvider() = default;

    virtual GuidanceResponse residual(const GuidanceRequest& req) = 0;
    virtual Image img2img(const Image& image, const std::string& prompt, double strength, std::uint64_t seed) = 0;
    virtual Embedding embed_text(const std::string& text) = 0;
    virtual Embedding embed_image(EmbedKind kind, const Image& image) = 0;
    virtual Personalization personalize(std::span<const Image> references, const std::string& category) = 0;
};

/// gain * (image - target) for every request image.
inline GuidanceResponse mock_residual(const GuidanceRequest& req, const Image& target, double gain) {
    GuidanceResponse out;
    out.residuals.reserve(req.images.size());
    for (const Image& img : req.images) {
        require(img.same_shape(target), ErrorKind::Argument,
                "mock guidance: target is " + std::to_string(target.width()) + "x" + std::to_string(target.height()) +
                    " but the view is " + std::to_string(img.width()) + "x" + std::to_string(img.height()));
        Image r(img.width(), img.height());
        for (std::size_t i = 0; i < r.data().size(); ++i) r.data()[i] = gain * (img.data()[i] - target.data()[i]);
        out.residuals.push_back(std::move(r));
    }
    return out;
}

enum class MockImg2Img { Echo, BlendToTarget };

struct MockOptions {
    double gain = 1.0;
    MockImg2Img img2img_mode = MockImg2Img::Echo;
    int embedding_grid = 4;
};

/// In-process stand-in for the diffusion service. Residuals pull renders toward
/// a fixed target; img2img either echoes its input or blends it toward the
/// target by the strength; embeddings are deterministic functions of the
/// payload.
class MockGuidance : public GuidanceProvider {
public:
    using Options = MockOptions;

    MockGuidance() : MockGuidance(std::nullopt, Options{}) {}
    explicit MockGuidance(std::optional<Image> target, Options options = {})
        : target_(std::move(target)), options_(options) {
        require(options_.embedding_grid >= 1, ErrorKind::Validation, "mock guidance: embedding_grid must be >= 1");
    }

    const std::optional<Image>& target() const { return target_; }
    const Options& options() const { return options_; }

    GuidanceResponse residual(const GuidanceRequest& req) override {
        req.validate();
        ++residual_calls_;
        if (target_) return mock_residual(req, *target_, options_.gain);
        GuidanceResponse out;
        for (const Image& img : req.images) out.residuals.emplace_back(img.width(), img.height());
        return out;
    }

    Image img2img(const Image& image, const std::string&, double strength, std::uint64_t) override {
        require(strength >= 0.0 && strength <= 1.0, ErrorKind::Argument, "img2img: strength must lie in [0, 1]");
        if (options_.img2img_mode == MockImg2Img::Echo || !target_) return image;
        const Image target = resize_bilinear(*target_, image.width(), image.height());
        Image out(image.width(), image.height());
        for (std::size_t i = 0; i < out.data().size(); ++i)
            out.data()[i] = (1.0 - strength) * image.data()[i] + strength * target.data()[i];
        return out;
    }

    // Text vectors come from a generator seeded by the text hash.
    Embedding embed_text(const std::string& text) override {
        const std::string digest = sha256_hex(text);
        Rng rng(std::stoull(digest.substr(0, 16), nullptr, 16));
        Embedding e{EmbedKind::ClipText, std::vector<double>(embedding_dim())};
        for (double& v : e.values) v = uniform(rng, -1.0, 1.0);
        return e;
    }

    // Image vectors are grid-pooled colors centered at zero.
    Embedding embed_image(EmbedKind kind, const Image& image) override {
        require(kind != EmbedKind::ClipText, ErrorKind::Argument, "embed_image: text kind requested for an image");
        require(image.width() > 0 && image.height() > 0, ErrorKind::Argument, "embed_image: empty image");
        const int g = options_.embedding_grid;
        Embedding e{kind, std::vector<double>(embedding_dim(), 0.0)};
        std::vector<double> counts(static_cast<std::size_t>(g) * g, 0.0);
        for (int y = 0; y < image.height(); ++y) {
            for (int x = 0; x < image.width(); ++x) {
                const int cell = (y * g / image.height()) * g + x * g / image.width();
                counts[cell] += 1.0;
                for (int c = 0; c < 3; ++c) e.values[3 * cell + c] += image.at(x, y, c);
            }
        }
        for (std::size_t cell = 0; cell < counts.size(); ++cell)
            for (int c = 0; c < 3; ++c) e.values[3 * cell + c] = e.values[3 * cell + c] / counts[cell] - 0.5;
        // DINO and CLIP image spaces differ by a fixed sign pattern.
        if (kind == EmbedKind::DinoImage)
            for (std::size_t i = 1; i < e.values.size(); i += 2) e.values[i] = -e.values[i];
        return e;
    }

    Personalization personalize(std::span<const Image> references, const std::string& category) override {
        require(!references.empty(), ErrorKind::Validation, "personalize: at least one reference image required");
        std::string blob = category;
        for (const Image& img : references) {
            const auto png = encode_png(img);
            blob.append(png.begin(), png.end());
        }
        return {"V*", "mock-" + sha256_hex(blob).substr(0, 16)};
    }

    std::size_t residual_calls() const { return residual_calls_; }
    std::size_t embedding_dim() const { return 3 * static_cast<std::size_t>(options_.embedding_grid) * options_.embedding_grid; }

private:
    std::optional<Image> target_;
    Options options_;
    std::size_t residual_calls_ = 0;
};

} // namespace gaussedit
