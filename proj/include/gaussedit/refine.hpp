#pragma once

// Texture refinement: render the editable Gaussians, denoise the renders with
// image-to-image guidance, and fit the Gaussians to the denoised views.

#include "gaussedit/camera.hpp"
#include "gaussedit/error.hpp"
#include "gaussedit/guidance.hpp"
#include "gaussedit/losses.hpp"
#include "gaussedit/optimizer.hpp"
#include "gaussedit/renderer.hpp"
#include "gaussedit/scene.hpp"

#include <json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gaussedit {

struct RefineConfig {
    // Rounds of re-render, re-denoise, and fit.
    std::uint64_t iterations = 100;
    double strength_t = 0.5;
    double lambda = 0.2;
    std::size_t views_per_round = 4;
    bool color_only = true;
    std::size_t mse_steps = 5;
    std::size_t rec_steps = 20;
    OptimizerKind optimizer = OptimizerKind::Adam;
    LearningRates lr;
    std::uint64_t seed = 0;

    void validate() const {
        require(iterations <= 200, ErrorKind::Validation, "refine: iterations must lie in [0, 200]");
        require(strength_t > 0.0 && strength_t < 1.0, ErrorKind::Validation, "refine: strength_t must lie in (0, 1)");
        require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::Validation, "refine: lambda must lie in [0, 1]");
        require(views_per_round >= 1, ErrorKind::Validation, "refine: views_per_round must be >= 1");
        lr.validate();
    }

    LearningRates effective_rates() const {
        LearningRates r = lr;
        if (color_only) r.mu = r.scale = r.rot = 0.0;
        return r;
    }
};

struct RefinePair {
    std::size_t camera_id = 0;
    Image rendered;
    Image denoised;
};

/// Renders the editable Gaussians from each listed camera and denoises the
/// render at the configured strength.
inline std::vector<RefinePair> refine_views(const GaussianScene& scene, std::span<const Camera> cameras,
                                            std::span<const std::size_t> camera_ids, GuidanceProvider& guidance,
                                            const RefineConfig& cfg, const std::string& prompt, Rng& rng) {
    std::vector<RefinePair> pairs;
    for (std::size_t id : camera_ids) {
        require(id < cameras.size(), ErrorKind::Argument, "refine: camera id out of range");
        RefinePair p;
        p.camera_id = id;
        p.rendered = render(scene, cameras[id], RenderSubset::EditableOnly);
        p.rendered.alpha().reset();
        p.denoised = guidance.img2img(p.rendered, prompt, cfg.strength_t, rng());
        require(p.denoised.same_shape(p.rendered), ErrorKind::Protocol, "refine: denoised view changed shape");
        pairs.push_back(std::move(p));
    }
    return pairs;
}

enum class RefinePhase { Mse, Reconstruction };

struct RefineRoundReport {
    std::uint64_t round = 0;
    RefinePhase phase = RefinePhase::Mse;
    std::vector<std::size_t> camera_ids;
    double loss_before = 0.0;
    double loss_after = 0.0;
    bool skipped = false;
    std::optional<std::string> diagnostic;
};

struct RefineResult {
    GaussianScene scene;
    std::vector<RefineRoundReport> trace;
};

inline nlohmann::json to_json(const RefineRoundReport& r) {
    nlohmann::json j = {{"round", r.round},
                        {"phase", r.phase == RefinePhase::Mse ? "mse" : "reconstruction"},
                        {"cameras", r.camera_ids},
                        {"loss_before", r.loss_before},
                        {"loss_after", r.loss_after},
                        {"skipped", r.skipped}};
    if (r.diagnostic) j["diagnostic"] = *r.diagnostic;
    return j;
}

namespace refine_detail {

// Mean loss over the pairs and the gradient of that mean.
template <class LossFn>
double loss_and_grads(const GaussianScene& scene, std::span<const Camera> cameras, std::span<const RefinePair> pairs,
                      LossFn&& loss, SceneGradients* grads) {
    double total = 0.0;
    const double k = 1.0 / static_cast<double>(pairs.size());
    if (grads) grads->assign(scene.editable_range().size(), GaussianGrad{});
    for (const RefinePair& p : pairs) {
        const Camera& cam = cameras[p.camera_id];
        const Image current = render(scene, cam, RenderSubset::EditableOnly);
        LossWithGrad l = loss(current, p.denoised);
        total += k * l.value;
        if (!grads) continue;
        for (double& g : l.grad.data()) g *= k;
        const SceneGradients view = render_backward(scene, cam, RenderSubset::EditableOnly, l.grad);
        for (std::size_t i = 0; i < view.size(); ++i) (*grads)[i] += view[i];
    }
    return total;
}

template <class LossFn>
void descend(GaussianScene& scene, std::span<const Camera> cameras, std::span<const RefinePair> pairs, LossFn&& loss,
             std::size_t steps, ParameterOptimizer& optimizer, RefineRoundReport& report) {
    SceneGradients grads;
    report.loss_before = loss_and_grads(scene, cameras, pairs, loss, &grads);
    for (std::size_t s = 0; s < steps; ++s) {
        if (s > 0) loss_and_grads(scene, cameras, pairs, loss, &grads);
        for (const auto& g : grads)
            require(g.all_finite(), ErrorKind::Propagation, "refine: non-finite gradient");
        optimizer.step(scene.editable_mut(), grads);
    }
    report.loss_after = loss_and_grads(scene, cameras, pairs, loss, nullptr);
}

inline bool is_round_failure(ErrorKind kind) {
    return kind == ErrorKind::Transport || kind == ErrorKind::Protocol || kind == ErrorKind::Model;
}

} // namespace refine_detail

/// `iterations` rounds, each re-rendering the current scene, re-denoising it,
/// and taking `mse_steps` steps on the MSE to the denoised views. A final
/// reconstruction phase re-denoises every camera and takes `rec_steps` steps
/// on (1 - lambda) * L1 + lambda * D-SSIM.
inline RefineResult run_refinement(GaussianScene scene, std::span<const Camera> cameras, GuidanceProvider& guidance,
                                   const RefineConfig& cfg, const std::string& prompt) {
    using namespace refine_detail;
    cfg.validate();
    RefineResult out;
    if (cfg.iterations == 0) {
        out.scene = std::move(scene);
        return out;
    }
    require(!cameras.empty(), ErrorKind::Argument, "refine: no cameras");
    require(!scene.editable_range().empty(), ErrorKind::Precondition, "refine: the scene has no editable Gaussians");

    Rng rng(cfg.seed);
    ParameterOptimizer optimizer(cfg.optimizer, cfg.effective_rates(), scene.editable_range().size());
    const std::size_t per_round = std::min(cfg.views_per_round, cameras.size());
    auto mse = [](const Image& r, const Image& t) { return mse_loss_grad(r, t); };
    auto rec = [&](const Image& r, const Image& t) { return rec_loss_grad(r, t, cfg.lambda); };

    auto run_phase = [&](std::uint64_t round, RefinePhase phase, std::vector<std::size_t> ids) {
        RefineRoundReport report;
        report.round = round;
        report.phase = phase;
        report.camera_ids = ids;
        try {
            const auto pairs = refine_views(scene, cameras, ids, guidance, cfg, prompt, rng);
            if (phase == RefinePhase::Mse)
                descend(scene, cameras, pairs, mse, cfg.mse_steps, optimizer, report);
            else
                descend(scene, cameras, pairs, rec, cfg.rec_steps, optimizer, report);
        } catch (const Error& e) {
            if (!is_round_failure(e.kind())) throw;
            report.skipped = true;
            report.diagnostic = std::string(to_string(e.kind())) + ": " + e.what();
        }
        out.trace.push_back(std::move(report));
    };

    for (std::uint64_t round = 0; round < cfg.iterations; ++round) {
        std::vector<std::size_t> ids;
        for (std::size_t j = 0; j < per_round; ++j) ids.push_back((round * per_round + j) % cameras.size());
        run_phase(round, RefinePhase::Mse, std::move(ids));
    }
    std::vector<std::size_t> all(cameras.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    run_phase(cfg.iterations, RefinePhase::Reconstruction, std::move(all));

    out.scene = std::move(scene);
    return out;
}

} // namespace gaussedit
