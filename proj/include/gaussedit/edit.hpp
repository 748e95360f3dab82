#pragma once

// Score-distillation editing loop over the editable Gaussians.

#include "gaussedit/camera.hpp"
#include "gaussedit/error.hpp"
#include "gaussedit/guidance.hpp"
#include "gaussedit/optimizer.hpp"
#include "gaussedit/ply.hpp"
#include "gaussedit/renderer.hpp"
#include "gaussedit/roi.hpp"
#include "gaussedit/scene.hpp"

#include <json.hpp>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace gaussedit {

enum class RenderMode { Local, Global };

inline const char* to_string(RenderMode m) { return m == RenderMode::Local ? "local" : "global"; }

enum class TimestepWeighting { Constant1, SigmaWeighted };

struct TimestepSchedule {
    double early_min = 0.02;
    double early_max = 0.98;
    double late_min = 0.02;
    double late_max = 0.55;
    std::uint64_t switch_at = 600;

    void validate() const {
        for (auto [lo, hi] : {std::pair{early_min, early_max}, std::pair{late_min, late_max}})
            require(lo > 0.0 && hi < 1.0 && lo <= hi, ErrorKind::Validation,
                    "timestep schedule: bounds must satisfy 0 < min <= max < 1");
    }
};

/// Random viewpoints around the region being edited.
struct OrbitSampling {
    double elevation_min_deg = -10.0;
    double elevation_max_deg = 45.0;
    double radius_min_factor = 1.2;
    double radius_max_factor = 1.8;
    int width = 512;
    int height = 512;
    double fov_deg = 50.0;
    Vec3 up = Vec3::UnitZ();

    void validate() const {
        require(elevation_min_deg <= elevation_max_deg && elevation_min_deg > -90 && elevation_max_deg < 90,
                ErrorKind::Validation, "orbit: elevation band must lie within (-90, 90) degrees");
        require(radius_min_factor > 0 && radius_min_factor <= radius_max_factor, ErrorKind::Validation,
                "orbit: radius factors must satisfy 0 < min <= max");
        require(width >= 1 && height >= 1, ErrorKind::Validation, "orbit: render size must be positive");
        require(fov_deg > 0 && fov_deg < 180, ErrorKind::Validation, "orbit: fov must lie in (0, 180)");
        require(up.allFinite() && up.norm() > 0, ErrorKind::Validation, "orbit: up vector must be nonzero");
    }
};

struct EditConfig {
    double p = 0.5;
    std::uint64_t iterations = 1400;
    LearningRates lr;
    TimestepSchedule t_schedule;
    TimestepWeighting w_t = TimestepWeighting::Constant1;
    // Multiplies w(t); zero turns every step into a no-op.
    double w_scale = 1.0;
    double cfg_scale = 7.5;
    std::uint64_t seed = 0;
    AlternationSchedule alternation;
    OptimizerKind optimizer = OptimizerKind::Sgd;
    OrbitSampling orbit;
    std::size_t max_consecutive_failures = 10;
    std::size_t checkpoint_every = 0;

    void validate() const {
        require(p >= 0.0 && p <= 1.0, ErrorKind::Validation, "edit: p must lie in [0, 1]");
        lr.validate();
        require(lr.all_positive(), ErrorKind::Validation, "edit: learning rates must be > 0");
        t_schedule.validate();
        require(std::isfinite(w_scale) && w_scale >= 0.0, ErrorKind::Validation, "edit: w_scale must be >= 0");
        require(std::isfinite(cfg_scale), ErrorKind::Validation, "edit: cfg_scale must be finite");
        alternation.validate();
        orbit.validate();
        require(max_consecutive_failures >= 1, ErrorKind::Validation, "edit: max_consecutive_failures must be >= 1");
    }
};

/// Local and global prompt templates sharing the object and category terms.
struct EditPrompts {
    Prompt local;
    Prompt global;
};

inline RenderMode select_render_mode(double r, double p) { return r < p ? RenderMode::Local : RenderMode::Global; }

inline double sample_timestep(std::uint64_t iteration, const TimestepSchedule& schedule, Rng& rng) {
    const bool early = iteration < schedule.switch_at;
    return uniform(rng, early ? schedule.early_min : schedule.late_min, early ? schedule.early_max : schedule.late_max);
}

/// 1 - alpha_bar(t) of the scaled-linear beta schedule over 1000 steps.
inline double sigma_squared(double t) {
    constexpr int kSteps = 1000;
    static const std::array<double, kSteps> table = [] {
        std::array<double, kSteps> out{};
        const double b0 = std::sqrt(0.00085), b1 = std::sqrt(0.012);
        double alpha_bar = 1.0;
        for (int i = 0; i < kSteps; ++i) {
            const double b = b0 + (b1 - b0) * i / (kSteps - 1);
            alpha_bar *= 1.0 - b * b;
            out[i] = 1.0 - alpha_bar;
        }
        return out;
    }();
    const int index = std::clamp(static_cast<int>(t * kSteps), 0, kSteps - 1);
    return table[index];
}

inline double timestep_weight(double t, const EditConfig& cfg) {
    const double w = cfg.w_t == TimestepWeighting::Constant1 ? 1.0 : sigma_squared(t);
    return cfg.w_scale * w;
}

/// Cameras for one step. Single-view steps use the first camera; multi-view
/// steps use the first four.
struct StepViews {
    std::vector<Camera> cameras;
    std::vector<OrbitPose> poses;
};

/// The base pose plus three more at 90 degree azimuth offsets.
inline StepViews orbit_views(const OrbitPose& base, const Vec3& center, const OrbitSampling& orbit) {
    StepViews v;
    for (int k = 0; k < 4; ++k) {
        OrbitPose pose = base;
        pose.azimuth_deg = std::fmod(base.azimuth_deg + 90.0 * k, 360.0);
        v.poses.push_back(pose);
        v.cameras.push_back(orbit_camera(pose, center, orbit.up, orbit.width, orbit.height, orbit.fov_deg));
    }
    return v;
}

inline OrbitPose sample_orbit_pose(const OrbitSampling& orbit, double roi_diagonal, Rng& rng) {
    return {uniform(rng, 0.0, 360.0), uniform(rng, orbit.elevation_min_deg, orbit.elevation_max_deg),
            roi_diagonal * uniform(rng, orbit.radius_min_factor, orbit.radius_max_factor)};
}

struct StepReport {
    std::uint64_t iteration = 0;
    RenderMode mode = RenderMode::Global;
    Backend backend = Backend::SingleView;
    double t = 0.0;
    double weight = 0.0;
    std::string prompt;
    double grad_norm = 0.0;
    bool applied = false;
    std::optional<std::string> diagnostic;
};

inline double gradient_norm(const SceneGradients& grads) {
    double s = 0.0;
    for (const auto& g : grads)
        s += g.d_mu.squaredNorm() + g.d_log_scale.squaredNorm() + g.d_rot.squaredNorm() + g.d_sh0.squaredNorm() +
             g.d_opacity_logit * g.d_opacity_logit;
    return std::sqrt(s);
}

/// One distillation step: choose render mode and backend, render, query the
/// guidance, push w(t) * residual back through the renderer, and update the
/// editable Gaussians. A guidance error propagates with the scene untouched.
inline StepReport sds_step(GaussianScene& scene, const StepViews& views, GuidanceProvider& guidance,
                           const EditConfig& cfg, const EditPrompts& prompts, std::uint64_t iteration, Rng& rng,
                           ParameterOptimizer& optimizer) {
    require(!scene.editable_range().empty(), ErrorKind::Precondition, "edit: the scene has no editable Gaussians");

    StepReport report;
    report.iteration = iteration;
    report.mode = select_render_mode(uniform01(rng), cfg.p);
    report.t = sample_timestep(iteration, cfg.t_schedule, rng);
    const std::uint64_t request_seed = rng();
    report.backend = select_backend(iteration, cfg.alternation);
    report.weight = timestep_weight(report.t, cfg);

    const std::size_t arity = backend_arity(report.backend);
    require(views.cameras.size() >= arity, ErrorKind::Argument,
            "edit: backend " + std::string(to_string(report.backend)) + " needs " + std::to_string(arity) + " views");
    const Prompt& prompt = report.mode == RenderMode::Local ? prompts.local : prompts.global;
    report.prompt =
        substitute(prompt, report.backend == Backend::MultiView ? TermMode::CategoryTerm : TermMode::ObjectTerm);
    const RenderSubset subset = report.mode == RenderMode::Local ? RenderSubset::EditableOnly : RenderSubset::All;

    GuidanceRequest req;
    req.backend = report.backend;
    req.prompt_text = report.prompt;
    req.negative_prompt = prompt.negative();
    req.timestep = report.t;
    req.cfg_scale = cfg.cfg_scale;
    req.seed = request_seed;
    for (std::size_t v = 0; v < arity; ++v) {
        req.images.push_back(render(scene, views.cameras[v], subset));
        if (views.poses.size() >= arity) req.view_poses.push_back(views.poses[v]);
    }
    const GuidanceResponse res = guidance.residual(req);
    res.check_against(req);

    if (report.weight == 0.0) {
        report.diagnostic = "zero timestep weight";
        return report;
    }

    SceneGradients grads(scene.editable_range().size());
    for (std::size_t v = 0; v < arity; ++v) {
        Image upstream = res.residuals[v];
        for (double& x : upstream.data()) x *= report.weight;
        const SceneGradients view_grads = render_backward(scene, views.cameras[v], subset, upstream);
        for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += view_grads[i];
    }
    report.grad_norm = gradient_norm(grads);
    if (!std::isfinite(report.grad_norm)) {
        report.diagnostic = "non-finite gradient; step skipped";
        return report;
    }
    optimizer.step(scene.editable_mut(), grads);
    report.applied = true;
    return report;
}

struct EditRunOptions {
    /// Region the orbit cameras circle. Required unless fixed views are given.
    std::optional<Aabb> roi;
    /// Replaces orbit sampling with the same cameras every step.
    std::optional<StepViews> fixed_views;
    std::optional<std::filesystem::path> checkpoint_dir;
    PlyPrecision checkpoint_precision = PlyPrecision::Float32;
};

struct EditResult {
    GaussianScene scene;
    std::vector<StepReport> trace;
    std::size_t failed_steps = 0;
};

inline nlohmann::json to_json(const StepReport& r) {
    nlohmann::json j = {{"iteration", r.iteration},
                        {"mode", to_string(r.mode)},
                        {"backend", to_string(r.backend)},
                        {"t", r.t},
                        {"weight", r.weight},
                        {"prompt", r.prompt},
                        {"grad_norm", r.grad_norm},
                        {"applied", r.applied}};
    if (r.diagnostic) j["diagnostic"] = *r.diagnostic;
    return j;
}

inline nlohmann::json trace_to_json(const std::vector<StepReport>& trace) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& r : trace) steps.push_back(to_json(r));
    return steps;
}

inline bool is_step_failure(ErrorKind kind) {
    return kind == ErrorKind::Transport || kind == ErrorKind::Protocol || kind == ErrorKind::Model ||
           kind == ErrorKind::Propagation;
}

/// Runs cfg.iterations distillation steps. Steps that fail on the guidance
/// side or numerically are recorded and skipped; the run aborts after
/// cfg.max_consecutive_failures in a row.
inline EditResult run_edit(GaussianScene scene, const EditConfig& cfg, GuidanceProvider& guidance,
                           const EditPrompts& prompts, const EditRunOptions& options = {}) {
    cfg.validate();
    EditResult out;
    if (cfg.iterations == 0) {
        out.scene = std::move(scene);
        return out;
    }
    require(!scene.editable_range().empty(), ErrorKind::Precondition, "edit: the scene has no editable Gaussians");
    require(options.fixed_views || options.roi, ErrorKind::Argument, "edit: need an ROI or fixed views");
    Vec3 center = Vec3::Zero();
    double diagonal = 0.0;
    if (!options.fixed_views) {
        options.roi->validate();
        center = options.roi->center();
        diagonal = options.roi->diagonal();
        require(diagonal > 0.0, ErrorKind::Validation, "edit: ROI box is degenerate; orbit radius would be zero");
    }

    Rng rng(cfg.seed);
    Rng camera_rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
    ParameterOptimizer optimizer(cfg.optimizer, cfg.lr, scene.editable_range().size());
    std::size_t consecutive = 0;
    const std::size_t count = scene.size();

    for (std::uint64_t it = 0; it < cfg.iterations; ++it) {
        const StepViews views = options.fixed_views
                                    ? *options.fixed_views
                                    : orbit_views(sample_orbit_pose(cfg.orbit, diagonal, camera_rng), center, cfg.orbit);
        StepReport report;
        try {
            report = sds_step(scene, views, guidance, cfg, prompts, it, rng, optimizer);
        } catch (const Error& e) {
            if (!is_step_failure(e.kind())) throw;
            report.iteration = it;
            report.diagnostic = std::string(to_string(e.kind())) + ": " + e.what();
            if (++consecutive >= cfg.max_consecutive_failures)
                fail(e.kind(), "edit aborted after " + std::to_string(consecutive) +
                                   " consecutive failed steps; last: " + e.what());
            ++out.failed_steps;
            out.trace.push_back(std::move(report));
            continue;
        }
        if (report.applied || report.weight == 0.0) {
            consecutive = 0;
        } else {
            ++out.failed_steps;
            if (++consecutive >= cfg.max_consecutive_failures)
                fail(ErrorKind::Propagation, "edit aborted after " + std::to_string(consecutive) +
                                                 " consecutive failed steps; last: " + report.diagnostic.value_or(""));
        }
        out.trace.push_back(std::move(report));

        if (cfg.checkpoint_every > 0 && options.checkpoint_dir && (it + 1) % cfg.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof name, "step_%06llu.ply", static_cast<unsigned long long>(it + 1));
            std::filesystem::create_directories(*options.checkpoint_dir);
            save_ply(scene, *options.checkpoint_dir / name, options.checkpoint_precision);
        }
    }
    require(scene.size() == count, ErrorKind::ContractViolation, "edit: Gaussian count changed");
    out.scene = std::move(scene);
    return out;
}

} // namespace gaussedit
