#pragma once

// Stage commands. Each stage reads its prerequisites from the output
// directory, writes its artifacts under <output_dir>/<stage>/, and records a
// manifest that the next stage checks.

#include "gaussedit/config.hpp"
#include "gaussedit/edit.hpp"
#include "gaussedit/encoding.hpp"
#include "gaussedit/metrics.hpp"
#include "gaussedit/ply.hpp"
#include "gaussedit/refine.hpp"
#include "gaussedit/remote_guidance.hpp"
#include "gaussedit/roi.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

namespace gaussedit {

namespace fs = std::filesystem;

struct StageResult {
    fs::path dir;
    nlohmann::json manifest;
};

inline std::string config_hash(const PipelineConfig& cfg) { return sha256_hex(cfg.source.dump()); }

inline fs::path stage_dir(const PipelineConfig& cfg, const std::string& stage) { return cfg.output_dir / stage; }

namespace pipeline_detail {

using nlohmann::json;

inline json file_entry(const fs::path& path) { return {{"path", path.generic_string()}, {"sha256", sha256_file(path)}}; }

inline void write_json(const fs::path& path, const json& j) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), ErrorKind::Format, "cannot write " + path.string());
    out << j.dump(2) << "\n";
}

inline json base_manifest(const PipelineConfig& cfg, const std::string& stage) {
    return {{"stage", stage}, {"config_sha256", config_hash(cfg)}, {"seed", cfg.seed}};
}

/// Loads a prerequisite stage's manifest and checks that its scene output is
/// still the file it describes.
inline json require_stage(const PipelineConfig& cfg, const std::string& stage, const std::string& needed_by) {
    const fs::path path = stage_dir(cfg, stage) / "manifest.json";
    require(fs::exists(path), ErrorKind::Precondition,
            needed_by + ": prerequisite stage \"" + stage + "\" has not run (missing " + path.string() + ")");
    std::ifstream in(path);
    json m = json::parse(in, nullptr, false);
    require(!m.is_discarded() && m.is_object() && m.value("stage", "") == stage, ErrorKind::Precondition,
            needed_by + ": manifest of stage \"" + stage + "\" is unreadable");
    if (m.contains("outputs") && m["outputs"].contains("scene")) {
        const fs::path scene = cfg.output_dir / m["outputs"]["scene"]["path"].get<std::string>();
        require(fs::exists(scene) && sha256_file(scene) == m["outputs"]["scene"]["sha256"].get<std::string>(),
                ErrorKind::Precondition,
                needed_by + ": output of stage \"" + stage + "\" is missing or changed since its manifest was written");
    }
    return m;
}

inline GaussianScene load_stage_scene(const PipelineConfig& cfg, const json& manifest) {
    GaussianScene scene = load_ply(cfg.output_dir / manifest["outputs"]["scene"]["path"].get<std::string>());
    const auto range = manifest["editable_range"].get<std::vector<std::size_t>>();
    require(range.size() == 2 && range[1] == scene.size() && range[0] <= range[1], ErrorKind::Precondition,
            "manifest editable_range does not match the stored scene");
    scene.set_editable_suffix(range[1] - range[0]);
    return scene;
}

inline json range_json(const GaussianScene& s) { return json::array({s.editable_range().begin, s.editable_range().end}); }

inline json box_json(const Aabb& b) {
    return {{"min", {b.min.x(), b.min.y(), b.min.z()}}, {"max", {b.max.x(), b.max.y(), b.max.z()}}};
}

inline json rates_json(const LearningRates& lr) {
    return {{"mu", lr.mu}, {"scale", lr.scale}, {"rot", lr.rot}, {"opacity", lr.opacity}, {"sh0", lr.sh0}};
}

// Writes the scene into the stage directory and returns its manifest entry.
inline json save_stage_scene(const PipelineConfig& cfg, const std::string& stage, const GaussianScene& scene) {
    const fs::path rel = fs::path(stage) / "scene.ply";
    save_ply(scene, cfg.output_dir / rel, cfg.ply_precision);
    return {{"path", rel.generic_string()}, {"sha256", sha256_file(cfg.output_dir / rel)}};
}

} // namespace pipeline_detail

/// Builds the provider named by the config. A mock target is resized to
/// `width` x `height` so residuals match the renders.
inline std::unique_ptr<GuidanceProvider> make_guidance(const GuidanceConfig& g, int width, int height) {
    if (g.is_mock()) {
        std::optional<Image> target;
        if (auto path = g.mock_target()) target = resize_bilinear(read_png(*path), width, height);
        return std::make_unique<MockGuidance>(std::move(target), g.mock);
    }
    return std::make_unique<RemoteGuidance>(g.endpoint, g.remote);
}

/// partition, farthest point sampling, fresh Gaussians, concatenation.
inline StageResult cmd_init(const PipelineConfig& cfg, std::ostream& log = std::clog) {
    using namespace pipeline_detail;
    cfg.validate();
    const GaussianScene input = load_ply(cfg.scene_path);
    const RoiInitResult init = initialize_roi(input, cfg.box, cfg.init);
    if (init.warning) log << "init: warning: " << *init.warning << "\n";

    json m = base_manifest(cfg, "init");
    m["inputs"] = {{"scene", file_entry(cfg.scene_path)}};
    m["outputs"] = {{"scene", save_stage_scene(cfg, "init", init.scene)}};
    m["editable_range"] = range_json(init.scene);
    m["counts"] = {{"frozen", init.frozen_count}, {"inside_box", init.inside_count}, {"editable", init.editable_count}};
    m["warning"] = init.warning ? json(*init.warning) : json(nullptr);
    m["box"] = box_json(cfg.box);
    m["policy"] = {{"n_samples", cfg.init.n_samples},
                   {"scale_mode", cfg.init.scale_mode == ScaleMode::UnitScale ? "unit" : "nearest_neighbor"},
                   {"color_seed", cfg.init.color_seed},
                   {"opacity_logit_init", cfg.init.opacity_logit_init},
                   {"fps_start", cfg.init.fps_start},
                   {"clamp_to_available", cfg.init.clamp_to_available}};
    const fs::path dir = stage_dir(cfg, "init");
    write_json(dir / "manifest.json", m);
    log << "init: " << init.editable_count << " editable of " << init.scene.size() << " Gaussians -> "
        << (dir / "scene.ply").string() << "\n";
    return {dir, m};
}

inline StageResult cmd_edit(const PipelineConfig& cfg, std::ostream& log = std::clog) {
    using namespace pipeline_detail;
    cfg.validate();
    const json prev = require_stage(cfg, "init", "edit");
    GaussianScene scene = load_stage_scene(cfg, prev);
    const auto guidance = make_guidance(cfg.guidance, cfg.edit.orbit.width, cfg.edit.orbit.height);
    const fs::path dir = stage_dir(cfg, "edit");
    EditRunOptions opts;
    opts.roi = cfg.box;
    if (cfg.edit.checkpoint_every > 0) opts.checkpoint_dir = dir / "checkpoints";
    opts.checkpoint_precision = cfg.ply_precision;
    const EditResult res = run_edit(std::move(scene), cfg.edit, *guidance, cfg.prompts.build(), opts);

    json m = base_manifest(cfg, "edit");
    m["inputs"] = {{"scene", prev["outputs"]["scene"]}};
    m["outputs"] = {{"scene", save_stage_scene(cfg, "edit", res.scene)}, {"trace", "edit/trace.json"}};
    m["editable_range"] = range_json(res.scene);
    m["guidance"] = cfg.guidance.is_mock() ? "mock" : cfg.guidance.endpoint;
    m["steps"] = {{"iterations", cfg.edit.iterations}, {"failed", res.failed_steps}};
    m["policy"] = {{"p", cfg.edit.p},
                   {"seed", cfg.edit.seed},
                   {"optimizer", to_string(cfg.edit.optimizer)},
                   {"lr", rates_json(cfg.edit.lr)},
                   {"weighting", cfg.edit.w_t == TimestepWeighting::Constant1 ? "constant" : "sigma"},
                   {"w_scale", cfg.edit.w_scale},
                   {"cfg_scale", cfg.edit.cfg_scale},
                   {"alternation", {cfg.edit.alternation.single_view, cfg.edit.alternation.multi_view}},
                   {"timestep",
                    {cfg.edit.t_schedule.early_min, cfg.edit.t_schedule.early_max, cfg.edit.t_schedule.late_min,
                     cfg.edit.t_schedule.late_max, cfg.edit.t_schedule.switch_at}}};
    write_json(dir / "trace.json", trace_to_json(res.trace));
    write_json(dir / "manifest.json", m);
    log << "edit: " << cfg.edit.iterations << " steps (" << res.failed_steps << " failed) -> "
        << (dir / "scene.ply").string() << "\n";
    return {dir, m};
}

inline StageResult cmd_refine(const PipelineConfig& cfg, std::ostream& log = std::clog) {
    using namespace pipeline_detail;
    cfg.validate();
    const json prev = require_stage(cfg, "edit", "refine");
    GaussianScene scene = load_stage_scene(cfg, prev);
    const auto cameras = cfg.cameras.build(cfg.box);
    const auto guidance = make_guidance(cfg.guidance, cfg.cameras.width, cfg.cameras.height);
    const std::string prompt = substitute(cfg.prompts.build().local, TermMode::ObjectTerm);
    const RefineResult res = run_refinement(std::move(scene), cameras, *guidance, cfg.refine, prompt);

    std::size_t skipped = 0;
    json trace = json::array();
    for (const auto& r : res.trace) {
        skipped += r.skipped;
        trace.push_back(to_json(r));
    }
    const fs::path dir = stage_dir(cfg, "refine");
    json m = base_manifest(cfg, "refine");
    m["inputs"] = {{"scene", prev["outputs"]["scene"]}};
    m["outputs"] = {{"scene", save_stage_scene(cfg, "refine", res.scene)}, {"trace", "refine/trace.json"}};
    m["editable_range"] = range_json(res.scene);
    m["prompt"] = prompt;
    m["rounds"] = {{"total", res.trace.size()}, {"skipped", skipped}};
    m["policy"] = {{"iterations", cfg.refine.iterations},
                   {"strength", cfg.refine.strength_t},
                   {"lambda", cfg.refine.lambda},
                   {"views_per_round", cfg.refine.views_per_round},
                   {"color_only", cfg.refine.color_only},
                   {"mse_steps", cfg.refine.mse_steps},
                   {"rec_steps", cfg.refine.rec_steps},
                   {"optimizer", to_string(cfg.refine.optimizer)},
                   {"lr", rates_json(cfg.refine.effective_rates())},
                   {"seed", cfg.refine.seed},
                   {"cameras", cameras.size()}};
    write_json(dir / "trace.json", trace);
    write_json(dir / "manifest.json", m);
    log << "refine: " << res.trace.size() << " rounds (" << skipped << " skipped) -> " << (dir / "scene.ply").string()
        << "\n";
    return {dir, m};
}

/// Compares the original scene with the newest edited one (refine if it ran,
/// else edit).
inline StageResult cmd_eval(const PipelineConfig& cfg, std::ostream& log = std::clog) {
    using namespace pipeline_detail;
    cfg.validate();
    EvalInputs inputs{cfg.eval.mode, cfg.eval.caption_original, cfg.eval.caption_edited, std::nullopt};
    if (cfg.eval.reference) inputs.reference = read_png(*cfg.eval.reference);
    inputs.validate();
    const bool refined = fs::exists(stage_dir(cfg, "refine") / "manifest.json");
    const json prev = require_stage(cfg, refined ? "refine" : "edit", "eval");
    const GaussianScene after = load_stage_scene(cfg, prev);
    const GaussianScene before = load_ply(cfg.scene_path);
    const auto cameras = cfg.cameras.build(cfg.box);
    const auto guidance = make_guidance(cfg.guidance, cfg.cameras.width, cfg.cameras.height);
    std::optional<EmbeddingCache> cache;
    if (cfg.eval.cache_dir) cache.emplace(*guidance, *cfg.eval.cache_dir);
    GuidanceProvider& provider = cache ? static_cast<GuidanceProvider&>(*cache) : *guidance;
    const MetricsReport report = evaluate_scene(before, after, cameras, inputs, provider, &log);

    const fs::path dir = stage_dir(cfg, "eval");
    write_json(dir / "report.json", to_json(report));
    json m = base_manifest(cfg, "eval");
    m["inputs"] = {{"before", file_entry(cfg.scene_path)}, {"after", prev["outputs"]["scene"]}};
    if (cfg.eval.reference) m["inputs"]["reference"] = file_entry(*cfg.eval.reference);
    m["outputs"] = {{"report", file_entry(dir / "report.json")}};
    m["outputs"]["report"]["path"] = "eval/report.json";
    m["mode"] = to_string(cfg.eval.mode);
    m["cameras"] = cameras.size();
    write_json(dir / "manifest.json", m);
    log << "eval: " << report.views.size() << " views, mean " << report.mean_value;
    if (report.mean_reported_score) log << " (score " << *report.mean_reported_score << ")";
    log << " -> " << (dir / "report.json").string() << "\n";
    return {dir, m};
}

/// Renders one scene from every configured camera. `stage` is "original",
/// "init", "edit", or "refine"; empty picks the newest stage that ran.
inline StageResult cmd_render(const PipelineConfig& cfg, std::string stage = {}, std::ostream& log = std::clog) {
    using namespace pipeline_detail;
    cfg.validate();
    if (stage.empty()) {
        stage = "original";
        for (const char* s : {"init", "edit", "refine"})
            if (fs::exists(stage_dir(cfg, s) / "manifest.json")) stage = s;
    }
    require(stage == "original" || stage == "init" || stage == "edit" || stage == "refine", ErrorKind::Validation,
            "render: unknown stage \"" + stage + "\"");
    GaussianScene scene;
    json input;
    if (stage == "original") {
        scene = load_ply(cfg.scene_path);
        input = file_entry(cfg.scene_path);
    } else {
        const json prev = require_stage(cfg, stage, "render");
        scene = load_stage_scene(cfg, prev);
        input = prev["outputs"]["scene"];
    }
    const auto cameras = cfg.cameras.build(cfg.box);
    const fs::path dir = stage_dir(cfg, "render") / stage;
    fs::create_directories(dir);
    json outputs = json::array();
    for (std::size_t i = 0; i < cameras.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "view_%03zu.png", i);
        write_png(render(scene, cameras[i], RenderSubset::All), dir / name);
        outputs.push_back({{"path", (fs::path("render") / stage / name).generic_string()},
                           {"sha256", sha256_file(dir / name)}});
    }
    json m = base_manifest(cfg, "render");
    m["inputs"] = {{"scene", input}};
    m["source_stage"] = stage;
    m["outputs"] = {{"views", outputs}};
    m["size"] = {cfg.cameras.width, cfg.cameras.height};
    write_json(dir / "manifest.json", m);
    log << "render: " << cameras.size() << " views of " << stage << " at " << cfg.cameras.width << "x"
        << cfg.cameras.height << " -> " << dir.string() << "\n";
    return {dir, m};
}

} // namespace gaussedit
