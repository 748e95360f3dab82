#pragma once

// Pipeline configuration: one JSON file with a section per stage. Relative
// paths resolve against the directory holding the file.

#include "gaussedit/edit.hpp"
#include "gaussedit/error.hpp"
#include "gaussedit/guidance.hpp"
#include "gaussedit/metrics.hpp"
#include "gaussedit/ply.hpp"
#include "gaussedit/refine.hpp"
#include "gaussedit/remote_guidance.hpp"
#include "gaussedit/roi.hpp"

#include <json.hpp>

#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace gaussedit {

/// Fixed cameras on a ring around the box center, shared by refine, eval,
/// and render.
struct CameraRing {
    std::size_t count = 8;
    double elevation_deg = 20.0;
    // Multiplies the box diagonal.
    double radius_factor = 1.5;
    double azimuth_offset_deg = 0.0;
    int width = 512;
    int height = 512;
    double fov_deg = 50.0;
    Vec3 up = Vec3::UnitZ();
    // Explicit (azimuth, elevation, radius) poses replace the ring when given.
    std::vector<OrbitPose> poses;

    void validate() const {
        require(count >= 1 || !poses.empty(), ErrorKind::Validation, "cameras: count must be >= 1");
        require(radius_factor > 0.0, ErrorKind::Validation, "cameras: radius_factor must be > 0");
        require(width >= 1 && height >= 1, ErrorKind::Validation, "cameras: width and height must be >= 1");
        require(fov_deg > 0 && fov_deg < 180, ErrorKind::Validation, "cameras: fov must lie in (0, 180)");
        require(up.allFinite() && up.norm() > 0, ErrorKind::Validation, "cameras: up vector must be nonzero");
        for (const OrbitPose& p : poses)
            require(p.radius > 0 && std::isfinite(p.azimuth_deg) && std::abs(p.elevation_deg) < 90,
                    ErrorKind::Validation, "cameras: explicit poses need radius > 0 and |elevation| < 90");
    }

    std::vector<Camera> build(const Aabb& box) const {
        validate();
        std::vector<OrbitPose> use = poses;
        if (use.empty()) {
            require(box.diagonal() > 0.0, ErrorKind::Validation, "cameras: box is degenerate; ring radius would be zero");
            for (std::size_t i = 0; i < count; ++i)
                use.push_back({azimuth_offset_deg + 360.0 * static_cast<double>(i) / static_cast<double>(count),
                               elevation_deg, radius_factor * box.diagonal()});
        }
        std::vector<Camera> out;
        for (const OrbitPose& p : use) out.push_back(orbit_camera(p, box.center(), up, width, height, fov_deg));
        return out;
    }
};

struct GuidanceConfig {
    // "mock", "mock:<target.png>", or an http:// URL.
    std::string endpoint = "mock";
    MockOptions mock;
    RemoteOptions remote;

    bool is_mock() const { return endpoint == "mock" || endpoint.rfind("mock:", 0) == 0; }
    std::optional<std::filesystem::path> mock_target() const {
        if (endpoint.rfind("mock:", 0) == 0 && endpoint.size() > 5) return std::filesystem::path(endpoint.substr(5));
        return std::nullopt;
    }
};

struct PromptConfig {
    std::string local = "a OBJECT";
    std::string global = "a OBJECT";
    std::string object_term;
    std::string category_term;
    std::string negative;

    EditPrompts build() const {
        return {Prompt(local, object_term, category_term, negative), Prompt(global, object_term, category_term, negative)};
    }
};

struct EvalConfig {
    EvalMode mode = EvalMode::Text;
    std::optional<std::string> caption_original;
    std::optional<std::string> caption_edited;
    std::optional<std::filesystem::path> reference;
    std::optional<std::filesystem::path> cache_dir;
};

struct PipelineConfig {
    std::filesystem::path scene_path;
    std::filesystem::path output_dir = "gaussedit_out";
    std::uint64_t seed = 0;
    Aabb box;
    InitPolicy init;
    EditConfig edit;
    RefineConfig refine;
    PromptConfig prompts;
    GuidanceConfig guidance;
    CameraRing cameras;
    EvalConfig eval;
    PlyPrecision ply_precision = PlyPrecision::Float32;
    // The effective document after overrides; hashed into every manifest.
    nlohmann::json source;

    /// Checks every section plus the files that must exist now.
    void validate() const {
        require(!scene_path.empty(), ErrorKind::Validation, "config: scene_path is required");
        require(std::filesystem::exists(scene_path), ErrorKind::Validation,
                "config: scene_path " + scene_path.string() + " does not exist");
        require(!output_dir.empty(), ErrorKind::Validation, "config: output_dir is required");
        box.validate();
        init.validate();
        edit.validate();
        refine.validate();
        cameras.validate();
        prompts.build();
        if (auto t = guidance.mock_target())
            require(std::filesystem::exists(*t), ErrorKind::Validation,
                    "config: mock target " + t->string() + " does not exist");
        else
            require(guidance.is_mock() || guidance.endpoint.rfind("http://", 0) == 0, ErrorKind::Validation,
                    "config: guidance endpoint must be \"mock\", \"mock:<target.png>\", or an http:// URL");
        if (eval.reference)
            require(std::filesystem::exists(*eval.reference), ErrorKind::Validation,
                    "config: eval reference " + eval.reference->string() + " does not exist");
    }
};

namespace config_detail {

using nlohmann::json;

// Reads fields from one object and rejects keys nobody asked for.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        require(j_.is_object(), ErrorKind::Validation, "config: " + label() + " must be an object");
    }
    ~Section() noexcept(false) {
        if (std::uncaught_exceptions() > 0) return;
        for (auto it = j_.begin(); it != j_.end(); ++it)
            require(seen_.count(it.key()) > 0, ErrorKind::Validation,
                    "config: unknown key \"" + qualified(it.key()) + "\"");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }

    template <class T>
    void get(const std::string& key, T& out) {
        if (!has(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            fail(ErrorKind::Validation, "config: \"" + qualified(key) + "\" has the wrong type");
        }
    }

    template <class T>
    void get(const std::string& key, std::optional<T>& out) {
        if (!has(key)) return;
        T v{};
        get(key, v);
        out = std::move(v);
    }

    void get(const std::string& key, Vec3& out) {
        if (!has(key)) return;
        const json& v = j_.at(key);
        require(v.is_array() && v.size() == 3 && v[0].is_number() && v[1].is_number() && v[2].is_number(),
                ErrorKind::Validation, "config: \"" + qualified(key) + "\" must be an array of 3 numbers");
        out = Vec3(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
    }

    template <class E>
    void get_enum(const std::string& key, E& out, std::initializer_list<std::pair<const char*, E>> names) {
        if (!has(key)) return;
        std::string s;
        get(key, s);
        std::string allowed;
        for (const auto& [name, value] : names) {
            if (s == name) {
                out = value;
                return;
            }
            allowed += std::string(allowed.empty() ? "" : ", ") + name;
        }
        fail(ErrorKind::Validation, "config: \"" + qualified(key) + "\" must be one of " + allowed);
    }

    Section sub(const std::string& key) {
        seen_.insert(key);
        static const json kEmpty = json::object();
        return Section(j_.contains(key) ? j_.at(key) : kEmpty, qualified(key));
    }

    const json& raw(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

private:
    std::string label() const { return path_.empty() ? "document" : "\"" + path_ + "\""; }
    std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline void read_rates(Section s, LearningRates& lr) {
    s.get("mu", lr.mu);
    s.get("scale", lr.scale);
    s.get("rot", lr.rot);
    s.get("opacity", lr.opacity);
    s.get("sh0", lr.sh0);
}

inline void read_optimizer(Section& s, OptimizerKind& k) {
    s.get_enum("optimizer", k, {{"sgd", OptimizerKind::Sgd}, {"adam", OptimizerKind::Adam}});
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
    return p.empty() || p.is_absolute() ? p : base / p;
}

} // namespace config_detail

/// Binds a JSON document. Unknown keys and wrong types are validation
/// errors; missing keys keep their defaults. `base_dir` anchors relative paths.
inline PipelineConfig config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {}) {
    using namespace config_detail;
    PipelineConfig c;
    c.source = doc;
    Section root(doc, "");
    std::string path;
    if (root.has("scene_path")) {
        root.get("scene_path", path);
        c.scene_path = resolve(base_dir, path);
    }
    if (root.has("output_dir")) {
        root.get("output_dir", path);
        c.output_dir = resolve(base_dir, path);
    }
    root.get("seed", c.seed);
    // Per-stage seeds default to the global one.
    c.init.color_seed = c.edit.seed = c.refine.seed = c.seed;
    root.get_enum("ply_precision", c.ply_precision,
                  {{"float32", PlyPrecision::Float32}, {"float64", PlyPrecision::Float64}});
    {
        Section s = root.sub("box");
        s.get("min", c.box.min);
        s.get("max", c.box.max);
    }
    {
        Section s = root.sub("init");
        s.get("n_samples", c.init.n_samples);
        s.get_enum("scale_mode", c.init.scale_mode,
                   {{"unit", ScaleMode::UnitScale}, {"nearest_neighbor", ScaleMode::NearestNeighbor}});
        s.get("color_seed", c.init.color_seed);
        s.get("opacity_logit_init", c.init.opacity_logit_init);
        s.get("fps_start", c.init.fps_start);
        s.get("clamp_to_available", c.init.clamp_to_available);
    }
    {
        Section s = root.sub("edit");
        EditConfig& e = c.edit;
        s.get("p", e.p);
        s.get("iterations", e.iterations);
        read_rates(s.sub("lr"), e.lr);
        {
            Section t = s.sub("timestep");
            t.get("early_min", e.t_schedule.early_min);
            t.get("early_max", e.t_schedule.early_max);
            t.get("late_min", e.t_schedule.late_min);
            t.get("late_max", e.t_schedule.late_max);
            t.get("switch_at", e.t_schedule.switch_at);
        }
        s.get_enum("weighting", e.w_t,
                   {{"constant", TimestepWeighting::Constant1}, {"sigma", TimestepWeighting::SigmaWeighted}});
        s.get("w_scale", e.w_scale);
        s.get("cfg_scale", e.cfg_scale);
        s.get("seed", e.seed);
        {
            Section a = s.sub("alternation");
            a.get("single_view", e.alternation.single_view);
            a.get("multi_view", e.alternation.multi_view);
        }
        read_optimizer(s, e.optimizer);
        {
            Section o = s.sub("orbit");
            o.get("elevation_min", e.orbit.elevation_min_deg);
            o.get("elevation_max", e.orbit.elevation_max_deg);
            o.get("radius_min_factor", e.orbit.radius_min_factor);
            o.get("radius_max_factor", e.orbit.radius_max_factor);
            o.get("width", e.orbit.width);
            o.get("height", e.orbit.height);
            o.get("fov", e.orbit.fov_deg);
            o.get("up", e.orbit.up);
        }
        s.get("max_consecutive_failures", e.max_consecutive_failures);
        s.get("checkpoint_every", e.checkpoint_every);
    }
    {
        Section s = root.sub("refine");
        RefineConfig& r = c.refine;
        s.get("iterations", r.iterations);
        s.get("strength", r.strength_t);
        s.get("lambda", r.lambda);
        s.get("views_per_round", r.views_per_round);
        s.get("color_only", r.color_only);
        s.get("mse_steps", r.mse_steps);
        s.get("rec_steps", r.rec_steps);
        read_optimizer(s, r.optimizer);
        read_rates(s.sub("lr"), r.lr);
        s.get("seed", r.seed);
    }
    {
        Section s = root.sub("prompts");
        s.get("local", c.prompts.local);
        s.get("global", c.prompts.global);
        s.get("object", c.prompts.object_term);
        s.get("category", c.prompts.category_term);
        s.get("negative", c.prompts.negative);
    }
    {
        Section s = root.sub("guidance");
        s.get("endpoint", c.guidance.endpoint);
        {
            Section m = s.sub("mock");
            m.get("gain", c.guidance.mock.gain);
            m.get_enum("img2img", c.guidance.mock.img2img_mode,
                       {{"echo", MockImg2Img::Echo}, {"blend", MockImg2Img::BlendToTarget}});
            m.get("embedding_grid", c.guidance.mock.embedding_grid);
        }
        s.get("max_attempts", c.guidance.remote.max_attempts);
        double timeout = -1;
        s.get("read_timeout_s", timeout);
        if (timeout >= 0) c.guidance.remote.read_timeout = std::chrono::seconds(static_cast<long>(timeout));
    }
    {
        Section s = root.sub("cameras");
        CameraRing& r = c.cameras;
        s.get("count", r.count);
        s.get("elevation", r.elevation_deg);
        s.get("radius_factor", r.radius_factor);
        s.get("azimuth_offset", r.azimuth_offset_deg);
        s.get("width", r.width);
        s.get("height", r.height);
        s.get("fov", r.fov_deg);
        s.get("up", r.up);
        if (s.has("poses")) {
            const auto& poses = s.raw("poses");
            require(poses.is_array(), ErrorKind::Validation, "config: \"cameras.poses\" must be an array");
            for (const auto& p : poses) {
                require(p.is_array() && p.size() == 3 && p[0].is_number() && p[1].is_number() && p[2].is_number(),
                        ErrorKind::Validation, "config: each camera pose is [azimuth, elevation, radius]");
                r.poses.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
            }
        }
    }
    {
        Section s = root.sub("eval");
        s.get_enum("mode", c.eval.mode, {{"text", EvalMode::Text}, {"image", EvalMode::Image}});
        s.get("caption_original", c.eval.caption_original);
        s.get("caption_edited", c.eval.caption_edited);
        if (s.has("reference")) {
            s.get("reference", path);
            c.eval.reference = resolve(base_dir, path);
        }
        if (s.has("cache_dir")) {
            s.get("cache_dir", path);
            c.eval.cache_dir = resolve(base_dir, path);
        }
    }
    if (auto t = c.guidance.mock_target()) c.guidance.endpoint = "mock:" + resolve(base_dir, *t).string();
    return c;
}

/// Sets a dotted key ("edit.p", "box.min") to a value parsed as JSON, or as
/// a plain string when it does not parse.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    require(eq != std::string::npos && eq > 0, ErrorKind::Validation,
            "override \"" + assignment + "\" must look like key.path=value");
    const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    nlohmann::json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        require(!part.empty(), ErrorKind::Validation, "override key \"" + key + "\" has an empty component");
        if (!node->is_object()) *node = nlohmann::json::object();
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *node = std::move(value);
}

inline constexpr const char* kGuidanceEnv = "GAUSSEDIT_GUIDANCE";

/// Reads the file, applies the environment endpoint override and then the
/// explicit overrides, in that order.
inline PipelineConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides = {}) {
    std::ifstream in(file);
    require(in.good(), ErrorKind::Validation, "config: cannot read " + file.string());
    nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
    require(!doc.is_discarded(), ErrorKind::Validation, "config: " + file.string() + " is not valid JSON");
    if (const char* env = std::getenv(kGuidanceEnv); env && *env) apply_override(doc, std::string("guidance.endpoint=") + env);
    for (const std::string& o : overrides) apply_override(doc, o);
    const auto base = std::filesystem::absolute(file).parent_path();
    return config_from_json(doc, base);
}

} // namespace gaussedit
