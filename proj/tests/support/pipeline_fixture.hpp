#pragma once

// A scratch workspace with a small scene, a target image, and a config that
// keeps every stage fast.

#include "gaussedit/config.hpp"
#include "gaussedit/ply.hpp"
#include "support/oracles.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace gaussedit::oracle {

inline std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class PipelineWorkspace {
public:
    explicit PipelineWorkspace(const std::string& name, std::uint64_t seed = 1) {
        root_ = std::filesystem::temp_directory_path() / ("gaussedit_" + name);
        std::filesystem::remove_all(root_);
        std::filesystem::create_directories(root_);
        Rng rng(seed);
        save_ply(random_scene(rng, 120, 0, 1.0), root_ / "scene.ply", PlyPrecision::Float64);
        Image target(32, 32);
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) target.set(x, y, Vec3(x / 31.0, 0.2, y / 31.0));
        write_png(target, root_ / "target.png");
        config_ = {
            {"scene_path", "scene.ply"},
            {"output_dir", "out"},
            {"seed", 7},
            {"box", {{"min", {-0.5, -0.5, -0.5}}, {"max", {0.5, 0.5, 0.5}}}},
            {"init", {{"n_samples", 10}}},
            {"edit", {{"iterations", 12}, {"orbit", {{"width", 20}, {"height", 20}}}}},
            {"refine", {{"iterations", 2}, {"mse_steps", 2}, {"rec_steps", 2}, {"views_per_round", 2}}},
            {"prompts", {{"local", "a OBJECT"}, {"global", "a OBJECT on a table"}, {"object", "V* hat"}, {"category", "hat"}}},
            {"guidance", {{"endpoint", "mock:target.png"}, {"mock", {{"img2img", "blend"}}}}},
            {"cameras", {{"count", 3}, {"width", 20}, {"height", 20}}},
            {"eval", {{"mode", "text"}, {"caption_original", "a hat"}, {"caption_edited", "a red hat"}}},
        };
        write_config();
    }
    ~PipelineWorkspace() { std::filesystem::remove_all(root_); }

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path config_path() const { return root_ / "config.json"; }
    std::filesystem::path out() const { return root_ / "out"; }
    nlohmann::json& config() { return config_; }

    void write_config() const {
        std::ofstream(config_path(), std::ios::trunc) << config_.dump(2);
    }
    PipelineConfig load(const std::vector<std::string>& overrides = {}) const {
        return load_config(config_path(), overrides);
    }

private:
    std::filesystem::path root_;
    nlohmann::json config_;
};

} // namespace gaussedit::oracle
