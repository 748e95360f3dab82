// gaussedit {init|edit|refine|eval|render} --config <file> [overrides]

#include "gaussedit/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

using namespace gaussedit;

namespace {

struct Overrides {
    std::string config;
    std::vector<std::string> set;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
    std::optional<std::string> scene;
    std::optional<std::string> guidance;
    std::optional<std::string> box_min;
    std::optional<std::string> box_max;
    std::optional<std::uint64_t> iterations;
    std::string stage;

    // Named flags become dotted assignments applied after --set.
    std::vector<std::string> assignments(const std::string& command) const {
        std::vector<std::string> out = set;
        auto vec = [](const std::string& csv) {
            std::string s = csv;
            for (char& c : s)
                if (c == ';') c = ',';
            return "[" + s + "]";
        };
        if (seed) out.push_back("seed=" + std::to_string(*seed));
        if (output_dir) out.push_back("output_dir=" + nlohmann::json(*output_dir).dump());
        if (scene) out.push_back("scene_path=" + nlohmann::json(*scene).dump());
        if (guidance) out.push_back("guidance.endpoint=" + nlohmann::json(*guidance).dump());
        if (box_min) out.push_back("box.min=" + vec(*box_min));
        if (box_max) out.push_back("box.max=" + vec(*box_max));
        if (iterations) out.push_back(command + ".iterations=" + std::to_string(*iterations));
        return out;
    }
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("-c,--config", o.config, "Pipeline configuration (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--set", o.set, "Override a config value, e.g. --set edit.p=0.3");
    cmd->add_option("--seed", o.seed, "Global seed");
    cmd->add_option("--output-dir", o.output_dir, "Output directory");
    cmd->add_option("--scene", o.scene, "Input scene PLY");
    cmd->add_option("--guidance", o.guidance, "Guidance endpoint: mock, mock:<target.png>, or http://host:port");
    cmd->add_option("--box-min", o.box_min, "ROI minimum corner x,y,z");
    cmd->add_option("--box-max", o.box_max, "ROI maximum corner x,y,z");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Text-guided editing of 3D Gaussian scenes"};
    app.require_subcommand(1);
    Overrides o;
    auto* init = app.add_subcommand("init", "Replace the Gaussians inside the box with fresh editable ones");
    auto* edit = app.add_subcommand("edit", "Score-distillation editing of the editable Gaussians");
    auto* refine = app.add_subcommand("refine", "Texture refinement against denoised renders");
    auto* eval = app.add_subcommand("eval", "CLIP directional or DINO similarity of the edit");
    auto* rend = app.add_subcommand("render", "Render a stage's scene from the configured cameras");
    for (auto* cmd : {init, edit, refine, eval, rend}) add_common(cmd, o);
    edit->add_option("--iterations", o.iterations, "Distillation steps");
    refine->add_option("--iterations", o.iterations, "Refinement rounds");
    rend->add_option("--stage", o.stage, "original, init, edit, or refine (default: newest)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ExitCode::Validation);
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        const PipelineConfig cfg = load_config(o.config, o.assignments(command));
        if (command == "init") cmd_init(cfg, std::cout);
        else if (command == "edit") cmd_edit(cfg, std::cout);
        else if (command == "refine") cmd_refine(cfg, std::cout);
        else if (command == "eval") cmd_eval(cfg, std::cout);
        else cmd_render(cfg, o.stage, std::cout);
    } catch (const Error& e) {
        std::cerr << "gaussedit " << command << ": " << to_string(e.kind()) << " error: " << e.what() << "\n";
        return static_cast<int>(e.exit_code());
    } catch (const std::exception& e) {
        std::cerr << "gaussedit " << command << ": " << e.what() << "\n";
        return static_cast<int>(ExitCode::Validation);
    }
    return 0;
}
