// Command-line front end for the three-stage text-to-video pipeline.
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "t2p/errors.hpp"
#include "t2p/image_io.hpp"
#include "t2p/pipeline.hpp"

extern char** environ;

namespace {

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
};

t2p::RunConfig resolve_config(const CommonOptions& opts) {
    auto config = opts.config_path.empty() ? t2p::RunConfig{} : t2p::RunConfig::load(opts.config_path);
    config.apply_env(environ);
    for (const auto& o : opts.overrides) config.set(o);
    if (opts.seed) config.seed = *opts.seed;
    if (opts.out_dir) config.out_dir = *opts.out_dir;
    config.validate();
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Text-driven human video generation (desk scale)"};
    app.require_subcommand(1);
    CommonOptions common;
    app.add_option("--config", common.config_path, "config file (section.key = value lines)");
    app.add_option("--set", common.overrides, "override, e.g. --set diffuser.steps=100")->take_all();
    app.add_option("--seed", common.seed, "run seed");
    app.add_option("--out-dir", common.out_dir, "run directory");

    auto* make_dataset = app.add_subcommand("make-dataset", "render the synthetic clip corpus");
    auto* train_vqvae = app.add_subcommand("train-vqvae", "train the decomposed VQ autoencoder");
    auto* train_exemplar = app.add_subcommand("train-exemplar", "train the text-to-exemplar sampler");
    auto* train_diffuser = app.add_subcommand("train-diffuser", "train the motion diffuser");

    auto* generate = app.add_subcommand("generate", "generate a video from text");
    std::string appearance_text;
    std::vector<std::string> motion_texts;
    std::string name = "sample";
    generate->add_option("--appearance-text", appearance_text, "appearance description")->required();
    generate->add_option("--motion-text", motion_texts, "motion description (repeat to chain)")
        ->required()
        ->allow_extra_args(false);
    generate->add_option("--name", name, "output folder name under <out-dir>/generate");
    std::uint64_t sample_seed = 0;
    generate->add_option("--sample-seed", sample_seed, "sampling seed (the run seed stays tied to the checkpoints)");

    auto* interpolate = app.add_subcommand("interpolate", "fill the motion between two frames");
    std::string first_path, last_path;
    int frames = 0;
    interpolate->add_option("--first", first_path, "first frame (PNG)")->required()->check(CLI::ExistingFile);
    interpolate->add_option("--last", last_path, "last frame (PNG)")->required()->check(CLI::ExistingFile);
    interpolate->add_option("--frames", frames, "number of frames (default diffuser.n_frames)");
    interpolate->add_option("--name", name, "output folder name under <out-dir>/interpolate");
    interpolate->add_option("--sample-seed", sample_seed, "sampling seed");

    auto* evaluate = app.add_subcommand("evaluate", "score the trained pipeline with the desk-scale proxies");

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? t2p::kExitOk : t2p::kExitConfig;
    }

    try {
        t2p::Pipeline pipeline(resolve_config(common), &std::cerr);
        const auto& config = pipeline.config();
        if (make_dataset->parsed()) {
            const auto manifest = pipeline.make_dataset();
            std::cout << "dataset: " << manifest.clips.size() << " clips in " << manifest.root.string() << "\n";
        } else if (train_vqvae->parsed()) {
            const auto summary = pipeline.train_vqvae();
            std::cout << "vqvae held-out reconstruction L1: " << summary.heldout_recon_l1 << "\n";
        } else if (train_exemplar->parsed()) {
            pipeline.train_exemplar();
            std::cout << "exemplar checkpoint: " << pipeline.checkpoint_path(t2p::kStageExemplar).string() << "\n";
        } else if (train_diffuser->parsed()) {
            pipeline.train_diffuser();
            std::cout << "diffuser checkpoint: " << pipeline.checkpoint_path(t2p::kStageDiffuser).string() << "\n";
        } else if (generate->parsed()) {
            const auto result = pipeline.generate_video(appearance_text, motion_texts, sample_seed);
            const auto dir = config.stage_dir("generate") / name;
            t2p::Pipeline::write_video(dir, result.frames);
            std::cout << result.frames.size(0) << " frames written to " << dir.string() << "\n";
        } else if (interpolate->parsed()) {
            const int n = frames > 0 ? frames : config.diffuser.n_frames;
            const auto video = pipeline.interpolate_frames(t2p::read_png(first_path), t2p::read_png(last_path), n,
                                                           sample_seed);
            const auto dir = config.stage_dir("interpolate") / name;
            t2p::Pipeline::write_video(dir, video);
            std::cout << video.size(0) << " frames written to " << dir.string() << "\n";
        } else if (evaluate->parsed()) {
            const auto report = pipeline.evaluate();
            std::cout << report.to_text().substr(0, report.to_text().find("\n\n")) << "\n";
        }
        return t2p::kExitOk;
    } catch (const t2p::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return t2p::kExitConfig;
    } catch (const t2p::StageOrderError& e) {
        std::cerr << "stage order error: " << e.what() << "\n";
        return t2p::kExitStageOrder;
    } catch (const t2p::NonFiniteLossError& e) {
        std::cerr << "non-finite loss: " << e.what() << "\n";
        return t2p::kExitNonFinite;
    } catch (const t2p::FormatError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return t2p::kExitIo;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return t2p::kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return t2p::kExitFailure;
    }
}
