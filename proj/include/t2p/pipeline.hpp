#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "t2p/checkpoint.hpp"
#include "t2p/config.hpp"
#include "t2p/dataset.hpp"
#include "t2p/diffuser.hpp"
#include "t2p/evaluation.hpp"
#include "t2p/exemplar.hpp"
#include "t2p/text.hpp"
#include "t2p/vqvae.hpp"

namespace t2p {

inline constexpr const char* kStageVqvae = "vqvae";
inline constexpr const char* kStageExemplar = "exemplar";
inline constexpr const char* kStageDiffuser = "diffuser";

// The config lines a stage's checkpoint depends on (its own section plus
// every upstream section and the seed).
std::string stage_echo(const RunConfig& config, const std::string& stage);

// Short name of the ablation a config describes ("full", "unified_space", ...).
std::string variant_name(const RunConfig& config);

// Tab-separated metric log; rows are averages over each logging interval.
class MetricsLog {
public:
    MetricsLog(const std::filesystem::path& path, std::vector<std::string> columns);
    void add(const std::vector<double>& values);  // one training step
    void flush_row(int step);                      // writes the running average, if any
private:
    std::filesystem::path path_;
    std::vector<std::string> columns_;
    std::vector<double> sums_;
    int count_ = 0;
};

// Reads one numeric column of a metrics.tsv.
std::vector<double> read_metric_column(const std::filesystem::path& path, const std::string& column);

struct GenerationResult {
    torch::Tensor frames;      // [N, 3, H, W]
    torch::Tensor poses;       // [N, h, w, d] motion grids
    torch::Tensor appearance;  // [app_h, app_w, d_a]; undefined for the unified ablation
    ExemplarSample exemplar;
    // data_ptr of the appearance tensor handed to every decode call.
    std::vector<const void*> appearance_ptrs;
    bool single_appearance() const;
};

struct VqvaeStageSummary {
    double heldout_recon_l1 = 0;
};

class Pipeline {
public:
    explicit Pipeline(RunConfig config, std::ostream* log = nullptr);

    const RunConfig& config() const { return config_; }
    const Vocabulary& vocabulary() const { return vocab_; }

    DatasetManifest make_dataset();
    // True when the dataset directory holds a manifest generated from this config.
    bool dataset_current() const;
    DatasetManifest require_dataset() const;

    VqvaeStageSummary train_vqvae();
    void train_exemplar();
    void train_diffuser();

    std::filesystem::path checkpoint_path(const std::string& stage) const;
    // Checkpoint exists and was written under an identical stage echo.
    bool stage_current(const std::string& stage) const;

    // Lazily loaded, frozen models. Throw StageOrderError when a checkpoint is missing.
    DecomposedVqvae& vqvae();
    ExemplarSampler& exemplar();
    MotionDiffuser& diffuser();

    double heldout_recon_l1();

    GenerationResult generate_video(const std::string& appearance_text, const std::vector<std::string>& motion_texts,
                                    std::uint64_t seed);
    // Encodes both frames, keeps their pose grids at the ends and decodes
    // with the first frame's appearance. Returns [n, 3, H, W].
    torch::Tensor interpolate_frames(const torch::Tensor& first, const torch::Tensor& last, int n, std::uint64_t seed);

    MetricReport evaluate();

    // Writes frame_XXX.png, animation.gif and strip.png into `dir`.
    static void write_video(const std::filesystem::path& dir, const torch::Tensor& frames);

private:
    void say(const std::string& line) const;
    CheckpointBundle require_checkpoint(const std::string& stage, const std::string& needed_by) const;
    torch::Tensor indices_of(Codebook& codebook, const torch::Tensor& grid) const;

    RunConfig config_;
    std::ostream* log_;
    Vocabulary vocab_;
    DecomposedVqvae vqvae_{nullptr};
    ExemplarSampler exemplar_{nullptr};
    MotionDiffuser diffuser_{nullptr};
};

}  // namespace t2p
