#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace t2p {

struct DataConfig {
    std::string dir;  // empty: <run.out_dir>/dataset
    int n_clips = 200;
    int height = 128;
    int width = 64;
    std::vector<std::string> motion_classes{"stand", "move_right", "move_left", "turn_around"};
    int min_frames = 8;
    int max_frames = 16;
    double split = 0.9;
    std::uint64_t seed = 1;
};

struct VqvaeConfig {
    std::vector<int> channels{32, 48, 64, 64};  // one entry per trunk downsample
    int trunk_down = 4;                         // frame -> H/16
    int pose_down = 2;                          // H/16 -> H/64
    int d_a = 64;
    int d_p = 64;
    int k_a = 256;
    int k_p = 128;
    bool unified_space = false;
    bool same_res = false;
    int steps = 10000;
    int batch = 8;
    double lr = 1e-3;
    double beta = 0.25;          // commitment weight
    int reinit_threshold = 200;  // 0 disables dead-entry reinit
    int log_every = 50;
};

struct AugmentConfig {
    double brightness = 0.4;
    double contrast = 0.4;
    double saturation = 0.4;
    double blur_min = 0.1;
    double blur_max = 2.0;
};

struct TextConfig {
    int max_len = 16;
    int dim = 64;
    bool attention_block = true;
};

struct ExemplarConfig {
    int d_model = 128;
    int layers = 4;
    int heads = 4;
    int steps = 3000;
    int batch = 8;
    double lr = 3e-4;
    int sample_steps = 8;
    double temperature = 1.0;
    int log_every = 50;
};

struct DiffuserConfig {
    int d_model = 128;
    int layers = 4;
    int heads = 4;
    int steps = 5000;
    int batch = 8;
    double lr = 3e-4;
    int n_frames = 8;
    double p_mask_all = 0.375;
    double p_interp = 0.2;
    int end_steps = 6;
    int rec_frames = 2;
    bool discrete_head = false;
    bool no_codebook = false;
    double temperature = 1.0;
    int log_every = 50;
};

struct EvalConfig {
    int n_generated = 64;
    int classifier_steps = 1500;
    double gate = 0.95;
    int nn_queries = 16;
    std::uint64_t seed = 7;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string out_dir = "runs/desk";

    DataConfig data;
    VqvaeConfig vqvae;
    AugmentConfig aug;
    TextConfig text;
    ExemplarConfig exemplar;
    DiffuserConfig diffuser;
    EvalConfig eval;

    // Parses flat `section.key = value` lines; '#' starts a comment.
    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::filesystem::path& path);

    // Applies one override. Throws ConfigError on unknown keys or bad values.
    void set(const std::string& key, const std::string& value);
    void set(const std::string& assignment);  // "key=value"

    // Applies T2P_<SECTION>__<KEY>=value environment overrides.
    void apply_env(const char* const* environ_vars);

    std::string get(const std::string& key) const;
    std::vector<std::string> keys() const;

    // Canonical key=value dump, stable ordering; parse(echo()) == *this.
    std::string echo() const;

    void validate() const;

    std::filesystem::path dataset_dir() const;
    std::filesystem::path stage_dir(const std::string& stage) const;

    friend bool operator==(const RunConfig& a, const RunConfig& b) { return a.echo() == b.echo(); }
};

// Spatial sizes implied by the VQ-VAE layout.
struct GridGeometry {
    int app_h, app_w;    // appearance grid (H/16 x W/16)
    int pose_h, pose_w;  // pose grid (H/64 x W/64, or appearance size with same_res)

    int app_cells() const { return app_h * app_w; }
    int pose_cells() const { return pose_h * pose_w; }
};

GridGeometry grid_geometry(const DataConfig& data, const VqvaeConfig& vq);

}  // namespace t2p
