#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "t2p/config.hpp"

namespace t2p::testing {

// 64x32 frames, 4x2 appearance grid, 2x1 pose grid; small enough for unit tests.
inline RunConfig tiny_config(const std::filesystem::path& out_dir) {
    RunConfig c;
    c.out_dir = out_dir.string();
    c.data.n_clips = 24;
    c.data.height = 64;
    c.data.width = 32;
    c.data.min_frames = 8;
    c.data.max_frames = 10;
    c.data.split = 0.75;
    c.vqvae.channels = {8, 8, 8, 8};
    c.vqvae.pose_down = 1;
    c.vqvae.d_a = 8;
    c.vqvae.d_p = 8;
    c.vqvae.k_a = 16;
    c.vqvae.k_p = 8;
    c.vqvae.steps = 6;
    c.vqvae.batch = 2;
    c.vqvae.log_every = 2;
    c.text.dim = 16;
    c.exemplar.d_model = 16;
    c.exemplar.layers = 1;
    c.exemplar.heads = 2;
    c.exemplar.steps = 6;
    c.exemplar.batch = 2;
    c.exemplar.log_every = 2;
    c.diffuser.d_model = 16;
    c.diffuser.layers = 1;
    c.diffuser.heads = 2;
    c.diffuser.steps = 6;
    c.diffuser.batch = 2;
    c.diffuser.log_every = 2;
    c.eval.n_generated = 4;
    c.eval.classifier_steps = 20;
    c.eval.nn_queries = 2;
    return c;
}

// Miniature geometry for finite-difference checks: 16x8 frames, two trunk
// downsamples (4x2 appearance grid) and one pose downsample (2x1 pose grid).
inline RunConfig gradcheck_config() {
    RunConfig c;
    c.data.height = 16;
    c.data.width = 8;
    c.vqvae.channels = {4, 4};
    c.vqvae.trunk_down = 2;
    c.vqvae.pose_down = 1;
    c.vqvae.d_a = 3;
    c.vqvae.d_p = 3;
    c.vqvae.k_a = 5;
    c.vqvae.k_p = 5;
    return c;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("t2p_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

struct GradCheck {
    double relative_error = 0;
    double analytic_norm = 0;
    int checked = 0;
};

// Norm-wise relative error between analytic gradients and central differences
// on up to `per_tensor` random entries of each tensor in `params`.
inline GradCheck gradient_check(const std::function<torch::Tensor()>& loss_fn, std::vector<torch::Tensor> params,
                                double h = 1e-5, int per_tensor = 12, std::uint64_t seed = 3) {
    for (auto& p : params) {
        if (p.grad().defined()) p.mutable_grad().zero_();
    }
    loss_fn().backward();
    std::mt19937_64 rng(seed);
    std::vector<double> analytic, numeric;
    for (auto& p : params) {
        auto grad = p.grad().reshape({-1});
        auto flat = p.detach().view({-1});
        std::vector<int64_t> picks(static_cast<std::size_t>(flat.numel()));
        std::iota(picks.begin(), picks.end(), 0);
        std::shuffle(picks.begin(), picks.end(), rng);
        picks.resize(std::min<std::size_t>(picks.size(), static_cast<std::size_t>(per_tensor)));
        for (auto i : picks) {
            const double orig = flat[i].item<double>();
            double plus, minus;
            {
                torch::NoGradGuard guard;
                flat[i] = orig + h;
                plus = loss_fn().item<double>();
                flat[i] = orig - h;
                minus = loss_fn().item<double>();
                flat[i] = orig;
            }
            analytic.push_back(grad[i].item<double>());
            numeric.push_back((plus - minus) / (2 * h));
        }
    }
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff += std::pow(analytic[i] - numeric[i], 2);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    GradCheck out;
    out.analytic_norm = std::sqrt(na);
    out.relative_error = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    out.checked = static_cast<int>(analytic.size());
    return out;
}

}  // namespace t2p::testing
