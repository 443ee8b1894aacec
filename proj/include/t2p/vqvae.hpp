#pragma once

#include <torch/torch.h>

#include <array>
#include <random>
#include <vector>

#include "t2p/config.hpp"
#include "t2p/dataset.hpp"
#include "t2p/quantizer.hpp"

namespace t2p {

// x + conv(silu(conv(silu(x))))
struct ResBlockImpl : torch::nn::Module {
    explicit ResBlockImpl(int64_t channels);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(ResBlock);

// Stride-2 4x4 conv followed by a residual block.
struct DownBlockImpl : torch::nn::Module {
    DownBlockImpl(int64_t in, int64_t out);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv{nullptr};
    ResBlock res{nullptr};
};
TORCH_MODULE(DownBlock);

// Nearest 2x upsample followed by a 3x3 conv and SiLU.
struct UpBlockImpl : torch::nn::Module {
    UpBlockImpl(int64_t in, int64_t out);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(UpBlock);

struct AugmentDraw {
    double brightness = 0.0;  // added in [0, 1] intensity units
    double contrast = 0.0;    // scale (1 + c) around the frame mean
    double saturation = 0.0;  // scale (1 + s) around per-pixel luma
    double blur_sigma = 0.0;  // 0 disables blur
};

AugmentDraw draw_augmentation(const AugmentConfig& policy, std::mt19937_64& rng);
// Photometric only: spatial layout is untouched.
Frame apply_augmentation(const Frame& frame, const AugmentDraw& draw, bool clip = true);
Frame augment_pose_input(const Frame& frame, const AugmentConfig& policy, std::mt19937_64& rng);

enum class QuantMode {
    kStraightThrough,  // training: decoder sees codebook values, encoder gets pass-through gradients
    kBypass,           // decoder sees raw encoder features (gradient checks)
};

struct VqvaeForward {
    torch::Tensor recon;                   // [B, 3, H, W]
    torch::Tensor f_a, q_a, idx_a;         // [B, h, w, d_a], indices [B, h, w]
    torch::Tensor f_p, q_p, idx_p;         // undefined in the unified ablation
};

struct VqvaeLoss {
    torch::Tensor total;
    // recon_l1, app_codebook, app_commit, pose_codebook, pose_commit
    std::array<torch::Tensor, 5> components;
};

// Two-branch encoder with a shared trunk, two codebooks and a decoder fed by
// [appearance, upsampled pose]. With `unified_space` there is a single branch
// and a single codebook.
class DecomposedVqvaeImpl : public torch::nn::Module {
public:
    DecomposedVqvaeImpl(const DataConfig& data, const VqvaeConfig& config);

    const GridGeometry& geometry() const { return geometry_; }
    bool unified() const { return unified_; }
    int64_t height() const { return height_; }
    int64_t width() const { return width_; }

    // Frames [B, 3, H, W] (or a single [3, H, W]) -> channels-last grids of
    // unit-length feature vectors.
    torch::Tensor encode_appearance(const torch::Tensor& frames);
    torch::Tensor encode_pose(const torch::Tensor& frames_aug);

    // Quantized grids -> frames on the [-1, 1] scale (unclamped). `pose` is ignored
    // when unified.
    torch::Tensor decode(const torch::Tensor& appearance, const torch::Tensor& pose);

    // I_0 for appearance, augmented I_k for pose; unified uses `pose_input` alone.
    VqvaeForward forward(const torch::Tensor& appearance_input, const torch::Tensor& pose_input,
                         QuantMode mode = QuantMode::kStraightThrough);

    Codebook appearance_codebook{nullptr};
    Codebook pose_codebook{nullptr};  // null when unified

    // Per-frame token space the motion samplers operate on: the pose grid, or
    // the single unified grid.
    Codebook& motion_codebook() { return unified_ ? appearance_codebook : pose_codebook; }
    int motion_h() const { return unified_ ? geometry_.app_h : geometry_.pose_h; }
    int motion_w() const { return unified_ ? geometry_.app_w : geometry_.pose_w; }
    int64_t motion_dim() const { return motion_codebook_dim_; }
    // Quantized motion tokens of clean frames: (grid [B, h, w, d], indices [B, h, w]).
    QuantizeResult encode_motion(const torch::Tensor& frames);
    // Frames from a fixed appearance grid and per-frame motion grids [B, h, w, d].
    torch::Tensor render(const torch::Tensor& appearance, const torch::Tensor& motion);

private:
    torch::Tensor trunk(const torch::Tensor& frames);
    void check_frames(const torch::Tensor& frames) const;

    GridGeometry geometry_;
    bool unified_;
    bool same_res_;
    int64_t height_, width_;
    int64_t motion_codebook_dim_;

    torch::nn::Sequential shared_trunk{nullptr};
    torch::nn::Sequential appearance_head{nullptr};
    torch::nn::Sequential pose_head{nullptr};
    torch::nn::Sequential pose_upsampler{nullptr};
    torch::nn::Sequential decoder{nullptr};
};
TORCH_MODULE(DecomposedVqvae);

// `beta` weighs both commitment terms.
VqvaeLoss vqvae_loss(const torch::Tensor& target, const torch::Tensor& recon, const torch::Tensor& f_a,
                     const torch::Tensor& q_a, const torch::Tensor& f_p, const torch::Tensor& q_p, double beta = 1.0);

struct VqvaeMetrics {
    int step = 0;
    double total = 0, recon_l1 = 0, app_codebook = 0, app_commit = 0, pose_codebook = 0, pose_commit = 0;
    int reinit_rows = 0;
};

// Same-clip frame pair: I_0 feeds the appearance branch, I_k the pose branch.
struct FramePair {
    Frame first;
    Frame target;
};

class VqvaeTrainer {
public:
    VqvaeTrainer(DecomposedVqvae model, const VqvaeConfig& config, const AugmentConfig& aug, std::uint64_t seed);

    // One Adam update. Throws NonFiniteLossError when the loss is NaN/Inf.
    VqvaeMetrics train_step(const std::vector<FramePair>& batch);

    torch::optim::Adam& optimizer() { return optimizer_; }
    std::mt19937_64& rng() { return rng_; }
    int steps_done() const { return step_; }

private:
    DecomposedVqvae model_;
    VqvaeConfig config_;
    AugmentConfig aug_;
    torch::optim::Adam optimizer_;
    std::mt19937_64 rng_;
    int step_ = 0;
};

}  // namespace t2p
