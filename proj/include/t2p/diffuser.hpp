#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "t2p/config.hpp"
#include "t2p/masking.hpp"
#include "t2p/quantizer.hpp"
#include "t2p/text.hpp"
#include "t2p/transformer.hpp"
#include "t2p/vqvae.hpp"

namespace t2p {

// Mean over three pool levels (1x, 1/2, 1/4) of the mean absolute difference.
// Accepts any [..., H, W] pair of equal shape.
torch::Tensor perceptual_proxy(const torch::Tensor& a, const torch::Tensor& b);

struct DiffuserLoss {
    torch::Tensor total;
    // emb_l1, codebook, commit, pixel_l1, perceptual, ce
    std::array<torch::Tensor, 6> components;
};

inline constexpr std::array<const char*, 6> kDiffuserLossNames{"emb_l1", "codebook", "commit",
                                                               "pixel_l1", "perceptual", "ce"};

// Continuous-head objective restricted to masked cells.
//   predicted, retrieved, truth: [B, n, h, w, d]; mask: bool [B, n, h*w];
//   codebook_values: the nearest codebook rows of `predicted` (no gradient path);
//   decoded, target: [B, r, 3, H, W] or undefined to skip the reconstruction terms.
// Embedding L1 is summed over d and averaged over masked cells; the squared
// terms likewise. `retrieved` only feeds `decoded` upstream and is kept for the
// shape contract.
DiffuserLoss diffuser_loss(const torch::Tensor& predicted, const torch::Tensor& codebook_values,
                           const torch::Tensor& truth, const torch::Tensor& mask, const torch::Tensor& decoded,
                           const torch::Tensor& target);

// Per-step observer during sampling: (step index, committed sequence [n,h,w,d], mask).
using SampleTrace = std::function<void(std::size_t, const torch::Tensor&, const MaskState&)>;

// Non-causal transformer over [text ; exemplar cells ; n x cells pose cells]
// predicting a continuous pose embedding per cell (or K logits with the
// discrete head).
class MotionDiffuserImpl : public torch::nn::Module {
public:
    MotionDiffuserImpl(int64_t vocab_size, const TextConfig& text, const DiffuserConfig& config, int grid_h,
                       int grid_w, int64_t dim, int64_t codebook_size);

    // text_ids [B, L]; exemplar [B, h, w, d]; masked_seq [B, n, h, w, d], n <= n_frames.
    // Returns [B, n, h, w, d] (continuous) or [B, n, h, w, K] logits (discrete).
    torch::Tensor forward(const torch::Tensor& text_ids, const torch::Tensor& exemplar,
                          const torch::Tensor& masked_seq);

    // Replaces masked cells by the learned mask vector. mask: bool [B, n, cells] or [n, cells].
    torch::Tensor mask_sequence(const torch::Tensor& seq, const torch::Tensor& mask) const;

    // The frozen motion codebook used for retrieval; not registered as a parameter.
    void attach_codebook(Codebook codebook);
    bool has_codebook() const { return static_cast<bool>(codebook_); }
    Codebook& codebook();

    // Cell-wise nearest codebook rows; forward values exact, gradients straight-through.
    torch::Tensor retrieve(const torch::Tensor& predicted);

    // Fully masked start, one schedule step at a time. exemplar [h, w, d].
    // Returns [n, h, w, d].
    torch::Tensor sample(const Vocabulary& vocab, const std::string& motion_text, const torch::Tensor& exemplar,
                         const DiffusionSchedule& schedule, std::uint64_t seed, const SampleTrace& trace = {});

    // Frames 0 and n-1 fixed to `first`/`last` ([h, w, d]) and never re-predicted.
    torch::Tensor interpolate(const Vocabulary& vocab, const torch::Tensor& first, const torch::Tensor& last, int n,
                              std::uint64_t seed, const SampleTrace& trace = {});

    // Runs `schedule` from an arbitrary partially committed state.
    torch::Tensor run_schedule(const torch::Tensor& text_ids, const torch::Tensor& exemplar, torch::Tensor seq,
                               MaskState mask, const DiffusionSchedule& schedule, std::uint64_t seed,
                               const SampleTrace& trace);

    bool discrete() const { return discrete_; }
    bool no_codebook() const { return no_codebook_; }
    int n_frames() const { return n_frames_; }
    int grid_h() const { return grid_h_; }
    int grid_w() const { return grid_w_; }
    int cells() const { return grid_h_ * grid_w_; }
    int64_t dim() const { return dim_; }
    int64_t text_len() const { return max_len_; }
    int64_t trained_steps() const { return trained_steps_.item<int64_t>(); }
    void add_trained_steps(int64_t n) { trained_steps_ += n; }

    TextEmbedder text_embedder{nullptr};
    torch::Tensor mask_vector;

private:
    void check_trained() const;

    int n_frames_, grid_h_, grid_w_;
    int64_t dim_, codebook_size_, max_len_;
    bool discrete_, no_codebook_;
    double temperature_;

    torch::nn::Linear text_proj{nullptr}, pose_in{nullptr}, head{nullptr};
    torch::nn::Embedding segment{nullptr};
    torch::Tensor text_pos, exemplar_pos, frame_pos, cell_pos;
    TransformerStack stack{nullptr};
    torch::Tensor trained_steps_;
    Codebook codebook_{nullptr};
};
TORCH_MODULE(MotionDiffuser);

// Everything the diffuser needs from one encoded dataset clip.
struct DiffuserClip {
    std::string motion_text;
    torch::Tensor appearance;      // [app_h, app_w, d_a] quantized grid of frame 0 (unused when unified)
    torch::Tensor poses;           // [T, h, w, d] quantized motion grids of every original frame
    torch::Tensor frames;          // [T, 3, H, W]
    std::vector<int> normalized;   // frame indices of the n-frame normalized clip
};

struct DiffuserExample {
    std::string text;
    torch::Tensor exemplar;    // [h, w, d]
    torch::Tensor poses;       // [n, h, w, d]
    torch::Tensor appearance;  // [app_h, app_w, d_a]
    torch::Tensor frames;      // [n, 3, H, W]
    MaskState mask;
};

// Draws the training mode, picks the normalized clip (generation) or a random
// window of the original clip with the "empty" text (interpolation), and
// samples the matching mask.
DiffuserExample make_diffuser_example(const DiffuserClip& clip, const DiffuserConfig& config, std::mt19937_64& rng);

struct DiffuserMetrics {
    int step = 0;
    double total = 0;
    std::array<double, 6> components{};
    int interpolation = 0;  // examples drawn in interpolation mode
};

class DiffuserTrainer {
public:
    // `vqvae` stays frozen; its decoder renders the reconstruction frames.
    DiffuserTrainer(MotionDiffuser model, DecomposedVqvae vqvae, Vocabulary vocab, const DiffuserConfig& config,
                    std::uint64_t seed);

    DiffuserMetrics train_step(const std::vector<DiffuserExample>& batch);
    // Convenience: draws `config.batch` clips uniformly and builds examples.
    DiffuserMetrics train_step(const std::vector<DiffuserClip>& clips);

    torch::optim::Adam& optimizer() { return optimizer_; }
    std::mt19937_64& rng() { return rng_; }

private:
    MotionDiffuser model_;
    DecomposedVqvae vqvae_;
    Vocabulary vocab_;
    DiffuserConfig config_;
    torch::optim::Adam optimizer_;
    std::mt19937_64 rng_;
    int step_ = 0;
};

}  // namespace t2p
