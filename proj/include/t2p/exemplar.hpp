#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "t2p/config.hpp"
#include "t2p/text.hpp"
#include "t2p/transformer.hpp"

namespace t2p {

struct ExemplarSample {
    torch::Tensor appearance_indices;  // [app_h, app_w] int64
    torch::Tensor pose_indices;        // [pose_h, pose_w] int64; undefined in the unified ablation
};

// Cumulative number of committed positions after `round` of `steps`
// (cosine schedule, reaches `total` at round == steps).
int64_t committed_after_round(int64_t total, int round, int steps);

// Bidirectional transformer over [text ; appearance cells ; pose cells]
// predicting codebook indices at masked positions. Without a pose grid
// (unified ablation) the sequence is [text ; appearance cells].
class ExemplarSamplerImpl : public torch::nn::Module {
public:
    ExemplarSamplerImpl(int64_t vocab_size, const TextConfig& text, const ExemplarConfig& config,
                        const GridGeometry& geometry, int64_t k_a, int64_t k_p, bool with_pose);

    // text_ids [B, L]; app_tokens [B, Na] and pose_tokens [B, Np] hold indices
    // or the mask id (K). Returns logits {[B, Na, K_a], [B, Np, K_p]}.
    std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& text_ids, const torch::Tensor& app_tokens,
                                                    const torch::Tensor& pose_tokens);

    // Iterative decoding from all-masked grids. temperature 0 takes the argmax.
    // Throws std::logic_error on an untrained sampler.
    ExemplarSample sample(const Vocabulary& vocab, const std::string& appearance_text, std::uint64_t seed, int steps,
                          double temperature);

    int64_t app_cells() const { return n_app_; }
    int64_t pose_cells() const { return n_pose_; }
    int64_t k_a() const { return k_a_; }
    int64_t k_p() const { return k_p_; }
    bool with_pose() const { return with_pose_; }
    int64_t trained_steps() const { return trained_steps_.item<int64_t>(); }
    void add_trained_steps(int64_t n) { trained_steps_ += n; }

    TextEmbedder text_embedder{nullptr};

private:
    GridGeometry geometry_;
    int64_t k_a_, k_p_, n_app_, n_pose_, max_len_;
    bool with_pose_;

    torch::nn::Linear text_proj{nullptr};
    torch::nn::Embedding app_embed{nullptr}, pose_embed{nullptr}, segment{nullptr};
    torch::Tensor positions;
    TransformerStack stack{nullptr};
    torch::nn::Linear app_head{nullptr}, pose_head{nullptr};
    torch::Tensor trained_steps_;
};
TORCH_MODULE(ExemplarSampler);

struct ExemplarExample {
    std::string text;
    torch::Tensor appearance_indices;  // [app_h, app_w]
    torch::Tensor pose_indices;        // [pose_h, pose_w], ignored without pose
};

struct ExemplarMetrics {
    int step = 0;
    double loss = 0, app_ce = 0, pose_ce = 0;
    int64_t masked = 0;
};

struct ExemplarLoss {
    torch::Tensor total;  // CE summed over masked positions / max(1, masked)
    torch::Tensor app_ce, pose_ce;  // per-segment mean CE over masked positions (0 when none)
    int64_t masked = 0;
};

// Masked-index cross entropy. `masks` are bool [B, Na] and [B, Np].
ExemplarLoss exemplar_loss(ExemplarSampler& model, const torch::Tensor& text_ids, const torch::Tensor& app_idx,
                           const torch::Tensor& pose_idx, const torch::Tensor& app_mask, const torch::Tensor& pose_mask);

class ExemplarTrainer {
public:
    ExemplarTrainer(ExemplarSampler model, Vocabulary vocab, const ExemplarConfig& config, std::uint64_t seed);

    // Each sample gets a masked fraction cos(pi/2 * u), u ~ U(0, 1).
    ExemplarMetrics train_step(const std::vector<ExemplarExample>& batch);

    torch::optim::Adam& optimizer() { return optimizer_; }
    std::mt19937_64& rng() { return rng_; }

private:
    ExemplarSampler model_;
    Vocabulary vocab_;
    ExemplarConfig config_;
    torch::optim::Adam optimizer_;
    std::mt19937_64 rng_;
    int step_ = 0;
};

// Draws a random subset of `count` positions out of `total` as a bool mask.
torch::Tensor random_position_mask(int64_t total, int64_t count, std::mt19937_64& rng);

}  // namespace t2p
