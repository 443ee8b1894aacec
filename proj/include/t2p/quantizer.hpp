#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <random>
#include <utility>

namespace t2p {

// Feature grids are channels-last: [..., d]. A single vector is [d].
struct QuantizeResult {
    torch::Tensor quantized;  // same shape as the input, rows copied from the codebook
    torch::Tensor indices;    // input shape without the trailing d, int64
};

struct VqLosses {
    torch::Tensor codebook_term;    // ||sg(f) - q||^2, gradient reaches the codebook only
    torch::Tensor commitment_term;  // ||sg(q) - f||^2, gradient reaches the encoder only
};

// Learnable K x d embedding table with per-entry usage statistics.
class CodebookImpl : public torch::nn::Module {
public:
    CodebookImpl(int64_t entries, int64_t dim);

    int64_t size() const { return entries_.size(0); }
    int64_t dim() const { return entries_.size(1); }
    const torch::Tensor& entries() const { return entries_; }
    const torch::Tensor& usage_count() const { return usage_count_; }

    // Closest entry to one vector; ties go to the lowest index.
    std::pair<torch::Tensor, int64_t> nearest(const torch::Tensor& vector);

    // Per-cell nearest entry. Every output cell is bit-identical to a codebook row.
    QuantizeResult quantize(const torch::Tensor& grid);

    // Index lookup without touching usage statistics.
    torch::Tensor lookup(const torch::Tensor& indices) const;

    // argmin_k ||v - c_k||^2 over flattened [N, d] rows; does not count usage.
    torch::Tensor nearest_indices(const torch::Tensor& rows) const;

    // Replaces entries left unused for `staleness_threshold` consecutive updates
    // with random rows of `donor` ([..., d]); resets usage counters. Returns the
    // number of rows replaced.
    int reinit_dead_entries(const torch::Tensor& donor, std::mt19937_64& rng, int staleness_threshold);

    // Sets every entry to a random row of `donor` (drawn with replacement).
    void init_from(const torch::Tensor& donor, std::mt19937_64& rng);

private:
    void check_dim(const torch::Tensor& t, const char* what) const;

    torch::Tensor entries_;
    torch::Tensor usage_count_;  // matches since the last reinit pass
    torch::Tensor idle_updates_;  // consecutive reinit passes with zero usage
};
TORCH_MODULE(Codebook);

VqLosses vq_losses(const torch::Tensor& grid, const torch::Tensor& quantized);

// Forward returns `quantized` exactly; backward hands the incoming gradient to
// `grid` unchanged and nothing to `quantized`.
torch::Tensor straight_through(const torch::Tensor& grid, const torch::Tensor& quantized);

}  // namespace t2p
