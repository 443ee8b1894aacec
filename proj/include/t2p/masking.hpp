#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <random>
#include <vector>

#include "t2p/config.hpp"

namespace t2p {

enum class MaskMode { kGeneration, kInterpolation };

// n frames x `cells` spatial cells, row-major by frame; true = masked.
struct MaskState {
    int n = 0;
    int cells = 0;
    std::vector<std::uint8_t> mask;
    MaskMode mode = MaskMode::kGeneration;

    static MaskState filled(int n, int cells, bool value, MaskMode mode);

    bool at(int frame, int cell) const { return mask[static_cast<std::size_t>(frame * cells + cell)] != 0; }
    void set(int frame, int cell, bool value) { mask[static_cast<std::size_t>(frame * cells + cell)] = value; }
    void set_frame(int frame, bool value);
    bool frame_any(int frame) const;
    bool frame_all(int frame) const;
    bool all() const;
    bool none() const;
    int count() const;
    // Bool tensor [n, cells].
    torch::Tensor to_tensor() const;
};

MaskMode choose_training_mode(std::mt19937_64& rng, const DiffuserConfig& config);

// Generation-mode training mask. With probability p_mask_all every cell is
// masked. Otherwise each intermediate frame is fully masked with a per-draw
// rate u ~ U(0, 1) (at least one when n > 2), and one end frame chosen
// uniformly is partially masked (1/2), fully masked (1/4) or left alone (1/4);
// the other end stays visible. Both ends masked always collapses to all-masked.
MaskState sample_training_mask(int n, int cells, std::mt19937_64& rng, const DiffuserConfig& config);

// Interpolation-mode mask: ends visible, every intermediate frame masked.
MaskState interpolation_mask(int n, int cells);

struct ScheduleStep {
    int frame;
    std::vector<int> cells;
};

struct DiffusionSchedule {
    int n = 0;
    int cells = 0;
    std::vector<ScheduleStep> steps;

    // True iff the steps cover exactly the masked cells of `initial`, each once.
    bool partitions(const MaskState& initial) const;
};

// Intermediate frames of [0, n-1] in breadth-first midpoint order.
std::vector<int> midpoint_order(int n);

// Frame 0 over `end_steps` chunks of a seed-fixed cell permutation, then frame
// n-1 likewise, then intermediate frames one whole frame per step. Empty
// chunks (cells < end_steps) are skipped.
DiffusionSchedule build_sampling_schedule(int n, int cells, int end_steps, std::uint64_t seed);

// Intermediate frames only, for fixed-endpoint interpolation.
DiffusionSchedule build_interpolation_schedule(int n, int cells);

// seq [..., n, cells, d] (leading batch dims allowed), mask bool [n, cells] or
// broadcastable, mask_vector [d]. Masked cells become mask_vector.
torch::Tensor apply_mask(const torch::Tensor& seq, const torch::Tensor& mask, const torch::Tensor& mask_vector);

}  // namespace t2p
