#include "t2p/masking.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <stdexcept>
#include <string>

namespace t2p {

MaskState MaskState::filled(int n, int cells, bool value, MaskMode mode) {
    if (n < 2 || cells < 1) throw std::invalid_argument("mask needs n >= 2 and cells >= 1");
    MaskState m;
    m.n = n;
    m.cells = cells;
    m.mask.assign(static_cast<std::size_t>(n * cells), value ? 1 : 0);
    m.mode = mode;
    return m;
}

void MaskState::set_frame(int frame, bool value) {
    for (int c = 0; c < cells; ++c) set(frame, c, value);
}

bool MaskState::frame_any(int frame) const {
    for (int c = 0; c < cells; ++c) {
        if (at(frame, c)) return true;
    }
    return false;
}

bool MaskState::frame_all(int frame) const {
    for (int c = 0; c < cells; ++c) {
        if (!at(frame, c)) return false;
    }
    return true;
}

bool MaskState::all() const {
    return std::all_of(mask.begin(), mask.end(), [](auto v) { return v != 0; });
}

bool MaskState::none() const {
    return std::none_of(mask.begin(), mask.end(), [](auto v) { return v != 0; });
}

int MaskState::count() const {
    return static_cast<int>(std::count_if(mask.begin(), mask.end(), [](auto v) { return v != 0; }));
}

torch::Tensor MaskState::to_tensor() const {
    auto t = torch::empty({n, cells}, torch::kBool);
    auto* p = t.data_ptr<bool>();
    for (std::size_t i = 0; i < mask.size(); ++i) p[i] = mask[i] != 0;
    return t;
}

MaskMode choose_training_mode(std::mt19937_64& rng, const DiffuserConfig& config) {
    std::bernoulli_distribution interp(config.p_interp);
    return interp(rng) ? MaskMode::kInterpolation : MaskMode::kGeneration;
}

MaskState sample_training_mask(int n, int cells, std::mt19937_64& rng, const DiffuserConfig& config) {
    auto m = MaskState::filled(n, cells, false, MaskMode::kGeneration);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (unit(rng) < config.p_mask_all) {
        std::fill(m.mask.begin(), m.mask.end(), 1);
        return m;
    }

    if (n > 2) {
        const double rate = unit(rng);
        bool any = false;
        for (int f = 1; f < n - 1; ++f) {
            if (unit(rng) < rate) {
                m.set_frame(f, true);
                any = true;
            }
        }
        if (!any) m.set_frame(std::uniform_int_distribution<int>(1, n - 2)(rng), true);
    }

    const int end = std::uniform_int_distribution<int>(0, 1)(rng) == 0 ? 0 : n - 1;
    const double kind = unit(rng);
    if (kind < 0.5 && cells > 1) {
        const int sixths = std::uniform_int_distribution<int>(1, 5)(rng);
        const int k = std::clamp(static_cast<int>(std::lround(cells * sixths / 6.0)), 1, cells - 1);
        std::vector<int> order(static_cast<std::size_t>(cells));
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        for (int i = 0; i < k; ++i) m.set(end, order[static_cast<std::size_t>(i)], true);
    } else if (kind < 0.75) {
        m.set_frame(end, true);
    }

    if (m.frame_any(0) && m.frame_any(n - 1)) std::fill(m.mask.begin(), m.mask.end(), 1);
    return m;
}

MaskState interpolation_mask(int n, int cells) {
    auto m = MaskState::filled(n, cells, true, MaskMode::kInterpolation);
    m.set_frame(0, false);
    m.set_frame(n - 1, false);
    return m;
}

bool DiffusionSchedule::partitions(const MaskState& initial) const {
    if (initial.n != n || initial.cells != cells) return false;
    std::vector<int> hits(static_cast<std::size_t>(n * cells), 0);
    for (const auto& step : steps) {
        if (step.frame < 0 || step.frame >= n || step.cells.empty()) return false;
        for (int c : step.cells) {
            if (c < 0 || c >= cells) return false;
            ++hits[static_cast<std::size_t>(step.frame * cells + c)];
        }
    }
    for (std::size_t i = 0; i < hits.size(); ++i) {
        if (hits[i] != (initial.mask[i] ? 1 : 0)) return false;
    }
    return true;
}

std::vector<int> midpoint_order(int n) {
    std::vector<int> order;
    std::deque<std::pair<int, int>> queue{{0, n - 1}};
    while (!queue.empty()) {
        auto [lo, hi] = queue.front();
        queue.pop_front();
        if (hi - lo < 2) continue;
        const int mid = (lo + hi) / 2;
        order.push_back(mid);
        queue.emplace_back(lo, mid);
        queue.emplace_back(mid, hi);
    }
    return order;
}

namespace {

void append_end_frame(DiffusionSchedule& s, int frame, int end_steps, std::mt19937_64& rng) {
    std::vector<int> perm(static_cast<std::size_t>(s.cells));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int i = 0; i < end_steps; ++i) {
        const int lo = i * s.cells / end_steps;
        const int hi = (i + 1) * s.cells / end_steps;
        if (hi == lo) continue;
        s.steps.push_back({frame, std::vector<int>(perm.begin() + lo, perm.begin() + hi)});
    }
}

std::vector<int> all_cells(int cells) {
    std::vector<int> v(static_cast<std::size_t>(cells));
    std::iota(v.begin(), v.end(), 0);
    return v;
}

}  // namespace

DiffusionSchedule build_sampling_schedule(int n, int cells, int end_steps, std::uint64_t seed) {
    if (n < 2 || cells < 1 || end_steps < 1) {
        throw std::invalid_argument("schedule needs n >= 2, cells >= 1, end_steps >= 1 (got n=" + std::to_string(n) +
                                    ", cells=" + std::to_string(cells) + ", end_steps=" + std::to_string(end_steps) +
                                    ")");
    }
    DiffusionSchedule s{n, cells, {}};
    std::mt19937_64 rng(seed);
    append_end_frame(s, 0, end_steps, rng);
    append_end_frame(s, n - 1, end_steps, rng);
    for (int f : midpoint_order(n)) s.steps.push_back({f, all_cells(cells)});
    return s;
}

DiffusionSchedule build_interpolation_schedule(int n, int cells) {
    if (n < 2 || cells < 1) throw std::invalid_argument("schedule needs n >= 2 and cells >= 1");
    DiffusionSchedule s{n, cells, {}};
    for (int f : midpoint_order(n)) s.steps.push_back({f, all_cells(cells)});
    return s;
}

torch::Tensor apply_mask(const torch::Tensor& seq, const torch::Tensor& mask, const torch::Tensor& mask_vector) {
    if (seq.dim() < 3 || mask_vector.dim() != 1 || seq.size(-1) != mask_vector.size(0)) {
        throw std::invalid_argument("apply_mask: expected seq [..., n, cells, d] and mask_vector [d], got " +
                                    c10::str(seq.sizes()) + " and " + c10::str(mask_vector.sizes()));
    }
    if (mask.dim() < 2 || mask.size(-1) != seq.size(-2) || mask.size(-2) != seq.size(-3)) {
        throw std::invalid_argument("apply_mask: mask " + c10::str(mask.sizes()) + " does not match seq " +
                                    c10::str(seq.sizes()));
    }
    return torch::where(mask.to(torch::kBool).unsqueeze(-1), mask_vector.to(seq.dtype()), seq);
}

}  // namespace t2p
