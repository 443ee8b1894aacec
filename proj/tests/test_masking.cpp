#include <cmath>
#include <random>
#include <set>

#include "t2p/masking.hpp"

#include <doctest.h>

using namespace t2p;

namespace {

// Binomial 3-sigma band around p for `trials` draws.
bool within_three_sigma(int hits, int trials, double p) {
    const double sigma = std::sqrt(p * (1 - p) / trials);
    return std::abs(static_cast<double>(hits) / trials - p) <= 3 * sigma;
}

}  // namespace

TEST_CASE("mask-all frequency matches p_mask_all and both-ends rule holds on every draw") {
    DiffuserConfig cfg;
    std::mt19937_64 rng(11);
    constexpr int kDraws = 100000;
    int all = 0;
    for (int i = 0; i < kDraws; ++i) {
        const int n = 2 + static_cast<int>(i % 15);
        const int cells = 1 + static_cast<int>(i % 8);
        const auto m = sample_training_mask(n, cells, rng, cfg);
        if (m.frame_any(0) && m.frame_any(n - 1)) REQUIRE(m.all());
        if (m.all()) ++all;
    }
    CHECK(cfg.p_mask_all == doctest::Approx(0.375));
    CHECK(within_three_sigma(all, kDraws, cfg.p_mask_all));
}

TEST_CASE("interpolation mode frequency matches p_interp") {
    DiffuserConfig cfg;
    CHECK(cfg.p_interp == doctest::Approx(0.2));
    std::mt19937_64 rng(12);
    constexpr int kDraws = 100000;
    int interp = 0;
    for (int i = 0; i < kDraws; ++i) interp += choose_training_mode(rng, cfg) == MaskMode::kInterpolation;
    CHECK(within_three_sigma(interp, kDraws, cfg.p_interp));
}

TEST_CASE("p_mask_all = 1 masks everything, p_mask_all = 0 never collapses") {
    DiffuserConfig cfg;
    std::mt19937_64 rng(3);
    cfg.p_mask_all = 1.0;
    for (int i = 0; i < 100; ++i) CHECK(sample_training_mask(8, 2, rng, cfg).all());
    cfg.p_mask_all = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const auto m = sample_training_mask(8, 2, rng, cfg);
        CHECK_FALSE(m.all());
        CHECK((!m.frame_any(0) || !m.frame_any(7)));
        bool middle = false;
        for (int f = 1; f < 7; ++f) {
            CHECK((m.frame_all(f) || !m.frame_any(f)));  // intermediates are whole frames
            middle |= m.frame_any(f);
        }
        CHECK(middle);
    }
}

TEST_CASE("end-frame treatment frequencies: partial 1/2, full 1/4, none 1/4") {
    DiffuserConfig cfg;
    cfg.p_mask_all = 0.0;
    std::mt19937_64 rng(5);
    constexpr int kDraws = 40000;
    int partial = 0, full = 0, none = 0;
    for (int i = 0; i < kDraws; ++i) {
        const auto m = sample_training_mask(8, 6, rng, cfg);
        const int end = m.frame_any(0) ? 0 : 7;
        if (!m.frame_any(end)) ++none;
        else if (m.frame_all(end)) ++full;
        else ++partial;
    }
    CHECK(within_three_sigma(partial, kDraws, 0.5));
    CHECK(within_three_sigma(full, kDraws, 0.25));
    CHECK(within_three_sigma(none, kDraws, 0.25));
}

TEST_CASE("interpolation mask keeps ends visible") {
    const auto m = interpolation_mask(6, 3);
    CHECK(m.mode == MaskMode::kInterpolation);
    CHECK_FALSE(m.frame_any(0));
    CHECK_FALSE(m.frame_any(5));
    for (int f = 1; f < 5; ++f) CHECK(m.frame_all(f));
    CHECK(interpolation_mask(2, 4).none());
}

TEST_CASE("midpoint order visits intermediates breadth first") {
    CHECK((midpoint_order(8) == std::vector<int>{3, 1, 5, 2, 4, 6}));
    CHECK(midpoint_order(2).empty());
    CHECK((midpoint_order(3) == std::vector<int>{1}));
    for (int n = 2; n <= 16; ++n) {
        const auto order = midpoint_order(n);
        std::set<int> seen(order.begin(), order.end());
        CHECK(static_cast<int>(order.size()) == n - 2);
        CHECK(static_cast<int>(seen.size()) == n - 2);
        if (n > 2) {
            CHECK(*seen.begin() == 1);
            CHECK(*seen.rbegin() == n - 2);
        }
    }
}

TEST_CASE("sampling schedule: end frames in chunks, then one intermediate per step") {
    const auto s = build_sampling_schedule(8, 2, 6, 1);
    // 2 cells over 6 chunks: empty chunks skipped -> 2 steps per end frame.
    REQUIRE(s.steps.size() == 2 + 2 + 6);
    CHECK(s.steps[0].frame == 0);
    CHECK(s.steps[1].frame == 0);
    CHECK(s.steps[2].frame == 7);
    CHECK(s.steps[3].frame == 7);
    for (std::size_t i = 4; i < s.steps.size(); ++i) CHECK(s.steps[i].cells.size() == 2);
    CHECK(s.steps[4].frame == 3);

    const auto wide = build_sampling_schedule(8, 12, 6, 1);
    CHECK(wide.steps.size() == 6 + 6 + 6);
    for (int i = 0; i < 12; ++i) CHECK(wide.steps[static_cast<std::size_t>(i)].cells.size() == 2);

    const auto two = build_sampling_schedule(2, 3, 6, 4);
    CHECK(two.steps.size() == 6);
    CHECK(two.partitions(MaskState::filled(2, 3, true, MaskMode::kGeneration)));
}

TEST_CASE("sampling schedules are exact partitions for n 2..16, cells 1..8") {
    for (int n = 2; n <= 16; ++n) {
        for (int cells = 1; cells <= 8; ++cells) {
            for (int end_steps : {1, 3, 6}) {
                const auto s = build_sampling_schedule(n, cells, end_steps, static_cast<std::uint64_t>(n * 31 + cells));
                REQUIRE(s.partitions(MaskState::filled(n, cells, true, MaskMode::kGeneration)));
            }
            const auto interp = build_interpolation_schedule(n, cells);
            CHECK(interp.partitions(interpolation_mask(n, cells)));
        }
    }
}

TEST_CASE("partition check rejects overlaps, gaps and foreign cells") {
    auto s = build_sampling_schedule(4, 2, 2, 0);
    const auto full = MaskState::filled(4, 2, true, MaskMode::kGeneration);
    REQUIRE(s.partitions(full));
    auto dup = s;
    dup.steps.push_back(s.steps.front());
    CHECK_FALSE(dup.partitions(full));
    auto gap = s;
    gap.steps.pop_back();
    CHECK_FALSE(gap.partitions(full));
    auto partial = full;
    partial.set(0, 0, false);
    CHECK_FALSE(s.partitions(partial));
    auto bad = s;
    bad.steps[0].cells = {5};
    CHECK_FALSE(bad.partitions(full));
}

TEST_CASE("schedule seed only permutes end-frame cells") {
    const auto a = build_sampling_schedule(8, 8, 4, 1);
    const auto b = build_sampling_schedule(8, 8, 4, 1);
    const auto c = build_sampling_schedule(8, 8, 4, 2);
    REQUIRE(a.steps.size() == c.steps.size());
    bool differs = false;
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
        CHECK(a.steps[i].cells == b.steps[i].cells);
        CHECK(a.steps[i].frame == c.steps[i].frame);
        differs |= a.steps[i].cells != c.steps[i].cells;
    }
    CHECK(differs);
}

TEST_CASE("schedule rejects degenerate input") {
    CHECK_THROWS_AS(build_sampling_schedule(1, 2, 6, 0), std::invalid_argument);
    CHECK_THROWS_AS(build_sampling_schedule(4, 0, 6, 0), std::invalid_argument);
    CHECK_THROWS_AS(build_sampling_schedule(4, 2, 0, 0), std::invalid_argument);
}

TEST_CASE("apply_mask replaces exactly the masked cells") {
    const auto seq = torch::arange(2 * 3 * 2 * 4, torch::kFloat32).reshape({2, 3, 2, 4});
    const auto vec = torch::full({4}, -7.0f);
    auto m = MaskState::filled(3, 2, false, MaskMode::kGeneration);
    m.set(1, 0, true);
    m.set(2, 1, true);
    const auto out = apply_mask(seq, m.to_tensor(), vec);
    for (int b = 0; b < 2; ++b) {
        for (int f = 0; f < 3; ++f) {
            for (int c = 0; c < 2; ++c) {
                const auto cell = out[b][f][c];
                if (m.at(f, c)) CHECK(torch::equal(cell, vec));
                else CHECK(torch::equal(cell, seq[b][f][c]));
            }
        }
    }
    CHECK(torch::equal(apply_mask(seq, MaskState::filled(3, 2, false, MaskMode::kGeneration).to_tensor(), vec), seq));
    CHECK_THROWS_AS(apply_mask(seq, torch::zeros({3, 3}, torch::kBool), vec), std::invalid_argument);
    CHECK_THROWS_AS(apply_mask(seq, m.to_tensor(), torch::zeros({3})), std::invalid_argument);
}
