#include "helpers.hpp"
#include "t2p/dataset.hpp"
#include "t2p/errors.hpp"
#include "t2p/vqvae.hpp"

#include <doctest.h>

using namespace t2p;

namespace {

torch::Tensor random_frames(int64_t b, int64_t h, int64_t w) { return torch::rand({b, 3, h, w}) * 2 - 1; }

}  // namespace

TEST_CASE("grid shapes follow the configured downsampling") {
    torch::manual_seed(0);
    auto cfg = testing::tiny_config("unused");
    DecomposedVqvae model(cfg.data, cfg.vqvae);
    const auto frames = random_frames(2, 64, 32);
    const auto fwd = model->forward(frames, frames);
    CHECK(fwd.recon.sizes() == torch::IntArrayRef({2, 3, 64, 32}));
    CHECK(fwd.f_a.sizes() == torch::IntArrayRef({2, 4, 2, 8}));
    CHECK(fwd.idx_a.sizes() == torch::IntArrayRef({2, 4, 2}));
    CHECK(fwd.f_p.sizes() == torch::IntArrayRef({2, 2, 1, 8}));
    CHECK(fwd.q_p.sizes() == torch::IntArrayRef({2, 2, 1, 8}));
    CHECK(torch::isfinite(fwd.recon).all().item<bool>());
    CHECK(torch::allclose(fwd.f_a.norm(2, -1), torch::ones({2, 4, 2})));
    CHECK(torch::allclose(fwd.f_p.norm(2, -1), torch::ones({2, 2, 1})));
    CHECK(model->geometry().app_cells() == 8);
    CHECK(model->geometry().pose_cells() == 2);
    CHECK(model->motion_h() == 2);
    CHECK(model->motion_w() == 1);
}

TEST_CASE("default layout gives H/16 appearance and H/64 pose grids") {
    RunConfig cfg;
    cfg.vqvae.channels = {4, 4, 4, 4};
    cfg.vqvae.d_a = 4;
    cfg.vqvae.d_p = 4;
    DecomposedVqvae model(cfg.data, cfg.vqvae);
    const auto frame = random_frames(1, 128, 64);
    CHECK(model->encode_appearance(frame).sizes() == torch::IntArrayRef({1, 8, 4, 4}));
    CHECK(model->encode_pose(frame).sizes() == torch::IntArrayRef({1, 2, 1, 4}));
}

TEST_CASE("quantized forward uses codebook rows exactly") {
    torch::manual_seed(1);
    auto cfg = testing::tiny_config("unused");
    DecomposedVqvae model(cfg.data, cfg.vqvae);
    const auto frames = random_frames(1, 64, 32);
    const auto fwd = model->forward(frames, frames);
    CHECK(torch::equal(fwd.q_a, model->appearance_codebook->lookup(fwd.idx_a)));
    CHECK(torch::equal(fwd.q_p, model->pose_codebook->lookup(fwd.idx_p)));
    torch::NoGradGuard guard;
    CHECK(torch::allclose(fwd.recon, model->decode(fwd.q_a, fwd.q_p)));
}

TEST_CASE("decode rejects mismatched grids with the expected shape in the message") {
    auto cfg = testing::tiny_config("unused");
    DecomposedVqvae model(cfg.data, cfg.vqvae);
    CHECK_THROWS_WITH_AS(model->decode(torch::zeros({1, 3, 2, 8}), torch::zeros({1, 2, 1, 8})),
                         doctest::Contains("[B, 4, 2, 8]"), std::invalid_argument);
    CHECK_THROWS_AS(model->decode(torch::zeros({1, 4, 2, 8}), torch::zeros({1, 4, 2, 8})), std::invalid_argument);
    CHECK_THROWS_AS(model->encode_appearance(torch::zeros({1, 3, 32, 32})), std::invalid_argument);
}

TEST_CASE("unified ablation has one branch and one codebook") {
    auto cfg = testing::tiny_config("unused");
    cfg.vqvae.unified_space = true;
    DecomposedVqvae model(cfg.data, cfg.vqvae);
    CHECK(model->unified());
    CHECK_FALSE(static_cast<bool>(model->pose_codebook));
    CHECK_THROWS_AS(model->encode_pose(random_frames(1, 64, 32)), std::logic_error);
    const auto frames = random_frames(2, 64, 32);
    const auto fwd = model->forward(frames, frames);
    CHECK_FALSE(fwd.f_p.defined());
    CHECK(fwd.recon.sizes() == torch::IntArrayRef({2, 3, 64, 32}));
    CHECK(model->motion_h() == 4);
    CHECK(model->motion_w() == 2);
    const auto motion = model->encode_motion(frames);
    CHECK(motion.quantized.sizes() == torch::IntArrayRef({2, 4, 2, 8}));
}

TEST_CASE("augmentation is photometric: brightness shifts, layout stays") {
    const auto frame = torch::zeros({3, 8, 8});
    AugmentDraw d;
    d.brightness = 0.1;
    const auto out = apply_augmentation(frame, d);
    CHECK(torch::allclose(out, torch::full({3, 8, 8}, 0.2f), 1e-6, 1e-6));
    AugmentDraw identity;
    const auto rendered = render_frame(AppearanceSpec{}, 0, {Motion::kStand, 2}, {64, 32});
    CHECK(torch::allclose(apply_augmentation(rendered, identity), rendered, 1e-6, 1e-6));
    AugmentDraw blur;
    blur.blur_sigma = 1.0;
    const auto blurred = apply_augmentation(rendered, blur);
    CHECK(blurred.sizes() == rendered.sizes());
    CHECK(blurred.mean().item<double>() == doctest::Approx(rendered.mean().item<double>()).epsilon(0.02));

    AugmentConfig policy;
    std::mt19937_64 rng(0);
    for (int i = 0; i < 50; ++i) {
        const auto draw = draw_augmentation(policy, rng);
        CHECK(std::abs(draw.brightness) <= policy.brightness);
        CHECK(draw.blur_sigma >= policy.blur_min);
        CHECK(draw.blur_sigma <= policy.blur_max);
    }
}

TEST_CASE("decoder and encoder gradients match finite differences in double precision") {
    torch::manual_seed(4);
    const auto cfg = testing::gradcheck_config();
    DecomposedVqvae model(cfg.data, cfg.vqvae);
    model->to(torch::kFloat64);
    const auto a_in = (torch::rand({2, 3, 16, 8}, torch::kFloat64) * 2 - 1);
    const auto p_in = (torch::rand({2, 3, 16, 8}, torch::kFloat64) * 2 - 1);
    const auto weights = torch::randn({2, 3, 16, 8}, torch::kFloat64);
    auto loss = [&] { return (model->forward(a_in, p_in, QuantMode::kBypass).recon * weights).sum(); };
    std::vector<torch::Tensor> params;
    for (auto& p : model->named_parameters()) {
        if (p.key().find("codebook") == std::string::npos) params.push_back(p.value());
    }
    const auto check = testing::gradient_check(loss, params);
    CHECK(check.checked > 50);
    CHECK(check.analytic_norm > 0);
    CHECK(check.relative_error <= 1e-4);
}

TEST_CASE("straight-through forward passes encoder gradients unchanged") {
    torch::manual_seed(5);
    const auto cfg = testing::gradcheck_config();
    DecomposedVqvae model(cfg.data, cfg.vqvae);
    model->to(torch::kFloat64);
    const auto frames = torch::rand({1, 3, 16, 8}, torch::kFloat64) * 2 - 1;
    const auto f = model->encode_appearance(frames).detach().requires_grad_(true);
    const auto q = model->appearance_codebook->quantize(f).quantized;
    const auto st = straight_through(f, q);
    const auto upstream = torch::randn_like(f);
    st.backward(upstream);
    CHECK(torch::equal(f.grad(), upstream));
    CHECK(torch::equal(st, q));
}

TEST_CASE("trainer steps reduce loss on a fixed batch and reject empty batches") {
    torch::manual_seed(6);
    auto cfg = testing::tiny_config("unused");
    cfg.vqvae.lr = 2e-3;
    DecomposedVqvae model(cfg.data, cfg.vqvae);
    AugmentConfig no_aug{0, 0, 0, 0, 0};
    VqvaeTrainer trainer(model, cfg.vqvae, no_aug, 1);
    const auto frame = render_frame(AppearanceSpec{}, 0, {Motion::kStand, 2}, {64, 32});
    std::vector<FramePair> batch{{frame, frame}, {frame, frame}};
    const double first = trainer.train_step(batch).recon_l1;
    double last = first;
    for (int i = 0; i < 40; ++i) last = trainer.train_step(batch).recon_l1;
    CHECK(last < first);
    CHECK(trainer.steps_done() == 41);
    CHECK_THROWS_AS(trainer.train_step({}), std::invalid_argument);
}

TEST_CASE("non-finite loss raises") {
    auto cfg = testing::tiny_config("unused");
    DecomposedVqvae model(cfg.data, cfg.vqvae);
    VqvaeTrainer trainer(model, cfg.vqvae, AugmentConfig{0, 0, 0, 0, 0}, 1);
    const auto nan_frame = torch::full({3, 64, 32}, std::nanf(""));
    CHECK_THROWS_AS(trainer.train_step({{nan_frame, nan_frame}}), NonFiniteLossError);
}

TEST_CASE("vqvae loss components") {
    const auto target = torch::zeros({1, 3, 2, 2});
    const auto recon = torch::full({1, 3, 2, 2}, 0.5f);
    const auto f = torch::ones({1, 1, 1, 2});
    const auto q = torch::zeros({1, 1, 1, 2});
    const auto l = vqvae_loss(target, recon, f, q, f, q);
    CHECK(l.components[0].item<float>() == doctest::Approx(0.5));
    CHECK(l.components[1].item<float>() == doctest::Approx(2.0));
    CHECK(l.components[4].item<float>() == doctest::Approx(2.0));
    CHECK(l.total.item<float>() == doctest::Approx(8.5));
    const auto unified = vqvae_loss(target, recon, f, q, {}, {});
    CHECK(unified.total.item<float>() == doctest::Approx(4.5));
    const auto weighted = vqvae_loss(target, recon, f, q, f, q, 0.25);
    CHECK(weighted.total.item<float>() == doctest::Approx(5.5));
    CHECK_THROWS_AS(vqvae_loss(target, torch::zeros({1, 3, 2, 3}), f, q, f, q), std::invalid_argument);
}
