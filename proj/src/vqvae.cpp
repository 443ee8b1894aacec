#include "t2p/vqvae.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "t2p/errors.hpp"

namespace t2p {
namespace {

namespace F = torch::nn::functional;

torch::nn::Conv2d conv(int64_t in, int64_t out, int64_t k, int64_t stride = 1, int64_t pad = 0) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(pad));
}

torch::nn::GroupNorm group_norm(int64_t channels) {
    return torch::nn::GroupNorm(torch::nn::GroupNormOptions(std::gcd<int64_t>(channels, 8), channels));
}

torch::Tensor to_channels_last(const torch::Tensor& x) { return x.permute({0, 2, 3, 1}); }
torch::Tensor to_channels_first(const torch::Tensor& x) { return x.permute({0, 3, 1, 2}); }

// Unit-length features keep the codebook from collapsing onto a few entries.
torch::Tensor unit_rows(const torch::Tensor& x) { return F::normalize(x, F::NormalizeFuncOptions().dim(-1)); }

torch::Tensor gaussian_blur(const torch::Tensor& chw, double sigma) {
    const int64_t radius = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(3.0 * sigma)));
    auto xs = torch::arange(-radius, radius + 1, torch::TensorOptions().dtype(chw.dtype()));
    auto kernel = torch::exp(-(xs * xs) / (2.0 * sigma * sigma));
    kernel = kernel / kernel.sum();
    const int64_t c = chw.size(0);
    auto x = chw.unsqueeze(0);
    x = F::pad(x, F::PadFuncOptions({radius, radius, radius, radius}).mode(torch::kReplicate));
    x = F::conv2d(x, kernel.view({1, 1, 1, -1}).expand({c, 1, 1, 2 * radius + 1}).contiguous(),
                  F::Conv2dFuncOptions().groups(c));
    x = F::conv2d(x, kernel.view({1, 1, -1, 1}).expand({c, 1, 2 * radius + 1, 1}).contiguous(),
                  F::Conv2dFuncOptions().groups(c));
    return x.squeeze(0);
}

}  // namespace

ResBlockImpl::ResBlockImpl(int64_t channels)
    : norm1(register_module("norm1", group_norm(channels))),
      norm2(register_module("norm2", group_norm(channels))),
      conv1(register_module("conv1", conv(channels, channels, 3, 1, 1))),
      conv2(register_module("conv2", conv(channels, channels, 3, 1, 1))) {}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
    return x + conv2->forward(torch::silu(norm2->forward(conv1->forward(torch::silu(norm1->forward(x))))));
}

DownBlockImpl::DownBlockImpl(int64_t in, int64_t out)
    : conv(register_module("conv", t2p::conv(in, out, 4, 2, 1))), res(register_module("res", ResBlock(out))) {}

torch::Tensor DownBlockImpl::forward(const torch::Tensor& x) { return res->forward(torch::silu(conv->forward(x))); }

UpBlockImpl::UpBlockImpl(int64_t in, int64_t out) : conv(register_module("conv", t2p::conv(in, out, 3, 1, 1))) {}

torch::Tensor UpBlockImpl::forward(const torch::Tensor& x) {
    auto up = F::interpolate(x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
    return torch::silu(conv->forward(up));
}

AugmentDraw draw_augmentation(const AugmentConfig& policy, std::mt19937_64& rng) {
    auto sym = [&](double r) { return std::uniform_real_distribution<double>(-r, r)(rng); };
    AugmentDraw d;
    d.brightness = policy.brightness > 0 ? sym(policy.brightness) : 0.0;
    d.contrast = policy.contrast > 0 ? sym(policy.contrast) : 0.0;
    d.saturation = policy.saturation > 0 ? sym(policy.saturation) : 0.0;
    d.blur_sigma = policy.blur_max > 0
                       ? std::uniform_real_distribution<double>(policy.blur_min, policy.blur_max)(rng)
                       : 0.0;
    return d;
}

Frame apply_augmentation(const Frame& frame, const AugmentDraw& draw, bool clip) {
    if (frame.dim() != 3 || frame.size(0) != 3) throw std::invalid_argument("augment: expected [3, H, W] frame");
    torch::NoGradGuard no_grad;
    auto y = (frame + 1.0) * 0.5;
    if (draw.brightness != 0.0) y = y + draw.brightness;
    if (draw.contrast != 0.0) {
        const auto mean = y.mean();
        y = (y - mean) * (1.0 + draw.contrast) + mean;
    }
    if (draw.saturation != 0.0) {
        const auto luma = 0.299 * y[0] + 0.587 * y[1] + 0.114 * y[2];
        y = luma.unsqueeze(0) + (y - luma.unsqueeze(0)) * (1.0 + draw.saturation);
    }
    if (draw.blur_sigma > 0.0) y = gaussian_blur(y, draw.blur_sigma);
    if (clip) y = y.clamp(0.0, 1.0);
    return (y * 2.0 - 1.0).contiguous();
}

Frame augment_pose_input(const Frame& frame, const AugmentConfig& policy, std::mt19937_64& rng) {
    return apply_augmentation(frame, draw_augmentation(policy, rng));
}

DecomposedVqvaeImpl::DecomposedVqvaeImpl(const DataConfig& data, const VqvaeConfig& config)
    : geometry_(grid_geometry(data, config)),
      unified_(config.unified_space),
      same_res_(config.same_res),
      height_(data.height),
      width_(data.width),
      motion_codebook_dim_(config.unified_space ? config.d_a : config.d_p) {
    if (static_cast<int>(config.channels.size()) != config.trunk_down) {
        throw std::invalid_argument("vqvae.channels must have trunk_down entries");
    }
    const int64_t c_last = config.channels.back();

    shared_trunk = torch::nn::Sequential();
    int64_t in = 3;
    for (int c : config.channels) {
        shared_trunk->push_back(DownBlock(in, c));
        in = c;
    }
    register_module("shared_trunk", shared_trunk);

    appearance_head = torch::nn::Sequential(ResBlock(c_last), ResBlock(c_last), torch::nn::SiLU(),
                                            conv(c_last, config.d_a, 1));
    register_module("appearance_head", appearance_head);
    appearance_codebook = register_module("appearance_codebook", Codebook(config.k_a, config.d_a));

    if (!unified_) {
        pose_head = torch::nn::Sequential();
        pose_upsampler = torch::nn::Sequential();
        if (same_res_) {
            pose_head->push_back(ResBlock(c_last));
            pose_head->push_back(ResBlock(c_last));
            pose_upsampler->push_back(conv(config.d_p, c_last, 3, 1, 1));
            pose_upsampler->push_back(torch::nn::SiLU());
            pose_upsampler->push_back(conv(c_last, c_last, 3, 1, 1));
            pose_upsampler->push_back(torch::nn::SiLU());
        } else {
            for (int i = 0; i < config.pose_down; ++i) pose_head->push_back(DownBlock(c_last, c_last));
            for (int i = 0; i < config.pose_down; ++i) pose_upsampler->push_back(UpBlock(i == 0 ? config.d_p : c_last, c_last));
        }
        pose_head->push_back(torch::nn::SiLU());
        pose_head->push_back(conv(c_last, config.d_p, 1));
        register_module("pose_head", pose_head);
        register_module("pose_upsampler", pose_upsampler);
        pose_codebook = register_module("pose_codebook", Codebook(config.k_p, config.d_p));
    }

    decoder = torch::nn::Sequential();
    decoder->push_back(conv(unified_ ? config.d_a : config.d_a + c_last, c_last, 3, 1, 1));
    decoder->push_back(ResBlock(c_last));
    int64_t cur = c_last;
    for (int i = config.trunk_down - 1; i >= 0; --i) {
        const int64_t out = config.channels[static_cast<std::size_t>(std::max(i - 1, 0))];
        decoder->push_back(UpBlock(cur, out));
        cur = out;
    }
    decoder->push_back(conv(cur, 3, 3, 1, 1));  // linear output; frames are clamped when written
    register_module("decoder", decoder);
}

void DecomposedVqvaeImpl::check_frames(const torch::Tensor& frames) const {
    if (frames.dim() != 4 || frames.size(1) != 3 || frames.size(2) != height_ || frames.size(3) != width_) {
        std::ostringstream os;
        os << "expected frames of shape [B, 3, " << height_ << ", " << width_ << "], got " << frames.sizes();
        throw std::invalid_argument(os.str());
    }
}

torch::Tensor DecomposedVqvaeImpl::trunk(const torch::Tensor& frames) {
    auto batched = frames.dim() == 3 ? frames.unsqueeze(0) : frames;
    check_frames(batched);
    return shared_trunk->forward(batched);
}

torch::Tensor DecomposedVqvaeImpl::encode_appearance(const torch::Tensor& frames) {
    return unit_rows(to_channels_last(appearance_head->forward(trunk(frames))));
}

torch::Tensor DecomposedVqvaeImpl::encode_pose(const torch::Tensor& frames_aug) {
    if (unified_) throw std::logic_error("encode_pose: the unified-space model has no pose branch");
    return unit_rows(to_channels_last(pose_head->forward(trunk(frames_aug))));
}

torch::Tensor DecomposedVqvaeImpl::decode(const torch::Tensor& appearance, const torch::Tensor& pose) {
    const auto& g = geometry_;
    if (appearance.dim() != 4 || appearance.size(1) != g.app_h || appearance.size(2) != g.app_w ||
        appearance.size(3) != appearance_codebook->dim()) {
        throw std::invalid_argument("decode: appearance grid must be [B, " + std::to_string(g.app_h) + ", " +
                                    std::to_string(g.app_w) + ", " + std::to_string(appearance_codebook->dim()) +
                                    "], got " + c10::str(appearance.sizes()));
    }
    auto a = to_channels_first(appearance);
    if (unified_) return decoder->forward(a);
    if (pose.dim() != 4 || pose.size(0) != appearance.size(0) || pose.size(1) != g.pose_h ||
        pose.size(2) != g.pose_w || pose.size(3) != pose_codebook->dim()) {
        throw std::invalid_argument("decode: pose grid must be [B, " + std::to_string(g.pose_h) + ", " +
                                    std::to_string(g.pose_w) + ", " + std::to_string(pose_codebook->dim()) +
                                    "], got " + c10::str(pose.sizes()));
    }
    auto p = pose_upsampler->forward(to_channels_first(pose));
    return decoder->forward(torch::cat({a, p}, 1));
}

VqvaeForward DecomposedVqvaeImpl::forward(const torch::Tensor& appearance_input, const torch::Tensor& pose_input,
                                          QuantMode mode) {
    VqvaeForward out;
    if (unified_) {
        out.f_a = encode_appearance(pose_input);
        auto q = appearance_codebook->quantize(out.f_a);
        out.q_a = q.quantized;
        out.idx_a = q.indices;
        auto dec_in = mode == QuantMode::kBypass ? out.f_a : straight_through(out.f_a, out.q_a);
        out.recon = decode(dec_in, {});
        return out;
    }
    out.f_a = encode_appearance(appearance_input);
    out.f_p = encode_pose(pose_input);
    auto qa = appearance_codebook->quantize(out.f_a);
    auto qp = pose_codebook->quantize(out.f_p);
    out.q_a = qa.quantized;
    out.idx_a = qa.indices;
    out.q_p = qp.quantized;
    out.idx_p = qp.indices;
    if (mode == QuantMode::kBypass) {
        out.recon = decode(out.f_a, out.f_p);
    } else {
        out.recon = decode(straight_through(out.f_a, out.q_a), straight_through(out.f_p, out.q_p));
    }
    return out;
}

QuantizeResult DecomposedVqvaeImpl::encode_motion(const torch::Tensor& frames) {
    if (unified_) return appearance_codebook->quantize(encode_appearance(frames));
    return pose_codebook->quantize(encode_pose(frames));
}

torch::Tensor DecomposedVqvaeImpl::render(const torch::Tensor& appearance, const torch::Tensor& motion) {
    if (unified_) return decode(motion, {});
    return decode(appearance.expand({motion.size(0), -1, -1, -1}), motion);
}

VqvaeLoss vqvae_loss(const torch::Tensor& target, const torch::Tensor& recon, const torch::Tensor& f_a,
                     const torch::Tensor& q_a, const torch::Tensor& f_p, const torch::Tensor& q_p, double beta) {
    if (!target.sizes().equals(recon.sizes())) {
        throw std::invalid_argument("vqvae_loss: target " + c10::str(target.sizes()) + " vs recon " +
                                    c10::str(recon.sizes()));
    }
    VqvaeLoss out;
    out.components[0] = (target - recon).abs().mean();
    const auto app = vq_losses(f_a, q_a);
    out.components[1] = app.codebook_term;
    out.components[2] = app.commitment_term;
    if (f_p.defined()) {
        const auto pose = vq_losses(f_p, q_p);
        out.components[3] = pose.codebook_term;
        out.components[4] = pose.commitment_term;
    } else {
        out.components[3] = torch::zeros({}, recon.options());
        out.components[4] = torch::zeros({}, recon.options());
    }
    out.total = out.components[0] + out.components[1] + beta * out.components[2] + out.components[3] +
                beta * out.components[4];
    return out;
}

VqvaeTrainer::VqvaeTrainer(DecomposedVqvae model, const VqvaeConfig& config, const AugmentConfig& aug,
                           std::uint64_t seed)
    : model_(std::move(model)),
      config_(config),
      aug_(aug),
      optimizer_(model_->parameters(), torch::optim::AdamOptions(config.lr)),
      rng_(seed) {}

VqvaeMetrics VqvaeTrainer::train_step(const std::vector<FramePair>& batch) {
    if (batch.empty()) throw std::invalid_argument("VqvaeTrainer: empty batch");
    model_->train();
    std::vector<torch::Tensor> firsts, targets, pose_inputs;
    for (const auto& pair : batch) {
        firsts.push_back(pair.first);
        targets.push_back(pair.target);
        pose_inputs.push_back(model_->unified() ? pair.target : augment_pose_input(pair.target, aug_, rng_));
    }
    const auto first = torch::stack(firsts);
    const auto target = torch::stack(targets);
    const auto pose_in = torch::stack(pose_inputs);

    if (step_ == 0) {
        // Seed both codebooks with encoder outputs so training starts with live entries.
        torch::NoGradGuard no_grad;
        model_->appearance_codebook->init_from(model_->encode_appearance(model_->unified() ? pose_in : first), rng_);
        if (!model_->unified()) model_->pose_codebook->init_from(model_->encode_pose(pose_in), rng_);
    }
    auto fwd = model_->forward(first, pose_in, QuantMode::kStraightThrough);
    auto loss = vqvae_loss(target, fwd.recon, fwd.f_a, fwd.q_a, fwd.f_p, fwd.q_p, config_.beta);

    VqvaeMetrics m;
    m.step = step_;
    m.total = loss.total.item<double>();
    m.recon_l1 = loss.components[0].item<double>();
    m.app_codebook = loss.components[1].item<double>();
    m.app_commit = loss.components[2].item<double>();
    m.pose_codebook = loss.components[3].item<double>();
    m.pose_commit = loss.components[4].item<double>();
    if (!std::isfinite(m.total)) {
        std::ostringstream os;
        os << "vqvae step " << step_ << ": non-finite loss (recon_l1=" << m.recon_l1 << " app_cb=" << m.app_codebook
           << " app_commit=" << m.app_commit << " pose_cb=" << m.pose_codebook << " pose_commit=" << m.pose_commit
           << ")";
        throw NonFiniteLossError(os.str());
    }

    optimizer_.zero_grad();
    loss.total.backward();
    optimizer_.step();

    m.reinit_rows = model_->appearance_codebook->reinit_dead_entries(fwd.f_a, rng_, config_.reinit_threshold);
    if (!model_->unified()) {
        m.reinit_rows += model_->pose_codebook->reinit_dead_entries(fwd.f_p, rng_, config_.reinit_threshold);
    }
    ++step_;
    return m;
}

}  // namespace t2p
