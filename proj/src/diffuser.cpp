#include "t2p/diffuser.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "t2p/errors.hpp"

namespace t2p {

torch::Tensor perceptual_proxy(const torch::Tensor& a, const torch::Tensor& b) {
    if (!a.sizes().equals(b.sizes()) || a.dim() < 2) {
        throw std::invalid_argument("perceptual_proxy: shapes differ or are not images: " + c10::str(a.sizes()) +
                                    " vs " + c10::str(b.sizes()));
    }
    const int64_t h = a.size(-2), w = a.size(-1);
    auto x = a.reshape({-1, h, w});
    auto y = b.reshape({-1, h, w});
    torch::Tensor total = torch::zeros({}, a.options());
    for (int level = 0; level < 3; ++level) {
        const std::vector<int64_t> size{std::max<int64_t>(1, h >> level), std::max<int64_t>(1, w >> level)};
        total = total + (torch::adaptive_avg_pool2d(x, size) - torch::adaptive_avg_pool2d(y, size)).abs().mean();
    }
    return total / 3.0;
}

DiffuserLoss diffuser_loss(const torch::Tensor& predicted, const torch::Tensor& codebook_values,
                           const torch::Tensor& truth, const torch::Tensor& mask, const torch::Tensor& decoded,
                           const torch::Tensor& target) {
    if (predicted.dim() != 5 || !predicted.sizes().equals(truth.sizes()) ||
        !predicted.sizes().equals(codebook_values.sizes())) {
        throw std::invalid_argument("diffuser_loss: predicted " + c10::str(predicted.sizes()) + ", codebook " +
                                    c10::str(codebook_values.sizes()) + ", truth " + c10::str(truth.sizes()));
    }
    const auto b = predicted.size(0), n = predicted.size(1), h = predicted.size(2), w = predicted.size(3);
    if (mask.dim() != 3 || mask.size(0) != b || mask.size(1) != n || mask.size(2) != h * w) {
        throw std::invalid_argument("diffuser_loss: mask must be [B, n, cells], got " + c10::str(mask.sizes()));
    }
    auto m = mask.reshape({b, n, h, w}).to(predicted.dtype());
    auto count = std::max(1.0, m.sum().item<double>());
    DiffuserLoss out;
    out.components[0] = ((predicted - truth).abs().sum(-1) * m).sum() / count;
    out.components[1] = ((predicted.detach() - codebook_values).pow(2).sum(-1) * m).sum() / count;
    out.components[2] = ((codebook_values.detach() - predicted).pow(2).sum(-1) * m).sum() / count;
    auto zero = torch::zeros({}, predicted.options());
    if (decoded.defined()) {
        if (!decoded.sizes().equals(target.sizes())) {
            throw std::invalid_argument("diffuser_loss: decoded " + c10::str(decoded.sizes()) + " vs target " +
                                        c10::str(target.sizes()));
        }
        out.components[3] = (decoded - target).abs().mean();
        out.components[4] = perceptual_proxy(decoded, target);
    } else {
        out.components[3] = zero;
        out.components[4] = zero;
    }
    out.components[5] = zero;
    out.total = out.components[0] + out.components[1] + out.components[2] + out.components[3] + out.components[4];
    return out;
}

MotionDiffuserImpl::MotionDiffuserImpl(int64_t vocab_size, const TextConfig& text, const DiffuserConfig& config,
                                       int grid_h, int grid_w, int64_t dim, int64_t codebook_size)
    : n_frames_(config.n_frames),
      grid_h_(grid_h),
      grid_w_(grid_w),
      dim_(dim),
      codebook_size_(codebook_size),
      max_len_(text.max_len),
      discrete_(config.discrete_head),
      no_codebook_(config.no_codebook),
      temperature_(config.temperature) {
    const int64_t d = config.d_model;
    const int64_t cells = grid_h * grid_w;
    text_embedder = register_module("text_embedder", TextEmbedder(vocab_size, text));
    text_proj = register_module("text_proj", torch::nn::Linear(text.dim, d));
    pose_in = register_module("pose_in", torch::nn::Linear(dim, d));
    segment = register_module("segment", torch::nn::Embedding(3, d));
    text_pos = register_parameter("text_pos", torch::randn({max_len_, d}) * 0.02);
    exemplar_pos = register_parameter("exemplar_pos", torch::randn({cells, d}) * 0.02);
    frame_pos = register_parameter("frame_pos", torch::randn({n_frames_, d}) * 0.02);
    cell_pos = register_parameter("cell_pos", torch::randn({cells, d}) * 0.02);
    mask_vector = register_parameter("mask_vector", torch::randn({dim}) * 0.02);
    stack = register_module("stack", TransformerStack(d, config.heads, config.layers));
    head = register_module("head", torch::nn::Linear(d, discrete_ ? codebook_size : dim));
    if (discrete_) {
        torch::NoGradGuard guard;
        head->weight.normal_(0.0, 0.02);
        head->bias.zero_();
    }
    trained_steps_ = register_buffer("trained_steps", torch::zeros({1}, torch::kInt64));
}

torch::Tensor MotionDiffuserImpl::forward(const torch::Tensor& text_ids, const torch::Tensor& exemplar,
                                          const torch::Tensor& masked_seq) {
    const int64_t cells = grid_h_ * grid_w_;
    if (masked_seq.dim() != 5 || masked_seq.size(1) < 1 || masked_seq.size(1) > n_frames_ ||
        masked_seq.size(2) != grid_h_ || masked_seq.size(3) != grid_w_ || masked_seq.size(4) != dim_) {
        throw std::invalid_argument("diffuser: sequence must be [B, n<=" + std::to_string(n_frames_) + ", " +
                                    std::to_string(grid_h_) + ", " + std::to_string(grid_w_) + ", " +
                                    std::to_string(dim_) + "], got " + c10::str(masked_seq.sizes()));
    }
    const int64_t b = masked_seq.size(0), n = masked_seq.size(1);
    if (exemplar.dim() != 4 || exemplar.size(0) != b || exemplar.size(1) != grid_h_ || exemplar.size(2) != grid_w_ ||
        exemplar.size(3) != dim_) {
        throw std::invalid_argument("diffuser: exemplar must be [" + std::to_string(b) + ", " +
                                    std::to_string(grid_h_) + ", " + std::to_string(grid_w_) + ", " +
                                    std::to_string(dim_) + "], got " + c10::str(exemplar.sizes()));
    }
    if (text_ids.dim() != 2 || text_ids.size(0) != b) {
        throw std::invalid_argument("diffuser: text ids must be [B, L], got " + c10::str(text_ids.sizes()));
    }
    auto seg = segment->weight;
    auto t = text_proj->forward(text_embedder->forward(text_ids)) + text_pos + seg[0];
    auto e = pose_in->forward(exemplar.reshape({b, cells, dim_})) + exemplar_pos + seg[1];
    auto pos = (frame_pos.narrow(0, 0, n).unsqueeze(1) + cell_pos.unsqueeze(0)).reshape({n * cells, -1});
    auto p = pose_in->forward(masked_seq.reshape({b, n * cells, dim_})) + pos + seg[2];
    auto h = stack->forward(torch::cat({t, e, p}, 1));
    auto out = head->forward(h.narrow(1, max_len_ + cells, n * cells));
    return out.reshape({b, n, grid_h_, grid_w_, out.size(-1)});
}

torch::Tensor MotionDiffuserImpl::mask_sequence(const torch::Tensor& seq, const torch::Tensor& mask) const {
    const auto shape = seq.sizes();
    auto flat = seq.reshape({-1, seq.size(-4), static_cast<int64_t>(grid_h_) * grid_w_, seq.size(-1)});
    auto m = mask.dim() == 2 ? mask.unsqueeze(0) : mask;
    return apply_mask(flat, m, mask_vector).reshape(shape);
}

void MotionDiffuserImpl::attach_codebook(Codebook codebook) {
    if (codebook->dim() != dim_) {
        throw std::invalid_argument("diffuser: codebook dim " + std::to_string(codebook->dim()) + " != " +
                                    std::to_string(dim_));
    }
    if (discrete_ && codebook->size() != codebook_size_) {
        throw std::invalid_argument("diffuser: codebook size " + std::to_string(codebook->size()) + " != " +
                                    std::to_string(codebook_size_));
    }
    codebook_ = std::move(codebook);
}

Codebook& MotionDiffuserImpl::codebook() {
    if (!codebook_) throw std::logic_error("diffuser: no codebook attached");
    return codebook_;
}

torch::Tensor MotionDiffuserImpl::retrieve(const torch::Tensor& predicted) {
    auto& cb = codebook();
    if (predicted.size(-1) != cb->dim()) {
        throw std::invalid_argument("retrieve: feature dim " + std::to_string(predicted.size(-1)) +
                                    " != codebook dim " + std::to_string(cb->dim()));
    }
    auto idx = cb->nearest_indices(predicted.detach().reshape({-1, cb->dim()}));
    auto q = cb->lookup(idx).reshape(predicted.sizes()).to(predicted.dtype());
    return straight_through(predicted, q);
}

void MotionDiffuserImpl::check_trained() const {
    if (trained_steps() == 0) throw std::logic_error("diffuser has not been trained");
}

torch::Tensor MotionDiffuserImpl::run_schedule(const torch::Tensor& text_ids, const torch::Tensor& exemplar,
                                               torch::Tensor seq, MaskState mask, const DiffusionSchedule& schedule,
                                               std::uint64_t seed, const SampleTrace& trace) {
    torch::NoGradGuard guard;
    if (!schedule.partitions(mask)) throw std::invalid_argument("schedule does not partition the masked cells");
    if (seq.size(0) != mask.n) throw std::invalid_argument("sequence length differs from mask length");
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    const int64_t cells = grid_h_ * grid_w_;
    auto flat = seq.view({mask.n, cells, dim_});
    auto ex = exemplar.unsqueeze(0).to(seq.dtype());
    for (std::size_t i = 0; i < schedule.steps.size(); ++i) {
        const auto& step = schedule.steps[i];
        auto out = forward(text_ids, ex, mask_sequence(seq.unsqueeze(0), mask.to_tensor()))[0][step.frame];
        torch::Tensor values;
        if (discrete_) {
            auto logits = out.reshape({cells, -1});
            torch::Tensor idx;
            if (temperature_ > 0) {
                idx = torch::multinomial(torch::softmax(logits / temperature_, -1), 1, false, gen).squeeze(1);
            } else {
                idx = logits.argmax(-1);
            }
            values = codebook()->lookup(idx).to(seq.dtype());
        } else if (no_codebook_) {
            values = out.reshape({cells, dim_});
        } else {
            values = retrieve(out).reshape({cells, dim_});
        }
        for (int c : step.cells) {
            flat[step.frame][c].copy_(values[c]);
            mask.set(step.frame, c, false);
        }
        if (trace) trace(i, seq, mask);
    }
    if (!mask.none()) throw std::logic_error("sampling finished with masked cells left");
    return seq;
}

torch::Tensor MotionDiffuserImpl::sample(const Vocabulary& vocab, const std::string& motion_text,
                                         const torch::Tensor& exemplar, const DiffusionSchedule& schedule,
                                         std::uint64_t seed, const SampleTrace& trace) {
    check_trained();
    if (schedule.n > n_frames_ || schedule.cells != cells()) {
        throw std::invalid_argument("schedule (n=" + std::to_string(schedule.n) + ", cells=" +
                                    std::to_string(schedule.cells) + ") does not fit the diffuser");
    }
    auto text_ids = vocab.tokenize_tensor(motion_text, static_cast<int>(max_len_)).unsqueeze(0);
    auto seq = torch::zeros({schedule.n, grid_h_, grid_w_, dim_}, mask_vector.options().requires_grad(false));
    auto mask = MaskState::filled(schedule.n, cells(), true, MaskMode::kGeneration);
    return run_schedule(text_ids, exemplar, seq, std::move(mask), schedule, seed, trace);
}

torch::Tensor MotionDiffuserImpl::interpolate(const Vocabulary& vocab, const torch::Tensor& first,
                                              const torch::Tensor& last, int n, std::uint64_t seed,
                                              const SampleTrace& trace) {
    check_trained();
    const std::vector<int64_t> grid{grid_h_, grid_w_, dim_};
    if (!first.sizes().equals(grid) || !last.sizes().equals(grid)) {
        throw std::invalid_argument("interpolate: endpoints must be [" + std::to_string(grid_h_) + ", " +
                                    std::to_string(grid_w_) + ", " + std::to_string(dim_) + "], got " +
                                    c10::str(first.sizes()) + " and " + c10::str(last.sizes()));
    }
    if (n < 2 || n > n_frames_) throw std::invalid_argument("interpolate: n must be in [2, n_frames]");
    auto text_ids = vocab.tokenize_tensor(kEmptyText, static_cast<int>(max_len_)).unsqueeze(0);
    auto seq = torch::zeros({n, grid_h_, grid_w_, dim_}, first.options().requires_grad(false));
    {
        torch::NoGradGuard guard;
        seq[0].copy_(first);
        seq[n - 1].copy_(last);
    }
    return run_schedule(text_ids, first, seq, interpolation_mask(n, cells()), build_interpolation_schedule(n, cells()),
                        seed, trace);
}

DiffuserExample make_diffuser_example(const DiffuserClip& clip, const DiffuserConfig& config, std::mt19937_64& rng) {
    const int n = config.n_frames;
    const auto total = static_cast<int>(clip.poses.size(0));
    const int cells = static_cast<int>(clip.poses.size(1) * clip.poses.size(2));
    DiffuserExample ex;
    std::vector<int64_t> idx;
    if (choose_training_mode(rng, config) == MaskMode::kInterpolation) {
        if (total < n) throw std::invalid_argument("clip shorter than n_frames");
        const int start = std::uniform_int_distribution<int>(0, total - n)(rng);
        for (int i = 0; i < n; ++i) idx.push_back(start + i);
        ex.text = kEmptyText;
        ex.mask = interpolation_mask(n, cells);
    } else {
        if (static_cast<int>(clip.normalized.size()) != n) throw std::invalid_argument("normalized clip length != n_frames");
        idx.assign(clip.normalized.begin(), clip.normalized.end());
        ex.text = clip.motion_text;
        ex.mask = sample_training_mask(n, cells, rng, config);
    }
    auto sel = torch::tensor(idx, torch::kInt64);
    ex.poses = clip.poses.index_select(0, sel);
    ex.frames = clip.frames.index_select(0, sel);
    ex.exemplar = ex.poses[0];
    ex.appearance = clip.appearance;
    return ex;
}

DiffuserTrainer::DiffuserTrainer(MotionDiffuser model, DecomposedVqvae vqvae, Vocabulary vocab,
                                 const DiffuserConfig& config, std::uint64_t seed)
    : model_(std::move(model)),
      vqvae_(std::move(vqvae)),
      vocab_(std::move(vocab)),
      config_(config),
      optimizer_(model_->parameters(), torch::optim::AdamOptions(config.lr)),
      rng_(seed) {
    vqvae_->eval();
    for (auto& p : vqvae_->parameters()) p.requires_grad_(false);
    if (!model_->has_codebook()) model_->attach_codebook(vqvae_->motion_codebook());
}

DiffuserMetrics DiffuserTrainer::train_step(const std::vector<DiffuserExample>& batch) {
    if (batch.empty()) throw std::invalid_argument("empty diffuser batch");
    model_->train();
    std::vector<torch::Tensor> ids, exemplars, poses, masks;
    DiffuserMetrics metrics;
    for (const auto& ex : batch) {
        ids.push_back(vocab_.tokenize_tensor(ex.text, static_cast<int>(model_->text_len())));
        exemplars.push_back(ex.exemplar);
        poses.push_back(ex.poses);
        masks.push_back(ex.mask.to_tensor());
        metrics.interpolation += ex.mask.mode == MaskMode::kInterpolation;
    }
    auto text_ids = torch::stack(ids);
    auto truth = torch::stack(poses);
    auto mask = torch::stack(masks);
    auto out = model_->forward(text_ids, torch::stack(exemplars), model_->mask_sequence(truth, mask));

    DiffuserLoss loss;
    if (model_->discrete()) {
        auto& cb = model_->codebook();
        auto target = cb->nearest_indices(truth.reshape({-1, cb->dim()}));
        auto per = torch::nn::functional::cross_entropy(
            out.reshape({-1, out.size(-1)}), target,
            torch::nn::functional::CrossEntropyFuncOptions().reduction(torch::kNone));
        auto m = mask.reshape({-1}).to(per.dtype());
        auto zero = torch::zeros({}, per.options());
        loss.components = {zero, zero, zero, zero, zero, (per * m).sum() / std::max(1.0, m.sum().item<double>())};
        loss.total = loss.components[5];
    } else {
        torch::Tensor q, fhat;
        if (model_->no_codebook()) {
            q = out.detach();
            fhat = out;
        } else {
            auto& cb = model_->codebook();
            q = cb->lookup(cb->nearest_indices(out.detach().reshape({-1, cb->dim()}))).reshape(out.sizes());
            fhat = straight_through(out, q);
        }
        const auto b = truth.size(0), n = truth.size(1);
        auto composed = torch::where(mask.reshape({b, n, truth.size(2), truth.size(3), 1}), fhat, truth);
        std::vector<torch::Tensor> app, motion, target;
        for (int64_t i = 0; i < b; ++i) {
            const auto& ex = batch[static_cast<std::size_t>(i)];
            std::vector<int> frames;
            for (int f = 0; f < ex.mask.n; ++f) {
                if (ex.mask.frame_any(f)) frames.push_back(f);
            }
            std::shuffle(frames.begin(), frames.end(), rng_);
            frames.resize(std::min<std::size_t>(frames.size(), static_cast<std::size_t>(config_.rec_frames)));
            for (int f : frames) {
                if (!vqvae_->unified()) app.push_back(ex.appearance);
                motion.push_back(composed[i][f]);
                target.push_back(ex.frames[f]);
            }
        }
        torch::Tensor decoded, target_frames;
        if (!motion.empty()) {
            auto mo = torch::stack(motion);
            decoded = vqvae_->unified() ? vqvae_->decode(mo, {}) : vqvae_->decode(torch::stack(app), mo);
            target_frames = torch::stack(target);
        }
        loss = diffuser_loss(out, q, truth, mask, decoded, target_frames);
    }

    const double value = loss.total.item<double>();
    if (!std::isfinite(value)) {
        std::string detail;
        for (std::size_t i = 0; i < loss.components.size(); ++i) {
            detail += std::string(i ? ", " : "") + kDiffuserLossNames[i] + "=" +
                      std::to_string(loss.components[i].item<double>());
        }
        throw NonFiniteLossError("diffuser loss became non-finite at step " + std::to_string(step_ + 1) + " (" +
                                 detail + ")");
    }
    optimizer_.zero_grad();
    loss.total.backward();
    optimizer_.step();
    model_->add_trained_steps(1);
    ++step_;
    metrics.step = step_;
    metrics.total = value;
    for (std::size_t i = 0; i < loss.components.size(); ++i) metrics.components[i] = loss.components[i].item<double>();
    return metrics;
}

DiffuserMetrics DiffuserTrainer::train_step(const std::vector<DiffuserClip>& clips) {
    if (clips.empty()) throw std::invalid_argument("no diffuser clips");
    std::uniform_int_distribution<std::size_t> pick(0, clips.size() - 1);
    std::vector<DiffuserExample> batch;
    for (int i = 0; i < config_.batch; ++i) batch.push_back(make_diffuser_example(clips[pick(rng_)], config_, rng_));
    return train_step(batch);
}

}  // namespace t2p
