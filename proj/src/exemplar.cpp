#include "t2p/exemplar.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "t2p/errors.hpp"

namespace t2p {

int64_t committed_after_round(int64_t total, int round, int steps) {
    if (steps < 1) throw std::invalid_argument("steps must be >= 1");
    if (round >= steps) return total;
    if (round <= 0) return 0;
    const double remaining = std::cos(std::numbers::pi / 2.0 * round / steps);
    return total - static_cast<int64_t>(std::floor(static_cast<double>(total) * remaining));
}

ExemplarSamplerImpl::ExemplarSamplerImpl(int64_t vocab_size, const TextConfig& text, const ExemplarConfig& config,
                                         const GridGeometry& geometry, int64_t k_a, int64_t k_p, bool with_pose)
    : geometry_(geometry),
      k_a_(k_a),
      k_p_(k_p),
      n_app_(geometry.app_cells()),
      n_pose_(with_pose ? geometry.pose_cells() : 0),
      max_len_(text.max_len),
      with_pose_(with_pose) {
    const int64_t d = config.d_model;
    text_embedder = register_module("text_embedder", TextEmbedder(vocab_size, text));
    text_proj = register_module("text_proj", torch::nn::Linear(text.dim, d));
    app_embed = register_module("app_embed", torch::nn::Embedding(k_a + 1, d));
    pose_embed = register_module("pose_embed", torch::nn::Embedding(k_p + 1, d));
    segment = register_module("segment", torch::nn::Embedding(3, d));
    positions = register_parameter("positions", torch::randn({max_len_ + n_app_ + n_pose_, d}) * 0.02);
    stack = register_module("stack", TransformerStack(d, config.heads, config.layers));
    app_head = register_module("app_head", torch::nn::Linear(d, k_a));
    pose_head = register_module("pose_head", torch::nn::Linear(d, k_p));
    {
        torch::NoGradGuard guard;
        for (auto* head : {&app_head, &pose_head}) {
            (*head)->weight.normal_(0.0, 0.02);
            (*head)->bias.zero_();
        }
    }
    trained_steps_ = register_buffer("trained_steps", torch::zeros({1}, torch::kInt64));
}

std::pair<torch::Tensor, torch::Tensor> ExemplarSamplerImpl::forward(const torch::Tensor& text_ids,
                                                                     const torch::Tensor& app_tokens,
                                                                     const torch::Tensor& pose_tokens) {
    const auto b = text_ids.size(0);
    if (app_tokens.dim() != 2 || app_tokens.size(0) != b || app_tokens.size(1) != n_app_) {
        throw std::invalid_argument("appearance tokens must be [" + std::to_string(b) + ", " +
                                    std::to_string(n_app_) + "], got " + c10::str(app_tokens.sizes()));
    }
    std::vector<torch::Tensor> parts{text_proj->forward(text_embedder->forward(text_ids)),
                                     app_embed->forward(app_tokens)};
    std::vector<int64_t> seg_ids(static_cast<std::size_t>(max_len_), 0);
    seg_ids.insert(seg_ids.end(), static_cast<std::size_t>(n_app_), 1);
    if (with_pose_) {
        if (pose_tokens.dim() != 2 || pose_tokens.size(0) != b || pose_tokens.size(1) != n_pose_) {
            throw std::invalid_argument("pose tokens must be [" + std::to_string(b) + ", " +
                                        std::to_string(n_pose_) + "], got " + c10::str(pose_tokens.sizes()));
        }
        parts.push_back(pose_embed->forward(pose_tokens));
        seg_ids.insert(seg_ids.end(), static_cast<std::size_t>(n_pose_), 2);
    }
    auto x = torch::cat(parts, 1) + positions.unsqueeze(0) +
             segment->forward(torch::tensor(seg_ids, torch::kInt64)).unsqueeze(0);
    auto h = stack->forward(x);
    auto app_logits = app_head->forward(h.narrow(1, max_len_, n_app_));
    torch::Tensor pose_logits;
    if (with_pose_) pose_logits = pose_head->forward(h.narrow(1, max_len_ + n_app_, n_pose_));
    return {app_logits, pose_logits};
}

ExemplarSample ExemplarSamplerImpl::sample(const Vocabulary& vocab, const std::string& appearance_text,
                                           std::uint64_t seed, int steps, double temperature) {
    if (trained_steps() == 0) throw std::logic_error("exemplar sampler has not been trained");
    if (steps < 1) throw std::invalid_argument("exemplar sampling needs steps >= 1");
    torch::NoGradGuard guard;
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);

    const int64_t total = n_app_ + n_pose_;
    auto text_ids = vocab.tokenize_tensor(appearance_text, static_cast<int>(max_len_)).unsqueeze(0);
    auto app = torch::full({1, n_app_}, k_a_, torch::kInt64);
    auto pose = torch::full({1, std::max<int64_t>(n_pose_, 1)}, k_p_, torch::kInt64).narrow(1, 0, n_pose_);
    std::vector<bool> committed(static_cast<std::size_t>(total), false);
    int64_t n_committed = 0;

    for (int round = 1; round <= steps; ++round) {
        auto [app_logits, pose_logits] = forward(text_ids, app, with_pose_ ? pose : torch::Tensor());
        // Per position: draw a candidate and record its probability as confidence.
        std::vector<int64_t> candidate(static_cast<std::size_t>(total));
        std::vector<double> confidence(static_cast<std::size_t>(total));
        auto draw = [&](const torch::Tensor& logits, int64_t offset) {
            if (!logits.defined() || logits.size(1) == 0) return;
            auto lg = logits[0];
            auto probs = torch::softmax(temperature > 0 ? lg / temperature : lg, -1);
            torch::Tensor picks = temperature > 0 ? torch::multinomial(probs, 1, false, gen).squeeze(1)
                                                  : probs.argmax(-1);
            auto conf = probs.gather(1, picks.unsqueeze(1)).squeeze(1);
            for (int64_t i = 0; i < picks.size(0); ++i) {
                candidate[static_cast<std::size_t>(offset + i)] = picks[i].item<int64_t>();
                confidence[static_cast<std::size_t>(offset + i)] = conf[i].item<double>();
            }
        };
        draw(app_logits, 0);
        draw(pose_logits, n_app_);

        std::vector<int64_t> open;
        for (int64_t i = 0; i < total; ++i) {
            if (!committed[static_cast<std::size_t>(i)]) open.push_back(i);
        }
        std::stable_sort(open.begin(), open.end(), [&](int64_t a, int64_t b) {
            return confidence[static_cast<std::size_t>(a)] > confidence[static_cast<std::size_t>(b)];
        });
        const int64_t target = committed_after_round(total, round, steps);
        for (int64_t j = 0; j < target - n_committed; ++j) {
            const int64_t pos = open[static_cast<std::size_t>(j)];
            committed[static_cast<std::size_t>(pos)] = true;
            const int64_t id = candidate[static_cast<std::size_t>(pos)];
            if (pos < n_app_) {
                app[0][pos] = id;
            } else {
                pose[0][pos - n_app_] = id;
            }
        }
        n_committed = target;
    }

    ExemplarSample out;
    out.appearance_indices = app[0].reshape({geometry_.app_h, geometry_.app_w}).clone();
    if (with_pose_) out.pose_indices = pose[0].reshape({geometry_.pose_h, geometry_.pose_w}).clone();
    return out;
}

ExemplarLoss exemplar_loss(ExemplarSampler& model, const torch::Tensor& text_ids, const torch::Tensor& app_idx,
                           const torch::Tensor& pose_idx, const torch::Tensor& app_mask,
                           const torch::Tensor& pose_mask) {
    auto app_in = torch::where(app_mask, torch::full_like(app_idx, model->k_a()), app_idx);
    torch::Tensor pose_in;
    if (model->with_pose()) pose_in = torch::where(pose_mask, torch::full_like(pose_idx, model->k_p()), pose_idx);
    auto [app_logits, pose_logits] = model->forward(text_ids, app_in, pose_in);

    ExemplarLoss out;
    auto ce = [](const torch::Tensor& logits, const torch::Tensor& target, const torch::Tensor& mask) {
        auto per = torch::nn::functional::cross_entropy(
            logits.reshape({-1, logits.size(-1)}), target.reshape({-1}),
            torch::nn::functional::CrossEntropyFuncOptions().reduction(torch::kNone));
        return (per * mask.reshape({-1}).to(per.dtype())).sum();
    };
    auto app_sum = ce(app_logits, app_idx, app_mask);
    const int64_t app_n = app_mask.sum().item<int64_t>();
    auto sum = app_sum;
    int64_t n = app_n;
    out.app_ce = app_sum.detach() / static_cast<double>(std::max<int64_t>(1, app_n));
    out.pose_ce = torch::zeros({}, app_sum.options());
    if (model->with_pose()) {
        auto pose_sum = ce(pose_logits, pose_idx, pose_mask);
        const int64_t pose_n = pose_mask.sum().item<int64_t>();
        sum = sum + pose_sum;
        n += pose_n;
        out.pose_ce = pose_sum.detach() / static_cast<double>(std::max<int64_t>(1, pose_n));
    }
    out.total = sum / static_cast<double>(std::max<int64_t>(1, n));
    out.masked = n;
    return out;
}

torch::Tensor random_position_mask(int64_t total, int64_t count, std::mt19937_64& rng) {
    std::vector<int64_t> order(static_cast<std::size_t>(total));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    auto mask = torch::zeros({total}, torch::kBool);
    auto* p = mask.data_ptr<bool>();
    for (int64_t i = 0; i < std::min(count, total); ++i) p[order[static_cast<std::size_t>(i)]] = true;
    return mask;
}

ExemplarTrainer::ExemplarTrainer(ExemplarSampler model, Vocabulary vocab, const ExemplarConfig& config,
                                 std::uint64_t seed)
    : model_(std::move(model)),
      vocab_(std::move(vocab)),
      config_(config),
      optimizer_(model_->parameters(), torch::optim::AdamOptions(config.lr)),
      rng_(seed) {}

ExemplarMetrics ExemplarTrainer::train_step(const std::vector<ExemplarExample>& batch) {
    if (batch.empty()) throw std::invalid_argument("empty exemplar batch");
    model_->train();
    const int64_t total = model_->app_cells() + model_->pose_cells();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<torch::Tensor> ids, app, pose, app_masks, pose_masks;
    for (const auto& ex : batch) {
        ids.push_back(vocab_.tokenize_tensor(ex.text, static_cast<int>(model_->text_embedder->max_len())));
        app.push_back(ex.appearance_indices.reshape({-1}));
        const double ratio = std::cos(std::numbers::pi / 2.0 * unit(rng_));
        auto m = random_position_mask(total, static_cast<int64_t>(std::floor(ratio * total)), rng_);
        app_masks.push_back(m.narrow(0, 0, model_->app_cells()));
        if (model_->with_pose()) {
            pose.push_back(ex.pose_indices.reshape({-1}));
            pose_masks.push_back(m.narrow(0, model_->app_cells(), model_->pose_cells()));
        }
    }
    auto text_ids = torch::stack(ids);
    auto loss = exemplar_loss(model_, text_ids, torch::stack(app), model_->with_pose() ? torch::stack(pose) : torch::Tensor(),
                              torch::stack(app_masks), model_->with_pose() ? torch::stack(pose_masks) : torch::Tensor());
    const double value = loss.total.item<double>();
    if (!std::isfinite(value)) {
        throw NonFiniteLossError("exemplar loss became non-finite at step " + std::to_string(step_ + 1) +
                                 " (app_ce=" + std::to_string(loss.app_ce.item<double>()) +
                                 ", pose_ce=" + std::to_string(loss.pose_ce.item<double>()) + ")");
    }
    optimizer_.zero_grad();
    loss.total.backward();
    optimizer_.step();
    model_->add_trained_steps(1);
    ++step_;
    return {step_, value, loss.app_ce.item<double>(), loss.pose_ce.item<double>(), loss.masked};
}

}  // namespace t2p
