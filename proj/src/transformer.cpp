#include "t2p/transformer.hpp"

#include <cmath>
#include <stdexcept>

namespace t2p {

SelfAttentionImpl::SelfAttentionImpl(int64_t d_model, int64_t heads_)
    : heads(heads_),
      qkv(register_module("qkv", torch::nn::Linear(d_model, 3 * d_model))),
      proj(register_module("proj", torch::nn::Linear(d_model, d_model))) {
    if (d_model % heads_ != 0) throw std::invalid_argument("d_model must be divisible by heads");
}

torch::Tensor SelfAttentionImpl::forward(const torch::Tensor& x) {
    const auto b = x.size(0), t = x.size(1), d = x.size(2);
    const auto dh = d / heads;
    auto parts = qkv->forward(x).view({b, t, 3, heads, dh}).permute({2, 0, 3, 1, 4});
    auto q = parts[0], k = parts[1], v = parts[2];  // [B, H, T, dh]
    auto att = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(dh)), -1);
    auto out = torch::matmul(att, v).transpose(1, 2).reshape({b, t, d});
    return proj->forward(out);
}

TransformerBlockImpl::TransformerBlockImpl(int64_t d_model, int64_t heads, int64_t ff_mult)
    : ln1(register_module("ln1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d_model})))),
      ln2(register_module("ln2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d_model})))),
      attn(register_module("attn", SelfAttention(d_model, heads))),
      fc1(register_module("fc1", torch::nn::Linear(d_model, ff_mult * d_model))),
      fc2(register_module("fc2", torch::nn::Linear(ff_mult * d_model, d_model))) {}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x) {
    auto h = x + attn->forward(ln1->forward(x));
    return h + fc2->forward(torch::gelu(fc1->forward(ln2->forward(h))));
}

TransformerStackImpl::TransformerStackImpl(int64_t d_model, int64_t heads, int64_t layers)
    : blocks(register_module("blocks", torch::nn::ModuleList())),
      final_norm(register_module("final_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d_model})))) {
    for (int64_t i = 0; i < layers; ++i) blocks->push_back(TransformerBlock(d_model, heads));
}

torch::Tensor TransformerStackImpl::forward(torch::Tensor x) {
    for (const auto& block : *blocks) x = block->as<TransformerBlockImpl>()->forward(x);
    return final_norm->forward(x);
}

}  // namespace t2p
