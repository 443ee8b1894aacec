#pragma once

#include <torch/torch.h>

namespace t2p {

// Full (non-causal) multi-head self-attention.
struct SelfAttentionImpl : torch::nn::Module {
    SelfAttentionImpl(int64_t d_model, int64_t heads);
    torch::Tensor forward(const torch::Tensor& x);  // [B, T, D]

    int64_t heads;
    torch::nn::Linear qkv{nullptr}, proj{nullptr};
};
TORCH_MODULE(SelfAttention);

// Pre-norm block: x + attn(ln(x)), then x + mlp(ln(x)).
struct TransformerBlockImpl : torch::nn::Module {
    TransformerBlockImpl(int64_t d_model, int64_t heads, int64_t ff_mult = 4);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::LayerNorm ln1{nullptr}, ln2{nullptr};
    SelfAttention attn{nullptr};
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(TransformerBlock);

struct TransformerStackImpl : torch::nn::Module {
    TransformerStackImpl(int64_t d_model, int64_t heads, int64_t layers);
    torch::Tensor forward(torch::Tensor x);

    torch::nn::ModuleList blocks{nullptr};
    torch::nn::LayerNorm final_norm{nullptr};
};
TORCH_MODULE(TransformerStack);

}  // namespace t2p
