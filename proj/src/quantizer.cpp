#include "t2p/quantizer.hpp"

#include <stdexcept>
#include <string>

namespace t2p {
namespace {

struct StraightThroughFn : public torch::autograd::Function<StraightThroughFn> {
    static torch::Tensor forward(torch::autograd::AutogradContext* /*ctx*/, const torch::Tensor& /*grid*/,
                                 const torch::Tensor& quantized) {
        return quantized.detach().clone();
    }

    static torch::autograd::variable_list backward(torch::autograd::AutogradContext* /*ctx*/,
                                                   torch::autograd::variable_list grads) {
        return {grads[0], torch::Tensor()};
    }
};

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* op) {
    if (!a.sizes().equals(b.sizes())) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + c10::str(a.sizes()) + " vs " +
                                    c10::str(b.sizes()));
    }
}

}  // namespace

CodebookImpl::CodebookImpl(int64_t entries, int64_t dim) {
    if (entries < 1 || dim < 1) throw std::invalid_argument("Codebook needs K >= 1 and d >= 1");
    entries_ = register_parameter("entries",
                                  torch::empty({entries, dim}).uniform_(-1.0 / entries, 1.0 / entries));
    usage_count_ = register_buffer("usage_count", torch::zeros({entries}, torch::kInt64));
    idle_updates_ = register_buffer("idle_updates", torch::zeros({entries}, torch::kInt64));
}

void CodebookImpl::check_dim(const torch::Tensor& t, const char* what) const {
    if (t.dim() < 1 || t.size(-1) != dim()) {
        throw std::invalid_argument(std::string(what) + ": expected trailing dimension " + std::to_string(dim()) +
                                    ", got shape " + c10::str(t.sizes()));
    }
}

torch::Tensor CodebookImpl::nearest_indices(const torch::Tensor& rows) const {
    check_dim(rows, "nearest");
    torch::NoGradGuard no_grad;
    // Distances in double so near-ties resolve the same way as a scalar scan.
    const auto flat = rows.reshape({-1, dim()}).to(torch::kFloat64);
    const auto table = entries_.detach().to(torch::kFloat64);
    constexpr int64_t kChunk = 512;
    std::vector<torch::Tensor> parts;
    for (int64_t start = 0; start < flat.size(0); start += kChunk) {
        const auto chunk = flat.slice(0, start, std::min(start + kChunk, flat.size(0)));
        // Direct differences rather than the |a|^2 + |b|^2 - 2ab expansion, so
        // results agree with a plain scan.
        const auto dist = (chunk.unsqueeze(1) - table.unsqueeze(0)).pow(2).sum(-1);
        parts.push_back(dist.argmin(1));
    }
    if (parts.empty()) return torch::empty({0}, torch::kInt64);
    return torch::cat(parts);
}

std::pair<torch::Tensor, int64_t> CodebookImpl::nearest(const torch::Tensor& vector) {
    if (vector.dim() != 1) throw std::invalid_argument("nearest: expected a single vector");
    auto result = quantize(vector.unsqueeze(0));
    return {result.quantized.squeeze(0), result.indices.item<int64_t>()};
}

QuantizeResult CodebookImpl::quantize(const torch::Tensor& grid) {
    check_dim(grid, "quantize");
    const auto idx = nearest_indices(grid);
    {
        torch::NoGradGuard no_grad;
        usage_count_.index_add_(0, idx, torch::ones({idx.numel()}, usage_count_.options()));
    }
    auto cell_shape = grid.sizes().vec();
    cell_shape.pop_back();
    QuantizeResult out;
    out.quantized = entries_.index_select(0, idx).reshape(grid.sizes());
    out.indices = idx.reshape(cell_shape);
    return out;
}

torch::Tensor CodebookImpl::lookup(const torch::Tensor& indices) const {
    if (indices.numel() > 0 && (indices.min().item<int64_t>() < 0 || indices.max().item<int64_t>() >= size())) {
        throw std::out_of_range("codebook index out of range");
    }
    auto shape = indices.sizes().vec();
    shape.push_back(dim());
    return entries_.index_select(0, indices.reshape({-1}).to(torch::kInt64)).reshape(shape);
}

int CodebookImpl::reinit_dead_entries(const torch::Tensor& donor, std::mt19937_64& rng, int staleness_threshold) {
    check_dim(donor, "reinit_dead_entries");
    const auto rows = donor.detach().reshape({-1, dim()});
    if (rows.size(0) == 0) throw std::invalid_argument("reinit_dead_entries: donor is empty");

    torch::NoGradGuard no_grad;
    const auto unused = usage_count_.eq(0);
    idle_updates_.copy_(torch::where(unused, idle_updates_ + 1, torch::zeros_like(idle_updates_)));
    usage_count_.zero_();
    if (staleness_threshold <= 0) return 0;

    const auto dead = idle_updates_.ge(staleness_threshold).nonzero().reshape({-1});
    const int64_t n_dead = dead.size(0);
    std::uniform_int_distribution<int64_t> pick(0, rows.size(0) - 1);
    for (int64_t i = 0; i < n_dead; ++i) {
        const int64_t k = dead[i].item<int64_t>();
        entries_[k].copy_(rows[pick(rng)].to(entries_.dtype()));
        idle_updates_[k] = 0;
    }
    return static_cast<int>(n_dead);
}

void CodebookImpl::init_from(const torch::Tensor& donor, std::mt19937_64& rng) {
    check_dim(donor, "init_from");
    const auto rows = donor.detach().reshape({-1, dim()});
    if (rows.size(0) == 0) throw std::invalid_argument("init_from: donor is empty");
    torch::NoGradGuard no_grad;
    std::uniform_int_distribution<int64_t> pick(0, rows.size(0) - 1);
    for (int64_t k = 0; k < size(); ++k) entries_[k].copy_(rows[pick(rng)].to(entries_.dtype()));
}

VqLosses vq_losses(const torch::Tensor& grid, const torch::Tensor& quantized) {
    check_same_shape(grid, quantized, "vq_losses");
    VqLosses out;
    out.codebook_term = (grid.detach() - quantized).pow(2).sum(-1).mean();
    out.commitment_term = (quantized.detach() - grid).pow(2).sum(-1).mean();
    return out;
}

torch::Tensor straight_through(const torch::Tensor& grid, const torch::Tensor& quantized) {
    check_same_shape(grid, quantized, "straight_through");
    return StraightThroughFn::apply(grid, quantized);
}

}  // namespace t2p
