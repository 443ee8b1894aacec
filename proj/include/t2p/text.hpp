#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "t2p/config.hpp"
#include "t2p/transformer.hpp"

namespace t2p {

// Reserved text used for interpolation-mode conditioning.
inline constexpr const char* kEmptyText = "empty";

// Closed word list: <pad>, <unk>, empty, then the template words.
class Vocabulary {
public:
    static constexpr int64_t kPad = 0;
    static constexpr int64_t kUnk = 1;
    static constexpr int64_t kEmpty = 2;

    static Vocabulary from_templates();
    // One token per line; the line number is the id.
    static Vocabulary load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    int64_t size() const { return static_cast<int64_t>(words_.size()); }
    int64_t id(const std::string& word) const;
    const std::string& word(int64_t id) const { return words_.at(static_cast<std::size_t>(id)); }

    // Lowercase, split on anything that is not a letter or digit, map unknown
    // words to <unk>, pad/truncate to `max_len`.
    std::vector<int64_t> tokenize(const std::string& text, int max_len) const;
    torch::Tensor tokenize_tensor(const std::string& text, int max_len) const;

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.words_ == b.words_; }

private:
    explicit Vocabulary(std::vector<std::string> words);

    std::vector<std::string> words_;
    std::unordered_map<std::string, int64_t> index_;
};

struct TextEmbedding {
    torch::Tensor tokens;  // [L, d_t]
    std::string source_text;
};

// Token table + learned positions + an optional self-attention block. Each
// sampler owns its own instance and trains it jointly.
class TextEmbedderImpl : public torch::nn::Module {
public:
    TextEmbedderImpl(int64_t vocab_size, const TextConfig& config);

    // ids [B, L] -> [B, L, d_t]. Throws std::out_of_range for ids outside the vocabulary.
    torch::Tensor forward(const torch::Tensor& ids);
    TextEmbedding embed(const Vocabulary& vocab, const std::string& text);

    int64_t max_len() const { return max_len_; }
    int64_t dim() const { return dim_; }

private:
    int64_t vocab_size_, max_len_, dim_;
    torch::nn::Embedding table{nullptr};
    torch::Tensor positions;
    TransformerBlock block{nullptr};
};
TORCH_MODULE(TextEmbedder);

}  // namespace t2p
