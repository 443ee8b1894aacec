#include "t2p/text.hpp"

#include <cctype>
#include <fstream>
#include <stdexcept>

#include "t2p/dataset.hpp"
#include "t2p/errors.hpp"

namespace t2p {

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    for (std::size_t i = 0; i < words_.size(); ++i) {
        if (!index_.emplace(words_[i], static_cast<int64_t>(i)).second) {
            throw FormatError("vocabulary: duplicate token '" + words_[i] + "'");
        }
    }
}

Vocabulary Vocabulary::from_templates() {
    std::vector<std::string> words{"<pad>", "<unk>", kEmptyText};
    for (auto& w : template_vocabulary()) {
        if (w != kEmptyText) words.push_back(std::move(w));
    }
    return Vocabulary(std::move(words));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open vocabulary " + path.string());
    std::vector<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        words.push_back(line);
    }
    if (words.size() < 3 || words[kPad] != "<pad>" || words[kUnk] != "<unk>" || words[kEmpty] != kEmptyText) {
        throw FormatError("vocabulary " + path.string() + " lacks the reserved tokens");
    }
    return Vocabulary(std::move(words));
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write vocabulary " + path.string());
    for (const auto& w : words_) out << w << "\n";
}

int64_t Vocabulary::id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
}

std::vector<int64_t> Vocabulary::tokenize(const std::string& text, int max_len) const {
    std::vector<int64_t> ids;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            ids.push_back(id(word));
            word.clear();
        }
    };
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else {
            flush();
        }
    }
    flush();
    ids.resize(static_cast<std::size_t>(max_len), kPad);
    return ids;
}

torch::Tensor Vocabulary::tokenize_tensor(const std::string& text, int max_len) const {
    auto ids = tokenize(text, max_len);
    return torch::tensor(ids, torch::kInt64);
}

TextEmbedderImpl::TextEmbedderImpl(int64_t vocab_size, const TextConfig& config)
    : vocab_size_(vocab_size), max_len_(config.max_len), dim_(config.dim) {
    table = register_module("table", torch::nn::Embedding(vocab_size, config.dim));
    positions = register_parameter("positions", torch::randn({config.max_len, config.dim}) * 0.02);
    if (config.attention_block) {
        const int64_t heads = config.dim % 4 == 0 ? 4 : 1;
        block = register_module("block", TransformerBlock(config.dim, heads));
    }
}

torch::Tensor TextEmbedderImpl::forward(const torch::Tensor& ids) {
    if (ids.dim() != 2 || ids.size(1) != max_len_) {
        throw std::invalid_argument("text ids must be [B, " + std::to_string(max_len_) + "], got " +
                                    c10::str(ids.sizes()));
    }
    if (ids.numel() > 0 && (ids.min().item<int64_t>() < 0 || ids.max().item<int64_t>() >= vocab_size_)) {
        throw std::out_of_range("text token id outside the vocabulary");
    }
    auto x = table->forward(ids) + positions.unsqueeze(0);
    if (block) x = block->forward(x);
    return x;
}

TextEmbedding TextEmbedderImpl::embed(const Vocabulary& vocab, const std::string& text) {
    auto ids = vocab.tokenize_tensor(text, static_cast<int>(max_len_)).unsqueeze(0);
    return {forward(ids).squeeze(0), text};
}

}  // namespace t2p
