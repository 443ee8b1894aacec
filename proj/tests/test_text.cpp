#include <fstream>

#include "helpers.hpp"
#include "t2p/dataset.hpp"
#include "t2p/errors.hpp"
#include "t2p/text.hpp"

#include <doctest.h>

using namespace t2p;

TEST_CASE("vocabulary reserves pad, unk and the empty text") {
    const auto v = Vocabulary::from_templates();
    CHECK(v.word(Vocabulary::kPad) == "<pad>");
    CHECK(v.word(Vocabulary::kUnk) == "<unk>");
    CHECK(v.word(Vocabulary::kEmpty) == kEmptyText);
    CHECK(v.id("empty") == Vocabulary::kEmpty);
    CHECK(v.id("spaceship") == Vocabulary::kUnk);
    CHECK(v.size() == static_cast<int64_t>(template_vocabulary().size()) + 3);
}

TEST_CASE("every template word is in the vocabulary") {
    const auto v = Vocabulary::from_templates();
    for (const auto& w : template_vocabulary()) CHECK(v.id(w) > Vocabulary::kEmpty);
}

TEST_CASE("tokenize lowercases, splits on punctuation, pads and truncates") {
    const auto v = Vocabulary::from_templates();
    const auto ids = v.tokenize("She  TURNS-around!", 6);
    REQUIRE(ids.size() == 6);
    CHECK(ids[0] == v.id("she"));
    CHECK(ids[1] == v.id("turns"));
    CHECK(ids[2] == v.id("around"));
    CHECK(ids[3] == Vocabulary::kPad);
    CHECK(ids[5] == Vocabulary::kPad);
    CHECK(v.tokenize("she turns around", 2).size() == 2);
    CHECK(v.tokenize("she zorbles", 3)[1] == Vocabulary::kUnk);
    CHECK(v.tokenize("empty", 3)[0] == Vocabulary::kEmpty);
    CHECK(torch::equal(v.tokenize_tensor("she turns", 4), torch::tensor({v.id("she"), v.id("turns"), 0L, 0L})));
}

TEST_CASE("vocabulary save/load round-trips and rejects files without reserved tokens") {
    const auto dir = testing::scratch_dir("vocab");
    const auto v = Vocabulary::from_templates();
    v.save(dir / "vocab.txt");
    CHECK(Vocabulary::load(dir / "vocab.txt") == v);
    {
        std::ofstream out(dir / "bad.txt");
        out << "hello\nworld\n";
    }
    CHECK_THROWS_AS(Vocabulary::load(dir / "bad.txt"), FormatError);
    CHECK_THROWS_AS(Vocabulary::load(dir / "missing.txt"), FormatError);
}

TEST_CASE("text embedder shapes and error handling") {
    torch::manual_seed(0);
    const auto v = Vocabulary::from_templates();
    TextConfig cfg;
    cfg.max_len = 8;
    cfg.dim = 16;
    TextEmbedder e(v.size(), cfg);
    const auto ids = torch::stack({v.tokenize_tensor("she turns around", 8), v.tokenize_tensor("empty", 8)});
    const auto out = e->forward(ids);
    CHECK(out.sizes() == torch::IntArrayRef({2, 8, 16}));
    CHECK_FALSE(torch::allclose(out[0], out[1]));
    CHECK_THROWS_AS(e->forward(torch::zeros({2, 9}, torch::kInt64)), std::invalid_argument);
    CHECK_THROWS_AS(e->forward(torch::full({1, 8}, v.size(), torch::kInt64)), std::out_of_range);
    const auto emb = e->embed(v, "she stands still");
    CHECK(emb.tokens.sizes() == torch::IntArrayRef({8, 16}));
    CHECK(emb.source_text == "she stands still");
    CHECK(torch::allclose(emb.tokens, e->forward(v.tokenize_tensor("she stands still", 8).unsqueeze(0))[0]));
}

TEST_CASE("text embedder without the attention block") {
    TextConfig cfg;
    cfg.max_len = 4;
    cfg.dim = 6;
    cfg.attention_block = false;
    TextEmbedder e(10, cfg);
    CHECK(e->forward(torch::zeros({3, 4}, torch::kInt64)).sizes() == torch::IntArrayRef({3, 4, 6}));
}
