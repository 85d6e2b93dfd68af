#include <doctest.h>

#include <cmath>

#include "langadapt/error.h"
#include "langadapt/model.h"
#include "langadapt/optimizer.h"
#include "support.h"

using namespace langadapt;
using namespace langadapt::model;

namespace {

std::vector<TokenId> framed(std::initializer_list<TokenId> content, std::size_t seq_len) {
    std::vector<TokenId> ids(seq_len, tokenizer::kPad);
    ids[0] = tokenizer::kCls;
    std::size_t i = 1;
    for (TokenId t : content) ids[i++] = t;
    ids[i] = tokenizer::kSep;
    return ids;
}

} // namespace

TEST_CASE("presets and parameter counts") {
    CHECK(reference_preset().num_layers == 12);
    CHECK(reference_preset().hidden_dim == 384);
    const auto desk = desk_preset();
    CHECK_NOTHROW(desk.validate());
    CHECK(count_params(init_model(desk, 1)) == count_params(desk));

    ModelConfig empty = desk;
    empty.vocab_size = 10;
    empty.hidden_dim = 4;
    empty.num_heads = 1;
    empty.num_layers = 0;
    // Embedding 10x4 plus the embedding layer norm.
    CHECK(count_params(empty) == 40 + 8);

    ModelConfig bad = desk;
    bad.num_heads = 3;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("init is deterministic and follows the recipe") {
    const auto c = desk_preset();
    const auto a = init_model(c, 3);
    CHECK(to_tensor_map(a, c) == to_tensor_map(init_model(c, 3), c));
    CHECK_FALSE(to_tensor_map(a, c) == to_tensor_map(init_model(c, 4), c));
    for (float g : a.body.embedding_norm.gain) CHECK(g == 1.0f);
    for (float b : a.body.layers[0].query.bias) CHECK(b == 0.0f);
    CHECK(a.word_embedding == init_tensor(kWordEmbeddingName, c.vocab_size * c.hidden_dim, 3));
}

TEST_CASE("forward is deterministic and ignores padding") {
    const auto c = desk_preset();
    const auto w = init_model(c, 11);
    const std::size_t n = 24;
    const auto ids = framed({7, 8, 9, 10}, n);
    const std::vector<std::size_t> lens = {6};
    const auto h1 = forward(w, c, ids, lens, n);
    CHECK(h1 == forward(w, c, ids, lens, n));

    auto noisy = ids;
    for (std::size_t i = 6; i < n; ++i) noisy[i] = 12; // garbage beyond the real length
    const auto h2 = forward(w, c, noisy, lens, n);
    double worst = 0.0;
    for (std::size_t i = 0; i < 6 * c.hidden_dim; ++i) worst = std::max(worst, double(std::abs(h1[i] - h2[i])));
    CHECK(worst <= 1e-5);

    auto out_of_range = ids;
    out_of_range[1] = static_cast<TokenId>(c.vocab_size);
    CHECK_THROWS_AS(forward(w, c, out_of_range, lens, n), Error);
}

TEST_CASE("surgery reshapes the embedding") {
    auto c = desk_preset();
    c.vocab_size = 100;
    const auto donor = to_tensor_map(init_model(c, 1), c);
    const auto out = embedding_surgery(donor, 30, c, 2);
    CHECK(out.word_embedding.size() == 30 * c.hidden_dim);
    auto t = c;
    t.vocab_size = 30;
    const auto map = to_tensor_map(out, t);
    CHECK(map.at(kWordEmbeddingName).shape == std::vector<std::uint32_t>{30, std::uint32_t(c.hidden_dim)});
    CHECK(map.at("layer.1.ffn.output.weight") == donor.at("layer.1.ffn.output.weight"));
    CHECK(is_reinitialized_by_surgery("layer.0.attention.relative_bias"));
    CHECK_FALSE(is_reinitialized_by_surgery("layer.0.attention.relative_bias", {true}));
    CHECK_FALSE(is_reinitialized_by_surgery("layer.0.attention.query.weight"));
}

TEST_CASE("checkpoints round-trip and reject truncation") {
    unit::TempDir dir("ckpt");
    const auto c = desk_preset();
    const auto map = to_tensor_map(init_model(c, 5), c);
    save_checkpoint(map, dir / "m.ckpt");
    const auto back = load_checkpoint(dir / "m.ckpt");
    CHECK(back == map);
    CHECK(infer_config(back, c) == c);
    CHECK(to_tensor_map(from_tensor_map(back, c), c) == map);

    const auto bytes = unit::read_file(dir / "m.ckpt");
    unit::write_file(dir / "short.ckpt", bytes.substr(0, bytes.size() - 10));
    CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), FormatError);

    TensorMap missing;
    CHECK_THROWS_AS(from_tensor_map(missing, c), FormatError);

    TensorMap bad = map;
    bad.at("layer.0.ffn.norm.gain").values[0] = std::nanf("");
    CHECK_THROWS_AS(save_checkpoint(bad, dir / "nan.ckpt"), Error);
}

TEST_CASE("AdamW first step matches the closed form") {
    // After one step with bias correction, mhat = g and vhat = g^2, so each
    // weight moves by lr * g / (|g| + eps) plus decoupled decay.
    AdamW opt(AdamWConfig{0.9, 0.999, 1e-6, 0.1});
    std::vector<float> w = {1.0f, -2.0f}, g = {0.5f, -4.0f};
    std::vector<float> b = {3.0f}, gb = {1.0f};
    opt.step({{&w, &g, true}, {&b, &gb, false}}, 0.01);
    CHECK(w[0] == doctest::Approx(1.0 * (1 - 0.001) - 0.01 * 0.5 / (0.5 + 1e-6)).epsilon(1e-6));
    CHECK(w[1] == doctest::Approx(-2.0 * (1 - 0.001) + 0.01 * 4.0 / (4.0 + 1e-6)).epsilon(1e-6));
    CHECK(b[0] == doctest::Approx(3.0 - 0.01 / (1.0 + 1e-6)).epsilon(1e-6));
    CHECK(opt.steps() == 1);
    CHECK_THROWS_AS(opt.step({{&w, &g, true}}, 0.01), Error);
}
