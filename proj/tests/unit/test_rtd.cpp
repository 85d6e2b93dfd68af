#include <doctest.h>

#include <cmath>

#include "langadapt/error.h"
#include "langadapt/rtd.h"

using namespace langadapt;
using namespace langadapt::rtd;
using packing::PackedExample;

namespace {

std::vector<PackedExample> toy_examples(std::size_t count, std::size_t content_len, std::size_t vocab) {
    std::vector<PackedExample> out;
    Rng rng(99);
    for (std::size_t e = 0; e < count; ++e) {
        std::vector<TokenId> ids(content_len);
        for (auto& t : ids) t = static_cast<TokenId>(tokenizer::kNumSpecials + rng.below(vocab - tokenizer::kNumSpecials));
        out.push_back(PackedExample::frame(ids));
    }
    return out;
}

GdesPair<float> toy_pair(ModelConfig c, std::uint64_t seed = 3) {
    const auto w = model::init_model(c, seed);
    return make_pair(w, w, c, 1, seed);
}

} // namespace

TEST_CASE("mask_batch selection rules") {
    const auto ex = toy_examples(3, 10, 40);
    Rng rng(1);
    const auto none = mask_batch(ex, 0.0, rng);
    CHECK(none.masked_count() == 3);
    for (std::size_t b = 0; b < 3; ++b) {
        CHECK(none.mask_positions[b * packing::kSeqLen] == 0);
        CHECK(none.mask_positions[b * packing::kSeqLen + 11] == 0);
    }

    const auto all = mask_batch(ex, 1.0, rng);
    CHECK(all.masked_count() == 30);
    for (std::size_t i = 0; i < all.corrupted_ids.size(); ++i) {
        if (all.mask_positions[i]) CHECK(all.corrupted_ids[i] == tokenizer::kMask);
    }

    // 0.15 over 10 000 eligible positions: 99% binomial interval.
    const auto big = toy_examples(20, 500, 40);
    const auto sel = mask_batch(big, 0.15, rng);
    const double mean = 1500.0, sd = std::sqrt(10000 * 0.15 * 0.85);
    CHECK(std::abs(double(sel.masked_count()) - mean) <= 2.576 * sd);
}

TEST_CASE("sample_replacements") {
    Rng rng(5);
    const std::vector<float> one_hot = {-1e9f, -1e9f, 0.0f, -1e9f};
    for (int i = 0; i < 20; ++i) CHECK(sample_replacements(one_hot, 4, rng)[0] == 2);

    const std::size_t rows = 10000;
    std::vector<float> flat(rows * 2, 0.0f);
    std::size_t ones = 0;
    for (TokenId t : sample_replacements(flat, 2, rng)) ones += t == 1;
    CHECK(std::abs(double(ones) / rows - 0.5) < 0.02);

    const std::vector<float> bad = {0.0f, std::nanf("")};
    CHECK_THROWS_AS(sample_replacements(bad, 2, rng), NumericError);
}

TEST_CASE("build_rtd_inputs labels") {
    const std::vector<TokenId> orig = {1, 10, 11, 12, 2};
    const std::vector<std::uint8_t> mask = {0, 1, 0, 1, 0};
    const std::vector<TokenId> samples = {10, 30};
    const auto r = build_rtd_inputs(orig, mask, samples);
    CHECK(r.discriminator_ids == std::vector<TokenId>{1, 10, 11, 30, 2});
    // A sample equal to the original counts as original.
    CHECK(r.labels == std::vector<std::uint8_t>{0, 0, 0, 1, 0});
}

TEST_CASE("losses at known points") {
    CHECK(total_loss(2.0, 0.5, 50.0) == 27.0);

    // A zeroed pair has uniform MLM logits and zero discriminator logits.
    auto c = model::desk_preset();
    auto pair = toy_pair(c);
    auto zero = [](auto& v) { std::fill(v.begin(), v.end(), 0.0f); };
    zero(pair.shared_embedding);
    zero(pair.discriminator_head_weight);
    zero(pair.discriminator_head_bias);
    const auto ex = toy_examples(2, 12, c.vocab_size);
    Rng rng(2);
    const auto batch = mask_batch(ex, 0.15, rng);
    CHECK(generator_mlm_loss(pair, batch).loss == doctest::Approx(std::log(double(c.vocab_size))).epsilon(1e-6));
    const std::vector<std::uint8_t> labels(batch.original_ids.size(), 0);
    CHECK(discriminator_rtd_loss(pair, batch.original_ids, labels, batch.real_lens) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("schedule and step counts") {
    PretrainConfig p;
    p.phases = {{1, 8}, {2, 4}};
    CHECK(total_steps(p, 16) == 10);
    p.phases = {{1, 5}};
    CHECK(total_steps(p, 16) == 4); // last batch is smaller

    p.learning_rate = 1e-3;
    p.warmup_fraction = 0.1;
    // Steps are counted from 1.
    CHECK(learning_rate_at(p, 1, 100) == doctest::Approx(1e-4));
    CHECK(learning_rate_at(p, 5, 100) == doctest::Approx(5e-4));
    CHECK(learning_rate_at(p, 10, 100) == doctest::Approx(1e-3));
    CHECK(learning_rate_at(p, 50, 100) == doctest::Approx(1e-3));
    CHECK(learning_rate_at(p, 99, 100) == doctest::Approx(1e-3));

    CHECK(generator_depth(PretrainConfig{}, model::reference_preset()) == 6);
    PretrainConfig bad;
    bad.mask_rate = 0.0;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("export with zero delta equals the shared embedding") {
    auto c = model::desk_preset();
    const auto pair = toy_pair(c);
    const auto gen = generator_tensors(pair);
    const auto disc = discriminator_tensors(pair);
    CHECK(gen.at(model::kWordEmbeddingName).values == pair.shared_embedding);
    CHECK(disc.at(model::kWordEmbeddingName).values == pair.shared_embedding);
    CHECK(disc.contains("discriminator_head.weight"));
    CHECK(model::infer_config(gen).num_layers == 1);
}

TEST_CASE("train_rtd is deterministic") {
    auto c = model::desk_preset();
    const auto ex = toy_examples(16, 20, c.vocab_size);
    PretrainConfig p;
    p.phases = {{2, 4}};
    p.learning_rate = 2e-3;
    p.seed = 4;
    const auto w = model::init_model(c, 8);
    const auto a = train_rtd(ex, p, w, w, c);
    const auto b = train_rtd(ex, p, w, w, c);
    CHECK_FALSE(a.error.has_value());
    REQUIRE(a.history.size() == 8);
    CHECK(format_history_csv(a.history) == format_history_csv(b.history));
    CHECK(discriminator_tensors(a.pair) == discriminator_tensors(b.pair));
    // The delta table moved; the stop-gradient does not freeze it.
    bool moved = false;
    for (float d : a.pair.delta_embedding) moved |= d != 0.0f;
    CHECK(moved);
}
