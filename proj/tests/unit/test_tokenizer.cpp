#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "langadapt/error.h"
#include "langadapt/tokenizer.h"
#include "langadapt/utf8.h"
#include "support.h"

using namespace langadapt;
using namespace langadapt::tokenizer;

namespace {

Vocabulary toy_vocab() { return Vocabulary({{"a", -1.0}, {"b", -1.2}, {"ab", -1.5}}); }

std::vector<std::string> pieces_of(const Segmentation& s, const Vocabulary& v) { return s.pieces(v); }

} // namespace

TEST_CASE("specials are pinned to ids 0-4") {
    const auto v = toy_vocab();
    CHECK(v.size() == 8);
    CHECK(v.piece(kPad) == "[PAD]");
    CHECK(v.piece(kCls) == "[CLS]");
    CHECK(v.piece(kSep) == "[SEP]");
    CHECK(v.piece(kUnk) == "[UNK]");
    CHECK(v.piece(kMask) == "[MASK]");
    CHECK(v.find("ab").value() == 7);
}

TEST_CASE("vocabulary rejects bad pieces") {
    CHECK_THROWS_AS(Vocabulary({{"a", -1.0}, {"a", -2.0}}), FormatError);
    CHECK_THROWS_AS(Vocabulary({{"", -1.0}}), FormatError);
    CHECK_THROWS_AS(Vocabulary({{"[CLS]", -1.0}}), FormatError);
    CHECK_THROWS_AS(Vocabulary({{"a", 0.5}}), FormatError);
}

TEST_CASE("viterbi picks the best-scoring segmentation") {
    const auto v = toy_vocab();
    const auto seg = viterbi_segment(std::u32string_view(U"ab"), v);
    CHECK(pieces_of(seg, v) == std::vector<std::string>{"ab"});
    CHECK(seg.score == -1.5);

    const auto single = viterbi_segment(std::u32string_view(U"b"), v);
    CHECK(pieces_of(single, v) == std::vector<std::string>{"b"});

    const auto unk = viterbi_segment(std::u32string_view(U"q"), v);
    CHECK(unk.ids == std::vector<TokenId>{kUnk});
    CHECK(unk.score == -20.0);
}

TEST_CASE("viterbi tie-breaks by piece count then lexicographic order") {
    // "abc": ab+c and a+bc both score -4 with two pieces; abc alone also -4.
    const Vocabulary v({{"a", -2.0}, {"b", -2.0}, {"c", -2.0}, {"ab", -2.0}, {"bc", -2.0}, {"abc", -4.0}});
    CHECK(pieces_of(viterbi_segment(std::u32string_view(U"abc"), v), v) == std::vector<std::string>{"abc"});
    const Vocabulary w({{"a", -2.0}, {"b", -2.0}, {"c", -2.0}, {"ab", -2.0}, {"bc", -2.0}});
    CHECK(pieces_of(viterbi_segment(std::u32string_view(U"abc"), w), w) == std::vector<std::string>{"a", "bc"});
}

TEST_CASE("encode and decode") {
    const Vocabulary v({{"\xE2\x96\x81" "ab", -1.0}, {"\xE2\x96\x81", -3.0}, {"a", -3.0}, {"b", -3.0}});
    const auto ab = v.find("\xE2\x96\x81" "ab").value();
    CHECK(encode("", v).empty());
    CHECK(encode("ab ab", v) == std::vector<TokenId>{ab, ab});
    CHECK(encode("ab", v) == std::vector<TokenId>{ab});
    CHECK(decode(std::vector<TokenId>{}, v).empty());
    CHECK(decode(encode("ab  ab", v), v) == "ab ab");
    CHECK(decode(std::vector<TokenId>{kCls, ab, kSep, kPad}, v) == "ab");
    CHECK_THROWS_AS(decode(std::vector<TokenId>{static_cast<TokenId>(v.size())}, v), Error);
}

TEST_CASE("normalize marks word starts") {
    CHECK(normalize("bom dia") == U"▁bom▁dia");
    CHECK(split_words("  bom   dia ") == std::vector<std::u32string>{U"▁bom", U"▁dia"});
}

TEST_CASE("seed candidates") {
    TrainerConfig c;
    c.max_piece_len = 2;
    const std::vector<std::string> aa = {"aa"};
    const auto cands = collect_seed_candidates(aa, c);
    const auto count_of = [&](std::u32string p) {
        const auto it = std::find_if(cands.begin(), cands.end(), [&](const Candidate& x) { return x.piece == p; });
        return it == cands.end() ? std::uint64_t{0} : it->count;
    };
    CHECK(count_of(U"a") == 2);
    CHECK(count_of(U"aa") == 1);
    CHECK(count_of(U"▁") == 1);
    CHECK(count_of(U"▁a") == 1);

    const std::vector<std::string> b = {"b"};
    CHECK(collect_seed_candidates(b, c).size() >= 2);

    const std::vector<std::string> rich = {"abcdef abcdef bcdefa", "fedcba cab"};
    TrainerConfig small;
    small.seed_size = 3;
    std::size_t multi = 0, singles = 0;
    for (const auto& cand : collect_seed_candidates(rich, small)) (cand.piece.size() > 1 ? multi : singles)++;
    CHECK(multi == 3);
    CHECK(singles == 7); // a-f plus the boundary marker

    CHECK_THROWS(collect_seed_candidates(std::vector<std::string>{}, c));
}

TEST_CASE("em_step matches the hand-computed lattice") {
    // Words "ab" x2 and "b" x1 under uniform {a, b, ab}.
    const WordCounts words = {{U"ab", 2}, {U"b", 1}};
    const double third = std::log(1.0 / 3.0);
    const Vocabulary v({{"a", third}, {"b", third}, {"ab", third}});
    const auto r = em_step(words, v);
    // P("ab") = 1/3 + 1/9 = 4/9; P("b") = 1/3.
    CHECK(r.log_likelihood == doctest::Approx(2 * std::log(4.0 / 9.0) + std::log(1.0 / 3.0)).epsilon(1e-12));
    // Posterior of "ab" as one piece is 3/4: counts ab 1.5, a 0.5, b 1.5.
    CHECK(std::exp(r.vocab.log_prob(r.vocab.find("ab").value())) == doctest::Approx(3.0 / 7.0).epsilon(1e-12));
    CHECK(std::exp(r.vocab.log_prob(r.vocab.find("a").value())) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
    CHECK(std::exp(r.vocab.log_prob(r.vocab.find("b").value())) == doctest::Approx(3.0 / 7.0).epsilon(1e-12));

    const auto second = em_step(words, r.vocab);
    CHECK(second.log_likelihood >= r.log_likelihood);

    const WordCounts just_a = {{U"a", 3}};
    const auto once = em_step(just_a, Vocabulary({{"a", -0.5}}));
    CHECK(em_step(just_a, once.vocab).log_likelihood == doctest::Approx(0.0));

    CHECK_THROWS(em_step(WordCounts{{U"z", 1}}, v));
}

TEST_CASE("pruning") {
    const WordCounts words = {{U"ab", 5}, {U"cd", 3}, {U"ef", 2}, {U"gh", 1}};
    std::vector<PieceEntry> entries;
    for (const char* c : {"a", "b", "c", "d", "e", "f", "g", "h"}) entries.push_back({c, -3.0});
    for (const char* p : {"ab", "cd", "ef", "gh", "zz"}) entries.push_back({p, -1.0});
    const Vocabulary v(entries);

    const auto without_one = prune_to(v, words, 4);
    CHECK_FALSE(without_one.find("zz").has_value());
    CHECK(without_one.find("gh").has_value());

    // Leave-one-out oracle: the kept set is the one with the largest losses.
    const auto losses = removal_losses(words, v);
    CHECK(losses[v.find("ab").value()] > losses[v.find("gh").value()]);
    const auto two = prune_to(v, words, 2);
    CHECK(two.find("ab").has_value());
    CHECK(two.find("cd").has_value());
    CHECK_FALSE(two.find("ef").has_value());
    // Single characters always survive.
    CHECK(two.find("h").has_value());

    std::vector<PieceEntry> eight = entries;
    eight.pop_back();
    for (const char* p : {"ba", "dc", "fe", "hg"}) eight.push_back({p, -2.0});
    const auto half = prune_vocab(Vocabulary(eight), words, 0.5);
    std::size_t multi = 0;
    for (const auto& p : half.pieces()) multi += utf8::decode(p.piece).size() > 1;
    CHECK(multi == 4);
}

TEST_CASE("train_unigram hits the target size and is deterministic") {
    unit::TempDir dir("unigram");
    unit::write_file(dir / "toy.txt", "o gato come o peixe\no peixe nada no rio\no gato dorme\nrio grande\n");
    TrainerConfig c;
    c.target_size = 30;
    const auto v = train_unigram(dir / "toy.txt", c);
    CHECK(v.size() == 30);
    double mass = 0.0;
    for (const auto& p : v.pieces()) {
        CHECK(p.log_prob < 0.0);
        mass += std::exp(p.log_prob);
    }
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
    for (char32_t ch : std::u32string(U"gatocmepixndr▁")) CHECK(v.find(utf8::encode(std::u32string(1, ch))));

    save_vocab(v, dir / "a.vocab");
    save_vocab(train_unigram(dir / "toy.txt", c), dir / "b.vocab");
    CHECK(unit::read_file(dir / "a.vocab") == unit::read_file(dir / "b.vocab"));
    CHECK(load_vocab(dir / "a.vocab") == v);

    c.target_size = 10;
    CHECK_THROWS(train_unigram(dir / "toy.txt", c));
}

TEST_CASE("vocabulary files") {
    const std::string good = "[PAD]\t-20\n[CLS]\t-20\n[SEP]\t-20\n[UNK]\t-15\n[MASK]\t-20\na\t-0.5\nb\t-1\n";
    const auto v = parse_vocab(good);
    CHECK(v.size() == 7);
    CHECK(v.unk_penalty() == -15.0);
    CHECK(format_vocab(v).find("b\t-1\n") != std::string::npos);

    try {
        parse_vocab("[PAD]\t-20\n[SEP]\t-20\n");
        FAIL("expected an error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_vocab(good + "a\t-2\n"), FormatError);
    CHECK_THROWS_AS(parse_vocab(good + "c\tfoo\n"), FormatError);
    CHECK_THROWS_AS(parse_vocab(good + "no tab\n"), FormatError);
}
