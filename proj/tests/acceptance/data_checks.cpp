#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "acceptance.h"
#include "langadapt/corpus.h"
#include "langadapt/model.h"
#include "langadapt/packing.h"
#include "langadapt/random.h"
#include "langadapt/tokenizer.h"
#include "langadapt/utf8.h"

using namespace langadapt;
using tokenizer::TokenId;

namespace acceptance {

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        auto cleaned = corpus::clean_text(line);
        if (!cleaned.empty()) out.push_back(std::move(cleaned));
    }
    return out;
}

/// A small vocabulary trained on the news fixture; shared by the tokenizer
/// and packing checks.
const tokenizer::Vocabulary& fixture_vocab(const Context& ctx) {
    static const tokenizer::Vocabulary vocab = [&] {
        tokenizer::TrainerConfig tc;
        tc.target_size = 300;
        tc.seed_size = 2000;
        tc.max_piece_len = 8;
        return tokenizer::train_unigram(tokenizer::count_words(read_lines(ctx.data_dir / "corpus" / "noticias.txt")),
                                        tc);
    }();
    return vocab;
}

// ---------------------------------------------------------------------------
// Exhaustive segmentation oracle over the alphabet {a, b, c, d}.
//
// Every sequence of pieces whose concatenation has length L is enumerated
// depth-first, trying pieces in ascending string order at each depth. The
// traversal therefore meets segmentations of a given string in lexicographic
// order, so keeping the first one among equals (score, then piece count)
// yields the lexicographically earliest optimum.

struct Alternative {
    std::string text;
    TokenId id;
    int neg_score; // -log_prob, integral so sums are exact
    std::uint32_t code; // base-4 digits of the text
};

constexpr int kMaxLen = 12;

/// best[code] packs: bits 0-47 the alternative indices (1-based nibbles,
/// first piece in the lowest nibble), bits 48-55 the negated score, bits
/// 56-59 the piece count. Zero means "not reached".
struct Enumerator {
    const std::vector<Alternative>& alts;
    std::vector<std::uint64_t>& best;

    void run(int remaining, std::uint32_t code, int depth, int neg_score, std::uint64_t seq) {
        if (remaining == 0) {
            const std::uint64_t packed = seq | (std::uint64_t(neg_score) << 48) | (std::uint64_t(depth) << 56);
            std::uint64_t& slot = best[code];
            if (slot == 0) {
                slot = packed;
                return;
            }
            const int old_score = int((slot >> 48) & 0xff);
            const int old_count = int((slot >> 56) & 0xf);
            if (neg_score < old_score || (neg_score == old_score && depth < old_count)) slot = packed;
            return;
        }
        for (std::size_t a = 0; a < alts.size(); ++a) {
            const auto& alt = alts[a];
            const int len = int(alt.text.size());
            if (len > remaining) continue;
            run(remaining - len, (code << (2 * len)) | alt.code, depth + 1, neg_score + alt.neg_score,
                seq | (std::uint64_t(a + 1) << (4 * depth)));
        }
    }
};

std::string viterbi_exhaustive(std::size_t& strings_checked) {
    // Log probs are small integers; 'd' has no single-character piece and
    // is only reachable as UNK or through "dab".
    const std::vector<std::pair<std::string, int>> table = {
        {"a", 2},   {"b", 2},   {"c", 2},   {"ab", 3},  {"bc", 3},  {"ca", 3},
        {"bb", 4},  {"abc", 6}, {"cab", 5}, {"dab", 7},
    };
    const int unk_penalty = 8;
    std::vector<tokenizer::PieceEntry> entries;
    for (const auto& [p, s] : table) entries.push_back({p, -double(s)});
    const tokenizer::Vocabulary vocab(entries, -double(unk_penalty));

    std::vector<Alternative> alts;
    const auto encode_code = [](const std::string& s) {
        std::uint32_t c = 0;
        for (char ch : s) c = (c << 2) | std::uint32_t(ch - 'a');
        return c;
    };
    for (std::size_t i = 0; i < table.size(); ++i) {
        alts.push_back({table[i].first, TokenId(tokenizer::kNumSpecials + i), table[i].second,
                        encode_code(table[i].first)});
    }
    alts.push_back({"d", tokenizer::kUnk, unk_penalty, encode_code("d")});
    std::sort(alts.begin(), alts.end(), [](const Alternative& x, const Alternative& y) { return x.text < y.text; });

    if (!tokenizer::viterbi_segment(std::u32string_view(), vocab).ids.empty()) return "empty string gave pieces";
    strings_checked = 1;
    std::vector<std::uint64_t> best;
    std::u32string text;
    for (int len = 1; len <= kMaxLen; ++len) {
        const std::size_t n = std::size_t{1} << (2 * len);
        best.assign(n, 0);
        Enumerator{alts, best}.run(len, 0, 0, 0, 0);
        text.resize(std::size_t(len));
        for (std::size_t code = 0; code < n; ++code) {
            for (int k = 0; k < len; ++k) text[std::size_t(k)] = U'a' + char32_t((code >> (2 * (len - 1 - k))) & 3);
            const std::uint64_t slot = best[code];
            if (slot == 0) return "oracle missed " + utf8::encode(text);
            std::vector<TokenId> expected;
            for (std::uint64_t seq = slot & 0xffffffffffffULL; seq; seq >>= 4) {
                expected.push_back(alts[std::size_t(seq & 0xf) - 1].id);
            }
            const auto seg = tokenizer::viterbi_segment(std::u32string_view(text), vocab);
            const double expected_score = -double((slot >> 48) & 0xff);
            if (seg.ids != expected || seg.score != expected_score) {
                return "mismatch on '" + utf8::encode(text) + "'";
            }
            ++strings_checked;
        }
    }
    return {};
}

} // namespace

Outcome tokenizer_oracles(const Context& ctx) {
    std::size_t strings = 0;
    const std::string viterbi_error = viterbi_exhaustive(strings);

    // EM from count-normalized seed candidates.
    const auto lines = read_lines(ctx.data_dir / "corpus" / "noticias.txt");
    const auto words = tokenizer::count_words(lines);
    tokenizer::TrainerConfig tc;
    tc.seed_size = 2000;
    tc.max_piece_len = 8;
    const auto candidates = tokenizer::collect_seed_candidates(words, tc);
    double total = 0.0;
    for (const auto& c : candidates) total += double(c.count);
    std::vector<tokenizer::PieceEntry> seed;
    for (const auto& c : candidates) seed.push_back({utf8::encode(c.piece), std::log(double(c.count) / total)});
    tokenizer::Vocabulary vocab(seed);
    std::vector<double> ll;
    for (int it = 0; it <= 10; ++it) {
        auto step = tokenizer::em_step(words, vocab);
        ll.push_back(step.log_likelihood);
        vocab = std::move(step.vocab);
    }
    std::size_t decreases = 0;
    for (std::size_t i = 1; i < ll.size(); ++i) {
        if (ll[i] < ll[i - 1] - 1e-9 * std::abs(ll[i - 1])) ++decreases;
    }

    // decode(encode(s)) == s on random substrings trimmed to non-space ends.
    const auto& trained = fixture_vocab(ctx);
    Rng rng(1234);
    std::size_t round_trip_failures = 0;
    std::string first_failure;
    std::size_t samples = 0;
    while (samples < 1000) {
        const auto cp = utf8::decode(lines[rng.below(lines.size())]);
        std::size_t a = rng.below(cp.size());
        std::size_t b = a + 1 + rng.below(cp.size() - a);
        while (a < b && cp[a] == U' ') ++a;
        while (b > a && cp[b - 1] == U' ') --b;
        if (a == b) continue;
        const std::string s = utf8::encode(cp.substr(a, b - a));
        ++samples;
        if (tokenizer::decode(tokenizer::encode(s, trained), trained) != s) {
            if (round_trip_failures++ == 0) first_failure = s;
        }
    }

    char buf[400];
    std::snprintf(buf, sizeof buf,
                  "viterbi: %zu strings (len <= %d over a-d) %s; EM log-likelihood %.6f -> %.6f, %zu decreases "
                  "in 10 iterations; round trip: %zu/%zu failures over %zu pieces%s%s",
                  strings, kMaxLen, viterbi_error.empty() ? "all match" : viterbi_error.c_str(), ll.front(),
                  ll.back(), decreases, round_trip_failures, samples, trained.num_pieces(),
                  first_failure.empty() ? "" : ", first: ", first_failure.c_str());
    return {viterbi_error.empty() && decreases == 0 && round_trip_failures == 0, buf};
}

Outcome packing_contract(const Context& ctx) {
    const auto& vocab = fixture_vocab(ctx);
    auto docs = read_lines(ctx.data_dir / "corpus" / "noticias.txt");
    // One document long enough to need several chunks, one too short to keep.
    std::string joined;
    for (const auto& d : docs) joined += (joined.empty() ? "" : " ") + d;
    docs.push_back(joined);
    docs.push_back("ok");
    const auto corpus_path = ctx.work_dir / "packing_corpus.txt";
    {
        std::ofstream out(corpus_path);
        for (const auto& d : docs) out << d << '\n';
    }
    const auto packed_path = ctx.work_dir / "packing.dbpk";
    const auto summary = packing::pack_corpus(corpus_path, vocab, packed_path);
    const auto examples = packing::read_packed(packed_path);

    std::size_t framing_errors = 0;
    for (const auto& ex : examples) {
        const std::size_t n = ex.real_len;
        bool ok = ex.ids.size() == packing::kSeqLen && n >= 2 && n <= packing::kSeqLen && ex.ids[0] == tokenizer::kCls &&
                  ex.ids[n - 1] == tokenizer::kSep;
        for (std::size_t i = 1; ok && i + 1 < n; ++i) {
            ok = ex.ids[i] != tokenizer::kCls && ex.ids[i] != tokenizer::kSep && ex.ids[i] != tokenizer::kPad;
        }
        for (std::size_t i = n; ok && i < packing::kSeqLen; ++i) ok = ex.ids[i] == tokenizer::kPad;
        framing_errors += ok ? 0 : 1;
    }

    // Expected content: each document's ids, minus a final partial chunk
    // shorter than the minimum.
    std::vector<TokenId> expected;
    std::size_t longest = 0;
    for (const auto& d : docs) {
        auto ids = tokenizer::encode(d, vocab);
        longest = std::max(longest, ids.size());
        const std::size_t tail = ids.size() % packing::kMaxChunk;
        if (tail != 0 && tail < packing::kDefaultMinChunk) ids.resize(ids.size() - tail);
        expected.insert(expected.end(), ids.begin(), ids.end());
    }
    std::vector<TokenId> actual;
    for (const auto& ex : examples) {
        const auto c = ex.content();
        actual.insert(actual.end(), c.begin(), c.end());
    }

    // 1021 ids -> 510, 510, 1.
    std::vector<TokenId> doc(1021);
    for (std::size_t i = 0; i < doc.size(); ++i) doc[i] = TokenId(tokenizer::kNumSpecials + i % 50);
    const auto chunks = packing::chunk_ids(doc);
    std::vector<std::size_t> sizes;
    for (const auto& c : chunks) sizes.push_back(c.size());
    const bool split_ok = sizes == std::vector<std::size_t>{510, 510, 1} &&
                          packing::pack_document(doc, 1).size() == 3 && packing::pack_document(doc).size() == 2;

    char buf[400];
    std::snprintf(buf, sizeof buf,
                  "%zu documents (longest %zu ids) -> %zu examples, %zu framing errors, %zu dropped chunks; "
                  "de-framed ids %s encode(document) minus short tails (%zu ids); 1021 ids -> %s",
                  docs.size(), longest, examples.size(), framing_errors, summary.dropped_chunks,
                  actual == expected ? "reproduce" : "DIFFER from", expected.size(),
                  split_ok ? "510/510/1, min_chunk 1 keeps 3 examples, default keeps 2" : "wrong split");
    return {framing_errors == 0 && actual == expected && longest > 2 * packing::kMaxChunk && split_ok &&
                summary.examples == examples.size(),
            buf};
}

namespace {

/// Parameter count written out tensor by tensor, independent of the
/// library's own shape tables.
std::size_t enumerate_params(const model::ModelConfig& c) {
    const std::size_t h = c.hidden_dim, f = c.ffn_dim;
    std::size_t total = c.vocab_size * h; // word embedding
    total += 2 * h;                       // embedding layer norm
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        total += 2 * h;                            // attention norm
        total += 4 * (h * h + h);                  // q, k, v, output
        total += (2 * c.max_rel_distance + 1) * c.num_heads; // relative bias
        total += 2 * h;                            // ffn norm
        total += h * f + f + f * h + h;            // ffn
    }
    return total;
}

} // namespace

Outcome parameter_count(const Context&) {
    const auto ref = model::reference_preset();
    const std::size_t closed = model::count_params(ref);
    const std::size_t independent = enumerate_params(ref);
    const auto desk = model::desk_preset();
    const auto desk_weights = model::init_model(desk, 1);
    std::size_t desk_map = 0;
    for (const auto& [name, t] : model::to_tensor_map(desk_weights, desk)) desk_map += t.numel();
    const bool desk_ok = model::count_params(desk) == enumerate_params(desk) &&
                         model::count_params(desk_weights) == model::count_params(desk) &&
                         desk_map == model::count_params(desk);
    const bool in_range = closed >= 39'000'000 && closed <= 42'000'000;

    char buf[300];
    std::snprintf(buf, sizeof buf,
                  "reference (L%zu H%zu F%zu V%zu): count_params %zu, independent enumeration %zu, "
                  "in [39M, 42M]: %s; desk preset closed form / weights / checkpoint agree: %s",
                  ref.num_layers, ref.hidden_dim, ref.ffn_dim, ref.vocab_size, closed, independent,
                  in_range ? "yes" : "no", desk_ok ? "yes" : "no");
    return {closed == independent && in_range && desk_ok, buf};
}

} // namespace acceptance
