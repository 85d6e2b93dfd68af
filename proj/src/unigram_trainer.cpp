#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "langadapt/error.h"
#include "langadapt/tokenizer.h"
#include "langadapt/utf8.h"

namespace langadapt::tokenizer {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double hi = std::max(a, b);
    return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

void add_line(std::map<std::u32string, std::uint64_t>& counts, std::string_view line) {
    for (auto& word : split_words(line)) {
        ++counts[std::move(word)];
    }
}

WordCounts to_vector(std::map<std::u32string, std::uint64_t>&& counts) {
    WordCounts out;
    out.reserve(counts.size());
    for (auto& [w, c] : counts) {
        out.emplace_back(w, c);
    }
    return out;
}

std::vector<PieceEntry> normalized_entries(const std::vector<std::u32string>& pieces,
                                           const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) {
        total += w;
    }
    const double floor = total * 1e-12;
    double floored_total = 0.0;
    for (double w : weights) {
        floored_total += std::max(w, floor);
    }
    const double log_total = std::log(floored_total);
    std::vector<PieceEntry> out;
    out.reserve(pieces.size());
    for (std::size_t i = 0; i < pieces.size(); ++i) {
        out.push_back({utf8::encode(pieces[i]), std::min(0.0, std::log(std::max(weights[i], floor)) - log_total)});
    }
    return out;
}

// Best Viterbi score of word, optionally forbidding one piece.
double best_score(std::u32string_view word, const Vocabulary& vocab, TokenId excluded,
                  std::vector<double>& scratch) {
    const std::size_t n = word.size();
    scratch.assign(n + 1, kNegInf);
    scratch[0] = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (scratch[i] == kNegInf) {
            continue;
        }
        bool single = false;
        vocab.for_each_match(word, i, [&](std::size_t l, TokenId id) {
            if (l == 1) {
                single = true;
            }
            if (id != excluded) {
                scratch[i + l] = std::max(scratch[i + l], scratch[i] + vocab.log_prob(id));
            }
        });
        if (!single) {
            scratch[i + 1] = std::max(scratch[i + 1], scratch[i] + vocab.unk_penalty());
        }
    }
    return scratch[n];
}

} // namespace

WordCounts count_words(std::span<const std::string> lines) {
    std::map<std::u32string, std::uint64_t> counts;
    for (const auto& line : lines) {
        add_line(counts, line);
    }
    return to_vector(std::move(counts));
}

WordCounts count_words_in_file(const std::filesystem::path& corpus) {
    std::ifstream in(corpus, std::ios::binary);
    if (!in) {
        throw IoError("cannot read corpus " + corpus.string());
    }
    std::map<std::u32string, std::uint64_t> counts;
    std::string line;
    while (std::getline(in, line)) {
        add_line(counts, line);
    }
    return to_vector(std::move(counts));
}

// ---------------------------------------------------------------------------
// Seed candidates

std::vector<Candidate> collect_seed_candidates(const WordCounts& words, const TrainerConfig& config) {
    if (words.empty()) {
        throw Error("cannot collect seed candidates from an empty corpus");
    }
    const std::size_t max_len = std::max<std::size_t>(1, config.max_piece_len);
    std::map<std::u32string, std::uint64_t> singles;
    std::map<std::u32string, std::uint64_t> multi;
    for (const auto& [word, count] : words) {
        for (std::size_t i = 0; i < word.size(); ++i) {
            for (std::size_t l = 1; l <= max_len && i + l <= word.size(); ++l) {
                auto& table = l == 1 ? singles : multi;
                table[word.substr(i, l)] += count;
            }
        }
    }
    std::vector<Candidate> ranked;
    ranked.reserve(multi.size());
    for (auto& [piece, count] : multi) {
        ranked.push_back({piece, count});
    }
    const auto score = [](const Candidate& c) { return c.count * c.piece.size(); };
    std::stable_sort(ranked.begin(), ranked.end(), [&](const Candidate& a, const Candidate& b) {
        return score(a) > score(b);
    });
    if (ranked.size() > config.effective_seed_size()) {
        ranked.resize(config.effective_seed_size());
    }
    for (auto& [piece, count] : singles) {
        ranked.push_back({piece, count});
    }
    std::stable_sort(ranked.begin(), ranked.end(), [&](const Candidate& a, const Candidate& b) {
        if (score(a) != score(b)) return score(a) > score(b);
        return a.piece < b.piece;
    });
    return ranked;
}

std::vector<Candidate> collect_seed_candidates(std::span<const std::string> lines, const TrainerConfig& config) {
    return collect_seed_candidates(count_words(lines), config);
}

// ---------------------------------------------------------------------------
// EM

EmResult em_step(const WordCounts& words, const Vocabulary& vocab) {
    const std::size_t v = vocab.size();
    std::vector<double> expected(v, 0.0);
    double log_likelihood = 0.0;
    std::vector<double> alpha;
    std::vector<double> beta;
    struct Edge {
        std::size_t from;
        std::size_t to;
        TokenId id;
    };
    std::vector<Edge> edges;
    for (const auto& [word, count] : words) {
        const std::size_t n = word.size();
        edges.clear();
        for (std::size_t i = 0; i < n; ++i) {
            vocab.for_each_match(word, i, [&](std::size_t l, TokenId id) { edges.push_back({i, i + l, id}); });
        }
        alpha.assign(n + 1, kNegInf);
        beta.assign(n + 1, kNegInf);
        alpha[0] = 0.0;
        beta[n] = 0.0;
        // Edges are sorted by `from`, so one forward sweep and one backward sweep suffice.
        for (const auto& e : edges) {
            alpha[e.to] = log_add(alpha[e.to], alpha[e.from] + vocab.log_prob(e.id));
        }
        for (auto it = edges.rbegin(); it != edges.rend(); ++it) {
            beta[it->from] = log_add(beta[it->from], vocab.log_prob(it->id) + beta[it->to]);
        }
        const double z = alpha[n];
        if (z == kNegInf) {
            throw Error("vocabulary cannot segment the word '" + utf8::encode(word) + "'");
        }
        const auto c = static_cast<double>(count);
        log_likelihood += c * z;
        for (const auto& e : edges) {
            const double lp = alpha[e.from] + vocab.log_prob(e.id) + beta[e.to] - z;
            if (lp > kNegInf) {
                expected[static_cast<std::size_t>(e.id)] += c * std::exp(lp);
            }
        }
    }
    std::vector<std::u32string> pieces;
    std::vector<double> weights;
    for (std::size_t id = kNumSpecials; id < v; ++id) {
        pieces.push_back(vocab.piece_cp(static_cast<TokenId>(id)));
        weights.push_back(expected[id]);
    }
    return {Vocabulary(normalized_entries(pieces, weights), vocab.unk_penalty()), log_likelihood};
}

EmResult em_step(std::span<const std::string> lines, const Vocabulary& vocab) {
    return em_step(count_words(lines), vocab);
}

// ---------------------------------------------------------------------------
// Pruning

double viterbi_log_likelihood(const WordCounts& words, const Vocabulary& vocab) {
    double total = 0.0;
    std::vector<double> scratch;
    for (const auto& [word, count] : words) {
        total += static_cast<double>(count) * best_score(word, vocab, -1, scratch);
    }
    return total;
}

std::vector<double> removal_losses(const WordCounts& words, const Vocabulary& vocab) {
    std::vector<double> loss(vocab.size(), 0.0);
    std::vector<double> scratch;
    for (const auto& [word, count] : words) {
        const Segmentation seg = viterbi_segment(std::u32string_view(word), vocab);
        const std::set<TokenId> used(seg.ids.begin(), seg.ids.end());
        // Removing a piece off the best path leaves that path optimal, so only
        // pieces on the path can lose likelihood on this word.
        const double base = best_score(word, vocab, -1, scratch);
        for (TokenId id : used) {
            if (Vocabulary::is_special(id) || vocab.piece_cp(id).size() < 2) {
                continue;
            }
            const double without = best_score(word, vocab, id, scratch);
            loss[static_cast<std::size_t>(id)] += static_cast<double>(count) * (base - without);
        }
    }
    return loss;
}

Vocabulary prune_to(const Vocabulary& vocab, const WordCounts& words, std::size_t keep) {
    std::vector<TokenId> multi;
    for (std::size_t id = kNumSpecials; id < vocab.size(); ++id) {
        if (vocab.piece_cp(static_cast<TokenId>(id)).size() >= 2) {
            multi.push_back(static_cast<TokenId>(id));
        }
    }
    std::set<TokenId> removed;
    if (keep < multi.size()) {
        const std::vector<double> loss = removal_losses(words, vocab);
        std::sort(multi.begin(), multi.end(), [&](TokenId a, TokenId b) {
            const auto ia = static_cast<std::size_t>(a);
            const auto ib = static_cast<std::size_t>(b);
            if (loss[ia] != loss[ib]) return loss[ia] < loss[ib];
            if (vocab.log_prob(a) != vocab.log_prob(b)) return vocab.log_prob(a) < vocab.log_prob(b);
            return vocab.piece_cp(a) < vocab.piece_cp(b);
        });
        removed.insert(multi.begin(), multi.begin() + static_cast<std::ptrdiff_t>(multi.size() - keep));
    }
    std::vector<std::u32string> pieces;
    std::vector<double> weights;
    for (std::size_t id = kNumSpecials; id < vocab.size(); ++id) {
        if (removed.count(static_cast<TokenId>(id)) == 0) {
            pieces.push_back(vocab.piece_cp(static_cast<TokenId>(id)));
            weights.push_back(std::exp(vocab.log_prob(static_cast<TokenId>(id))));
        }
    }
    return Vocabulary(normalized_entries(pieces, weights), vocab.unk_penalty());
}

Vocabulary prune_vocab(const Vocabulary& vocab, const WordCounts& words, double keep_ratio) {
    if (!(keep_ratio > 0.0 && keep_ratio < 1.0)) {
        throw Error("prune keep ratio must lie in (0, 1)");
    }
    std::size_t multi = 0;
    for (std::size_t id = kNumSpecials; id < vocab.size(); ++id) {
        multi += vocab.piece_cp(static_cast<TokenId>(id)).size() >= 2 ? 1 : 0;
    }
    const auto keep = static_cast<std::size_t>(std::floor(keep_ratio * static_cast<double>(multi)));
    return prune_to(vocab, words, keep);
}

// ---------------------------------------------------------------------------
// Training

Vocabulary train_unigram(const WordCounts& words, const TrainerConfig& config) {
    if (!(config.prune_keep_ratio > 0.0 && config.prune_keep_ratio < 1.0)) {
        throw Error("prune_keep_ratio must lie in (0, 1)");
    }
    if (words.empty()) {
        throw Error("training corpus is empty");
    }
    const std::vector<Candidate> candidates = collect_seed_candidates(words, config);
    std::size_t singles = 0;
    std::vector<std::u32string> pieces;
    std::vector<double> weights;
    for (const auto& c : candidates) {
        singles += c.piece.size() == 1 ? 1 : 0;
        pieces.push_back(c.piece);
        weights.push_back(static_cast<double>(c.count));
    }
    const std::size_t specials = kNumSpecials;
    if (config.target_size <= singles + specials) {
        throw Error("target vocabulary size " + std::to_string(config.target_size) +
                    " is unreachable: the corpus alphabet plus specials already needs " +
                    std::to_string(singles + specials + 1));
    }
    Vocabulary vocab(normalized_entries(pieces, weights), config.unk_penalty);
    if (vocab.size() < config.target_size) {
        throw Error("corpus yields only " + std::to_string(vocab.size()) + " candidate entries, fewer than the target " +
                    std::to_string(config.target_size));
    }
    const std::size_t target_multi = config.target_size - singles - specials;
    while (vocab.size() > config.target_size) {
        for (std::size_t k = 0; k < config.em_iterations_per_round; ++k) {
            vocab = em_step(words, vocab).vocab;
        }
        const std::size_t multi = vocab.size() - singles - specials;
        const auto by_ratio = static_cast<std::size_t>(std::floor(config.prune_keep_ratio * static_cast<double>(multi)));
        vocab = prune_to(vocab, words, std::max(target_multi, by_ratio));
    }
    vocab = em_step(words, vocab).vocab;

    std::vector<PieceEntry> sorted = vocab.pieces();
    std::stable_sort(sorted.begin(), sorted.end(), [](const PieceEntry& a, const PieceEntry& b) {
        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
        return utf8::decode(a.piece) < utf8::decode(b.piece);
    });
    return Vocabulary(std::move(sorted), vocab.unk_penalty());
}

Vocabulary train_unigram(const std::filesystem::path& corpus, const TrainerConfig& config) {
    return train_unigram(count_words_in_file(corpus), config);
}

} // namespace langadapt::tokenizer
