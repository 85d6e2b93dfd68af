#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace langadapt::tokenizer {

using TokenId = std::int32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kCls = 1;
inline constexpr TokenId kSep = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kMask = 4;
inline constexpr TokenId kNumSpecials = 5;

inline constexpr std::array<std::string_view, kNumSpecials> kSpecialPieces = {
    "[PAD]", "[CLS]", "[SEP]", "[UNK]", "[MASK]"};

/// U+2581 LOWER ONE EIGHTH BLOCK, prefixed to every word.
inline constexpr char32_t kWordBoundary = 0x2581;
inline constexpr double kDefaultUnkPenalty = -20.0;

struct PieceEntry {
    std::string piece;
    double log_prob = 0.0;
};

/// Unigram vocabulary. Ids 0-4 are the pinned specials; regular pieces follow
/// in the order given at construction.
class Vocabulary {
public:
    Vocabulary() : Vocabulary(std::vector<PieceEntry>{}) {}
    /// `pieces` excludes the specials. Throws FormatError on empty or duplicate
    /// pieces, pieces colliding with a special, or non-finite / positive log probs.
    explicit Vocabulary(std::vector<PieceEntry> pieces, double unk_penalty = kDefaultUnkPenalty);

    std::size_t size() const { return entries_.size(); }
    std::size_t num_pieces() const { return entries_.size() - kNumSpecials; }
    double unk_penalty() const { return unk_penalty_; }

    const std::string& piece(TokenId id) const { return entries_.at(static_cast<std::size_t>(id)).piece; }
    const std::u32string& piece_cp(TokenId id) const { return cp_pieces_.at(static_cast<std::size_t>(id)); }
    double log_prob(TokenId id) const { return entries_[static_cast<std::size_t>(id)].log_prob; }
    static bool is_special(TokenId id) { return id >= 0 && id < kNumSpecials; }

    /// All entries including specials (specials carry the UNK penalty as log prob).
    const std::vector<PieceEntry>& entries() const { return entries_; }
    /// Regular pieces only, in id order.
    std::vector<PieceEntry> pieces() const;

    std::optional<TokenId> find(std::u32string_view piece) const;
    std::optional<TokenId> find(std::string_view piece) const;
    std::size_t max_piece_length() const { return max_len_; }

    /// Calls fn(length, id) for every regular piece that matches text at pos,
    /// in increasing length order.
    template <typename Fn>
    void for_each_match(std::u32string_view text, std::size_t pos, Fn&& fn) const {
        std::int32_t node = 0;
        for (std::size_t k = pos; k < text.size(); ++k) {
            node = child(node, text[k]);
            if (node < 0) {
                return;
            }
            const TokenId id = nodes_[static_cast<std::size_t>(node)].id;
            if (id >= 0) {
                fn(k + 1 - pos, id);
            }
        }
    }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b);

private:
    struct TrieNode {
        TokenId id = -1;
        std::vector<std::pair<char32_t, std::int32_t>> children; // sorted by code point
    };

    std::int32_t child(std::int32_t node, char32_t c) const;
    void insert(const std::u32string& piece, TokenId id);

    std::vector<PieceEntry> entries_;
    std::vector<std::u32string> cp_pieces_;
    std::vector<TrieNode> nodes_;
    double unk_penalty_;
    std::size_t max_len_ = 0;
};

struct Segmentation {
    std::vector<TokenId> ids;
    /// Sum of member log probs (UNK contributes the penalty), left to right.
    double score = 0.0;

    std::vector<std::string> pieces(const Vocabulary& vocab) const;
};

/// Replaces whitespace runs by word boundaries: "bom dia" -> "▁bom▁dia".
std::u32string normalize(std::string_view text);
std::vector<std::u32string> split_words(std::string_view text);

/// Maximum-score segmentation of marker-normalized text. Characters without a
/// single-character piece become UNK. Ties: fewer pieces, then the
/// lexicographically earliest piece sequence.
Segmentation viterbi_segment(std::u32string_view text, const Vocabulary& vocab);
Segmentation viterbi_segment(std::string_view text, const Vocabulary& vocab);

std::vector<TokenId> encode(std::string_view text, const Vocabulary& vocab);
/// Throws Error for ids outside the vocabulary.
std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Training

/// Marker-normalized words with their corpus frequencies, sorted by word.
using WordCounts = std::vector<std::pair<std::u32string, std::uint64_t>>;

WordCounts count_words(std::span<const std::string> lines);
WordCounts count_words_in_file(const std::filesystem::path& corpus);

struct TrainerConfig {
    std::size_t target_size = 50000;
    /// 0 means 20 x target_size.
    std::size_t seed_size = 0;
    std::size_t max_piece_len = 16;
    std::size_t em_iterations_per_round = 2;
    double prune_keep_ratio = 0.75;
    std::uint64_t seed = 0;
    double unk_penalty = kDefaultUnkPenalty;

    std::size_t effective_seed_size() const { return seed_size == 0 ? 20 * target_size : seed_size; }
};

struct Candidate {
    std::u32string piece;
    std::uint64_t count = 0;
};

/// Every substring (up to max_piece_len code points) of every word. The
/// seed_size best multi-character substrings by count x length are kept,
/// plus every single character. Throws Error on an empty corpus.
std::vector<Candidate> collect_seed_candidates(const WordCounts& words, const TrainerConfig& config);
std::vector<Candidate> collect_seed_candidates(std::span<const std::string> lines, const TrainerConfig& config);

struct EmResult {
    Vocabulary vocab;
    /// Corpus log likelihood under the input vocabulary.
    double log_likelihood = 0.0;
};

/// One EM iteration: lattice forward-backward expected counts, then
/// renormalization. Throws Error when a word has no segmentation.
EmResult em_step(const WordCounts& words, const Vocabulary& vocab);
EmResult em_step(std::span<const std::string> lines, const Vocabulary& vocab);

/// Sum over words of count x best Viterbi score.
double viterbi_log_likelihood(const WordCounts& words, const Vocabulary& vocab);

/// Loss in corpus Viterbi log likelihood from removing each piece (indexed by
/// id; 0 for specials and single characters).
std::vector<double> removal_losses(const WordCounts& words, const Vocabulary& vocab);

/// Keeps `keep` multi-character pieces, removing those with the smallest
/// removal loss (ties: lower log prob, then lexicographically smaller piece),
/// then renormalizes.
Vocabulary prune_to(const Vocabulary& vocab, const WordCounts& words, std::size_t keep);
/// Keeps floor(keep_ratio x number of multi-character pieces).
Vocabulary prune_vocab(const Vocabulary& vocab, const WordCounts& words, double keep_ratio);

/// Seed, then rounds of EM + pruning until the size reaches target_size, then a
/// final EM step. Output pieces sorted by log prob (descending) then piece.
Vocabulary train_unigram(const WordCounts& words, const TrainerConfig& config);
Vocabulary train_unigram(const std::filesystem::path& corpus, const TrainerConfig& config);

// ---------------------------------------------------------------------------
// Persistence: "piece<TAB>log_prob" per line, specials first.

void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary load_vocab(const std::filesystem::path& path);
std::string format_vocab(const Vocabulary& vocab);
Vocabulary parse_vocab(std::string_view text, const std::string& origin = "vocab");

} // namespace langadapt::tokenizer
