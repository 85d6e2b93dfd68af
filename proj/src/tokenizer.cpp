#include "langadapt/tokenizer.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "langadapt/error.h"
#include "langadapt/utf8.h"

namespace langadapt::tokenizer {

Vocabulary::Vocabulary(std::vector<PieceEntry> pieces, double unk_penalty) : unk_penalty_(unk_penalty) {
    if (!std::isfinite(unk_penalty) || unk_penalty >= 0.0) {
        throw FormatError("unk penalty must be finite and negative");
    }
    entries_.reserve(pieces.size() + kNumSpecials);
    cp_pieces_.reserve(pieces.size() + kNumSpecials);
    for (auto special : kSpecialPieces) {
        entries_.push_back({std::string(special), unk_penalty});
        cp_pieces_.push_back(utf8::decode(special));
    }
    nodes_.emplace_back();
    for (auto& entry : pieces) {
        const auto id = static_cast<TokenId>(entries_.size());
        if (entry.piece.empty()) {
            throw FormatError("empty piece at id " + std::to_string(id));
        }
        if (!std::isfinite(entry.log_prob) || entry.log_prob > 0.0) {
            throw FormatError("piece '" + entry.piece + "' has invalid log prob");
        }
        std::u32string cp = utf8::decode(entry.piece);
        if (find(std::u32string_view(cp)) ||
            std::find(kSpecialPieces.begin(), kSpecialPieces.end(), entry.piece) != kSpecialPieces.end()) {
            throw FormatError("duplicate piece '" + entry.piece + "'");
        }
        insert(cp, id);
        max_len_ = std::max(max_len_, cp.size());
        cp_pieces_.push_back(std::move(cp));
        entries_.push_back(std::move(entry));
    }
}

std::int32_t Vocabulary::child(std::int32_t node, char32_t c) const {
    const auto& kids = nodes_[static_cast<std::size_t>(node)].children;
    auto it = std::lower_bound(kids.begin(), kids.end(), c,
                               [](const auto& p, char32_t v) { return p.first < v; });
    return (it != kids.end() && it->first == c) ? it->second : -1;
}

void Vocabulary::insert(const std::u32string& piece, TokenId id) {
    std::int32_t node = 0;
    for (char32_t c : piece) {
        std::int32_t next = child(node, c);
        if (next < 0) {
            next = static_cast<std::int32_t>(nodes_.size());
            nodes_.emplace_back();
            auto& kids = nodes_[static_cast<std::size_t>(node)].children;
            auto it = std::lower_bound(kids.begin(), kids.end(), c,
                                       [](const auto& p, char32_t v) { return p.first < v; });
            kids.insert(it, {c, next});
        }
        node = next;
    }
    nodes_[static_cast<std::size_t>(node)].id = id;
}

std::optional<TokenId> Vocabulary::find(std::u32string_view piece) const {
    if (piece.empty()) {
        return std::nullopt;
    }
    std::int32_t node = 0;
    for (char32_t c : piece) {
        node = child(node, c);
        if (node < 0) {
            return std::nullopt;
        }
    }
    const TokenId id = nodes_[static_cast<std::size_t>(node)].id;
    return id >= 0 ? std::optional<TokenId>(id) : std::nullopt;
}

std::optional<TokenId> Vocabulary::find(std::string_view piece) const {
    const std::u32string cp = utf8::decode(piece);
    return find(std::u32string_view(cp));
}

std::vector<PieceEntry> Vocabulary::pieces() const {
    return {entries_.begin() + kNumSpecials, entries_.end()};
}

bool operator==(const Vocabulary& a, const Vocabulary& b) {
    if (a.unk_penalty_ != b.unk_penalty_ || a.entries_.size() != b.entries_.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
        if (a.entries_[i].piece != b.entries_[i].piece || a.entries_[i].log_prob != b.entries_[i].log_prob) {
            return false;
        }
    }
    return true;
}

std::vector<std::string> Segmentation::pieces(const Vocabulary& vocab) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (TokenId id : ids) {
        out.push_back(vocab.piece(id));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization

namespace {

bool is_space(char32_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

} // namespace

std::vector<std::u32string> split_words(std::string_view text) {
    const std::u32string cp = utf8::decode(text);
    std::vector<std::u32string> words;
    std::u32string current;
    for (char32_t c : cp) {
        if (is_space(c)) {
            if (!current.empty()) {
                words.push_back(std::move(current));
                current.clear();
            }
        } else {
            if (current.empty()) {
                current.push_back(kWordBoundary);
            }
            current.push_back(c);
        }
    }
    if (!current.empty()) {
        words.push_back(std::move(current));
    }
    return words;
}

std::u32string normalize(std::string_view text) {
    std::u32string out;
    for (const auto& w : split_words(text)) {
        out += w;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Viterbi

Segmentation viterbi_segment(std::u32string_view text, const Vocabulary& vocab) {
    const std::size_t n = text.size();
    // Backward DP: best[i] describes the best segmentation of text[i:].
    // With equal score and count, the shorter first piece is the
    // lexicographically earlier one (it is a prefix of the longer).
    std::vector<double> score(n + 1, 0.0);
    std::vector<std::size_t> count(n + 1, 0);
    std::vector<std::size_t> len(n + 1, 0);
    std::vector<TokenId> first(n + 1, kUnk);
    for (std::size_t i = n; i-- > 0;) {
        bool have = false;
        bool single = false;
        const auto consider = [&](std::size_t l, TokenId id, double lp) {
            const double s = lp + score[i + l];
            const std::size_t c = 1 + count[i + l];
            if (!have || s > score[i] || (s == score[i] && (c < count[i] || (c == count[i] && l < len[i])))) {
                score[i] = s;
                count[i] = c;
                len[i] = l;
                first[i] = id;
                have = true;
            }
        };
        vocab.for_each_match(text, i, [&](std::size_t l, TokenId id) {
            if (l == 1) {
                single = true;
            }
            consider(l, id, vocab.log_prob(id));
        });
        if (!single) {
            consider(1, kUnk, vocab.unk_penalty());
        }
    }
    Segmentation seg;
    std::size_t pos = 0;
    while (pos < n) {
        seg.ids.push_back(first[pos]);
        seg.score += first[pos] == kUnk ? vocab.unk_penalty() : vocab.log_prob(first[pos]);
        pos += len[pos];
    }
    return seg;
}

Segmentation viterbi_segment(std::string_view text, const Vocabulary& vocab) {
    const std::u32string cp = utf8::decode(text);
    return viterbi_segment(std::u32string_view(cp), vocab);
}

std::vector<TokenId> encode(std::string_view text, const Vocabulary& vocab) {
    std::vector<TokenId> ids;
    for (const auto& word : split_words(text)) {
        const Segmentation seg = viterbi_segment(std::u32string_view(word), vocab);
        ids.insert(ids.end(), seg.ids.begin(), seg.ids.end());
    }
    return ids;
}

std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab) {
    std::u32string text;
    for (TokenId id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
            throw Error("token id " + std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(vocab.size()));
        }
        if (Vocabulary::is_special(id)) {
            continue;
        }
        for (char32_t c : vocab.piece_cp(id)) {
            text.push_back(c == kWordBoundary ? U' ' : c);
        }
    }
    // Collapse the space runs left behind by boundaries and stripped specials.
    std::u32string out;
    out.reserve(text.size());
    for (char32_t c : text) {
        if (c == U' ' && (out.empty() || out.back() == U' ')) {
            continue;
        }
        out.push_back(c);
    }
    if (!out.empty() && out.back() == U' ') {
        out.pop_back();
    }
    return utf8::encode(out);
}

// ---------------------------------------------------------------------------
// Persistence

std::string format_vocab(const Vocabulary& vocab) {
    std::string out;
    char buf[64];
    for (const auto& e : vocab.entries()) {
        std::snprintf(buf, sizeof buf, "%.17g", e.log_prob);
        out += e.piece;
        out += '\t';
        out += buf;
        out += '\n';
    }
    return out;
}

void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << format_vocab(vocab);
    if (!out.flush()) {
        throw IoError("write failed for " + path.string());
    }
}

Vocabulary parse_vocab(std::string_view text, const std::string& origin) {
    std::vector<PieceEntry> pieces;
    std::unordered_set<std::string> seen;
    double unk_penalty = kDefaultUnkPenalty;
    std::size_t line_no = 0;
    const auto fail = [&](const std::string& what) {
        throw FormatError(origin + ": line " + std::to_string(line_no) + ": " + what);
    };
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        const auto tab = line.find('\t');
        if (tab == std::string_view::npos || tab == 0) {
            fail("expected 'piece<TAB>log_prob'");
        }
        const std::string piece(line.substr(0, tab));
        const std::string number(line.substr(tab + 1));
        char* end = nullptr;
        const double lp = std::strtod(number.c_str(), &end);
        if (number.empty() || end != number.c_str() + number.size() || !std::isfinite(lp) || lp > 0.0) {
            fail("invalid log probability '" + number + "'");
        }
        if (line_no <= static_cast<std::size_t>(kNumSpecials)) {
            if (piece != kSpecialPieces[line_no - 1]) {
                fail("expected special token " + std::string(kSpecialPieces[line_no - 1]) + ", found '" +
                     piece + "'");
            }
            if (line_no - 1 == static_cast<std::size_t>(kUnk)) {
                if (lp >= 0.0) {
                    fail("UNK penalty must be negative");
                }
                unk_penalty = lp;
            }
            continue;
        }
        if (!seen.insert(piece).second ||
            std::find(kSpecialPieces.begin(), kSpecialPieces.end(), piece) != kSpecialPieces.end()) {
            fail("duplicate piece '" + piece + "'");
        }
        pieces.push_back({piece, lp});
    }
    if (line_no < static_cast<std::size_t>(kNumSpecials)) {
        ++line_no;
        fail("missing special token " + std::string(kSpecialPieces[line_no - 1]));
    }
    return Vocabulary(std::move(pieces), unk_penalty);
}

Vocabulary load_vocab(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_vocab(buffer.str(), path.string());
}

} // namespace langadapt::tokenizer
