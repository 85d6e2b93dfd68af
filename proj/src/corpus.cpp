#include "langadapt/corpus.h"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "langadapt/error.h"
#include "langadapt/utf8.h"

namespace langadapt::corpus {

namespace fs = std::filesystem;

CleaningStats& CleaningStats::operator+=(const CleaningStats& other) {
    docs_in += other.docs_in;
    docs_out += other.docs_out;
    docs_dropped_empty += other.docs_dropped_empty;
    tags_stripped += other.tags_stripped;
    escapes_decoded += other.escapes_decoded;
    mojibake_fixed += other.mojibake_fixed;
    emoji_removed += other.emoji_removed;
    return *this;
}

// ---------------------------------------------------------------------------
// Emoji table

EmojiTable::EmojiTable()
    : ranges_{{0x1F300, 0x1FAFF}, {0x2600, 0x27BF}, {0xFE0F, 0xFE0F},
              {0x200D, 0x200D},   {0x1F1E6, 0x1F1FF}} {}

EmojiTable::EmojiTable(std::vector<CodePointRange> ranges) : ranges_(std::move(ranges)) {}

namespace {

bool parse_code_point(std::string token, char32_t& out) {
    if (token.size() > 2 && (token[0] == 'U' || token[0] == 'u') && token[1] == '+') {
        token = token.substr(2);
    }
    if (token.empty() || token.size() > 6) {
        return false;
    }
    char32_t value = 0;
    for (char c : token) {
        int digit = 0;
        if (c >= '0' && c <= '9') {
            digit = c - '0';
        } else if (c >= 'a' && c <= 'f') {
            digit = c - 'a' + 10;
        } else if (c >= 'A' && c <= 'F') {
            digit = c - 'A' + 10;
        } else {
            return false;
        }
        value = value * 16 + static_cast<char32_t>(digit);
    }
    if (value > 0x10FFFF) {
        return false;
    }
    out = value;
    return true;
}

std::string trim_ascii(std::string_view s) {
    const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && is_space(s[b])) {
        ++b;
    }
    while (e > b && is_space(s[e - 1])) {
        --e;
    }
    return std::string(s.substr(b, e - b));
}

} // namespace

EmojiTable EmojiTable::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read emoji range file " + path.string());
    }
    std::vector<CodePointRange> ranges;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim_ascii(line);
        if (t.empty() || t[0] == '#') {
            continue;
        }
        const auto dash = t.find('-');
        CodePointRange r{};
        bool ok = false;
        if (dash == std::string::npos) {
            ok = parse_code_point(t, r.first);
            r.last = r.first;
        } else {
            ok = parse_code_point(trim_ascii(t.substr(0, dash)), r.first) &&
                 parse_code_point(trim_ascii(t.substr(dash + 1)), r.last) && r.first <= r.last;
        }
        if (!ok) {
            throw FormatError(path.string() + ": line " + std::to_string(line_no) +
                              ": malformed code point range '" + t + "'");
        }
        ranges.push_back(r);
    }
    return EmojiTable(std::move(ranges));
}

bool EmojiTable::contains(char32_t cp) const {
    return std::any_of(ranges_.begin(), ranges_.end(),
                       [cp](const CodePointRange& r) { return cp >= r.first && cp <= r.last; });
}

// ---------------------------------------------------------------------------
// Stages on code point strings

namespace {

bool is_ascii_alpha(char32_t c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

int hex_value(char32_t c) {
    if (c >= '0' && c <= '9') return static_cast<int>(c - '0');
    if (c >= 'a' && c <= 'f') return static_cast<int>(c - 'a' + 10);
    if (c >= 'A' && c <= 'F') return static_cast<int>(c - 'A' + 10);
    return -1;
}

bool valid_scalar(char32_t cp) { return cp <= 0x10FFFF && !(cp >= 0xD800 && cp <= 0xDFFF); }

// Length of the tag starting at text[i] == '<', or 0 if it is not tag syntax.
std::size_t tag_length(const std::u32string& text, std::size_t i) {
    const std::size_t n = text.size();
    if (i + 1 >= n) {
        return 0;
    }
    const char32_t next = text[i + 1];
    if (next == '!' && text.compare(i, 4, U"<!--") == 0) {
        const auto end = text.find(U"-->", i + 4);
        return end == std::u32string::npos ? 0 : end + 3 - i;
    }
    const bool opens = is_ascii_alpha(next) || next == '!' || next == '?' ||
                       (next == '/' && i + 2 < n && is_ascii_alpha(text[i + 2]));
    if (!opens) {
        return 0;
    }
    for (std::size_t j = i + 1; j < n; ++j) {
        if (text[j] == '>') {
            return j + 1 - i;
        }
        if (text[j] == '<') {
            return 0;
        }
    }
    return 0;
}

// Decodes the entity starting at text[i] == '&'. Returns consumed length, 0 if none.
std::size_t entity_length(const std::u32string& text, std::size_t i, char32_t& out) {
    static const struct {
        std::u32string_view name;
        char32_t value;
    } kNamed[] = {{U"amp;", U'&'}, {U"lt;", U'<'}, {U"gt;", U'>'}, {U"quot;", U'"'}, {U"apos;", U'\''}};
    const std::u32string_view rest = std::u32string_view(text).substr(i + 1);
    for (const auto& e : kNamed) {
        if (rest.substr(0, e.name.size()) == e.name) {
            out = e.value;
            return e.name.size() + 1;
        }
    }
    if (rest.empty() || rest[0] != '#') {
        return 0;
    }
    std::size_t k = 1;
    const bool hex = k < rest.size() && (rest[k] == 'x' || rest[k] == 'X');
    if (hex) {
        ++k;
    }
    const std::size_t digits_begin = k;
    char32_t value = 0;
    while (k < rest.size() && k - digits_begin < 8) {
        const int d = hex_value(rest[k]);
        if (d < 0 || (!hex && d > 9)) {
            break;
        }
        value = value * (hex ? 16 : 10) + static_cast<char32_t>(d);
        ++k;
    }
    if (k == digits_begin || k >= rest.size() || rest[k] != ';' || !valid_scalar(value)) {
        return 0;
    }
    out = value;
    return k + 2;
}

std::u32string strip_html_cp(const std::u32string& text, std::size_t* tags) {
    std::u32string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        const char32_t c = text[i];
        if (c == '<') {
            if (const std::size_t len = tag_length(text, i); len > 0) {
                if (tags) ++*tags;
                i += len;
                continue;
            }
        } else if (c == '&') {
            char32_t decoded = 0;
            if (const std::size_t len = entity_length(text, i, decoded); len > 0) {
                out.push_back(decoded);
                i += len;
                continue;
            }
        }
        out.push_back(c);
        ++i;
    }
    return out;
}

// Parses "\uXXXX" at text[i]; returns the 16-bit unit or -1.
long escape_unit(const std::u32string& text, std::size_t i) {
    if (i + 6 > text.size() || text[i] != '\\' || text[i + 1] != 'u') {
        return -1;
    }
    long v = 0;
    for (std::size_t k = 2; k < 6; ++k) {
        const int d = hex_value(text[i + k]);
        if (d < 0) {
            return -1;
        }
        v = v * 16 + d;
    }
    return v;
}

std::u32string decode_escapes_cp(const std::u32string& text, std::size_t* count) {
    std::u32string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        const long unit = escape_unit(text, i);
        if (unit < 0) {
            out.push_back(text[i]);
            ++i;
            continue;
        }
        if (unit >= 0xD800 && unit <= 0xDBFF) {
            const long low = escape_unit(text, i + 6);
            if (low >= 0xDC00 && low <= 0xDFFF) {
                out.push_back(static_cast<char32_t>(0x10000 + ((unit - 0xD800) << 10) + (low - 0xDC00)));
                if (count) *count += 2;
                i += 12;
                continue;
            }
        }
        if (unit >= 0xD800 && unit <= 0xDFFF) {
            out.push_back(utf8::kReplacement);
        } else {
            out.push_back(static_cast<char32_t>(unit));
        }
        if (count) ++*count;
        i += 6;
    }
    return out;
}

bool is_continuation(char32_t c) { return c >= 0x80 && c <= 0xBF; }

std::size_t suspicious_leads(std::u32string_view s) {
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        if ((s[i] == 0xC3 || s[i] == 0xC2 || s[i] == 0xE2) && is_continuation(s[i + 1])) {
            ++n;
        }
    }
    return n;
}

// Length of a UTF-8 sequence whose bytes are the Latin-1 code points at s[i...].
std::size_t latin1_utf8_sequence(const std::u32string& s, std::size_t i) {
    const char32_t lead = s[i];
    std::size_t len = 0;
    if (lead >= 0xC2 && lead <= 0xDF) {
        len = 2;
    } else if (lead >= 0xE0 && lead <= 0xEF) {
        len = 3;
    } else if (lead >= 0xF0 && lead <= 0xF4) {
        len = 4;
    } else {
        return 0;
    }
    if (i + len > s.size()) {
        return 0;
    }
    std::string bytes;
    for (std::size_t k = 0; k < len; ++k) {
        if (k > 0 && !is_continuation(s[i + k])) {
            return 0;
        }
        bytes.push_back(static_cast<char>(s[i + k]));
    }
    std::u32string decoded;
    return utf8::decode_strict(bytes, decoded) ? len : 0;
}

std::u32string fix_mojibake_cp(const std::u32string& text, std::size_t* fixed) {
    std::u32string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t j = i;
        while (j < text.size()) {
            const std::size_t len = latin1_utf8_sequence(text, j);
            if (len == 0) {
                break;
            }
            j += len;
        }
        if (j == i) {
            out.push_back(text[i]);
            ++i;
            continue;
        }
        const std::u32string_view span = std::u32string_view(text).substr(i, j - i);
        std::string bytes;
        for (char32_t c : span) {
            bytes.push_back(static_cast<char>(c));
        }
        std::u32string repaired;
        if (utf8::decode_strict(bytes, repaired) && suspicious_leads(repaired) < suspicious_leads(span)) {
            out += repaired;
            if (fixed) ++*fixed;
        } else {
            out += span;
        }
        i = j;
    }
    return out;
}

std::u32string remove_emoji_cp(const std::u32string& text, const EmojiTable& table, std::size_t* removed) {
    std::u32string out;
    out.reserve(text.size());
    for (char32_t c : text) {
        if (table.contains(c)) {
            if (removed) ++*removed;
        } else {
            out.push_back(c);
        }
    }
    return out;
}

bool is_whitespace(char32_t c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f' || c == 0xA0 ||
           c == 0x1680 || (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F ||
           c == 0x205F || c == 0x3000;
}

bool is_control(char32_t c) { return c < 0x20 || c == 0x7F || (c >= 0x80 && c <= 0x9F); }

std::u32string normalize_whitespace_cp(const std::u32string& text) {
    std::u32string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (char32_t c : text) {
        if (is_whitespace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (is_control(c)) {
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(c);
    }
    return out;
}

std::string to_utf8(const std::u32string& s) { return utf8::encode(s); }

} // namespace

std::string strip_html(std::string_view text, std::size_t* tags_stripped) {
    return to_utf8(strip_html_cp(utf8::decode(text), tags_stripped));
}

std::string decode_unicode_escapes(std::string_view text, std::size_t* escapes_decoded) {
    return to_utf8(decode_escapes_cp(utf8::decode(text), escapes_decoded));
}

std::string fix_mojibake(std::string_view text, std::size_t* spans_fixed) {
    return to_utf8(fix_mojibake_cp(utf8::decode(text), spans_fixed));
}

std::string remove_emoji(std::string_view text, const EmojiTable& table, std::size_t* removed) {
    return to_utf8(remove_emoji_cp(utf8::decode(text), table, removed));
}

std::string normalize_whitespace(std::string_view text) {
    return to_utf8(normalize_whitespace_cp(utf8::decode(text)));
}

std::string clean_text(std::string_view text, const EmojiTable& table, CleaningStats* stats) {
    CleaningStats local;
    std::u32string current = utf8::decode(text);
    // Every stage is non-expanding, so the fixpoint is reached after at most
    // one pass per code point plus one confirming pass.
    for (std::size_t pass = 0; pass <= current.size() + 1; ++pass) {
        std::u32string next = strip_html_cp(current, &local.tags_stripped);
        next = decode_escapes_cp(next, &local.escapes_decoded);
        next = fix_mojibake_cp(next, &local.mojibake_fixed);
        next = remove_emoji_cp(next, table, &local.emoji_removed);
        next = normalize_whitespace_cp(next);
        if (next == current) {
            break;
        }
        current = std::move(next);
    }
    if (stats) {
        *stats += local;
    }
    return to_utf8(current);
}

std::optional<CleanDocument> clean_document(const RawDocument& raw, const EmojiTable& table,
                                            CleaningStats* stats) {
    std::string cleaned = clean_text(raw.text, table, stats);
    if (cleaned.empty()) {
        return std::nullopt;
    }
    return CleanDocument{std::move(cleaned)};
}

// ---------------------------------------------------------------------------
// Ingestion

std::vector<std::string> split_oversized(std::string_view line, std::size_t limit) {
    std::vector<std::string> parts;
    if (limit == 0) {
        limit = 1;
    }
    while (line.size() > limit) {
        std::size_t cut = std::string_view::npos;
        // Last sentence end (". ", "! ", "? ") whose punctuation fits in the limit.
        for (std::size_t k = limit; k >= 2; --k) {
            const char p = line[k - 2];
            if ((p == '.' || p == '!' || p == '?') && line[k - 1] == ' ') {
                cut = k - 1;
                break;
            }
        }
        if (cut == std::string_view::npos) {
            const auto space = line.rfind(' ', limit - 1);
            if (space != std::string_view::npos && space > 0) {
                cut = space;
            }
        }
        if (cut == std::string_view::npos) {
            cut = limit;
            while (cut > 0 && (static_cast<unsigned char>(line[cut]) & 0xC0) == 0x80) {
                --cut;
            }
            if (cut == 0) {
                cut = limit;
            }
        }
        parts.emplace_back(line.substr(0, cut));
        line.remove_prefix(cut);
        while (!line.empty() && line.front() == ' ') {
            line.remove_prefix(1);
        }
    }
    if (!line.empty() || parts.empty()) {
        parts.emplace_back(line);
    }
    return parts;
}

std::vector<fs::path> expand_inputs(const std::vector<fs::path>& inputs, std::vector<std::string>* errors) {
    std::vector<fs::path> files;
    for (const auto& input : inputs) {
        std::error_code ec;
        if (fs::is_directory(input, ec)) {
            std::vector<fs::path> found;
            for (auto it = fs::recursive_directory_iterator(input, ec); !ec && it != fs::end(it);
                 it.increment(ec)) {
                if (it->is_regular_file()) {
                    found.push_back(it->path());
                }
            }
            if (ec && errors) {
                errors->push_back(input.string() + ": " + ec.message());
            }
            std::sort(found.begin(), found.end());
            files.insert(files.end(), found.begin(), found.end());
        } else {
            files.push_back(input);
        }
    }
    return files;
}

IngestResult ingest_corpus(const std::vector<fs::path>& inputs, const fs::path& output,
                           const EmojiTable& table, std::size_t max_document_bytes) {
    IngestResult result;
    std::ofstream out(output, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + output.string());
    }
    for (const auto& path : expand_inputs(inputs, &result.file_errors)) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            result.file_errors.push_back(path.string() + ": cannot open for reading");
            continue;
        }
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') {
                line.pop_back();
            }
            for (auto& piece : split_oversized(line, max_document_bytes)) {
                ++result.stats.docs_in;
                RawDocument raw{path.string() + ":" + std::to_string(line_no), std::move(piece)};
                if (auto doc = clean_document(raw, table, &result.stats)) {
                    out << doc->text << '\n';
                    ++result.stats.docs_out;
                } else {
                    ++result.stats.docs_dropped_empty;
                }
            }
        }
        if (in.bad()) {
            result.file_errors.push_back(path.string() + ": read error");
        }
    }
    out.flush();
    if (!out) {
        throw IoError("write failed for " + output.string());
    }
    return result;
}

} // namespace langadapt::corpus
