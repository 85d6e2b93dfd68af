#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace langadapt::corpus {

struct RawDocument {
    std::string source_id;
    std::string text;
};

/// Cleaned text: no tags, no literal \uXXXX escapes, no emoji, no control
/// characters, single spaces only, trimmed.
struct CleanDocument {
    std::string text;
};

struct CleaningStats {
    std::size_t docs_in = 0;
    std::size_t docs_out = 0;
    std::size_t docs_dropped_empty = 0;
    std::size_t tags_stripped = 0;
    std::size_t escapes_decoded = 0;
    std::size_t mojibake_fixed = 0;
    std::size_t emoji_removed = 0;

    CleaningStats& operator+=(const CleaningStats& other);
};

struct CodePointRange {
    char32_t first;
    char32_t last;
};

/// Table of code point ranges treated as emoji.
class EmojiTable {
public:
    EmojiTable();
    explicit EmojiTable(std::vector<CodePointRange> ranges);

    /// Reads one range per line: "1F300-1FAFF", "FE0F" or "U+2600-U+27BF".
    /// Blank lines and lines starting with '#' are skipped.
    static EmojiTable load(const std::filesystem::path& path);

    bool contains(char32_t cp) const;
    const std::vector<CodePointRange>& ranges() const { return ranges_; }

private:
    std::vector<CodePointRange> ranges_;
};

// Individual cleaning stages. The optional counter is incremented once per
// tag / escape / repaired span / removed code point.
std::string strip_html(std::string_view text, std::size_t* tags_stripped = nullptr);
std::string decode_unicode_escapes(std::string_view text, std::size_t* escapes_decoded = nullptr);
std::string fix_mojibake(std::string_view text, std::size_t* spans_fixed = nullptr);
std::string remove_emoji(std::string_view text, const EmojiTable& table = EmojiTable(),
                         std::size_t* removed = nullptr);
std::string normalize_whitespace(std::string_view text);

/// Full cleaning transform: the five stages applied in order, repeated
/// until the text no longer changes. clean_text(clean_text(s)) == clean_text(s).
std::string clean_text(std::string_view text, const EmojiTable& table = EmojiTable(),
                       CleaningStats* stats = nullptr);

/// Returns nullopt when the document is empty after cleaning.
std::optional<CleanDocument> clean_document(const RawDocument& raw,
                                            const EmojiTable& table = EmojiTable(),
                                            CleaningStats* stats = nullptr);

inline constexpr std::size_t kMaxDocumentBytes = std::size_t{1} << 20;

/// Splits a raw line longer than `limit` bytes at the last sentence boundary
/// before the limit (falling back to whitespace, then a code point boundary).
std::vector<std::string> split_oversized(std::string_view line,
                                         std::size_t limit = kMaxDocumentBytes);

struct IngestResult {
    CleaningStats stats;
    /// One entry per input that could not be read: "<path>: <reason>".
    std::vector<std::string> file_errors;
};

/// Expands directories (recursively, sorted by path) into regular files.
std::vector<std::filesystem::path> expand_inputs(const std::vector<std::filesystem::path>& inputs,
                                                 std::vector<std::string>* errors = nullptr);

/// Streams every input document through clean_document and writes one
/// cleaned document per line. Unreadable inputs are listed in file_errors and
/// skipped; an unwritable output throws IoError.
IngestResult ingest_corpus(const std::vector<std::filesystem::path>& inputs,
                           const std::filesystem::path& output,
                           const EmojiTable& table = EmojiTable(),
                           std::size_t max_document_bytes = kMaxDocumentBytes);

} // namespace langadapt::corpus
