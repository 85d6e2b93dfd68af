#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <vector>

#include "langadapt/tokenizer.h"

namespace langadapt::packing {

using tokenizer::TokenId;

inline constexpr std::size_t kSeqLen = 512;
inline constexpr std::size_t kMaxChunk = kSeqLen - 2;
inline constexpr std::size_t kDefaultMinChunk = 8;
inline constexpr std::uint8_t kFormatVersion = 1;
inline constexpr std::array<char, 4> kMagic = {'D', 'B', 'P', 'K'};

/// 512 ids: CLS, content, SEP, then PAD up to the end.
struct PackedExample {
    std::array<TokenId, kSeqLen> ids{};
    std::uint16_t real_len = 0;

    static PackedExample frame(std::span<const TokenId> chunk);
    std::span<const TokenId> content() const { return {ids.data() + 1, real_len - 2u}; }

    friend bool operator==(const PackedExample&, const PackedExample&) = default;
};

/// Throws FormatError describing the first violated invariant.
void validate(const PackedExample& example);

/// Consecutive slices of at most max_len ids.
std::vector<std::vector<TokenId>> chunk_ids(std::span<const TokenId> ids, std::size_t max_len = kMaxChunk);

/// Frames one document: chunk at 510, drop chunks shorter than min_chunk.
std::vector<PackedExample> pack_document(std::span<const TokenId> ids, std::size_t min_chunk = kDefaultMinChunk);

/// Streaming writer; the example count in the header is patched on finish().
class PackedWriter {
public:
    explicit PackedWriter(const std::filesystem::path& path);
    ~PackedWriter();
    PackedWriter(const PackedWriter&) = delete;
    PackedWriter& operator=(const PackedWriter&) = delete;

    void write(const PackedExample& example);
    void finish();
    std::uint32_t count() const { return count_; }

private:
    std::filesystem::path path_;
    std::ofstream out_;
    std::uint32_t count_ = 0;
    bool finished_ = false;
};

/// Streaming reader validating every example as it is read.
class PackedReader {
public:
    explicit PackedReader(const std::filesystem::path& path);

    std::uint32_t count() const { return count_; }
    std::uint32_t seq_len() const { return seq_len_; }
    /// nullopt after the last example. Throws FormatError naming the example
    /// index on truncation or invariant violations.
    std::optional<PackedExample> next();

private:
    std::filesystem::path path_;
    std::ifstream in_;
    std::uint32_t count_ = 0;
    std::uint32_t seq_len_ = 0;
    std::uint32_t index_ = 0;
};

std::vector<PackedExample> read_packed(const std::filesystem::path& path);
void write_packed(const std::filesystem::path& path, std::span<const PackedExample> examples);

struct PackSummary {
    std::size_t documents = 0;
    std::size_t examples = 0;
    std::size_t tokens = 0;
    std::size_t dropped_chunks = 0;
    std::size_t dropped_tokens = 0;
};

PackSummary pack_corpus(const std::filesystem::path& corpus, const tokenizer::Vocabulary& vocab,
                        const std::filesystem::path& output, std::size_t min_chunk = kDefaultMinChunk);

} // namespace langadapt::packing
