#include "langadapt/packing.h"

#include <cstring>
#include <string>

#include "langadapt/error.h"

namespace langadapt::packing {

namespace fs = std::filesystem;
using tokenizer::kCls;
using tokenizer::kPad;
using tokenizer::kSep;

namespace {

void put_u16(std::ostream& out, std::uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
    out.write(b, 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                       static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
    out.write(b, 4);
}

bool get_bytes(std::istream& in, unsigned char* dst, std::size_t n) {
    in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    return static_cast<std::size_t>(in.gcount()) == n;
}

std::uint32_t le32(const unsigned char* b) {
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace

PackedExample PackedExample::frame(std::span<const TokenId> chunk) {
    if (chunk.empty() || chunk.size() > kMaxChunk) {
        throw Error("chunk length " + std::to_string(chunk.size()) + " outside [1, 510]");
    }
    PackedExample ex;
    ex.ids.fill(kPad);
    ex.ids[0] = kCls;
    std::copy(chunk.begin(), chunk.end(), ex.ids.begin() + 1);
    ex.ids[chunk.size() + 1] = kSep;
    ex.real_len = static_cast<std::uint16_t>(chunk.size() + 2);
    return ex;
}

void validate(const PackedExample& ex) {
    if (ex.real_len < 3 || ex.real_len > kSeqLen) {
        throw FormatError("real_len " + std::to_string(ex.real_len) + " outside [3, 512]");
    }
    if (ex.ids[0] != kCls) {
        throw FormatError("position 0 is not CLS");
    }
    if (ex.ids[ex.real_len - 1u] != kSep) {
        throw FormatError("position real_len-1 is not SEP");
    }
    for (std::size_t i = 1; i + 1 < ex.real_len; ++i) {
        if (ex.ids[i] == kCls || ex.ids[i] == kSep || ex.ids[i] == kPad || ex.ids[i] < 0) {
            throw FormatError("special or invalid id at content position " + std::to_string(i));
        }
    }
    for (std::size_t i = ex.real_len; i < kSeqLen; ++i) {
        if (ex.ids[i] != kPad) {
            throw FormatError("non-PAD id after real_len at position " + std::to_string(i));
        }
    }
}

std::vector<std::vector<TokenId>> chunk_ids(std::span<const TokenId> ids, std::size_t max_len) {
    if (max_len == 0) {
        throw Error("chunk length must be at least 1");
    }
    std::vector<std::vector<TokenId>> chunks;
    for (std::size_t i = 0; i < ids.size(); i += max_len) {
        const std::size_t n = std::min(max_len, ids.size() - i);
        chunks.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(i),
                            ids.begin() + static_cast<std::ptrdiff_t>(i + n));
    }
    return chunks;
}

std::vector<PackedExample> pack_document(std::span<const TokenId> ids, std::size_t min_chunk) {
    std::vector<PackedExample> out;
    for (const auto& chunk : chunk_ids(ids, kMaxChunk)) {
        if (chunk.size() >= min_chunk && !chunk.empty()) {
            out.push_back(PackedExample::frame(chunk));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

PackedWriter::PackedWriter(const fs::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) {
        throw IoError("cannot write " + path.string());
    }
    out_.write(kMagic.data(), kMagic.size());
    out_.put(static_cast<char>(kFormatVersion));
    put_u32(out_, static_cast<std::uint32_t>(kSeqLen));
    put_u32(out_, 0);
}

PackedWriter::~PackedWriter() {
    if (!finished_) {
        try {
            finish();
        } catch (...) {
        }
    }
}

void PackedWriter::write(const PackedExample& ex) {
    validate(ex);
    put_u16(out_, ex.real_len);
    for (TokenId id : ex.ids) {
        put_u32(out_, static_cast<std::uint32_t>(id));
    }
    ++count_;
}

void PackedWriter::finish() {
    if (finished_) {
        return;
    }
    finished_ = true;
    out_.seekp(static_cast<std::streamoff>(kMagic.size() + 1 + 4));
    put_u32(out_, count_);
    out_.close();
    if (!out_) {
        throw IoError("write failed for " + path_.string());
    }
}

PackedReader::PackedReader(const fs::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) {
        throw IoError("cannot read " + path.string());
    }
    unsigned char header[13];
    if (!get_bytes(in_, header, sizeof header)) {
        throw FormatError(path.string() + ": truncated header");
    }
    if (std::memcmp(header, kMagic.data(), kMagic.size()) != 0) {
        throw FormatError(path.string() + ": bad magic (expected DBPK)");
    }
    if (header[4] != kFormatVersion) {
        throw FormatError(path.string() + ": unsupported version " + std::to_string(header[4]));
    }
    seq_len_ = le32(header + 5);
    count_ = le32(header + 9);
    if (seq_len_ != kSeqLen) {
        throw FormatError(path.string() + ": seq_len " + std::to_string(seq_len_) + " != 512");
    }
}

std::optional<PackedExample> PackedReader::next() {
    if (index_ >= count_) {
        return std::nullopt;
    }
    const std::string where = path_.string() + ": example " + std::to_string(index_);
    unsigned char buf[2 + 4 * kSeqLen];
    if (!get_bytes(in_, buf, sizeof buf)) {
        throw FormatError(where + ": truncated file");
    }
    PackedExample ex;
    ex.real_len = static_cast<std::uint16_t>(buf[0] | (buf[1] << 8));
    for (std::size_t i = 0; i < kSeqLen; ++i) {
        ex.ids[i] = static_cast<TokenId>(le32(buf + 2 + 4 * i));
    }
    try {
        validate(ex);
    } catch (const FormatError& e) {
        throw FormatError(where + ": " + e.what());
    }
    ++index_;
    return ex;
}

std::vector<PackedExample> read_packed(const fs::path& path) {
    PackedReader reader(path);
    std::vector<PackedExample> out;
    out.reserve(reader.count());
    while (auto ex = reader.next()) {
        out.push_back(*ex);
    }
    return out;
}

void write_packed(const fs::path& path, std::span<const PackedExample> examples) {
    PackedWriter writer(path);
    for (const auto& ex : examples) {
        writer.write(ex);
    }
    writer.finish();
}

PackSummary pack_corpus(const fs::path& corpus, const tokenizer::Vocabulary& vocab, const fs::path& output,
                        std::size_t min_chunk) {
    std::ifstream in(corpus, std::ios::binary);
    if (!in) {
        throw IoError("cannot read corpus " + corpus.string());
    }
    PackedWriter writer(output);
    PackSummary summary;
    std::string line;
    while (std::getline(in, line)) {
        ++summary.documents;
        const auto ids = tokenizer::encode(line, vocab);
        for (const auto& chunk : chunk_ids(ids, kMaxChunk)) {
            if (chunk.size() < min_chunk) {
                ++summary.dropped_chunks;
                summary.dropped_tokens += chunk.size();
                continue;
            }
            writer.write(PackedExample::frame(chunk));
            summary.tokens += chunk.size();
            ++summary.examples;
        }
    }
    writer.finish();
    return summary;
}

} // namespace langadapt::packing
