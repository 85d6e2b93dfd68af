#include "langadapt/tensor_map.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "langadapt/error.h"

namespace langadapt {

std::size_t Tensor::numel() const {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.values.size() == b.values.size() &&
           std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)) == 0;
}

void TensorMap::insert(std::string name, Tensor tensor) {
    if (index_.count(name) != 0) {
        throw Error("duplicate tensor name '" + name + "'");
    }
    if (tensor.numel() != tensor.values.size()) {
        throw Error("tensor '" + name + "' has " + std::to_string(tensor.values.size()) +
                    " values but its shape implies " + std::to_string(tensor.numel()));
    }
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(tensor));
}

void TensorMap::insert_or_assign(std::string name, Tensor tensor) {
    if (auto it = index_.find(name); it != index_.end()) {
        entries_[it->second].second = std::move(tensor);
    } else {
        insert(std::move(name), std::move(tensor));
    }
}

bool TensorMap::contains(std::string_view name) const { return find(name) != nullptr; }

const Tensor* TensorMap::find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &entries_[it->second].second;
}

const Tensor& TensorMap::at(std::string_view name) const {
    if (const Tensor* t = find(name)) {
        return *t;
    }
    throw Error("missing tensor '" + std::string(name) + "'");
}

Tensor& TensorMap::at(std::string_view name) {
    return const_cast<Tensor&>(static_cast<const TensorMap&>(*this).at(name));
}

// ---------------------------------------------------------------------------

namespace {

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) {
        out.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
    }
}

class ByteReader {
public:
    ByteReader(std::string_view bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

    bool has(std::size_t n) const { return pos_ + n <= bytes_.size(); }

    std::uint32_t u(std::size_t n, const std::string& what) {
        if (!has(n)) {
            throw FormatError(origin_ + ": truncated " + what);
        }
        std::uint32_t v = 0;
        for (std::size_t k = 0; k < n; ++k) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + k])) << (8 * k);
        }
        pos_ += n;
        return v;
    }

    std::string_view take(std::size_t n, const std::string& what) {
        if (!has(n)) {
            throw FormatError(origin_ + ": truncated " + what);
        }
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    std::string_view bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

} // namespace

std::string serialize_checkpoint(const TensorMap& tensors) {
    std::string out = "DBTC";
    out.push_back(static_cast<char>(kCheckpointVersion));
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, tensor] : tensors) {
        if (name.size() > 0xFFFF) {
            throw Error("tensor name too long: " + name.substr(0, 64));
        }
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out += name;
        out.push_back(static_cast<char>(tensor.shape.size()));
        for (auto d : tensor.shape) {
            put_u32(out, d);
        }
        for (float v : tensor.values) {
            if (!std::isfinite(v)) {
                throw Error("tensor '" + name + "' contains a non-finite value");
            }
            put_u32(out, std::bit_cast<std::uint32_t>(v));
        }
    }
    return out;
}

TensorMap deserialize_checkpoint(std::string_view bytes, const std::string& origin) {
    ByteReader r(bytes, origin);
    if (r.take(4, "header") != "DBTC") {
        throw FormatError(origin + ": bad magic (expected DBTC)");
    }
    const auto version = r.u(1, "header");
    if (version != kCheckpointVersion) {
        throw FormatError(origin + ": unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = r.u(4, "header");
    TensorMap map;
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::string label = "tensor #" + std::to_string(t);
        const auto name_len = r.u(2, label + " name length");
        std::string name(r.take(name_len, label + " name"));
        const std::string where = "tensor '" + name + "'";
        const auto rank = r.u(1, where + " rank");
        Tensor tensor;
        for (std::uint32_t k = 0; k < rank; ++k) {
            tensor.shape.push_back(r.u(4, where + " dims"));
        }
        const std::size_t n = tensor.numel();
        if (!r.has(n * 4)) {
            throw FormatError(origin + ": truncated " + where + " values");
        }
        tensor.values.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            tensor.values[i] = std::bit_cast<float>(r.u(4, where + " values"));
            if (!std::isfinite(tensor.values[i])) {
                throw FormatError(origin + ": " + where + " contains a non-finite value");
            }
        }
        try {
            map.insert(std::move(name), std::move(tensor));
        } catch (const Error& e) {
            throw FormatError(origin + ": " + e.what());
        }
    }
    if (!r.done()) {
        throw FormatError(origin + ": trailing bytes after " + std::to_string(count) + " tensors");
    }
    return map;
}

void save_checkpoint(const TensorMap& tensors, const std::filesystem::path& path) {
    const std::string bytes = serialize_checkpoint(tensors);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out.flush()) {
        throw IoError("write failed for " + path.string());
    }
}

TensorMap load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return deserialize_checkpoint(buffer.str(), path.string());
}

} // namespace langadapt
