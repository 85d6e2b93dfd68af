#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace langadapt {

struct Tensor {
    std::vector<std::uint32_t> shape;
    std::vector<float> values;

    std::size_t numel() const;
    /// Bitwise equality of shape and values.
    friend bool operator==(const Tensor& a, const Tensor& b);
};

/// Named f32 tensors in insertion order. The checkpoint currency.
class TensorMap {
public:
    using Entry = std::pair<std::string, Tensor>;

    /// Throws Error on duplicate names or value count != product of dims.
    void insert(std::string name, Tensor tensor);
    void insert_or_assign(std::string name, Tensor tensor);

    bool contains(std::string_view name) const;
    const Tensor* find(std::string_view name) const;
    const Tensor& at(std::string_view name) const;
    Tensor& at(std::string_view name);

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    friend bool operator==(const TensorMap& a, const TensorMap& b) { return a.entries_ == b.entries_; }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline constexpr std::uint8_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const TensorMap& tensors);
TensorMap deserialize_checkpoint(std::string_view bytes, const std::string& origin = "checkpoint");

/// Throws Error if any value is non-finite.
void save_checkpoint(const TensorMap& tensors, const std::filesystem::path& path);
/// Throws FormatError on bad magic/version, truncation (naming the tensor) or
/// non-finite values.
TensorMap load_checkpoint(const std::filesystem::path& path);

} // namespace langadapt
