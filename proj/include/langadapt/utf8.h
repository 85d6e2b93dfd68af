#pragma once

#include <string>
#include <string_view>

namespace langadapt::utf8 {

inline constexpr char32_t kReplacement = 0xFFFD;

/// Lossy decode: every invalid or truncated byte sequence becomes U+FFFD.
std::u32string decode(std::string_view bytes);

/// Strict decode. Returns false on any invalid sequence, overlong form,
/// surrogate or out-of-range code point.
bool decode_strict(std::string_view bytes, std::u32string& out);

std::string encode(std::u32string_view text);
void append(std::string& out, char32_t cp);

} // namespace langadapt::utf8
