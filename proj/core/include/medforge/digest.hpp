#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>

namespace medforge {

// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// Stable identifier over an ordered list of fields.
///
/// Each field is length-prefixed before hashing, so ("ab","c") and ("a","bc")
/// produce different ids. Throws std::invalid_argument("empty input") when
/// there are no fields or every field is empty.
std::string derive_id(std::span<const std::string_view> fields);
std::string derive_id(std::initializer_list<std::string_view> fields);

// 64-bit seed derived from a digest of the fields; used for per-record RNG.
std::uint64_t derive_seed(std::initializer_list<std::string_view> fields);

std::string base64_encode(std::string_view bytes);
// Throws std::invalid_argument on malformed input.
std::string base64_decode(std::string_view text);

}  // namespace medforge
