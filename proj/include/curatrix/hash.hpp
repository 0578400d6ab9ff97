#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace curatrix {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::span<const std::uint8_t> bytes);
Digest sha256(std::string_view text);

std::string to_hex(std::span<const std::uint8_t> bytes);

/// Lowercase hex SHA-256 of `bytes`; the identity of an image everywhere in the pipeline.
std::string content_hash(std::span<const std::uint8_t> bytes);
std::string content_hash(std::string_view text);

/// First eight digest bytes read big-endian.
std::uint64_t digest_prefix_u64(const Digest& digest);

/// Deterministic 64-bit seed derived from a base seed and a list of string parts.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::string_view> parts);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws curatrix::Error on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

bool is_hex_digest(std::string_view text);

}  // namespace curatrix
