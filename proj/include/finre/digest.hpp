#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace finre {

/// Lowercase hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view data);

/// First 8 bytes of SHA-256, big-endian. Used to derive RNG seeds from string keys.
std::uint64_t sha256_u64(std::string_view data);

}  // namespace finre
