#pragma once

#include <string>
#include <string_view>

namespace vlmkit::util {

// Hex digest of the input bytes. md5 matches the dedup key format used by
// the curation pipeline; sha256 is used for checkpoints and config hashing.
std::string md5_hex(std::string_view bytes);
std::string sha256_hex(std::string_view bytes);

std::string sha256_file_hex(const std::string& path);

}  // namespace vlmkit::util
