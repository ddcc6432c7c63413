#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace vlmkit::util {

// Decodes UTF-8 into code points. Invalid bytes are taken as single Latin-1
// code points instead of raising, so text utilities stay total functions.
std::vector<uint32_t> utf8_codepoints(std::string_view s);

void utf8_append(std::string& out, uint32_t cp);

std::string utf8_encode(const std::vector<uint32_t>& cps);

// Code-point count (what the 250-character filter counts).
size_t utf8_length(std::string_view s);

bool is_space_cp(uint32_t cp);

}  // namespace vlmkit::util
