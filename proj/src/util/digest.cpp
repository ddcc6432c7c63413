#include "vlmkit/util/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <vector>

#include "vlmkit/error.hpp"

namespace vlmkit::util {

namespace {

std::string hex_digest(const EVP_MD* md, std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> out{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, md, nullptr) != 1) {
        throw IoError("digest computation failed");
    }
    static const char* hexc = "0123456789abcdef";
    std::string hex(len * 2, '0');
    for (unsigned int i = 0; i < len; ++i) {
        hex[2 * i] = hexc[out[i] >> 4];
        hex[2 * i + 1] = hexc[out[i] & 0xf];
    }
    return hex;
}

}  // namespace

std::string md5_hex(std::string_view bytes) { return hex_digest(EVP_md5(), bytes); }

std::string sha256_hex(std::string_view bytes) { return hex_digest(EVP_sha256(), bytes); }

std::string sha256_file_hex(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open file for hashing: " + path);
    std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return sha256_hex(std::string_view(buf.data(), buf.size()));
}

}  // namespace vlmkit::util
