#pragma once

#include <openssl/evp.h>

#include <string>
#include <string_view>

#include "carp/errors.hpp"

namespace carp {

/// SHA-256 hex digest. Cache keys and fixture keys are built on this.
inline std::string sha256_hex(std::string_view data) {
    unsigned char out[EVP_MAX_MD_SIZE];
    unsigned int out_len = 0;
    if (EVP_Digest(data.data(), data.size(), out, &out_len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string s;
    s.reserve(static_cast<std::size_t>(out_len) * 2);
    for (unsigned int i = 0; i < out_len; ++i) {
        s.push_back(hex[out[i] >> 4]);
        s.push_back(hex[out[i] & 0xf]);
    }
    return s;
}

}  // namespace carp
