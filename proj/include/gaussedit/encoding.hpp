#pragma once

// Base64 and SHA-256 helpers over OpenSSL libcrypto.

#include "gaussedit/error.hpp"

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace gaussedit {

inline std::string base64_encode(const std::uint8_t* data, std::size_t size) {
    std::string out(4 * ((size + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data, static_cast<int>(size));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    return base64_encode(bytes.data(), bytes.size());
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
    require(text.size() % 4 == 0, ErrorKind::Protocol, "base64: length is not a multiple of 4");
    std::vector<std::uint8_t> out(3 * (text.size() / 4));
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                  static_cast<int>(text.size()));
    require(n >= 0, ErrorKind::Protocol, "base64: invalid input");
    std::size_t len = static_cast<std::size_t>(n);
    // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
    if (!text.empty() && text.back() == '=') --len;
    if (text.size() >= 2 && text[text.size() - 2] == '=') --len;
    out.resize(len);
    return out;
}

/// Little-endian float32 payload, as used by the guidance wire protocol.
inline std::string encode_float32_b64(const std::vector<double>& values) {
    static_assert(std::endian::native == std::endian::little);
    std::vector<std::uint8_t> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const float f = static_cast<float>(values[i]);
        std::memcpy(bytes.data() + 4 * i, &f, 4);
    }
    return base64_encode(bytes);
}

inline std::vector<double> decode_float32_b64(std::string_view text) {
    const auto bytes = base64_decode(text);
    require(bytes.size() % 4 == 0, ErrorKind::Protocol, "float32 payload size is not a multiple of 4");
    std::vector<double> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        float f;
        std::memcpy(&f, bytes.data() + 4 * i, 4);
        out[i] = f;
    }
    return out;
}

inline std::string sha256_hex(const void* data, std::size_t size) {
    unsigned char digest[SHA256_DIGEST_LENGTH];
    unsigned int len = 0;
    EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 15]);
    }
    return out;
}

inline std::string sha256_hex(std::string_view text) { return sha256_hex(text.data(), text.size()); }

inline std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::Precondition, "cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return sha256_hex(bytes);
}

} // namespace gaussedit
