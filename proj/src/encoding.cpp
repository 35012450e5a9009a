#include "fadsicl/encoding.hpp"

#include <openssl/evp.h>

#include <cstring>
#include <stdexcept>

namespace fadsicl {

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * static_cast<std::size_t>(len));
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string base64_encode(const unsigned char* data, std::size_t len) {
    std::string out;
    out.resize(4 * ((len + 2) / 3) + 1);
    const int written =
        EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data, static_cast<int>(len));
    out.resize(static_cast<std::size_t>(written));
    return out;
}

std::vector<unsigned char> base64_decode(std::string_view text) {
    std::vector<unsigned char> out(3 * (text.size() / 4) + 3);
    const int written = EVP_DecodeBlock(out.data(),
                                        reinterpret_cast<const unsigned char*>(text.data()),
                                        static_cast<int>(text.size()));
    if (written < 0) throw std::runtime_error("invalid base64 input");
    std::size_t len = static_cast<std::size_t>(written);
    // EVP_DecodeBlock counts '=' padding as output bytes; trim them.
    std::size_t padding = 0;
    for (auto it = text.rbegin(); it != text.rend() && *it == '='; ++it) ++padding;
    out.resize(len - padding);
    return out;
}

std::string floats_to_base64(const std::vector<float>& values) {
    std::vector<unsigned char> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, &values[i], 4);
        bytes[4 * i + 0] = static_cast<unsigned char>(bits & 0xff);
        bytes[4 * i + 1] = static_cast<unsigned char>((bits >> 8) & 0xff);
        bytes[4 * i + 2] = static_cast<unsigned char>((bits >> 16) & 0xff);
        bytes[4 * i + 3] = static_cast<unsigned char>((bits >> 24) & 0xff);
    }
    return base64_encode(bytes.data(), bytes.size());
}

std::vector<float> base64_to_floats(std::string_view text) {
    const std::vector<unsigned char> bytes = base64_decode(text);
    if (bytes.size() % 4 != 0) throw std::runtime_error("f32 blob length not a multiple of 4");
    std::vector<float> values(bytes.size() / 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const std::uint32_t bits = static_cast<std::uint32_t>(bytes[4 * i + 0]) |
                                   (static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8) |
                                   (static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16) |
                                   (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
        std::memcpy(&values[i], &bits, 4);
    }
    return values;
}

}  // namespace fadsicl
