#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace fadsicl {

// SHA-256 of `data`, lowercase hex.
std::string sha256_hex(std::string_view data);

std::string base64_encode(const unsigned char* data, std::size_t len);
std::vector<unsigned char> base64_decode(std::string_view text);

// Little-endian f32 blob helpers for persistence formats.
std::string floats_to_base64(const std::vector<float>& values);
std::vector<float> base64_to_floats(std::string_view text);

}  // namespace fadsicl
