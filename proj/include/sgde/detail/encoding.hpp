#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "sgde/errors.hpp"

namespace sgde::detail {

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

inline const char* b64_alphabet() {
  return "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
  const char* tbl = b64_alphabet();
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out.push_back(tbl[(v >> 6) & 63]);
    out.push_back(tbl[v & 63]);
  }
  const std::size_t rem = bytes.size() - i;
  if (rem == 1) {
    const std::uint32_t v = bytes[i] << 16;
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out += "==";
  } else if (rem == 2) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out.push_back(tbl[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
  int lookup[256];
  std::fill(std::begin(lookup), std::end(lookup), -1);
  const char* tbl = b64_alphabet();
  for (int i = 0; i < 64; ++i) lookup[static_cast<unsigned char>(tbl[i])] = i;

  if (text.size() % 4 != 0) throw IntegrityError("base64 payload length invalid");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=') {
        if (i + 4 != text.size() || k < 2) throw IntegrityError("bad base64 padding");
        vals[k] = 0;
        ++pad;
      } else {
        vals[k] = lookup[static_cast<unsigned char>(c)];
        if (vals[k] < 0) throw IntegrityError("invalid base64 character");
        if (pad > 0) throw IntegrityError("bad base64 padding");
      }
    }
    const std::uint32_t v = (vals[0] << 18) | (vals[1] << 12) | (vals[2] << 6) | vals[3];
    out.push_back((v >> 16) & 0xff);
    if (pad < 2) out.push_back((v >> 8) & 0xff);
    if (pad < 1) out.push_back(v & 0xff);
  }
  return out;
}

// float32 array <-> little-endian byte string.
inline std::vector<std::uint8_t> floats_to_le_bytes(std::span<const float> values) {
  std::vector<std::uint8_t> out(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &values[i], 4);
    out[4 * i] = bits & 0xff;
    out[4 * i + 1] = (bits >> 8) & 0xff;
    out[4 * i + 2] = (bits >> 16) & 0xff;
    out[4 * i + 3] = (bits >> 24) & 0xff;
  }
  return out;
}

inline std::vector<float> le_bytes_to_floats(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 4 != 0) throw IntegrityError("weight byte length not a multiple of 4");
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::uint32_t bits = static_cast<std::uint32_t>(bytes[4 * i]) |
                               (static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8) |
                               (static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16) |
                               (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    out[i] = v;
  }
  return out;
}

}  // namespace sgde::detail
