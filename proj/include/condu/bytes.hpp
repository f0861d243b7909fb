#pragma once

// Little-endian byte codec plus the two digests used by containers.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>
#include <zlib.h>

#include "condu/error.hpp"

namespace condu {

using bytes = std::vector<std::uint8_t>;
using digest256 = std::array<std::uint8_t, 32>;

class byte_writer {
 public:
  template <std::unsigned_integral T>
  void put(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
  }
  void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void put_f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void put_raw(std::span<const std::uint8_t> data) { buf_.insert(buf_.end(), data.begin(), data.end()); }
  void put_str16(std::string_view s) {
    if (s.size() > 0xFFFF) throw error(errc::length_mismatch, "string longer than 65535 bytes");
    put(static_cast<std::uint16_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }

  const bytes& data() const& { return buf_; }
  bytes take() && { return std::move(buf_); }
  std::size_t size() const { return buf_.size(); }

 private:
  bytes buf_;
};

/// Bounds-checked reader; running off the end is a CorruptSection.
class byte_reader {
 public:
  explicit byte_reader(std::span<const std::uint8_t> data) : data_(data) {}

  template <std::unsigned_integral T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<T>(data_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(T);
    return v;
  }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  std::span<const std::uint8_t> get_raw(std::size_t n) {
    need(n);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::string get_str16() {
    auto n = get<std::uint16_t>();
    auto raw = get_raw(n);
    return {raw.begin(), raw.end()};
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > data_.size() - pos_) throw error(errc::corrupt_section, "unexpected end of data");
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> data) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths
  std::size_t off = 0;
  while (off < data.size()) {
    auto chunk = static_cast<uInt>(std::min<std::size_t>(data.size() - off, 1u << 30));
    crc = ::crc32(crc, data.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline digest256 sha256_of(std::span<const std::uint8_t> data) {
  digest256 out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size()) {
    throw error(errc::io_error, "sha-256 digest failed");
  }
  return out;
}

inline std::string to_hex(std::span<const std::uint8_t> data) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s;
  s.reserve(data.size() * 2);
  for (auto b : data) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 0xF]);
  }
  return s;
}

}  // namespace condu
