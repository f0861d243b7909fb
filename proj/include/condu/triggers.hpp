#pragma once

// Bit-packed task masks, task triggers and the storage accountant.

#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "condu/bytes.hpp"
#include "condu/error.hpp"
#include "condu/tensor_store.hpp"

namespace condu {

/// LSB-first bitmap: element j lives in byte j/8, bit j%8. Unused high bits of
/// the last byte are always zero.
class PackedMask {
 public:
  PackedMask() = default;

  explicit PackedMask(std::size_t bit_len) : bits_((bit_len + 7) / 8, 0), bit_len_(bit_len) {}

  PackedMask(bytes raw, std::size_t bit_len) : bits_(std::move(raw)), bit_len_(bit_len) {
    if (bits_.size() != (bit_len_ + 7) / 8) throw error(errc::length_mismatch, "mask byte count does not match bit_len");
    if (bit_len_ % 8 != 0 && (bits_.back() >> (bit_len_ % 8)) != 0) {
      throw error(errc::contract_violation, "mask has bits set beyond bit_len");
    }
  }

  bool test(std::size_t j) const { return (bits_[j >> 3] >> (j & 7)) & 1u; }
  void set(std::size_t j) { bits_[j >> 3] |= static_cast<std::uint8_t>(1u << (j & 7)); }

  std::size_t popcount() const {
    std::size_t n = 0;
    for (auto b : bits_) n += static_cast<std::size_t>(std::popcount(b));
    return n;
  }

  std::size_t bit_len() const { return bit_len_; }
  std::span<const std::uint8_t> bytes_view() const { return bits_; }

  bool operator==(const PackedMask&) const = default;

 private:
  bytes bits_;
  std::size_t bit_len_ = 0;
};

inline PackedMask pack(std::span<const std::uint8_t> mask_bits) {
  PackedMask m(mask_bits.size());
  for (std::size_t j = 0; j < mask_bits.size(); ++j) {
    if (mask_bits[j] > 1) throw error(errc::contract_violation, "mask element is not 0/1");
    if (mask_bits[j]) m.set(j);
  }
  return m;
}

inline std::vector<std::uint8_t> unpack(const PackedMask& m) {
  std::vector<std::uint8_t> out(m.bit_len());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = m.test(j) ? 1 : 0;
  return out;
}

/// Number of positions where two masks disagree.
inline std::size_t hamming(const PackedMask& a, const PackedMask& b) {
  if (a.bit_len() != b.bit_len()) throw error(errc::length_mismatch, "masks of different length");
  std::size_t n = 0;
  auto x = a.bytes_view();
  auto y = b.bytes_view();
  for (std::size_t k = 0; k < x.size(); ++k) n += static_cast<std::size_t>(std::popcount(static_cast<std::uint8_t>(x[k] ^ y[k])));
  return n;
}

inline bool overlaps(const PackedMask& a, const PackedMask& b) {
  if (a.bit_len() != b.bit_len()) throw error(errc::length_mismatch, "masks of different length");
  auto x = a.bytes_view();
  auto y = b.bytes_view();
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (x[k] & y[k]) return true;
  }
  return false;
}

inline FlatVector mask_apply(const PackedMask& m, const FlatVector& v) {
  if (m.bit_len() != v.size()) throw error(errc::length_mismatch, "mask length differs from vector length");
  std::vector<double> out(v.size(), 0.0);
  auto in = v.values();
  auto raw = m.bytes_view();
  for (std::size_t k = 0; k < raw.size(); ++k) {
    auto byte = raw[k];
    while (byte != 0) {
      auto b = static_cast<std::size_t>(std::countr_zero(byte));
      out[8 * k + b] = in[8 * k + b];
      byte = static_cast<std::uint8_t>(byte & (byte - 1));
    }
  }
  return {v.layout(), std::move(out), v.type()};
}

struct TaskTrigger {
  PackedMask mask;
  double lambda = 0.0;
  std::uint32_t task_id = 0;

  bool degenerate() const { return lambda == 0.0; }
  bool operator==(const TaskTrigger&) const = default;
};

// Trigger section: [task_id u32][lambda f64][bit_len u64][packed bytes]
inline bytes encode_trigger(const TaskTrigger& t) {
  byte_writer w;
  w.put(t.task_id);
  w.put_f64(t.lambda);
  w.put(static_cast<std::uint64_t>(t.mask.bit_len()));
  w.put_raw(t.mask.bytes_view());
  return std::move(w).take();
}

inline TaskTrigger decode_trigger(std::span<const std::uint8_t> payload) {
  byte_reader r(payload);
  TaskTrigger t;
  t.task_id = r.get<std::uint32_t>();
  t.lambda = r.get_f64();
  auto bit_len = r.get<std::uint64_t>();
  if (!std::isfinite(t.lambda) || t.lambda < 0) throw error(errc::corrupt_section, "trigger lambda out of range");
  if (r.remaining() != (bit_len + 7) / 8) throw error(errc::corrupt_section, "trigger mask length mismatch");
  auto raw = r.get_raw(r.remaining());
  try {
    t.mask = PackedMask(bytes(raw.begin(), raw.end()), static_cast<std::size_t>(bit_len));
  } catch (const error& e) {
    throw error(errc::corrupt_section, std::string("bad trigger mask: ") + e.what());
  }
  return t;
}

/// Byte counts for keeping every task model densely versus keeping one
/// unified delta plus per-task masks and rescalers. Base model excluded from
/// both sides.
struct StorageReport {
  std::uint64_t param_count = 0;
  dtype dense_dtype = dtype::r32;
  std::uint32_t task_count = 0;

  std::uint64_t dense_model_bytes = 0;  // one model
  std::uint64_t dense_total_bytes = 0;  // task_count models
  std::uint64_t unified_bytes = 0;
  std::uint64_t mask_bytes = 0;  // all tasks
  std::uint64_t rescaler_bytes = 0;
  std::uint64_t condu_total_bytes = 0;
  double savings_ratio = 0.0;  // dense_total / condu_total
};

inline constexpr double bytes_per_mb = 1024.0 * 1024.0;

inline StorageReport storage_report(std::uint64_t param_count, dtype dense_dtype, std::uint32_t task_count) {
  if (param_count == 0) throw error(errc::bad_config, "param_count must be positive");
  if (task_count == 0) throw error(errc::bad_config, "task_count must be at least 1");
  StorageReport r;
  r.param_count = param_count;
  r.dense_dtype = dense_dtype;
  r.task_count = task_count;
  r.dense_model_bytes = param_count * dtype_size(dense_dtype);
  r.dense_total_bytes = r.dense_model_bytes * task_count;
  r.unified_bytes = r.dense_model_bytes;
  r.mask_bytes = ((param_count + 7) / 8) * task_count;
  r.rescaler_bytes = std::uint64_t{8} * task_count;
  r.condu_total_bytes = r.unified_bytes + r.mask_bytes + r.rescaler_bytes;
  r.savings_ratio = static_cast<double>(r.dense_total_bytes) / static_cast<double>(r.condu_total_bytes);
  return r;
}

}  // namespace condu
