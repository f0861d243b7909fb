#pragma once

// Flat parameter space, named-tensor layout and the CONDUF01 container.
//
// Element order is input order across tensors and row-major within a tensor.
// All fusion math is carried in double; R32 vectors hold values already
// rounded to float so that storage in 32 bits is lossless.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "condu/bytes.hpp"
#include "condu/error.hpp"

namespace condu {

enum class dtype : std::uint8_t { r32 = 0, r64 = 1 };

constexpr std::size_t dtype_size(dtype t) noexcept { return t == dtype::r32 ? 4 : 8; }

struct LayoutEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::size_t offset = 0;
  std::size_t length = 0;

  bool operator==(const LayoutEntry&) const = default;
};

class TensorLayout {
 public:
  TensorLayout() = default;

  void append(std::string name, std::vector<std::uint32_t> dims) {
    if (find(name) != nullptr) throw error(errc::duplicate_name, "tensor '" + name + "' appears twice");
    if (dims.size() > 0xFF) throw error(errc::length_mismatch, "tensor '" + name + "' has more than 255 dims");
    std::size_t length = 1;
    for (auto d : dims) {
      if (d == 0) throw error(errc::length_mismatch, "tensor '" + name + "' has a zero dimension");
      length *= d;
    }
    entries_.push_back({std::move(name), std::move(dims), total_len_, length});
    total_len_ += length;
  }

  const LayoutEntry* find(std::string_view name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }

  const std::vector<LayoutEntry>& entries() const { return entries_; }
  std::size_t total_len() const { return total_len_; }
  bool operator==(const TensorLayout&) const = default;

 private:
  std::vector<LayoutEntry> entries_;
  std::size_t total_len_ = 0;
};

/// A parameter vector with its layout. Values are immutable once built and
/// guaranteed finite.
class FlatVector {
 public:
  FlatVector() = default;

  FlatVector(TensorLayout layout, std::vector<double> values, dtype type = dtype::r64)
      : layout_(std::move(layout)), values_(std::move(values)), dtype_(type) {
    if (values_.size() != layout_.total_len()) {
      throw error(errc::length_mismatch, "expected " + std::to_string(layout_.total_len()) + " values, got " +
                                             std::to_string(values_.size()));
    }
    for (std::size_t j = 0; j < values_.size(); ++j) {
      if (!std::isfinite(values_[j])) {
        throw error(errc::non_finite_value, "element " + std::to_string(j) + " is not finite");
      }
      if (dtype_ == dtype::r32) {
        float f = static_cast<float>(values_[j]);
        if (!std::isfinite(f)) throw error(errc::non_finite_value, "element " + std::to_string(j) + " overflows r32");
        values_[j] = f;
      }
    }
  }

  static FlatVector zeros(TensorLayout layout, dtype type = dtype::r64) {
    std::vector<double> v(layout.total_len(), 0.0);
    return {std::move(layout), std::move(v), type};
  }

  const TensorLayout& layout() const { return layout_; }
  std::span<const double> values() const { return values_; }
  double operator[](std::size_t j) const { return values_[j]; }
  std::size_t size() const { return values_.size(); }
  dtype type() const { return dtype_; }

  /// Same elements re-expressed with the given storage dtype.
  FlatVector as(dtype type) const { return {layout_, values_, type}; }

  bool operator==(const FlatVector&) const = default;

 private:
  TensorLayout layout_;
  std::vector<double> values_;
  dtype dtype_ = dtype::r64;
};

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<double> values;

  bool operator==(const NamedTensor&) const = default;
};

inline FlatVector flatten(std::span<const NamedTensor> tensors, dtype type = dtype::r64) {
  TensorLayout layout;
  std::vector<double> values;
  for (const auto& t : tensors) {
    layout.append(t.name, t.dims);
    if (layout.entries().back().length != t.values.size()) {
      throw error(errc::length_mismatch, "tensor '" + t.name + "' has " + std::to_string(t.values.size()) +
                                             " values for " + std::to_string(layout.entries().back().length) +
                                             " elements");
    }
    values.insert(values.end(), t.values.begin(), t.values.end());
  }
  return {std::move(layout), std::move(values), type};
}

inline std::vector<NamedTensor> unflatten(const FlatVector& v) {
  std::vector<NamedTensor> out;
  out.reserve(v.layout().entries().size());
  auto vals = v.values();
  for (const auto& e : v.layout().entries()) {
    auto part = vals.subspan(e.offset, e.length);
    out.push_back({e.name, e.dims, {part.begin(), part.end()}});
  }
  return out;
}

inline void require_same_layout(const FlatVector& a, const FlatVector& b, std::string_view what) {
  if (!(a.layout() == b.layout())) throw error(errc::layout_mismatch, std::string(what));
}

// ---------------------------------------------------------------------------
// Container

inline constexpr std::array<std::uint8_t, 8> container_magic = {'C', 'O', 'N', 'D', 'U', 'F', '0', '1'};
inline constexpr std::uint32_t container_version = 1;

enum class ContainerKind : std::uint8_t { base_model = 0, delta_model = 1, session_state = 2, prototype_bundle = 3 };

inline std::string_view kind_name(ContainerKind k) {
  switch (k) {
    case ContainerKind::base_model: return "BaseModel";
    case ContainerKind::delta_model: return "DeltaModel";
    case ContainerKind::session_state: return "SessionState";
    case ContainerKind::prototype_bundle: return "PrototypeBundle";
  }
  return "?";
}

namespace tag {
inline constexpr std::uint16_t layout = 0x0001;
inline constexpr std::uint16_t values = 0x0002;
inline constexpr std::uint16_t trigger = 0x0003;
inline constexpr std::uint16_t prototypes = 0x0004;
inline constexpr std::uint16_t session_header = 0x0005;
}  // namespace tag

struct Section {
  std::uint16_t tag = 0;
  bytes payload;

  bool operator==(const Section&) const = default;
};

struct Container {
  ContainerKind kind = ContainerKind::delta_model;
  std::uint32_t version = container_version;
  std::vector<Section> sections;

  const Section* first(std::uint16_t t) const {
    for (const auto& s : sections) {
      if (s.tag == t) return &s;
    }
    return nullptr;
  }
  std::vector<const Section*> all(std::uint16_t t) const {
    std::vector<const Section*> out;
    for (const auto& s : sections) {
      if (s.tag == t) out.push_back(&s);
    }
    return out;
  }

  bool operator==(const Container&) const = default;
};

// Section = [tag u16][len u64][payload][crc32 u32]; the crc covers tag, len and payload.
inline bytes encode(const Container& c) {
  byte_writer w;
  w.put_raw(container_magic);
  w.put(c.version);
  w.put(static_cast<std::uint8_t>(c.kind));
  w.put(static_cast<std::uint32_t>(c.sections.size()));
  for (const auto& s : c.sections) {
    byte_writer sec;
    sec.put(s.tag);
    sec.put(static_cast<std::uint64_t>(s.payload.size()));
    sec.put_raw(s.payload);
    auto crc = crc32_of(sec.data());
    w.put_raw(sec.data());
    w.put(crc);
  }
  return std::move(w).take();
}

inline Container decode(std::span<const std::uint8_t> data) {
  if (data.size() < container_magic.size()) throw error(errc::corrupt_section, "file shorter than magic");
  if (!std::equal(container_magic.begin(), container_magic.end(), data.begin())) {
    throw error(errc::bad_magic, "not a CONDUF01 container");
  }
  byte_reader r(data.subspan(container_magic.size()));
  Container c;
  c.version = r.get<std::uint32_t>();
  if (c.version != container_version) {
    throw error(errc::unsupported_version, "container version " + std::to_string(c.version));
  }
  auto kind = r.get<std::uint8_t>();
  if (kind > static_cast<std::uint8_t>(ContainerKind::prototype_bundle)) {
    throw error(errc::corrupt_section, "unknown container kind " + std::to_string(kind));
  }
  c.kind = static_cast<ContainerKind>(kind);
  auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto start = r.position();
    Section s;
    s.tag = r.get<std::uint16_t>();
    auto len = r.get<std::uint64_t>();
    if (len > r.remaining()) throw error(errc::corrupt_section, "section " + std::to_string(i) + " overruns file");
    auto payload = r.get_raw(static_cast<std::size_t>(len));
    s.payload.assign(payload.begin(), payload.end());
    auto stored = r.get<std::uint32_t>();
    auto whole = data.subspan(container_magic.size() + start, 2 + 8 + static_cast<std::size_t>(len));
    if (crc32_of(whole) != stored) throw error(errc::corrupt_section, "checksum mismatch in section " + std::to_string(i));
    c.sections.push_back(std::move(s));
  }
  if (!r.done()) throw error(errc::corrupt_section, "trailing bytes after last section");
  return c;
}

inline void save(const Container& c, const std::filesystem::path& path) {
  auto data = encode(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw error(errc::io_error, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw error(errc::io_error, "write to '" + path.string() + "' failed");
}

inline Container load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error(errc::io_error, "cannot open '" + path.string() + "'");
  bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw error(errc::io_error, "read from '" + path.string() + "' failed");
  return decode(data);
}

// ---------------------------------------------------------------------------
// Layout and value sections

inline bytes encode_layout(const TensorLayout& layout) {
  byte_writer w;
  for (const auto& e : layout.entries()) {
    w.put_str16(e.name);
    w.put(static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) w.put(d);
  }
  return std::move(w).take();
}

inline TensorLayout decode_layout(std::span<const std::uint8_t> payload) {
  byte_reader r(payload);
  TensorLayout layout;
  while (!r.done()) {
    auto name = r.get_str16();
    auto ndim = r.get<std::uint8_t>();
    std::vector<std::uint32_t> dims(ndim);
    for (auto& d : dims) d = r.get<std::uint32_t>();
    try {
      layout.append(std::move(name), std::move(dims));
    } catch (const error& e) {
      throw error(errc::corrupt_section, std::string("bad layout section: ") + e.what());
    }
  }
  return layout;
}

inline bytes encode_values(const FlatVector& v) {
  byte_writer w;
  w.put(static_cast<std::uint8_t>(v.type()));
  for (double x : v.values()) {
    if (v.type() == dtype::r32) {
      w.put_f32(static_cast<float>(x));
    } else {
      w.put_f64(x);
    }
  }
  return std::move(w).take();
}

inline FlatVector decode_values(TensorLayout layout, std::span<const std::uint8_t> payload) {
  byte_reader r(payload);
  auto t = r.get<std::uint8_t>();
  if (t > 1) throw error(errc::corrupt_section, "unknown dtype " + std::to_string(t));
  auto type = static_cast<dtype>(t);
  if (r.remaining() != layout.total_len() * dtype_size(type)) {
    throw error(errc::corrupt_section, "values section does not match layout length");
  }
  std::vector<double> values(layout.total_len());
  for (auto& x : values) x = type == dtype::r32 ? static_cast<double>(r.get_f32()) : r.get_f64();
  try {
    return {std::move(layout), std::move(values), type};
  } catch (const error& e) {
    throw error(errc::corrupt_section, std::string("bad values section: ") + e.what());
  }
}

/// Stable digest of a vector's layout and elements (elements hashed as f64).
inline digest256 content_hash(const FlatVector& v) {
  byte_writer w;
  w.put_raw(encode_layout(v.layout()));
  for (double x : v.values()) w.put_f64(x);
  return sha256_of(w.data());
}

/// BaseModel / DeltaModel containers: layout and values sections, optionally
/// followed by other sections a caller appends (e.g. a prototype section).
inline Container model_container(const FlatVector& v, ContainerKind kind) {
  Container c;
  c.kind = kind;
  c.sections.push_back({tag::layout, encode_layout(v.layout())});
  c.sections.push_back({tag::values, encode_values(v)});
  return c;
}

inline FlatVector read_vector(const Container& c) {
  const auto* lay = c.first(tag::layout);
  const auto* val = c.first(tag::values);
  if (lay == nullptr || val == nullptr) throw error(errc::corrupt_section, "container lacks layout or values");
  return decode_values(decode_layout(lay->payload), val->payload);
}

inline FlatVector read_model(const Container& c, ContainerKind expected) {
  if (c.kind != expected) {
    throw error(errc::wrong_kind, "expected " + std::string(kind_name(expected)) + " container, got " +
                                      std::string(kind_name(c.kind)));
  }
  return read_vector(c);
}

}  // namespace condu
