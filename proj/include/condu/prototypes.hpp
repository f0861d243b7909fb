#pragma once

// Per-task category prototypes: text-side feature plus the mean image-side
// feature, both taken from the base model.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "condu/bytes.hpp"
#include "condu/error.hpp"
#include "condu/tensor_store.hpp"

namespace condu {

struct Prototype {
  std::string label;
  std::vector<double> vector;

  bool operator==(const Prototype&) const = default;
};

/// Prototype vectors are stored as f32 on disk, so they are rounded to float
/// on construction. An empty set (no categories) is a placeholder for a task
/// whose prototypes were never supplied; routing refuses it.
class PrototypeSet {
 public:
  PrototypeSet() = default;

  PrototypeSet(std::uint32_t task_id, std::vector<Prototype> prototypes)
      : task_id_(task_id), prototypes_(std::move(prototypes)) {
    for (auto& p : prototypes_) {
      if (p.vector.size() != prototypes_.front().vector.size() || p.vector.empty()) {
        throw error(errc::dim_mismatch, "prototype '" + p.label + "' has dimension " + std::to_string(p.vector.size()));
      }
      bool nonzero = false;
      for (auto& x : p.vector) {
        if (!std::isfinite(x) || !std::isfinite(static_cast<float>(x))) {
          throw error(errc::non_finite_value, "prototype '" + p.label + "' is not finite");
        }
        x = static_cast<float>(x);
        nonzero = nonzero || x != 0.0;
      }
      if (!nonzero) throw error(errc::zero_vector, "prototype '" + p.label + "' is the zero vector");
    }
  }

  static PrototypeSet placeholder(std::uint32_t task_id) {
    PrototypeSet s;
    s.task_id_ = task_id;
    return s;
  }

  std::uint32_t task_id() const { return task_id_; }
  const std::vector<Prototype>& prototypes() const { return prototypes_; }
  bool empty() const { return prototypes_.empty(); }
  std::size_t feature_dim() const { return empty() ? 0 : prototypes_.front().vector.size(); }

  PrototypeSet with_task_id(std::uint32_t id) const {
    PrototypeSet s = *this;
    s.task_id_ = id;
    return s;
  }

  bool operator==(const PrototypeSet&) const = default;

 private:
  std::uint32_t task_id_ = 0;
  std::vector<Prototype> prototypes_;
};

struct CategoryFeatures {
  std::string label;
  std::vector<double> text;
  std::vector<std::vector<double>> images;
};

inline PrototypeSet compute_prototypes(std::uint32_t task_id, std::span<const CategoryFeatures> categories) {
  if (categories.empty()) throw error(errc::empty_category, "no categories");
  const std::size_t dim = categories.front().text.size();
  std::vector<Prototype> out;
  out.reserve(categories.size());
  for (const auto& cat : categories) {
    if (cat.images.empty()) throw error(errc::empty_category, "category '" + cat.label + "' has no image features");
    if (cat.text.size() != dim) throw error(errc::dim_mismatch, "text feature of '" + cat.label + "'");
    std::vector<double> mean(dim, 0.0);
    for (const auto& img : cat.images) {
      if (img.size() != dim) throw error(errc::dim_mismatch, "image feature of '" + cat.label + "'");
      for (std::size_t k = 0; k < dim; ++k) mean[k] += img[k];
    }
    const auto n = static_cast<double>(cat.images.size());
    for (std::size_t k = 0; k < dim; ++k) mean[k] = cat.text[k] + mean[k] / n;
    out.push_back({cat.label, std::move(mean)});
  }
  return {task_id, std::move(out)};
}

// Prototype section: [task_id u32][category count u32][feature_dim u32]
// then per category [label len u16][label][feature_dim x f32].
inline bytes encode_prototypes(const PrototypeSet& s) {
  byte_writer w;
  w.put(s.task_id());
  w.put(static_cast<std::uint32_t>(s.prototypes().size()));
  w.put(static_cast<std::uint32_t>(s.feature_dim()));
  for (const auto& p : s.prototypes()) {
    w.put_str16(p.label);
    for (double x : p.vector) w.put_f32(static_cast<float>(x));
  }
  return std::move(w).take();
}

inline PrototypeSet decode_prototypes(std::span<const std::uint8_t> payload) {
  byte_reader r(payload);
  auto task_id = r.get<std::uint32_t>();
  auto count = r.get<std::uint32_t>();
  auto dim = r.get<std::uint32_t>();
  if (count == 0) {
    if (!r.done()) throw error(errc::corrupt_section, "trailing bytes in empty prototype section");
    return PrototypeSet::placeholder(task_id);
  }
  std::vector<Prototype> protos(count);
  for (auto& p : protos) {
    p.label = r.get_str16();
    p.vector.resize(dim);
    for (auto& x : p.vector) x = r.get_f32();
  }
  if (!r.done()) throw error(errc::corrupt_section, "trailing bytes in prototype section");
  try {
    return {task_id, std::move(protos)};
  } catch (const error& e) {
    throw error(errc::corrupt_section, std::string("bad prototype section: ") + e.what());
  }
}

inline Container prototype_bundle(std::span<const PrototypeSet> sets) {
  Container c;
  c.kind = ContainerKind::prototype_bundle;
  for (const auto& s : sets) c.sections.push_back({tag::prototypes, encode_prototypes(s)});
  return c;
}

inline std::vector<PrototypeSet> read_prototype_bundle(const Container& c) {
  if (c.kind != ContainerKind::prototype_bundle) throw error(errc::wrong_kind, "expected PrototypeBundle container");
  std::vector<PrototypeSet> out;
  for (const auto* s : c.all(tag::prototypes)) out.push_back(decode_prototypes(s->payload));
  return out;
}

}  // namespace condu
