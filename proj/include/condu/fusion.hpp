#pragma once

// Delta fusion: sign-election unification, triggers, decoupling and the
// per-session continual update.
//
// Reductions are plain left-to-right sums in double so results are
// bit-reproducible.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "condu/error.hpp"
#include "condu/prototypes.hpp"
#include "condu/tensor_store.hpp"
#include "condu/triggers.hpp"

namespace condu {

struct DeltaModel {
  FlatVector vec;
  std::uint32_t task_id = 0;
};

struct UnifiedDelta {
  FlatVector vec;
  std::uint32_t task_count = 0;
};

struct SessionState {
  digest256 base_hash{};
  UnifiedDelta unified;
  std::vector<TaskTrigger> triggers;
  std::vector<PrototypeSet> prototypes;

  std::uint32_t task_count() const { return unified.task_count; }
};

inline double l1_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s;
}

inline double l1_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += std::abs(a[j] - b[j]);
  return s;
}

inline DeltaModel delta_from(const FlatVector& theta, const FlatVector& theta0, std::uint32_t task_id) {
  require_same_layout(theta, theta0, "model and base model layouts differ");
  std::vector<double> d(theta.size());
  for (std::size_t j = 0; j < d.size(); ++j) d[j] = theta[j] - theta0[j];
  return {FlatVector(theta.layout(), std::move(d)), task_id};
}

/// Elects, per element, the extreme value on the side of the element sum:
/// max if the sum is positive, min if negative, 0 if it cancels exactly.
inline UnifiedDelta unify(std::span<const DeltaModel> deltas) {
  if (deltas.empty()) throw error(errc::empty_input, "unify needs at least one delta");
  const auto& first = deltas.front().vec;
  for (const auto& d : deltas) require_same_layout(d.vec, first, "delta layouts differ");

  std::vector<double> out(first.size(), 0.0);
  for (std::size_t j = 0; j < out.size(); ++j) {
    double sum = 0.0;
    double hi = deltas.front().vec[j];
    double lo = hi;
    for (const auto& d : deltas) {
      const double x = d.vec[j];
      sum += x;
      hi = std::max(hi, x);
      lo = std::min(lo, x);
    }
    out[j] = sum > 0.0 ? hi : (sum < 0.0 ? lo : 0.0);
  }
  return {FlatVector(first.layout(), std::move(out)), static_cast<std::uint32_t>(deltas.size())};
}

/// Mask of sign agreement with the unified delta (strictly positive product)
/// and the rescaler that restores the delta's L1 norm. A task with no
/// agreeing element gets lambda = 0.
inline TaskTrigger compute_trigger(const DeltaModel& delta, const UnifiedDelta& unified) {
  require_same_layout(delta.vec, unified.vec, "delta and unified layouts differ");
  const auto n = delta.vec.size();
  PackedMask mask(n);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double d = delta.vec[j];
    const double u = unified.vec[j];
    num += std::abs(d);
    if (d * u > 0.0) {
      mask.set(j);
      den += std::abs(u);
    }
  }
  return {std::move(mask), den > 0.0 ? num / den : 0.0, delta.task_id};
}

inline DeltaModel decouple(const UnifiedDelta& unified, const TaskTrigger& trigger) {
  if (trigger.mask.bit_len() != unified.vec.size()) {
    throw error(errc::length_mismatch, "trigger mask length differs from unified delta");
  }
  std::vector<double> out(unified.vec.size(), 0.0);
  for (std::size_t j = 0; j < out.size(); ++j) {
    if (trigger.mask.test(j)) out[j] = trigger.lambda * unified.vec[j];
  }
  return {FlatVector(unified.vec.layout(), std::move(out)), trigger.task_id};
}

inline FlatVector reconstruct_model(const FlatVector& theta0, const UnifiedDelta& unified, const TaskTrigger& trigger) {
  require_same_layout(theta0, unified.vec, "base model and unified layouts differ");
  auto delta = decouple(unified, trigger);
  std::vector<double> out(theta0.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = theta0[j] + delta.vec[j];
  return {theta0.layout(), std::move(out)};
}

/// Unifies a set of deltas in one shot and computes a trigger for each.
inline std::pair<UnifiedDelta, std::vector<TaskTrigger>> fuse(std::span<const DeltaModel> deltas) {
  auto unified = unify(deltas);
  std::vector<TaskTrigger> triggers;
  triggers.reserve(deltas.size());
  for (const auto& d : deltas) triggers.push_back(compute_trigger(d, unified));
  return {std::move(unified), std::move(triggers)};
}

/// One continual-learning session: decouple every stored task, unify with the
/// new delta, and replace all triggers. Old triggers are discarded.
inline SessionState run_session(const std::optional<SessionState>& state, const DeltaModel& new_delta,
                                PrototypeSet new_prototypes, const digest256& base_hash = {}) {
  std::vector<DeltaModel> deltas;
  SessionState next;
  if (state) {
    require_same_layout(new_delta.vec, state->unified.vec, "new delta layout differs from session layout");
    deltas.reserve(state->triggers.size() + 1);
    for (const auto& t : state->triggers) deltas.push_back(decouple(state->unified, t));
    next.base_hash = state->base_hash;
    next.prototypes = state->prototypes;
  } else {
    next.base_hash = base_hash;
  }
  deltas.push_back(new_delta);
  auto [unified, triggers] = fuse(deltas);
  next.unified = std::move(unified);
  next.triggers = std::move(triggers);
  next.prototypes.push_back(std::move(new_prototypes));
  return next;
}

inline const TaskTrigger& trigger_for(const SessionState& s, std::size_t task_index) {
  if (task_index >= s.triggers.size()) {
    throw error(errc::unknown_task, "task " + std::to_string(task_index + 1) + " not in session of " +
                                        std::to_string(s.triggers.size()) + " tasks");
  }
  return s.triggers[task_index];
}

inline std::vector<std::size_t> degenerate_tasks(const SessionState& s) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < s.triggers.size(); ++i) {
    if (s.triggers[i].degenerate()) out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Session container: header, layout, unified values, then one trigger section
// and one prototype section per task, in task order.

inline Container session_container(const SessionState& s) {
  if (s.triggers.size() != s.task_count() || s.prototypes.size() != s.task_count()) {
    throw error(errc::contract_violation, "session trigger/prototype counts differ from task count");
  }
  Container c;
  c.kind = ContainerKind::session_state;
  byte_writer header;
  header.put(s.task_count());
  header.put_raw(s.base_hash);
  c.sections.push_back({tag::session_header, std::move(header).take()});
  c.sections.push_back({tag::layout, encode_layout(s.unified.vec.layout())});
  c.sections.push_back({tag::values, encode_values(s.unified.vec)});
  for (const auto& t : s.triggers) c.sections.push_back({tag::trigger, encode_trigger(t)});
  for (const auto& p : s.prototypes) c.sections.push_back({tag::prototypes, encode_prototypes(p)});
  return c;
}

inline SessionState read_session(const Container& c) {
  if (c.kind != ContainerKind::session_state) {
    throw error(errc::wrong_kind, "expected SessionState container, got " + std::string(kind_name(c.kind)));
  }
  const auto* header = c.first(tag::session_header);
  if (header == nullptr) throw error(errc::corrupt_section, "session header missing");
  byte_reader r(header->payload);
  SessionState s;
  const auto count = r.get<std::uint32_t>();
  auto hash = r.get_raw(32);
  std::copy(hash.begin(), hash.end(), s.base_hash.begin());
  if (!r.done()) throw error(errc::corrupt_section, "oversized session header");

  s.unified = {read_vector(c), count};
  for (const auto* sec : c.all(tag::trigger)) s.triggers.push_back(decode_trigger(sec->payload));
  for (const auto* sec : c.all(tag::prototypes)) s.prototypes.push_back(decode_prototypes(sec->payload));
  if (s.triggers.size() != count || s.prototypes.size() != count) {
    throw error(errc::corrupt_section, "session holds " + std::to_string(s.triggers.size()) + " triggers and " +
                                           std::to_string(s.prototypes.size()) + " prototype sets for " +
                                           std::to_string(count) + " tasks");
  }
  for (const auto& t : s.triggers) {
    if (t.mask.bit_len() != s.unified.vec.size()) throw error(errc::corrupt_section, "trigger mask length mismatch");
  }
  return s;
}

}  // namespace condu
