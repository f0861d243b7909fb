#pragma once

// Prototype routing and logit aggregation for inference without a task id.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "condu/error.hpp"
#include "condu/fusion.hpp"
#include "condu/prototypes.hpp"

namespace condu {

inline constexpr std::size_t default_top_k = 4;

struct RoutingDecision {
  std::vector<double> per_task_best_sim;
  std::vector<std::size_t> selected_tasks;  // ascending task index
  std::vector<std::uint8_t> weights;

  bool operator==(const RoutingDecision&) const = default;
};

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// Both operands are normalized here; prototypes are kept unnormalized.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw error(errc::dim_mismatch, "cosine of vectors with different dimension");
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na == 0.0 || nb == 0.0) throw error(errc::zero_vector, "cosine with a zero vector");
  double dot = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) dot += (a[k] / na) * (b[k] / nb);
  return std::clamp(dot, -1.0, 1.0);
}

/// Indices of the k largest scores; ties go to the lower index. Result is in
/// ascending index order.
inline std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(std::min(k, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

inline RoutingDecision route(std::span<const double> sample, std::span<const PrototypeSet> all_prototypes,
                             std::size_t k) {
  if (k == 0) throw error(errc::bad_config, "K must be at least 1");
  if (all_prototypes.empty()) throw error(errc::empty_input, "no tasks to route to");
  if (norm2(sample) == 0.0) throw error(errc::zero_vector, "sample feature has zero norm");

  RoutingDecision d;
  d.per_task_best_sim.reserve(all_prototypes.size());
  for (const auto& set : all_prototypes) {
    if (set.empty()) throw error(errc::missing_prototypes, "task " + std::to_string(set.task_id()) + " has no prototypes");
    if (set.feature_dim() != sample.size()) {
      throw error(errc::dim_mismatch, "sample dimension " + std::to_string(sample.size()) + " vs prototype dimension " +
                                          std::to_string(set.feature_dim()));
    }
    double best = -1.0;
    for (const auto& p : set.prototypes()) best = std::max(best, cosine(sample, p.vector));
    d.per_task_best_sim.push_back(best);
  }
  d.selected_tasks = top_k_indices(d.per_task_best_sim, k);
  d.weights.assign(all_prototypes.size(), 0);
  for (auto i : d.selected_tasks) d.weights[i] = 1;
  return d;
}

/// Lowest index wins ties.
inline std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw error(errc::empty_input, "argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k) {
    if (v[k] > v[best]) best = k;
  }
  return best;
}

struct AggregateResult {
  std::size_t label = 0;
  std::vector<double> fused_logits;
};

/// Raw 0/1-weighted sum of logits in task order; no softmax, no division by K.
inline AggregateResult aggregate_logits(std::span<const std::vector<double>> per_task_logits,
                                        const RoutingDecision& decision) {
  if (per_task_logits.empty()) throw error(errc::empty_input, "no logits to aggregate");
  if (decision.weights.size() != per_task_logits.size()) {
    throw error(errc::length_mismatch, "routing decision covers " + std::to_string(decision.weights.size()) +
                                           " tasks, logits given for " + std::to_string(per_task_logits.size()));
  }
  if (std::none_of(decision.weights.begin(), decision.weights.end(), [](auto w) { return w != 0; })) {
    throw error(errc::contract_violation, "routing decision selects no task");
  }
  const auto n = per_task_logits.front().size();
  AggregateResult r;
  r.fused_logits.assign(n, 0.0);
  for (std::size_t i = 0; i < per_task_logits.size(); ++i) {
    if (per_task_logits[i].size() != n) throw error(errc::length_mismatch, "logit arrays differ in length");
    if (decision.weights[i] == 0) continue;
    for (std::size_t c = 0; c < n; ++c) r.fused_logits[c] += per_task_logits[i][c];
  }
  r.label = argmax(r.fused_logits);
  return r;
}

/// `head(theta, sample)` evaluates a model with parameters theta and returns
/// its logits.
template <typename Head>
std::size_t predict_task_aware(std::span<const double> sample, std::size_t task_index, const SessionState& state,
                               const FlatVector& base, Head&& head) {
  const auto& trigger = trigger_for(state, task_index);
  auto theta = reconstruct_model(base, state.unified, trigger);
  return argmax(head(theta, sample));
}

/// Task-agnostic path: route on `feature` (the base-model feature of the
/// sample), evaluate the selected reconstructed models on `sample`, sum.
template <typename Head>
AggregateResult predict_task_agnostic(std::span<const double> sample, std::span<const double> feature,
                                      std::span<const FlatVector> reconstructed,
                                      std::span<const PrototypeSet> prototypes, std::size_t k, Head&& head) {
  if (reconstructed.size() != prototypes.size()) {
    throw error(errc::length_mismatch, "reconstructed models and prototype sets differ in count");
  }
  auto decision = route(feature, prototypes, k);
  std::vector<std::vector<double>> logits(reconstructed.size());
  for (auto i : decision.selected_tasks) logits[i] = head(reconstructed[i], sample);
  const auto n = logits[decision.selected_tasks.front()].size();
  for (auto& l : logits) {
    if (l.empty()) l.assign(n, 0.0);
  }
  return aggregate_logits(logits, decision);
}

}  // namespace condu
