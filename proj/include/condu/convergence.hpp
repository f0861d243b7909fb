#pragma once

// Fixed-set iteration of unify -> trigger -> decouple, with the measurements
// needed to check sign preservation, L1 preservation and convergence.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "condu/error.hpp"
#include "condu/fusion.hpp"
#include "condu/triggers.hpp"

namespace condu {

struct IterationStep {
  std::size_t step = 0;  // 1-based
  std::vector<double> lambdas;
  std::vector<std::size_t> popcounts;
  std::vector<PackedMask> masks;
  std::vector<std::vector<double>> snapshot;  // deltas after this step
  double mean_l1_diff = 0.0;
  bool lambda_order_ok = true;  // relative order of lambdas matches the previous step
  bool overlap_ok = true;       // every pair of step-1 masks intersects
};

struct IterationTrace {
  std::vector<std::vector<double>> initial;
  std::vector<IterationStep> steps;
  bool converged = false;

  bool flags_held() const {
    return std::all_of(steps.begin(), steps.end(), [](const auto& s) { return s.lambda_order_ok && s.overlap_ok; });
  }
};

namespace detail {

struct Round {
  std::vector<DeltaModel> next;
  std::vector<TaskTrigger> triggers;
};

inline Round iterate_round(std::span<const DeltaModel> deltas) {
  if (deltas.empty()) throw error(errc::empty_input, "iteration needs at least one delta");
  auto [unified, triggers] = fuse(deltas);
  Round r;
  r.next.reserve(deltas.size());
  for (const auto& t : triggers) r.next.push_back(decouple(unified, t));
  r.triggers = std::move(triggers);
  return r;
}

inline std::vector<double> copy_values(const DeltaModel& d) { return {d.vec.values().begin(), d.vec.values().end()}; }

// Three-way comparison of every pair with a small relative tolerance; the
// order is unchanged only if no pair moves between <, = and >. Two lambdas
// meeting (e.g. a second task reaching lambda = 1) counts as a change, since
// convergence relies on the ordering staying strict.
inline bool same_relative_order(std::span<const double> before, std::span<const double> after) {
  double scale = 1.0;
  for (double x : before) scale = std::max(scale, std::abs(x));
  for (double x : after) scale = std::max(scale, std::abs(x));
  const double tol = 1e-12 * scale;
  auto cmp = [tol](double d) { return (d > tol) - (d < -tol); };
  for (std::size_t i = 0; i < before.size(); ++i) {
    for (std::size_t k = i + 1; k < before.size(); ++k) {
      if (cmp(before[i] - before[k]) != cmp(after[i] - after[k])) return false;
    }
  }
  return true;
}

}  // namespace detail

inline std::vector<DeltaModel> iterate_once(std::span<const DeltaModel> deltas) {
  return detail::iterate_round(deltas).next;
}

inline std::pair<std::vector<DeltaModel>, IterationTrace> iterate_until(std::span<const DeltaModel> deltas, double eps,
                                                                        std::size_t max_steps) {
  if (!(eps > 0.0)) throw error(errc::bad_config, "eps must be positive");
  if (max_steps == 0) throw error(errc::bad_config, "max_steps must be at least 1");
  if (deltas.empty()) throw error(errc::empty_input, "iteration needs at least one delta");

  IterationTrace trace;
  for (const auto& d : deltas) trace.initial.push_back(detail::copy_values(d));
  std::vector<DeltaModel> current(deltas.begin(), deltas.end());
  const double n = static_cast<double>(current.size());

  for (std::size_t step = 1; step <= max_steps; ++step) {
    auto round = detail::iterate_round(current);
    IterationStep rec;
    rec.step = step;
    double diff = 0.0;
    for (std::size_t i = 0; i < current.size(); ++i) {
      diff += l1_distance(round.next[i].vec.values(), current[i].vec.values());
      rec.lambdas.push_back(round.triggers[i].lambda);
      rec.popcounts.push_back(round.triggers[i].mask.popcount());
      rec.masks.push_back(round.triggers[i].mask);
      rec.snapshot.push_back(detail::copy_values(round.next[i]));
    }
    rec.mean_l1_diff = diff / n;
    if (step == 1) {
      for (std::size_t i = 0; i < rec.masks.size() && rec.overlap_ok; ++i) {
        for (std::size_t k = i + 1; k < rec.masks.size(); ++k) {
          if (!overlaps(rec.masks[i], rec.masks[k])) {
            rec.overlap_ok = false;
            break;
          }
        }
      }
    } else {
      rec.overlap_ok = trace.steps.front().overlap_ok;
      rec.lambda_order_ok = detail::same_relative_order(trace.steps.back().lambdas, rec.lambdas);
    }
    trace.steps.push_back(std::move(rec));
    current = std::move(round.next);
    if (trace.steps.back().mean_l1_diff < eps) {
      trace.converged = true;
      break;
    }
  }
  return {std::move(current), std::move(trace)};
}

struct StabilityReport {
  bool pass = true;
  std::size_t step = 0;  // 0 refers to the initial set
  std::size_t task = 0;
  std::size_t element = 0;
  std::string what;
};

/// Masks must equal their step-1 value at every later step, and no element may
/// change sign or come back from zero between consecutive snapshots.
inline StabilityReport sign_stability_check(const IterationTrace& trace) {
  auto fail = [](std::size_t step, std::size_t task, std::size_t element, std::string what) {
    return StabilityReport{false, step, task, element, std::move(what)};
  };
  if (trace.steps.empty()) return {};
  const auto& first = trace.steps.front();
  for (const auto& s : trace.steps) {
    for (std::size_t i = 0; i < s.masks.size(); ++i) {
      if (s.masks[i] == first.masks[i]) continue;
      auto a = unpack(first.masks[i]);
      auto b = unpack(s.masks[i]);
      auto j = static_cast<std::size_t>(std::mismatch(a.begin(), a.end(), b.begin()).first - a.begin());
      return fail(s.step, i, j, "mask bit differs from step 1");
    }
  }
  const auto* prev = &trace.initial;
  for (const auto& s : trace.steps) {
    for (std::size_t i = 0; i < s.snapshot.size(); ++i) {
      const auto& before = (*prev)[i];
      const auto& after = s.snapshot[i];
      for (std::size_t j = 0; j < after.size(); ++j) {
        if (before[j] == 0.0 && after[j] != 0.0) return fail(s.step, i, j, "zero element resurrected");
        if (before[j] * after[j] < 0.0) return fail(s.step, i, j, "element changed sign");
      }
    }
    prev = &s.snapshot;
  }
  return {};
}

inline void write_trace_csv(std::ostream& out, const IterationTrace& trace) {
  const std::size_t n = trace.initial.size();
  out << "step,mean_l1_diff";
  for (std::size_t i = 1; i <= n; ++i) out << ",lambda_" << i;
  for (std::size_t i = 1; i <= n; ++i) out << ",popcount_" << i;
  out << ",lambda_order_ok,overlap_ok\n";
  out << std::setprecision(17);
  for (const auto& s : trace.steps) {
    out << s.step << ',' << s.mean_l1_diff;
    for (double l : s.lambdas) out << ',' << l;
    for (auto p : s.popcounts) out << ',' << p;
    out << ',' << (s.lambda_order_ok ? 1 : 0) << ',' << (s.overlap_ok ? 1 : 0) << '\n';
  }
}

inline void write_trace_text(std::ostream& out, const IterationTrace& trace) {
  out << "tasks " << trace.initial.size() << ", steps " << trace.steps.size() << ", "
      << (trace.converged ? "converged" : "not converged") << ", assumption flags "
      << (trace.flags_held() ? "held" : "failed") << '\n';
  for (const auto& s : trace.steps) {
    out << "step " << s.step << " mean_l1_diff " << std::setprecision(6) << std::scientific << s.mean_l1_diff
        << std::defaultfloat << " lambda [";
    for (std::size_t i = 0; i < s.lambdas.size(); ++i) out << (i ? " " : "") << std::setprecision(8) << s.lambdas[i];
    out << "] popcount [";
    for (std::size_t i = 0; i < s.popcounts.size(); ++i) out << (i ? " " : "") << s.popcounts[i];
    out << "]";
    if (!s.lambda_order_ok) out << " lambda-order-changed";
    if (!s.overlap_ok) out << " mask-overlap-empty";
    out << '\n';
  }
  auto stability = sign_stability_check(trace);
  out << "sign stability: " << (stability.pass ? "pass" : "FAIL");
  if (!stability.pass) {
    out << " at step " << stability.step << " task " << stability.task + 1 << " element " << stability.element << " ("
        << stability.what << ")";
  }
  out << '\n';
}

// ---------------------------------------------------------------------------
// Growing sets

struct PerturbationRow {
  std::size_t task_count = 0;     // after the addition
  double mean_l1_diff = 0.0;      // (1/n) sum over all tasks, new task against its raw delta
  std::size_t mask_changes = 0;   // bits flipped among tasks that existed before the addition
  std::vector<double> lambdas;
};

struct PerturbationReport {
  std::vector<PerturbationRow> rows;
  std::vector<DeltaModel> final_set;
  std::vector<PackedMask> final_masks;
};

inline PerturbationReport incremental_perturbation_study(std::span<const DeltaModel> initial,
                                                         std::span<const DeltaModel> stream,
                                                         std::size_t steps_per_add = 1) {
  if (stream.empty()) throw error(errc::empty_input, "perturbation study needs at least one delta to add");
  if (steps_per_add == 0) throw error(errc::bad_config, "steps_per_add must be at least 1");

  std::vector<DeltaModel> set(initial.begin(), initial.end());
  if (set.empty()) {
    set.push_back(stream.front());
    stream = stream.subspan(1);
  }
  std::vector<PackedMask> masks;
  auto settle = [&](std::vector<DeltaModel>& s) {
    detail::Round r;
    for (std::size_t k = 0; k < steps_per_add; ++k) {
      r = detail::iterate_round(s);
      s = std::move(r.next);
    }
    return r.triggers;
  };
  for (auto& t : settle(set)) masks.push_back(std::move(t.mask));

  PerturbationReport report;
  for (const auto& added : stream) {
    auto prev = set;
    prev.push_back(added);
    set = prev;
    auto triggers = settle(set);
    PerturbationRow row;
    row.task_count = set.size();
    double diff = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i) diff += l1_distance(set[i].vec.values(), prev[i].vec.values());
    row.mean_l1_diff = diff / static_cast<double>(set.size());
    for (std::size_t i = 0; i < masks.size(); ++i) row.mask_changes += hamming(masks[i], triggers[i].mask);
    masks.clear();
    for (auto& t : triggers) {
      row.lambdas.push_back(t.lambda);
      masks.push_back(std::move(t.mask));
    }
    report.rows.push_back(std::move(row));
  }
  report.final_set = std::move(set);
  report.final_masks = std::move(masks);
  return report;
}

inline void write_perturbation_text(std::ostream& out, const PerturbationReport& r) {
  out << "tasks,mean_l1_diff,mask_changes\n" << std::setprecision(10);
  for (const auto& row : r.rows) out << row.task_count << ',' << row.mean_l1_diff << ',' << row.mask_changes << '\n';
}

}  // namespace condu
