#pragma once

// Desk-scale continual-learning testbed.
//
// Tasks are Gaussian blobs sharing one label space of C classes. Class c of
// task t is centred at anchor_c + shift_t + perturbation_{t,c}; the base model
// is pre-trained on blobs around the anchors alone, so it transfers above
// chance to every task without solving any of them. The model is a softmax
// linear classifier; its image-side feature extractor is the identity, so a
// sample's feature is its input vector.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "condu/error.hpp"
#include "condu/fusion.hpp"
#include "condu/prototypes.hpp"
#include "condu/routing.hpp"
#include "condu/tensor_store.hpp"

namespace condu::sim {

struct Dataset {
  std::vector<std::vector<double>> x;
  std::vector<std::size_t> y;
};

struct SyntheticTask {
  std::uint32_t task_id = 0;
  std::size_t feature_dim = 0;
  std::size_t class_count = 0;
  std::vector<std::vector<double>> class_means;
  double spread = 0.0;
  std::size_t train_per_class = 0;
  std::size_t test_per_class = 0;
  std::uint64_t seed = 0;
  Dataset train;
  Dataset test;
};

struct SuiteConfig {
  std::uint64_t seed = 1;
  std::size_t tasks = 5;
  std::size_t dim = 64;
  std::size_t classes = 4;
  double spread = 0.5;
  std::size_t train_per_class = 50;
  std::size_t test_per_class = 50;
  std::size_t pretrain_per_class = 100;
  double anchor_scale = 1.0;
  double shift_scale = 1.0;
  double perturb_scale = 4.0;
};

namespace detail {

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x436f6e44u};
  return std::mt19937_64(seq);
}

inline std::vector<double> normal_vector(std::mt19937_64& rng, std::size_t n, double scale) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = scale * gauss(rng);
  return v;
}

inline Dataset sample_blobs(const std::vector<std::vector<double>>& means, double spread, std::size_t per_class,
                            std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset d;
  // interleaved by class so any prefix is balanced
  for (std::size_t n = 0; n < per_class; ++n) {
    for (std::size_t c = 0; c < means.size(); ++c) {
      std::vector<double> x(means[c].size());
      for (std::size_t k = 0; k < x.size(); ++k) x[k] = means[c][k] + spread * gauss(rng);
      d.x.push_back(std::move(x));
      d.y.push_back(c);
    }
  }
  return d;
}

inline void validate(const SuiteConfig& cfg) {
  if (cfg.tasks == 0) throw error(errc::bad_config, "tasks must be at least 1");
  if (cfg.dim == 0 || cfg.classes < 2) throw error(errc::bad_config, "dim must be positive and classes at least 2");
  if (cfg.train_per_class == 0 || cfg.test_per_class == 0) throw error(errc::bad_config, "sample counts must be positive");
  if (!(cfg.spread >= 0.0) || !std::isfinite(cfg.spread)) throw error(errc::bad_config, "spread must be >= 0");
}

inline std::vector<std::vector<double>> anchors(const SuiteConfig& cfg) {
  auto rng = make_rng(cfg.seed, 0);
  std::vector<std::vector<double>> a;
  for (std::size_t c = 0; c < cfg.classes; ++c) a.push_back(normal_vector(rng, cfg.dim, cfg.anchor_scale));
  return a;
}

}  // namespace detail

inline std::vector<SyntheticTask> gen_tasks(const SuiteConfig& cfg) {
  detail::validate(cfg);
  const auto a = detail::anchors(cfg);
  std::vector<SyntheticTask> tasks;
  for (std::size_t t = 0; t < cfg.tasks; ++t) {
    auto rng = detail::make_rng(cfg.seed, 1 + t);
    SyntheticTask task;
    task.task_id = static_cast<std::uint32_t>(t);
    task.feature_dim = cfg.dim;
    task.class_count = cfg.classes;
    task.spread = cfg.spread;
    task.train_per_class = cfg.train_per_class;
    task.test_per_class = cfg.test_per_class;
    task.seed = cfg.seed;
    auto shift = detail::normal_vector(rng, cfg.dim, cfg.shift_scale);
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      auto u = detail::normal_vector(rng, cfg.dim, cfg.perturb_scale);
      for (std::size_t k = 0; k < cfg.dim; ++k) u[k] += a[c][k] + shift[k];
      task.class_means.push_back(std::move(u));
    }
    task.train = detail::sample_blobs(task.class_means, cfg.spread, cfg.train_per_class, rng);
    task.test = detail::sample_blobs(task.class_means, cfg.spread, cfg.test_per_class, rng);
    tasks.push_back(std::move(task));
  }
  return tasks;
}

inline std::vector<SyntheticTask> gen_tasks(std::uint64_t seed, std::size_t tasks, std::size_t dim,
                                            std::size_t classes, double spread) {
  SuiteConfig cfg;
  cfg.seed = seed;
  cfg.tasks = tasks;
  cfg.dim = dim;
  cfg.classes = classes;
  cfg.spread = spread;
  return gen_tasks(cfg);
}

/// The held-out blob mixture the base model is pre-trained on.
inline SyntheticTask gen_pretraining(const SuiteConfig& cfg) {
  detail::validate(cfg);
  auto rng = detail::make_rng(cfg.seed, 0xB45E);
  SyntheticTask task;
  task.feature_dim = cfg.dim;
  task.class_count = cfg.classes;
  task.class_means = detail::anchors(cfg);
  task.spread = cfg.spread;
  task.train_per_class = cfg.pretrain_per_class;
  task.test_per_class = cfg.pretrain_per_class;
  task.seed = cfg.seed;
  task.train = detail::sample_blobs(task.class_means, cfg.spread, cfg.pretrain_per_class, rng);
  task.test = detail::sample_blobs(task.class_means, cfg.spread, cfg.pretrain_per_class, rng);
  return task;
}

// ---------------------------------------------------------------------------
// Toy model: logits = W x + b with layout [("W",[C,D]), ("b",[C])]

inline TensorLayout toy_layout(std::size_t classes, std::size_t dim) {
  TensorLayout l;
  l.append("W", {static_cast<std::uint32_t>(classes), static_cast<std::uint32_t>(dim)});
  l.append("b", {static_cast<std::uint32_t>(classes)});
  return l;
}

struct LinearHead {
  std::size_t classes = 0;
  std::size_t dim = 0;

  std::vector<double> operator()(const FlatVector& theta, std::span<const double> x) const {
    if (x.size() != dim) throw error(errc::dim_mismatch, "sample dimension");
    if (theta.size() != classes * dim + classes) throw error(errc::layout_mismatch, "model is not a toy model");
    auto v = theta.values();
    std::vector<double> z(classes);
    for (std::size_t c = 0; c < classes; ++c) {
      double s = v[classes * dim + c];
      for (std::size_t k = 0; k < dim; ++k) s += v[c * dim + k] * x[k];
      z[c] = s;
    }
    return z;
  }
};

inline double accuracy(const FlatVector& theta, const Dataset& data, const LinearHead& head) {
  std::size_t hit = 0;
  for (std::size_t n = 0; n < data.x.size(); ++n) hit += argmax(head(theta, data.x[n])) == data.y[n] ? 1 : 0;
  return data.x.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(data.x.size());
}

struct FullMode {};
struct LowRankMode {
  std::size_t rank = 1;
};
using TrainMode = std::variant<FullMode, LowRankMode>;

inline std::string mode_name(const TrainMode& m) {
  if (const auto* lr = std::get_if<LowRankMode>(&m)) return "lora:" + std::to_string(lr->rank);
  return "full";
}

inline TrainMode parse_mode(std::string_view s) {
  if (s == "full") return FullMode{};
  if (s.starts_with("lora:")) {
    std::size_t r = 0;
    auto tail = s.substr(5);
    auto [p, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), r);
    if (ec == std::errc{} && p == tail.data() + tail.size() && r > 0) return LowRankMode{r};
  }
  throw error(errc::bad_config, "mode must be 'full' or 'lora:<r>', got '" + std::string(s) + "'");
}

struct TrainResult {
  FlatVector model;
  DeltaModel delta;
  double final_loss = 0.0;
};

namespace detail {

// Mean cross-entropy and its gradient w.r.t. (W, b) at theta.
inline double loss_and_grad(const FlatVector& theta, const Dataset& data, const LinearHead& head,
                            std::vector<double>& gW, std::vector<double>& gb) {
  const std::size_t C = head.classes;
  const std::size_t D = head.dim;
  std::fill(gW.begin(), gW.end(), 0.0);
  std::fill(gb.begin(), gb.end(), 0.0);
  double loss = 0.0;
  std::vector<double> p(C);
  for (std::size_t n = 0; n < data.x.size(); ++n) {
    auto z = head(theta, data.x[n]);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) sum += (p[c] = std::exp(z[c] - zmax));
    loss += std::log(sum) - (z[data.y[n]] - zmax);
    for (std::size_t c = 0; c < C; ++c) {
      const double g = p[c] / sum - (c == data.y[n] ? 1.0 : 0.0);
      gb[c] += g;
      for (std::size_t k = 0; k < D; ++k) gW[c * D + k] += g * data.x[n][k];
    }
  }
  const double inv = 1.0 / static_cast<double>(data.x.size());
  for (auto& g : gW) g *= inv;
  for (auto& g : gb) g *= inv;
  return loss * inv;
}

inline FlatVector add_offset(const FlatVector& base, const std::vector<double>& offset) {
  std::vector<double> v(base.size());
  for (std::size_t j = 0; j < v.size(); ++j) v[j] = base[j] + offset[j];
  return {base.layout(), std::move(v)};
}

}  // namespace detail

/// Full-batch gradient descent on mean cross-entropy, parametrized by the
/// offset from `base`. The returned model is exactly base + delta elementwise.
/// In low-rank mode the weight offset is B*A (B zero-initialized, A seeded
/// from the task) and the bias is frozen.
inline TrainResult train_task(const SyntheticTask& task, const FlatVector& base, const TrainMode& mode,
                              std::size_t steps, double lr) {
  const std::size_t C = task.class_count;
  const std::size_t D = task.feature_dim;
  if (steps == 0) throw error(errc::bad_config, "steps must be at least 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw error(errc::bad_config, "learning rate must be finite and >= 0");
  if (!(base.layout() == toy_layout(C, D))) throw error(errc::layout_mismatch, "base model does not fit task");
  if (task.train.x.empty()) throw error(errc::bad_config, "task has no training samples");
  const LinearHead head{C, D};

  std::vector<double> offset(base.size(), 0.0);
  std::vector<double> gW(C * D), gb(C);
  const auto* low_rank = std::get_if<LowRankMode>(&mode);
  std::vector<double> A, B;
  std::size_t r = 0;
  if (low_rank != nullptr) {
    r = low_rank->rank;
    if (r == 0 || r > std::min(C, D)) throw error(errc::bad_config, "rank must be in [1, min(C, D)]");
    auto rng = detail::make_rng(task.seed, 0x10AA00 + task.task_id);
    A = detail::normal_vector(rng, r * D, 1.0 / std::sqrt(static_cast<double>(D)));
    B.assign(C * r, 0.0);
  }

  double loss = 0.0;
  for (std::size_t step = 0; step < steps; ++step) {
    for (std::size_t j = 0; j < offset.size(); ++j) {
      if (!std::isfinite(base[j] + offset[j])) {
        throw error(errc::non_finite_loss, "parameters diverged at step " + std::to_string(step));
      }
    }
    loss = detail::loss_and_grad(detail::add_offset(base, offset), task.train, head, gW, gb);
    if (!std::isfinite(loss)) throw error(errc::non_finite_loss, "loss diverged at step " + std::to_string(step));
    if (low_rank == nullptr) {
      for (std::size_t j = 0; j < C * D; ++j) offset[j] -= lr * gW[j];
      for (std::size_t c = 0; c < C; ++c) offset[C * D + c] -= lr * gb[c];
      continue;
    }
    // dB = gW A^T, dA = B^T gW
    std::vector<double> dB(C * r, 0.0), dA(r * D, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t q = 0; q < r; ++q) {
        double s = 0.0;
        for (std::size_t k = 0; k < D; ++k) s += gW[c * D + k] * A[q * D + k];
        dB[c * r + q] = s;
      }
    }
    for (std::size_t q = 0; q < r; ++q) {
      for (std::size_t k = 0; k < D; ++k) {
        double s = 0.0;
        for (std::size_t c = 0; c < C; ++c) s += B[c * r + q] * gW[c * D + k];
        dA[q * D + k] = s;
      }
    }
    for (std::size_t j = 0; j < B.size(); ++j) B[j] -= lr * dB[j];
    for (std::size_t j = 0; j < A.size(); ++j) A[j] -= lr * dA[j];
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t k = 0; k < D; ++k) {
        double s = 0.0;
        for (std::size_t q = 0; q < r; ++q) s += B[c * r + q] * A[q * D + k];
        offset[c * D + k] = s;
      }
    }
  }
  TrainResult res;
  res.delta = {FlatVector(base.layout(), offset), task.task_id};
  res.model = detail::add_offset(base, offset);
  res.final_loss = loss;
  return res;
}

inline FlatVector pretrain_base(const SyntheticTask& pretraining, std::size_t steps, double lr) {
  auto zero = FlatVector::zeros(toy_layout(pretraining.class_count, pretraining.feature_dim));
  return train_task(pretraining, zero, FullMode{}, steps, lr).model;
}

/// Prototypes from base-model features: the text-side vector of category c is
/// the base model's class-c weight row; image features are the raw inputs.
inline PrototypeSet task_prototypes(const SyntheticTask& task, const FlatVector& base) {
  const std::size_t C = task.class_count;
  const std::size_t D = task.feature_dim;
  std::vector<CategoryFeatures> cats(C);
  auto w = base.values();
  for (std::size_t c = 0; c < C; ++c) {
    cats[c].label = "class" + std::to_string(c);
    cats[c].text.assign(w.begin() + static_cast<std::ptrdiff_t>(c * D), w.begin() + static_cast<std::ptrdiff_t>((c + 1) * D));
  }
  for (std::size_t n = 0; n < task.train.x.size(); ++n) cats[task.train.y[n]].images.push_back(task.train.x[n]);
  return compute_prototypes(task.task_id, cats);
}

// ---------------------------------------------------------------------------
// Metrics

/// rows[0] is the zero-shot row of the base model; rows[s][t] for s >= 1 is
/// accuracy on task t+1 after session s.
struct AccuracyMatrix {
  std::vector<std::vector<double>> rows;

  std::size_t tasks() const { return rows.empty() ? 0 : rows.front().size(); }
  double at(std::size_t session, std::size_t task) const { return rows.at(session).at(task - 1); }
};

struct Metrics {
  std::optional<double> transfer;  // undefined for a single task
  double average = 0.0;
  double last = 0.0;
};

/// `sessions[s-1][t-1]` = accuracy on task t after session s (no zero-shot row).
inline Metrics compute_metrics(const std::vector<std::vector<double>>& sessions) {
  const std::size_t T = sessions.size();
  if (T == 0) throw error(errc::empty_input, "empty accuracy matrix");
  for (const auto& row : sessions) {
    if (row.size() != T) throw error(errc::dim_mismatch, "accuracy matrix must be square");
  }
  Metrics m;
  if (T >= 2) {
    double total = 0.0;
    for (std::size_t t = 2; t <= T; ++t) {
      double col = 0.0;
      for (std::size_t s = 1; s < t; ++s) col += sessions[s - 1][t - 1];
      total += col / static_cast<double>(t - 1);
    }
    m.transfer = total / static_cast<double>(T - 1);
  }
  double avg = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    double col = 0.0;
    for (std::size_t s = 0; s < T; ++s) col += sessions[s][t];
    avg += col / static_cast<double>(T);
  }
  m.average = avg / static_cast<double>(T);
  double last = 0.0;
  for (double a : sessions.back()) last += a;
  m.last = last / static_cast<double>(T);
  return m;
}

inline Metrics compute_metrics(const AccuracyMatrix& a) {
  return compute_metrics(std::vector<std::vector<double>>(a.rows.begin() + 1, a.rows.end()));
}

// ---------------------------------------------------------------------------
// Benchmark

struct BenchmarkConfig {
  SuiteConfig suite;
  TrainMode mode = FullMode{};
  std::size_t k = default_top_k;
  std::size_t steps = 200;
  double lr = 0.1;
  std::size_t base_steps = 200;
  double base_lr = 0.1;
};

struct BenchmarkResult {
  AccuracyMatrix matrix;
  SessionState state;
  FlatVector base;
  Metrics metrics;
  std::vector<double> individual;      // accuracy of each individually trained model
  std::vector<double> task_agnostic;   // top-K routed accuracy per task after the last session
  std::vector<DeltaModel> deltas;      // raw per-task deltas
  std::vector<std::vector<double>> l1_ratio;  // [s-1][t-1] = |reconstructed delta|_1 / |delta|_1, t <= s

  double mean_individual() const { return mean(individual); }
  double mean_task_agnostic() const { return mean(task_agnostic); }
  double mean_zero_shot() const { return mean(matrix.rows.front()); }

  static double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  }
};

/// Accuracy of top-K routing over the first `seen` tasks of `state`.
inline double routed_accuracy(const SyntheticTask& task, const SessionState& state, const FlatVector& base,
                              std::size_t seen, std::size_t k) {
  const LinearHead head{task.class_count, task.feature_dim};
  std::vector<FlatVector> models;
  for (std::size_t i = 0; i < seen; ++i) models.push_back(reconstruct_model(base, state.unified, state.triggers[i]));
  std::span<const PrototypeSet> protos(state.prototypes.data(), seen);
  std::size_t hit = 0;
  for (std::size_t n = 0; n < task.test.x.size(); ++n) {
    const auto& x = task.test.x[n];
    hit += predict_task_agnostic(x, x, models, protos, k, head).label == task.test.y[n] ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(task.test.x.size());
}

inline BenchmarkResult run_benchmark(const std::vector<SyntheticTask>& tasks, const SyntheticTask& pretraining,
                                     const BenchmarkConfig& cfg) {
  if (tasks.empty()) throw error(errc::empty_input, "benchmark needs at least one task");
  if (cfg.k == 0) throw error(errc::bad_config, "K must be at least 1");
  const std::size_t T = tasks.size();
  const LinearHead head{tasks.front().class_count, tasks.front().feature_dim};

  BenchmarkResult res;
  res.base = pretrain_base(pretraining, cfg.base_steps, cfg.base_lr);
  const auto base_hash = content_hash(res.base);
  res.matrix.rows.assign(T + 1, std::vector<double>(T, 0.0));
  for (std::size_t t = 0; t < T; ++t) res.matrix.rows[0][t] = accuracy(res.base, tasks[t].test, head);

  std::optional<SessionState> state;
  for (std::size_t s = 1; s <= T; ++s) {
    const auto& task = tasks[s - 1];
    auto trained = train_task(task, res.base, cfg.mode, cfg.steps, cfg.lr);
    res.individual.push_back(accuracy(trained.model, task.test, head));
    res.deltas.push_back(trained.delta);
    state = run_session(state, trained.delta, task_prototypes(task, res.base), base_hash);

    std::vector<double> ratios;
    for (std::size_t t = 1; t <= T; ++t) {
      double a = 0.0;
      if (t <= s) {
        const auto& trig = state->triggers[t - 1];
        auto theta = reconstruct_model(res.base, state->unified, trig);
        a = accuracy(theta, tasks[t - 1].test, head);
        const double raw = l1_norm(res.deltas[t - 1].vec.values());
        const double rec = l1_norm(decouple(state->unified, trig).vec.values());
        ratios.push_back(raw > 0.0 ? rec / raw : (rec == 0.0 ? 1.0 : 0.0));
      } else {
        a = routed_accuracy(tasks[t - 1], *state, res.base, s, cfg.k);
      }
      res.matrix.rows[s][t - 1] = a;
    }
    res.l1_ratio.push_back(std::move(ratios));
  }
  res.state = std::move(*state);
  for (const auto& task : tasks) res.task_agnostic.push_back(routed_accuracy(task, res.state, res.base, T, cfg.k));
  res.metrics = compute_metrics(res.matrix);
  return res;
}

struct SweepRow {
  std::size_t k = 0;
  std::optional<double> transfer;  // zero-shot cells re-routed against the stored state
  double task_agnostic = 0.0;      // mean over tasks, routing over all tasks
};

/// Re-runs only routing and evaluation per K against one stored state. The
/// transfer analog for task t routes over tasks 1..t-1 of that state.
inline std::vector<SweepRow> sweep_k(const std::vector<SyntheticTask>& tasks, const SessionState& state,
                                     const FlatVector& base, std::span<const std::size_t> k_values) {
  if (k_values.empty()) throw error(errc::bad_config, "no K values");
  if (tasks.size() != state.task_count()) throw error(errc::bad_config, "task list does not match session state");
  std::set<std::size_t> ks(k_values.begin(), k_values.end());
  if (ks.count(0)) throw error(errc::bad_config, "K must be at least 1");
  const std::size_t T = tasks.size();
  std::vector<SweepRow> rows;
  for (auto k : ks) {
    SweepRow row;
    row.k = k;
    if (T >= 2) {
      double s = 0.0;
      for (std::size_t t = 2; t <= T; ++t) s += routed_accuracy(tasks[t - 1], state, base, t - 1, k);
      row.transfer = s / static_cast<double>(T - 1);
    }
    double a = 0.0;
    for (const auto& task : tasks) a += routed_accuracy(task, state, base, T, k);
    row.task_agnostic = a / static_cast<double>(T);
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Config file (key=value lines, '#' comments) and reports

inline BenchmarkConfig parse_config(std::istream& in) {
  BenchmarkConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& why) {
    throw error(errc::bad_config, "line " + std::to_string(lineno) + ": " + why);
  };
  auto trim = [](std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return std::string{};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key=value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    auto as_uint = [&]() -> std::uint64_t {
      std::uint64_t v = 0;
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc{} || p != value.data() + value.size()) fail("'" + key + "' needs a non-negative integer");
      return v;
    };
    auto as_real = [&]() -> double {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(value, &used);
      } catch (const std::exception&) {
        fail("'" + key + "' needs a number");
      }
      if (used != value.size() || !std::isfinite(v)) fail("'" + key + "' needs a finite number");
      return v;
    };
    if (key == "seed") cfg.suite.seed = as_uint();
    else if (key == "tasks") cfg.suite.tasks = as_uint();
    else if (key == "dim") cfg.suite.dim = as_uint();
    else if (key == "classes") cfg.suite.classes = as_uint();
    else if (key == "spread") cfg.suite.spread = as_real();
    else if (key == "train_per_class") cfg.suite.train_per_class = as_uint();
    else if (key == "test_per_class") cfg.suite.test_per_class = as_uint();
    else if (key == "pretrain_per_class") cfg.suite.pretrain_per_class = as_uint();
    else if (key == "mode") cfg.mode = parse_mode(value);
    else if (key == "k") cfg.k = as_uint();
    else if (key == "steps") cfg.steps = as_uint();
    else if (key == "lr") cfg.lr = as_real();
    else if (key == "base_steps") cfg.base_steps = as_uint();
    else if (key == "base_lr") cfg.base_lr = as_real();
    else fail("unknown key '" + key + "'");
  }
  return cfg;
}

inline void write_matrix_csv(std::ostream& out, const AccuracyMatrix& a) {
  out << "session";
  for (std::size_t t = 1; t <= a.tasks(); ++t) out << ",task_" << t;
  out << '\n' << std::setprecision(17);
  for (std::size_t s = 0; s < a.rows.size(); ++s) {
    out << s;
    for (double v : a.rows[s]) out << ',' << v;
    out << '\n';
  }
}

inline void write_summary(std::ostream& out, const BenchmarkResult& r, const BenchmarkConfig& cfg) {
  out << std::fixed << std::setprecision(4);
  out << "mode " << mode_name(cfg.mode) << ", tasks " << r.matrix.tasks() << ", K " << cfg.k << '\n';
  if (r.metrics.transfer) out << "Transfer " << *r.metrics.transfer << '\n';
  else out << "Transfer n/a\n";
  out << "Average " << r.metrics.average << '\n';
  out << "Last " << r.metrics.last << '\n';
  out << "ZeroShot " << r.mean_zero_shot() << '\n';
  out << "Individual " << r.mean_individual() << '\n';
  out << "TaskAgnostic " << r.mean_task_agnostic() << '\n';
  for (auto i : degenerate_tasks(r.state)) out << "degenerate trigger: task " << i + 1 << " (lambda = 0)\n";
  out << std::defaultfloat;
}

}  // namespace condu::sim
