#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "condu/routing.hpp"
#include "oracles.hpp"

using namespace condu;

namespace {

PrototypeSet single(std::uint32_t id, std::vector<double> v) { return {id, {{"c", std::move(v)}}}; }

// one prototype per task at the given cosine to the x axis
std::vector<PrototypeSet> at_cosines(const std::vector<double>& sims) {
  std::vector<PrototypeSet> out;
  for (std::size_t i = 0; i < sims.size(); ++i) {
    const double s = sims[i];
    out.push_back(single(static_cast<std::uint32_t>(i), {s, std::sqrt(1 - s * s)}));
  }
  return out;
}

// logits[c] = sum_k theta[c*D + k] * x[k]
struct DotHead {
  std::size_t classes;
  std::vector<double> operator()(const FlatVector& theta, std::span<const double> x) const {
    std::vector<double> out(classes, 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t k = 0; k < x.size(); ++k) out[c] += theta[c * x.size() + k] * x[k];
    }
    return out;
  }
};

std::vector<double> gaussian_nonzero(std::mt19937_64& rng, std::size_t n) {
  auto v = oracle::gaussian(rng, n);
  v[0] += 3.0;
  return v;
}

}  // namespace

TEST(ComputePrototypes, TextPlusMeanImage) {
  std::vector<CategoryFeatures> cats{{"a", {1, 1}, {{0, 1}, {1, 0}}}};
  auto p = compute_prototypes(7, cats);
  EXPECT_EQ(p.task_id(), 7u);
  ASSERT_EQ(p.prototypes().size(), 1u);
  EXPECT_EQ(p.prototypes()[0].vector, (std::vector<double>{1.5, 1.5}));
  EXPECT_EQ(p.prototypes()[0].label, "a");
}

TEST(ComputePrototypes, MatchesLoopAverage) {
  std::mt19937_64 rng(5);
  std::vector<CategoryFeatures> cats;
  for (int c = 0; c < 4; ++c) {
    CategoryFeatures f{"c" + std::to_string(c), oracle::gaussian(rng, 16), {}};
    for (int m = 0; m < 1 + c * 3; ++m) f.images.push_back(oracle::gaussian(rng, 16));
    cats.push_back(f);
  }
  auto p = compute_prototypes(0, cats);
  for (std::size_t c = 0; c < cats.size(); ++c) {
    for (std::size_t k = 0; k < 16; ++k) {
      double s = 0;
      for (const auto& img : cats[c].images) s += img[k];
      const double want = cats[c].text[k] + s / static_cast<double>(cats[c].images.size());
      EXPECT_NEAR(p.prototypes()[c].vector[k], want, 1e-6 * std::max(1.0, std::abs(want)));
    }
  }
}

TEST(ComputePrototypes, Errors) {
  auto code = [](auto&& fn) {
    try {
      fn();
    } catch (const error& e) {
      return e.code();
    }
    return errc::contract_violation;
  };
  EXPECT_EQ(code([] { compute_prototypes(0, std::vector<CategoryFeatures>{}); }), errc::empty_category);
  EXPECT_EQ(code([] { compute_prototypes(0, std::vector<CategoryFeatures>{{"a", {1, 0}, {}}}); }),
            errc::empty_category);
  EXPECT_EQ(code([] { compute_prototypes(0, std::vector<CategoryFeatures>{{"a", {1, 0}, {{1, 0, 0}}}}); }),
            errc::dim_mismatch);
  EXPECT_EQ(code([] { compute_prototypes(0, std::vector<CategoryFeatures>{{"a", {-1, 0}, {{1, 0}}}}); }),
            errc::zero_vector);
}

TEST(Route, SelectsTopK) {
  auto protos = at_cosines({0.9, 0.2, 0.5});
  std::vector<double> x{1, 0};
  auto d2 = route(x, protos, 2);
  EXPECT_EQ(d2.weights, (std::vector<std::uint8_t>{1, 0, 1}));
  EXPECT_EQ(d2.selected_tasks, (std::vector<std::size_t>{0, 2}));
  EXPECT_NEAR(d2.per_task_best_sim[0], 0.9, 1e-6);
  EXPECT_NEAR(d2.per_task_best_sim[1], 0.2, 1e-6);
  EXPECT_EQ(route(x, protos, 1).weights, (std::vector<std::uint8_t>{1, 0, 0}));
  EXPECT_EQ(route(x, protos, 11).weights, (std::vector<std::uint8_t>{1, 1, 1}));
}

TEST(Route, BestPrototypePerTaskAndTies) {
  PrototypeSet two(0, {{"a", {0, 1}}, {"b", {1, 0}}});
  std::vector<PrototypeSet> protos{two, single(1, {1, 0})};
  std::vector<double> x{2, 0};
  auto d = route(x, protos, 1);
  EXPECT_DOUBLE_EQ(d.per_task_best_sim[0], 1.0);
  EXPECT_EQ(d.selected_tasks, (std::vector<std::size_t>{0}));
}

TEST(Route, Errors) {
  auto protos = at_cosines({0.9, 0.2});
  std::vector<double> x{1, 0};
  auto code = [](auto&& fn) {
    try {
      fn();
    } catch (const error& e) {
      return e.code();
    }
    return errc::contract_violation;
  };
  EXPECT_EQ(code([&] { route(x, protos, 0); }), errc::bad_config);
  EXPECT_EQ(code([&] { route(x, std::vector<PrototypeSet>{}, 1); }), errc::empty_input);
  EXPECT_EQ(code([&] { route(std::vector<double>{0, 0}, protos, 1); }), errc::zero_vector);
  EXPECT_EQ(code([&] { route(std::vector<double>{1, 0, 0}, protos, 1); }), errc::dim_mismatch);
  std::vector<PrototypeSet> with_hole{protos[0], PrototypeSet::placeholder(1)};
  EXPECT_EQ(code([&] { route(x, with_hole, 1); }), errc::missing_prototypes);
}

TEST(Route, RandomProperties) {
  std::mt19937_64 rng(77);
  for (int it = 0; it < 200; ++it) {
    const std::size_t tasks = 1 + rng() % 12;
    const std::size_t dim = 2 + rng() % 10;
    std::vector<PrototypeSet> protos;
    for (std::size_t t = 0; t < tasks; ++t) {
      std::vector<Prototype> ps;
      for (std::size_t c = 0; c < 1 + rng() % 4; ++c) ps.push_back({"c", gaussian_nonzero(rng, dim)});
      protos.emplace_back(static_cast<std::uint32_t>(t), ps);
    }
    auto x = gaussian_nonzero(rng, dim);
    auto scaled = x;
    for (auto& v : scaled) v *= 37.5;

    std::vector<std::size_t> prev;
    for (std::size_t k = 1; k <= tasks + 1; ++k) {
      auto d = route(x, protos, k);
      EXPECT_EQ(d.selected_tasks.size(), std::min(k, tasks));
      EXPECT_EQ(route(scaled, protos, k).selected_tasks, d.selected_tasks);
      for (auto i : prev) {
        EXPECT_TRUE(d.weights[i]);
      }
      // every selected task scores at least as high as every unselected one
      for (std::size_t i = 0; i < tasks; ++i) {
        for (std::size_t j = 0; j < tasks; ++j) {
          if (d.weights[i] && !d.weights[j]) {
            EXPECT_GE(d.per_task_best_sim[i], d.per_task_best_sim[j]);
          }
        }
      }
      prev = d.selected_tasks;
    }
  }
}

TEST(Aggregate, RawSum) {
  std::vector<std::vector<double>> logits{{1, 0}, {0, 2}};
  RoutingDecision d{{0.9, 0.8}, {0, 1}, {1, 1}};
  auto r = aggregate_logits(logits, d);
  EXPECT_EQ(r.fused_logits, (std::vector<double>{1, 2}));
  EXPECT_EQ(r.label, 1u);

  RoutingDecision first{{0.9, 0.8}, {0}, {1, 0}};
  auto one = aggregate_logits(logits, first);
  EXPECT_EQ(one.fused_logits, (std::vector<double>{1, 0}));
  EXPECT_EQ(one.label, 0u);

  std::vector<std::vector<double>> tie{{1, 1}};
  EXPECT_EQ(aggregate_logits(tie, RoutingDecision{{1}, {0}, {1}}).label, 0u);
}

TEST(Aggregate, Errors) {
  std::vector<std::vector<double>> logits{{1, 0}, {0, 2}};
  try {
    aggregate_logits(logits, RoutingDecision{{0, 0}, {}, {0, 0}});
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::contract_violation);
  }
  EXPECT_THROW(aggregate_logits(logits, RoutingDecision{{0}, {0}, {1}}), error);
  std::vector<std::vector<double>> ragged{{1, 0}, {0}};
  EXPECT_THROW(aggregate_logits(ragged, RoutingDecision{{0, 0}, {0, 1}, {1, 1}}), error);
}

TEST(PredictTaskAware, MatchesOracleReplay) {
  constexpr std::size_t classes = 3, dim = 5, n = classes * dim;
  std::mt19937_64 rng(99);
  auto base = FlatVector(oracle::flat_layout(n), oracle::gaussian(rng, n));
  std::vector<oracle::vec> raw;
  std::optional<SessionState> state;
  for (std::uint32_t s = 0; s < 3; ++s) {
    raw.push_back(oracle::gaussian(rng, n));
    state = run_session(state, oracle::delta(raw.back(), s), single(s, gaussian_nonzero(rng, dim)));
  }

  // replay: decouple old tasks against the previous unified delta, re-elect, retrigger
  std::vector<oracle::vec> current{raw[0]};
  oracle::vec unified = oracle::elect(current);
  std::vector<oracle::Trigger> trig{oracle::trigger(raw[0], unified)};
  for (std::size_t s = 1; s < 3; ++s) {
    std::vector<oracle::vec> dec;
    for (const auto& t : trig) dec.push_back(oracle::apply(t, unified));
    dec.push_back(raw[s]);
    unified = oracle::elect(dec);
    trig.clear();
    for (const auto& d : dec) trig.push_back(oracle::trigger(d, unified));
  }

  DotHead head{classes};
  for (int q = 0; q < 50; ++q) {
    auto x = oracle::gaussian(rng, dim);
    for (std::size_t t = 0; t < 3; ++t) {
      auto dec = oracle::apply(trig[t], unified);
      std::vector<double> theta(n);
      for (std::size_t j = 0; j < n; ++j) theta[j] = base[j] + dec[j];
      auto want = argmax(head(FlatVector(oracle::flat_layout(n), theta), x));
      EXPECT_EQ(predict_task_aware(x, t, *state, base, head), want);
    }
  }
  try {
    predict_task_aware(std::vector<double>(dim, 1.0), 3, *state, base, head);
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::unknown_task);
  }
}

TEST(PredictTaskAgnostic, SingleTaskEqualsTaskAware) {
  constexpr std::size_t classes = 4, dim = 6, n = classes * dim;
  std::mt19937_64 rng(3);
  auto base = FlatVector(oracle::flat_layout(n), oracle::gaussian(rng, n));
  auto state = run_session(std::nullopt, oracle::delta(oracle::gaussian(rng, n)), single(0, gaussian_nonzero(rng, dim)));
  std::vector<FlatVector> models{reconstruct_model(base, state.unified, state.triggers[0])};
  DotHead head{classes};
  for (int q = 0; q < 20; ++q) {
    auto x = gaussian_nonzero(rng, dim);
    for (std::size_t k : {1u, 4u}) {
      auto r = predict_task_agnostic(x, x, models, state.prototypes, k, head);
      EXPECT_EQ(r.label, predict_task_aware(x, 0, state, base, head));
    }
  }
}

TEST(PrototypeSection, RoundTrip) {
  std::mt19937_64 rng(8);
  std::vector<PrototypeSet> sets;
  for (std::uint32_t t = 0; t < 5; ++t) {
    std::vector<Prototype> ps;
    for (int c = 0; c < 3; ++c) ps.push_back({"label " + std::to_string(c), gaussian_nonzero(rng, 9)});
    sets.emplace_back(t, ps);
  }
  sets.push_back(PrototypeSet::placeholder(5));
  auto back = read_prototype_bundle(decode(encode(prototype_bundle(sets))));
  EXPECT_EQ(back, sets);
  EXPECT_EQ(decode_prototypes(encode_prototypes(sets[0])), sets[0]);
}
