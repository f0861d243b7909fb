#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "condu/convergence.hpp"
#include "oracles.hpp"

using namespace condu;
using oracle::delta;

namespace {

std::vector<DeltaModel> two_vector_set() { return {delta({1, -2}, 0), delta({3, -1}, 1)}; }

}  // namespace

TEST(IterateOnce, TwoVectorExample) {
  auto out = iterate_once(two_vector_set());
  ASSERT_EQ(out.size(), 2u);
  EXPECT_NEAR(out[0].vec[0], 1.8, 1e-12);
  EXPECT_NEAR(out[0].vec[1], -1.2, 1e-12);
  EXPECT_NEAR(out[1].vec[0], 2.4, 1e-12);
  EXPECT_NEAR(out[1].vec[1], -1.6, 1e-12);
  EXPECT_EQ(out[0].task_id, 0u);
  EXPECT_EQ(out[1].task_id, 1u);

  auto again = iterate_once(out);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(again[i].vec[j], out[i].vec[j], 1e-12);
  }
}

TEST(IterateOnce, SingleDeltaIsIdentity) {
  std::vector<DeltaModel> one{delta({0.5, -3, 0, 2})};
  EXPECT_EQ(iterate_once(one)[0].vec, one[0].vec);
  EXPECT_THROW(iterate_once(std::vector<DeltaModel>{}), error);
}

TEST(IterateUntil, TwoVectorConvergesAtStepTwo) {
  auto [final_set, trace] = iterate_until(two_vector_set(), 1e-12, 50);
  EXPECT_TRUE(trace.converged);
  ASSERT_EQ(trace.steps.size(), 2u);
  EXPECT_LT(trace.steps[1].mean_l1_diff, 1e-12);
  EXPECT_NEAR(trace.steps[0].lambdas[0], 0.6, 1e-15);
  EXPECT_NEAR(trace.steps[0].lambdas[1], 0.8, 1e-15);
  EXPECT_NEAR(trace.steps[1].lambdas[0], 0.75, 1e-15);
  EXPECT_NEAR(trace.steps[1].lambdas[1], 1.0, 1e-15);
  EXPECT_TRUE(sign_stability_check(trace).pass);
}

TEST(IterateUntil, DuplicatedDeltaIsFixedAtStepOne) {
  std::vector<DeltaModel> dup{delta({1, -2, 0.5}), delta({1, -2, 0.5})};
  auto [out, trace] = iterate_until(dup, 1e-12, 10);
  ASSERT_EQ(trace.steps.size(), 1u);
  EXPECT_EQ(trace.steps[0].mean_l1_diff, 0.0);
  EXPECT_EQ(trace.steps[0].lambdas, (std::vector<double>{1.0, 1.0}));
}

TEST(IterateUntil, BadArguments) {
  EXPECT_THROW(iterate_until(two_vector_set(), 0.0, 10), error);
  EXPECT_THROW(iterate_until(two_vector_set(), 1e-9, 0), error);
}

TEST(SignStability, FlippedMaskBitIsReported) {
  auto [out, trace] = iterate_until(two_vector_set(), 1e-12, 50);
  auto edited = trace;
  auto bits = unpack(edited.steps[1].masks[1]);
  bits[1] ^= 1;
  edited.steps[1].masks[1] = pack(bits);
  auto r = sign_stability_check(edited);
  EXPECT_FALSE(r.pass);
  EXPECT_EQ(r.step, 2u);
  EXPECT_EQ(r.task, 1u);
  EXPECT_EQ(r.element, 1u);
}

TEST(SignStability, FlippedSnapshotSignIsReported) {
  auto [out, trace] = iterate_until(two_vector_set(), 1e-12, 50);
  auto edited = trace;
  edited.steps[0].snapshot[0][0] = -1.8;
  auto r = sign_stability_check(edited);
  EXPECT_FALSE(r.pass);
  EXPECT_EQ(r.step, 1u);
  EXPECT_EQ(r.task, 0u);
  EXPECT_EQ(r.element, 0u);
}

// Random fixed sets: L1 norm constant at every step, no element
// changes sign, zeros stay zero, popcounts never increase, and the mean
// difference is non-increasing from step 2 on when the flags hold.
TEST(FixedSetProperties, RandomSets) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto set = oracle::random_set(500 + seed, 300);
    auto [out, trace] = iterate_until(set, 1e-300, 40);
    ASSERT_TRUE(sign_stability_check(trace).pass) << seed;
    for (std::size_t s = 0; s < trace.steps.size(); ++s) {
      const auto& st = trace.steps[s];
      for (std::size_t i = 0; i < set.size(); ++i) {
        const double want = l1_norm(set[i].vec.values());
        ASSERT_NEAR(l1_norm(st.snapshot[i]), want, 1e-9 * want);
        if (s > 0) {
          ASSERT_LE(st.popcounts[i], trace.steps[s - 1].popcounts[i]);
        }
      }
      ASSERT_GE(st.mean_l1_diff, 0.0);
      if (s >= 2 && trace.flags_held()) {
        ASSERT_LE(st.mean_l1_diff, trace.steps[s - 1].mean_l1_diff * (1 + 1e-9) + 1e-300);
      }
    }
  }
}

TEST(Trace, CsvAndTextExport) {
  auto [out, trace] = iterate_until(two_vector_set(), 1e-12, 50);
  std::ostringstream csv;
  write_trace_csv(csv, trace);
  std::istringstream lines(csv.str());
  std::string header, row1;
  std::getline(lines, header);
  std::getline(lines, row1);
  EXPECT_EQ(header, "step,mean_l1_diff,lambda_1,lambda_2,popcount_1,popcount_2,lambda_order_ok,overlap_ok");
  EXPECT_EQ(row1.substr(0, 2), "1,");
  EXPECT_EQ(row1.substr(row1.size() - 8), ",2,2,1,1");
  std::ostringstream text;
  write_trace_text(text, trace);
  EXPECT_NE(text.str().find("converged"), std::string::npos);
  EXPECT_NE(text.str().find("sign stability: pass"), std::string::npos);
}

TEST(Perturbation, AddingZeroDeltaChangesNothing) {
  std::mt19937_64 rng(21);
  std::vector<DeltaModel> init{delta(oracle::gaussian(rng, 200)), delta(oracle::gaussian(rng, 200))};
  std::vector<DeltaModel> stream{delta(std::vector<double>(200, 0.0))};
  auto r = incremental_perturbation_study(init, stream, 1);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].mask_changes, 0u);
  EXPECT_EQ(l1_norm(r.final_set[2].vec.values()), 0.0);
  EXPECT_EQ(r.rows[0].lambdas[2], 0.0);
}

TEST(Perturbation, DuplicateKeepsSharedSignPositions) {
  std::mt19937_64 rng(22);
  std::vector<DeltaModel> init;
  for (int i = 0; i < 3; ++i) init.push_back(delta(oracle::gaussian(rng, 300)));
  // settle the initial set so the stored values match what gets duplicated
  auto settled = iterate_once(init);
  auto [unused, trig] = fuse(settled);
  auto masks_before = std::vector<PackedMask>{};
  for (auto& t : trig) masks_before.push_back(t.mask);

  std::vector<DeltaModel> stream{settled[0]};
  auto r = incremental_perturbation_study(settled, stream, 1);
  for (std::size_t j = 0; j < 300; ++j) {
    if (!masks_before[0].test(j)) continue;
    for (std::size_t i = 0; i < 3; ++i) ASSERT_EQ(r.final_masks[i].test(j), masks_before[i].test(j)) << i << ' ' << j;
    ASSERT_TRUE(r.final_masks[3].test(j));
  }
}

TEST(Perturbation, GaussianStreamIsRecorded) {
  std::mt19937_64 rng(23);
  std::vector<DeltaModel> init{delta(oracle::gaussian(rng, 1000)), delta(oracle::gaussian(rng, 1000))};
  std::vector<DeltaModel> stream;
  for (int n = 3; n <= 32; ++n) stream.push_back(delta(oracle::gaussian(rng, 1000)));
  auto r = incremental_perturbation_study(init, stream, 1);
  ASSERT_EQ(r.rows.size(), 30u);
  EXPECT_EQ(r.rows.front().task_count, 3u);
  EXPECT_EQ(r.rows.back().task_count, 32u);
  for (const auto& row : r.rows) EXPECT_GE(row.mean_l1_diff, 0.0);
  std::ostringstream out;
  write_perturbation_text(out, r);
  EXPECT_NE(out.str().find("tasks,mean_l1_diff,mask_changes"), std::string::npos);
  EXPECT_THROW(incremental_perturbation_study(init, std::vector<DeltaModel>{}, 1), error);
}
