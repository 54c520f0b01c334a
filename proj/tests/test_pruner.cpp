#include <gtest/gtest.h>

#include <random>

#include "tenslim/pruner.hpp"

using namespace tenslim;
using Tensor = DenseTensor<double>;
using Layer = LowRankSparseLayer<double>;
using Refs = std::vector<std::reference_wrapper<Layer>>;

namespace {

Layer sparse_layer(const std::vector<double>& values, const std::string& name) {
  Tensor t({static_cast<Index>(values.size())});
  for (std::size_t i = 0; i < values.size(); ++i) t[static_cast<Index>(i)] = values[i];
  return init_sparse_only(t, name);
}

}  // namespace

TEST(Schedule, Endpoints) {
  EXPECT_EQ(schedule_sparsity(0, 50, 0.8), 0.0);
  EXPECT_EQ(schedule_sparsity(50, 50, 0.8), 0.8);
  EXPECT_NEAR(schedule_sparsity(25, 50, 0.8), 0.1, 1e-15);
  EXPECT_THROW(schedule_sparsity(51, 50, 0.8), Error);
  EXPECT_THROW(schedule_sparsity(-1, 50, 0.8), Error);
  EXPECT_THROW(schedule_sparsity(0, 0, 0.8), Error);
}

TEST(Schedule, NonDecreasing) {
  for (Index n : {1, 7, 50}) {
    double previous = -1;
    for (Index t = 0; t <= n; ++t) {
      const double s = schedule_sparsity(t, n, 0.65);
      EXPECT_GE(s, previous);
      previous = s;
    }
  }
  PruneSchedule sched{0.5, 4, 0};
  sched.validate();
  for (int k = 0; k < 4; ++k) sched.advance();
  EXPECT_EQ(sched.sparsity(), 0.5);
  EXPECT_THROW(sched.advance(), Error);
}

TEST(GlobalPrune, ThresholdIsPooled) {
  Layer one = sparse_layer({1, 2, 3, 4}, "one");
  Layer two = sparse_layer({5, 6, 7, 8}, "two");
  Refs refs{one, two};
  auto r = global_magnitude_prune(refs, 0.5);
  EXPECT_EQ(r.masked, 4);
  EXPECT_EQ(one.mask->count_ones(), 0);
  EXPECT_EQ(two.mask->count_ones(), 4);
  EXPECT_EQ(frobenius_norm(*one.sparse), 0.0);
}

TEST(GlobalPrune, SameTargetIsNoOp) {
  Layer one = sparse_layer({1, -2, 3, 4}, "one");
  Refs refs{one};
  global_magnitude_prune(refs, 0.5);
  const Mask before = *one.mask;
  auto r = global_magnitude_prune(refs, 0.5);
  EXPECT_EQ(r.newly_masked, 0);
  EXPECT_EQ(*one.mask, before);
  try {
    global_magnitude_prune(refs, 0.25);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ScheduleRegression);
  }
}

TEST(GlobalPrune, TiesFollowLayerThenIndex) {
  Layer one = sparse_layer({1, 1, 1}, "one");
  Layer two = sparse_layer({1, 1, 1}, "two");
  Refs refs{one, two};
  global_magnitude_prune(refs, 4.0 / 6.0);
  EXPECT_EQ(one.mask->count_ones(), 0);
  EXPECT_EQ(two.mask->bits()[0], 0);
  EXPECT_EQ(two.mask->bits()[1], 1);
  EXPECT_EQ(two.mask->bits()[2], 1);
}

TEST(GlobalPrune, FullScheduleIsMonotoneAndOnTarget) {
  std::mt19937_64 rng(70);
  Layer a = init_sparse_only(random_normal<double>({17, 13}, rng), "a");
  Layer b = init_sparse_only(random_normal<double>({31}, rng), "b");
  Layer c = init_sparse_only(random_normal<double>({9, 9, 3}, rng), "c");
  Refs refs{a, b, c};
  const Index pooled = 17 * 13 + 31 + 243;
  const Index n = 50;
  std::vector<Mask> previous{*a.mask, *b.mask, *c.mask};
  for (Index t = 1; t <= n; ++t) {
    const double target = schedule_sparsity(t, n, 0.8);
    auto r = global_magnitude_prune(refs, target);
    EXPECT_LE(std::abs(r.sparsity() - target) * pooled, 1.0);
    for (std::size_t l = 0; l < refs.size(); ++l) {
      const Mask& now = *refs[l].get().mask;
      for (Index i = 0; i < now.numel(); ++i) EXPECT_LE(now.bits()[i], previous[l].bits()[i]);
      previous[l] = now;
    }
  }
  EXPECT_LE(std::abs(pooled_sparsity<double>(refs).sparsity() - 0.8) * pooled, 1.0);
}

TEST(GlobalPrune, MaskedMagnitudesBelowSurvivors) {
  std::mt19937_64 rng(71);
  Tensor wa = random_normal<double>({40}, rng), wb = random_normal<double>({25}, rng);
  Layer a = init_sparse_only(wa, "a"), b = init_sparse_only(wb, "b");
  Refs refs{a, b};
  global_magnitude_prune(refs, 0.6);
  double max_masked = 0, min_kept = 1e300;
  for (auto [layer, w] : {std::pair<Layer*, Tensor*>{&a, &wa}, {&b, &wb}})
    for (Index i = 0; i < w->numel(); ++i) {
      if (layer->mask->bits()[i])
        min_kept = std::min(min_kept, std::abs((*w)[i]));
      else
        max_masked = std::max(max_masked, std::abs((*w)[i]));
    }
  EXPECT_LE(max_masked, min_kept);
}

TEST(GlobalPrune, LowRankOnlyLayersIgnored) {
  Layer one = sparse_layer({1, 2, 3, 4}, "one");
  Layer lr;
  lr.name = "lr";
  lr.mode = ReconstructionMode::LowRankOnly;
  Refs refs{lr, one};
  auto r = global_magnitude_prune(refs, 0.5);
  EXPECT_EQ(r.pooled, 4);
  EXPECT_EQ(one.mask->count_ones(), 2);
}
