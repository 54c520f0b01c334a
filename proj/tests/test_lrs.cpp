#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "tenslim/analysis.hpp"
#include "tenslim/lrs.hpp"

using namespace tenslim;
using Tensor = DenseTensor<double>;

namespace {

DecomposeConfig config_for(Format f) {
  DecomposeConfig cfg;
  cfg.format = f;
  cfg.budget_fraction = 0.3;
  cfg.max_als_iters = 30;
  return cfg;
}

double max_abs(const Tensor& t) { return t.data().cwiseAbs().maxCoeff(); }

}  // namespace

TEST(InitResidual, ExactReconstructionEveryFormat) {
  std::mt19937_64 rng(50);
  const std::vector<Shape> shapes{{12, 10}, {16, 8, 3, 3}, {36, 4}, {8, 6, 3}};
  for (Format f : {Format::CP, Format::Tucker, Format::TT, Format::TTM})
    for (const Shape& s : shapes) {
      Tensor a = random_normal<double>(s, rng);
      auto layer = init_residual(a, config_for(f), "w");
      EXPECT_EQ(layer.mode, ReconstructionMode::Additive);
      EXPECT_EQ(layer.mask->count_ones(), layer.mask->numel());
      Tensor back = reconstruct_additive(layer);
      EXPECT_EQ(back.shape(), s);
      EXPECT_LE(max_abs(back - a), 1e-9 * max_abs(a));
      EXPECT_LE(relative_error(a, back), 1e-10);
    }
}

TEST(InitResidual, LowRankInputLeavesNearZeroResidual) {
  std::mt19937_64 rng(51);
  Tensor a = reconstruct(oracle::random_tt({4, 4, 4, 4}, {1, 2, 2, 2, 1}, rng));
  DecomposeConfig cfg = config_for(Format::TT);
  cfg.fold_shape = Shape{4, 4, 4, 4};
  auto layer = init_residual(a, cfg, "w", RankSpec{Format::TT, {1, 2, 2, 2, 1}});
  EXPECT_LE(frobenius_norm(*layer.sparse) / frobenius_norm(a), 1e-8);
}

TEST(InitResidual, ZeroWeight) {
  Tensor a({6, 4});
  auto layer = init_residual(a, config_for(Format::TT), "w");
  EXPECT_EQ(frobenius_norm(reconstruct(*layer.low_rank)), 0.0);
  EXPECT_EQ(frobenius_norm(*layer.sparse), 0.0);
}

TEST(InitMasking, ZeroFractionMatchesResidual) {
  std::mt19937_64 rng(52);
  Tensor a = random_normal<double>({12, 10}, rng);
  auto cfg = config_for(Format::TT);
  auto masked = init_masking(a, cfg, 0.0, "w");
  auto residual = init_residual(a, cfg, "w");
  EXPECT_EQ(masked.mode, ReconstructionMode::Masking);
  EXPECT_EQ(masked.mask->count_ones(), 0);
  EXPECT_EQ(reconstruct(*masked.low_rank), reconstruct(*residual.low_rank));
  EXPECT_EQ(*masked.sparse, *residual.sparse);
}

TEST(InitMasking, PlantedSpikesAreKept) {
  std::mt19937_64 rng(53);
  Tensor a = random_normal<double>({10, 10}, rng);
  for (Index i = 0; i < a.numel(); ++i) a[i] *= 0.01;
  const std::vector<Index> spikes{7, 42, 93};
  for (Index s : spikes) a[s] = 5.0;
  auto layer = init_masking(a, config_for(Format::CP), 0.03, "w");
  ASSERT_EQ(layer.mask->count_ones(), 3);
  for (Index s : spikes) EXPECT_EQ(layer.mask->bits()[s], 1);
  Tensor back = reconstruct_masking(layer);
  for (Index s : spikes) EXPECT_EQ(back[s], a[s]);
}

TEST(InitMasking, TiesBrokenByFlatIndex) {
  Tensor a = Tensor::Constant({5, 6}, 0.5);
  for (Index i = 0; i < a.numel(); i += 2) a[i] = -0.5;
  auto layer = init_masking(a, config_for(Format::TT), 0.1, "w");
  ASSERT_EQ(layer.mask->count_ones(), 3);
  for (Index i = 0; i < 3; ++i) EXPECT_EQ(layer.mask->bits()[i], 1);
}

TEST(InitMasking, KeptEntriesReproduceWeight) {
  std::mt19937_64 rng(54);
  Tensor a = random_normal<double>({8, 9}, rng);
  auto layer = init_masking(a, config_for(Format::TT), 0.4, "w");
  Tensor back = reconstruct_masking(layer);
  Tensor low = reconstruct(*layer.low_rank).reshaped(a.shape());
  const auto& bits = layer.mask->bits();
  for (Index i = 0; i < a.numel(); ++i) {
    if (bits[i]) {
      EXPECT_EQ(back[i], a[i]);
    } else {
      EXPECT_EQ(back[i], low[i]);
    }
  }
}

TEST(ReconstructAdditive, MaskExtremes) {
  std::mt19937_64 rng(55);
  Tensor a = random_normal<double>({6, 8}, rng);
  auto layer = init_residual(a, config_for(Format::CP), "w");
  layer.sparse = random_normal<double>(layer.fold_shape, rng);
  Tensor low = reconstruct(*layer.low_rank);
  EXPECT_EQ(reconstruct_additive(layer).data(), (low + *layer.sparse).data());
  layer.mask = Mask::Zeros(layer.fold_shape);
  EXPECT_EQ(reconstruct_additive(layer).data(), low.data());
}

TEST(ReconstructAdditive, CompositionalOracle) {
  std::mt19937_64 rng(56);
  Tensor a = random_normal<double>({6, 8}, rng);
  auto layer = init_residual(a, config_for(Format::TT), "w");
  layer.sparse = random_normal<double>(layer.fold_shape, rng);
  for (Index i = 0; i < layer.mask->numel(); ++i) layer.mask->bits()[i] = (i * 7 % 3) == 0;
  Tensor low = reconstruct(*layer.low_rank);
  Tensor got = reconstruct_additive(layer);
  for (Index i = 0; i < got.numel(); ++i) {
    const double expected = low[i] + (layer.mask->bits()[i] ? (*layer.sparse)[i] : 0.0);
    EXPECT_DOUBLE_EQ(got[i], expected);
  }
  layer.mode = ReconstructionMode::Masking;
  EXPECT_THROW(reconstruct_additive(layer), Error);
}

TEST(ReconstructMasking, ExtremesAndCheckerboard) {
  std::mt19937_64 rng(57);
  Tensor a = random_normal<double>({6, 6}, rng);
  auto layer = init_masking(a, config_for(Format::TT), 0.2, "w");
  layer.sparse = random_normal<double>(layer.fold_shape, rng);
  Tensor low = reconstruct(*layer.low_rank);
  layer.mask = Mask::Ones(layer.fold_shape);
  EXPECT_EQ(reconstruct_masking(layer).data(), layer.sparse->data());
  layer.mask = Mask::Zeros(layer.fold_shape);
  EXPECT_EQ(reconstruct_masking(layer).data(), low.data());
  Mask board = Mask::Zeros(a.shape());
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 6; ++j) board.bits()[i * 6 + j] = (i + j) % 2;
  layer.mask = board.reshaped(layer.fold_shape);
  Tensor got = reconstruct_masking(layer);
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 6; ++j) {
      const Index k = i * 6 + j;
      EXPECT_EQ(got[k], (i + j) % 2 ? (*layer.sparse)[k] : low[k]);
    }
  layer.mode = ReconstructionMode::Additive;
  EXPECT_THROW(reconstruct_masking(layer), Error);
}

TEST(ReconstructMasking, SAtUnmaskedPositionsIsInert) {
  std::mt19937_64 rng(58);
  for (Format f : {Format::CP, Format::Tucker, Format::TT, Format::TTM}) {
    Tensor a = random_normal<double>({8, 12}, rng);
    auto layer = init_masking(a, config_for(f), 0.25, "w");
    const Tensor before = reconstruct_masking(layer);
    for (Index i = 0; i < layer.mask->numel(); ++i)
      if (!layer.mask->bits()[i]) (*layer.sparse)[i] += 1000.0 * (1 + i);
    EXPECT_EQ(reconstruct_masking(layer), before);
  }
}

TEST(StoredParams, DecreaseWithSparsity) {
  std::mt19937_64 rng(59);
  Tensor a = random_normal<double>({10, 10}, rng);
  auto layer = init_residual(a, config_for(Format::TT), "w");
  Index previous = stored_params(layer);
  for (Index i = 0; i < 20; ++i) {
    layer.mask->bits()[i * 5] = 0;
    const Index now = stored_params(layer);
    EXPECT_LT(now, previous);
    previous = now;
  }
}

TEST(Backprop, MaskedSparseEntriesGetZero) {
  std::mt19937_64 rng(60);
  Tensor a = random_normal<double>({6, 6}, rng);
  for (auto mode : {ReconstructionMode::Additive, ReconstructionMode::Masking}) {
    auto layer = mode == ReconstructionMode::Additive ? init_residual(a, config_for(Format::TT), "w")
                                                      : init_masking(a, config_for(Format::TT), 0.3, "w");
    for (Index i = 0; i < layer.mask->numel(); i += 4) layer.mask->bits()[i] = 0;
    auto g = backprop(layer, random_normal<double>(a.shape(), rng));
    for (Index i = 0; i < layer.mask->numel(); ++i) {
      if (!layer.mask->bits()[i]) {
        EXPECT_EQ((*g.sparse)[i], 0.0);
      }
    }
  }
}

TEST(Layer, ValidateCatchesInconsistentParts) {
  std::mt19937_64 rng(61);
  Tensor a = random_normal<double>({6, 6}, rng);
  auto layer = init_residual(a, config_for(Format::TT), "w");
  layer.mask.reset();
  EXPECT_THROW(validate(layer), Error);
  auto sparse = init_sparse_only(a, "s");
  EXPECT_NO_THROW(validate(sparse));
  EXPECT_EQ(effective_weight(sparse), a);
  auto lr = init_lowrank_only(a, config_for(Format::TT), "l");
  EXPECT_NO_THROW(validate(lr));
  EXPECT_EQ(stored_params(lr), param_count(*lr.low_rank));
}
