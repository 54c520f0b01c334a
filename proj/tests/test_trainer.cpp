#include <gtest/gtest.h>

#include <random>

#include "tenslim/pipeline.hpp"
#include "tenslim/trainer.hpp"

using namespace tenslim;

namespace {

Dataset small_data(std::uint64_t seed, double noise = 0.6) {
  SyntheticSpec spec;
  spec.input_shape = {2, 5, 5};
  spec.classes = 4;
  spec.clusters_per_class = 2;
  spec.train_per_class = 40;
  spec.val_per_class = 20;
  spec.noise = noise;
  spec.seed = seed;
  return make_synthetic(spec);
}

Network small_net(std::uint64_t seed) {
  ReferenceSpec spec;
  spec.input_shape = {2, 5, 5};
  spec.classes = 4;
  spec.conv_channels = 6;
  spec.pointwise_channels = 6;
  spec.hidden = 16;
  std::mt19937_64 rng(seed);
  return reference_network(spec, rng);
}

TrainOptions options(int epochs, double lr, double sparsity = 0.0) {
  TrainOptions opts;
  opts.distill.epochs = epochs;
  opts.distill.batch_size = 16;
  opts.distill.alpha = 0.9;
  opts.optimizer.lr = lr;
  opts.final_sparsity = sparsity;
  opts.seed = 3;
  return opts;
}

Network compressed(const Network& dense) {
  PipelineConfig cfg;
  cfg.compress.defaults.budget_fraction = 0.2;
  return compress_network(dense, cfg, 1);
}

}  // namespace

TEST(Trainer, LossDecreasesOnSeparableData) {
  const Dataset data = small_data(1, 0.3);
  Network net = small_net(1);
  const auto log = finetune(net, nullptr, data, options(5, 0.02)).log;
  ASSERT_EQ(log.size(), 5u);
  EXPECT_LT(log.back().loss, log.front().loss);
  EXPECT_GT(log.back().val_accuracy, 0.5);
}

TEST(Trainer, ZeroLearningRateWithSelfTeacherKeepsAccuracy) {
  const Dataset data = small_data(2);
  Network teacher = small_net(2);
  Network student = teacher;
  const double before = accuracy(student, data.val_x, data.val_y);
  const auto log = finetune(student, &teacher, data, options(3, 0.0)).log;
  for (const auto& r : log) {
    EXPECT_EQ(r.val_accuracy, before);
    EXPECT_NEAR(r.kd_term, 0.0, 1e-15);
  }
}

TEST(Trainer, StepWithZeroLearningRateIsBitIdentical) {
  const Dataset data = small_data(3);
  Network net = compressed(small_net(3));
  const Network before = net;
  ForwardCache cache;
  const Matrix<double> logits = forward(net, data.train_x.leftCols(8), &cache);
  NetworkGradient grad = backward(net, cache, logits);
  MomentumState state;
  sgd_step(net, grad, state, 0.0, 0.9);
  Network copy = before;
  auto a = parameters(net);
  auto b = parameters(copy);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k].values, b[k].values) << a[k].name;
}

TEST(Trainer, FinalSparsityHitsTargetWithinOneElement) {
  const Dataset data = small_data(4);
  const Network teacher = small_net(4);
  Network student = compressed(teacher);
  const auto log = finetune(student, &teacher, data, options(6, 0.01, 0.8)).log;
  const PruneResult r = [&] {
    auto layers = sparse_layers(student);
    return pooled_sparsity(std::span<const std::reference_wrapper<LowRankSparseLayer<double>>>(layers));
  }();
  EXPECT_LE(std::abs(static_cast<double>(r.masked) - 0.8 * static_cast<double>(r.pooled)), 1.0);
  EXPECT_NEAR(log.back().sparsity, 0.8, 1.0 / static_cast<double>(r.pooled));
  for (std::size_t k = 1; k < log.size(); ++k) EXPECT_GE(log[k].sparsity, log[k - 1].sparsity);
}

TEST(Trainer, MaskedEntriesNeverChange) {
  const Dataset data = small_data(5);
  const Network teacher = small_net(5);
  Network student = compressed(teacher);
  TrainOptions opts = options(4, 0.02, 0.6);
  // Record S at every masked position at the end of each epoch and compare
  // with the next epoch: a masked entry must keep its value forever.
  std::vector<std::pair<std::vector<Index>, std::vector<double>>> snapshot;
  bool stable = true;
  opts.on_epoch = [&](const EpochRecord&) {
    auto layers = sparse_layers(student);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& layer = layers[l].get();
      if (snapshot.size() <= l) snapshot.emplace_back();
      auto& [idx, vals] = snapshot[l];
      for (std::size_t k = 0; k < idx.size(); ++k)
        if ((*layer.sparse)[idx[k]] != vals[k] || layer.mask->bits()[idx[k]]) stable = false;
      idx.clear();
      vals.clear();
      for (Index i = 0; i < layer.mask->numel(); ++i)
        if (!layer.mask->bits()[i]) {
          idx.push_back(i);
          vals.push_back((*layer.sparse)[i]);
        }
    }
  };
  finetune(student, &teacher, data, opts);
  EXPECT_TRUE(stable);
  EXPECT_FALSE(snapshot.empty());
  EXPECT_FALSE(snapshot.front().first.empty());
}

TEST(Trainer, RunsAreDeterministic) {
  const Dataset data = small_data(6);
  const Network teacher = small_net(6);
  Network a = compressed(teacher), b = compressed(teacher);
  const auto la = finetune(a, &teacher, data, options(3, 0.01, 0.5)).log;
  const auto lb = finetune(b, &teacher, data, options(3, 0.01, 0.5)).log;
  for (std::size_t k = 0; k < la.size(); ++k) EXPECT_EQ(la[k].to_json(), lb[k].to_json());
  auto pa = parameters(a);
  auto pb = parameters(b);
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(pa[k].values, pb[k].values);
}

TEST(Trainer, LearningRateDecaysOnSchedule) {
  const Dataset data = small_data(7);
  Network net = small_net(7);
  TrainOptions opts = options(6, 0.01);
  opts.optimizer.decay_every_epochs = 2;
  opts.optimizer.decay_factor = 0.5;
  const auto result = finetune(net, nullptr, data, opts);
  EXPECT_DOUBLE_EQ(result.log[0].lr, 0.01);
  EXPECT_DOUBLE_EQ(result.log[1].lr, 0.01);
  EXPECT_DOUBLE_EQ(result.log[2].lr, 0.005);
  EXPECT_DOUBLE_EQ(result.log[5].lr, 0.0025);
  EXPECT_DOUBLE_EQ(result.final_lr, 0.00125);
}

TEST(Trainer, DataOrderSeedFollowsEpoch) {
  const Dataset data = small_data(8);
  Network net = small_net(8);
  const auto log = finetune(net, nullptr, data, options(2, 0.01)).log;
  EXPECT_EQ(log[0].order_seed, derive_seed(3, "data-order/1"));
  EXPECT_EQ(log[1].order_seed, derive_seed(3, "data-order/2"));
}

TEST(Trainer, CompressionRatioOfDenseNetworkIsOne) {
  EXPECT_DOUBLE_EQ(compression_ratio(small_net(9)), 1.0);
}
